#include "diffclone/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace diffclone {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kClampLimit = 5.0;

double square_cosine_f(int t, int T) {
    const double s = 0.008;
    const double arg = ((static_cast<double>(t) / T + s) / (1.0 + s)) * (kPi / 2.0);
    const double c = std::cos(arg);
    return c * c;
}

}  // namespace

NoiseSchedule NoiseSchedule::square_cosine(int T) {
    if (T < 1) throw ConfigError("noise schedule needs T >= 1, got " + std::to_string(T));
    NoiseSchedule sched;
    sched.T_ = T;
    sched.alpha_bar_.resize(static_cast<std::size_t>(T) + 1);
    sched.beta_.assign(static_cast<std::size_t>(T) + 1, 0.0);
    sched.sigma_.assign(static_cast<std::size_t>(T) + 1, 0.0);

    const double f0 = square_cosine_f(0, T);
    sched.alpha_bar_[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        sched.alpha_bar_[static_cast<std::size_t>(t)] = square_cosine_f(t, T) / f0;
    }
    for (int t = 1; t <= T; ++t) {
        const double ab = sched.alpha_bar_[static_cast<std::size_t>(t)];
        const double ab_prev = sched.alpha_bar_[static_cast<std::size_t>(t) - 1];
        sched.beta_[static_cast<std::size_t>(t)] = std::min(1.0 - ab / ab_prev, 0.999);
        if (t >= 2) {
            const double var =
                sched.beta_[static_cast<std::size_t>(t)] * (1.0 - ab_prev) / (1.0 - ab);
            sched.sigma_[static_cast<std::size_t>(t)] = std::sqrt(var);
        }
    }
    return sched;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T_) throw UsageError("alpha_bar: t out of range");
    return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T_) throw UsageError("beta: t out of range");
    return beta_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::sigma(int t) const {
    if (t < 1 || t > T_) throw UsageError("sigma: t out of range");
    return sigma_[static_cast<std::size_t>(t)];
}

Tensor add_noise(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) throw ShapeError("add_noise: x0 and eps shapes differ");
    if (t < 1 || t > sched.T()) throw UsageError("add_noise: t out of range");
    const double ab = sched.alpha_bar(t);
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Tensor ddpm_step(const Tensor& xt, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                 const Tensor& noise) {
    if (xt.shape() != eps_hat.shape()) throw ShapeError("ddpm_step: xt and eps_hat shapes differ");
    if (t < 1 || t > sched.T()) throw UsageError("ddpm_step: t out of range");
    const double beta = sched.beta(t);
    const double sigma = sched.sigma(t);
    if (sigma > 0.0 && xt.shape() != noise.shape()) {
        throw ShapeError("ddpm_step: noise shape differs");
    }
    const double inv_sqrt = 1.0 / std::sqrt(1.0 - beta);
    const double eps_coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));

    Tensor out = Tensor::zeros(xt.shape());
    auto o = out.data_mut();
    const auto x = xt.data();
    const auto e = eps_hat.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        double v = inv_sqrt * (x[i] - eps_coef * e[i]);
        if (sigma > 0.0) v += sigma * noise.at(static_cast<std::int64_t>(i));
        o[i] = std::clamp(v, -kClampLimit, kClampLimit);
    }
    return out;
}

Tensor sample_window(const std::function<Tensor(const Tensor&, int)>& eps_model, int horizon,
                     int action_dim, const NoiseSchedule& sched, std::uint64_t rng_seed) {
    if (horizon < 1 || action_dim < 1) throw ConfigError("sample_window: bad window shape");
    NoGradGuard ng;
    Rng rng(rng_seed);
    Tensor x = Tensor::randn({horizon, action_dim}, rng);
    const Tensor no_noise = Tensor::zeros({horizon, action_dim});
    for (int t = sched.T(); t >= 1; --t) {
        Tensor eps_hat = eps_model(x, t);
        if (eps_hat.shape() != x.shape()) {
            throw ConfigError("sample_window: eps model output shape mismatch");
        }
        Tensor noise = t >= 2 ? Tensor::randn({horizon, action_dim}, rng) : no_noise;
        x = ddpm_step(x, eps_hat, t, sched, noise);
    }
    return x;
}

}  // namespace diffclone
