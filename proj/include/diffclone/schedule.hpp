#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "diffclone/tensor.hpp"

namespace diffclone {

// DDPM square-cosine noise schedule. Timesteps run t = 1..T with t = 0 the
// clean data; beta and sigma are defined for t >= 1 (index 0 unused).
class NoiseSchedule {
public:
    // alpha_bar[t] = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
    // s = 0.008. beta[t] = 1 - alpha_bar[t]/alpha_bar[t-1] capped at 0.999;
    // sigma[1] = 0, sigma[t]^2 = beta[t]*(1 - alpha_bar[t-1])/(1 - alpha_bar[t]).
    static NoiseSchedule square_cosine(int T);

    int T() const { return T_; }
    double alpha_bar(int t) const;  // t in 0..T
    double beta(int t) const;       // t in 1..T
    double sigma(int t) const;      // t in 1..T

private:
    int T_ = 0;
    std::vector<double> alpha_bar_;
    std::vector<double> beta_;
    std::vector<double> sigma_;
};

// x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps.
// eps is injected by the caller so tests can control it.
Tensor add_noise(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched);

// One ancestral reverse step t -> t-1:
//   (1/sqrt(1-beta[t])) * (xt - (beta[t]/sqrt(1-alpha_bar[t])) * eps_hat)
//     + sigma[t] * noise,
// clamped to [-5, 5] per coordinate. noise is ignored at t=1 (sigma=0).
Tensor ddpm_step(const Tensor& xt, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                 const Tensor& noise);

// Full reverse chain over a [horizon, action_dim] window: start from a
// standard-normal draw, step t = T..1 with eps_hat = eps_model(x_t, t).
// Deterministic given rng_seed; one noise draw per step with t >= 2.
Tensor sample_window(const std::function<Tensor(const Tensor&, int)>& eps_model, int horizon,
                     int action_dim, const NoiseSchedule& sched, std::uint64_t rng_seed);

}  // namespace diffclone
