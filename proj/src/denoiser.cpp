#include "diffclone/denoiser.hpp"

#include <algorithm>
#include <cmath>

namespace diffclone {

namespace {

Tensor cond_vector(int t, std::span<const double> obs, const DenoiserConfig& cfg) {
    auto emb = time_embedding(t, cfg.time_embed_dim);
    std::vector<double> cond;
    cond.reserve(static_cast<std::size_t>(cfg.cond_dim()));
    cond.insert(cond.end(), obs.begin(), obs.end());
    cond.insert(cond.end(), emb.begin(), emb.end());
    return Tensor::from_vector({cfg.cond_dim()}, std::move(cond));
}

Tensor apply_block(const FilmConvBlock& b, const Tensor& h, const Tensor& cond, int kernel,
                   int groups, bool apply_film) {
    Tensor out = conv1d(h, b.conv_w, 1, (kernel - 1) / 2);
    out = group_norm(out, groups, b.norm_scale, b.norm_shift);
    if (apply_film) {
        Tensor gamma = linear(cond, b.film_gamma_w, b.film_gamma_b);
        Tensor beta = linear(cond, b.film_beta_w, b.film_beta_b);
        out = film(out, gamma, beta);
    }
    return add(mish(out), conv1d(h, b.res_w, 1, 0));
}

}  // namespace

void DenoiserConfig::validate() const {
    if (action_dim < 1) throw ConfigError("denoiser: action_dim must be positive");
    if (horizon < 1) throw ConfigError("denoiser: horizon must be positive");
    if (channels.empty()) throw ConfigError("denoiser: need at least one channel level");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("denoiser: kernel size must be odd");
    if (groups < 1) throw ConfigError("denoiser: norm groups must be positive");
    for (int c : channels) {
        if (c < 1) throw ConfigError("denoiser: channel widths must be positive");
        if (c % groups != 0) {
            throw ConfigError("denoiser: channel width " + std::to_string(c) +
                              " not divisible by norm groups " + std::to_string(groups));
        }
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw ConfigError("denoiser: time_embed_dim must be even and positive");
    }
    if (obs_dim < 1) throw ConfigError("denoiser: obs_dim must be set");
    const int stride_total = 1 << levels();
    if (horizon % stride_total != 0) {
        throw ConfigError("denoiser: horizon " + std::to_string(horizon) +
                          " must be divisible by " + std::to_string(stride_total) + " (" +
                          std::to_string(levels()) + " levels downsample once each)");
    }
}

std::vector<double> time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("time_embedding: dim must be even");
    if (t < 1) throw UsageError("time_embedding: t must be >= 1");
    const int half = dim / 2;
    std::vector<double> emb(static_cast<std::size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        emb[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
        emb[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return emb;
}

DenoiserNet DenoiserNet::build(const DenoiserConfig& config, std::uint64_t init_seed) {
    config.validate();
    DenoiserNet net;
    net.config_ = config;

    const int L = config.levels();
    const int k = config.kernel;
    const int cd = config.cond_dim();

    auto make_block = [&](int in_c, int out_c) {
        FilmConvBlock b;
        b.conv_w = Tensor::zeros({out_c, in_c, k}, true);
        b.norm_scale = Tensor::full({out_c}, 1.0, true);
        b.norm_shift = Tensor::zeros({out_c}, true);
        b.film_gamma_w = Tensor::zeros({out_c, cd}, true);
        b.film_gamma_b = Tensor::zeros({out_c}, true);
        b.film_beta_w = Tensor::zeros({out_c, cd}, true);
        b.film_beta_b = Tensor::zeros({out_c}, true);
        b.res_w = Tensor::zeros({out_c, in_c, 1}, true);
        return b;
    };

    for (int i = 0; i < L; ++i) {
        const int in_c = i == 0 ? config.action_dim : config.channels[static_cast<std::size_t>(i) - 1];
        const int out_c = config.channels[static_cast<std::size_t>(i)];
        net.down_.push_back(make_block(in_c, out_c));
        net.ds_w_.push_back(Tensor::zeros({out_c, out_c, k}, true));
        net.ds_b_.push_back(Tensor::zeros({out_c}, true));
    }
    const int deepest = config.channels.back();
    net.mid_ = make_block(deepest, deepest);
    for (int i = L - 1; i >= 0; --i) {
        const int skip_c = config.channels[static_cast<std::size_t>(i)];
        const int in_c = (i == L - 1 ? deepest : config.channels[static_cast<std::size_t>(i)]) + skip_c;
        const int out_c = config.channels[static_cast<std::size_t>(std::max(i - 1, 0))];
        net.up_.push_back(make_block(in_c, out_c));
    }
    net.final_w_ = Tensor::zeros({config.action_dim, config.channels.front(), 1}, true);
    net.final_b_ = Tensor::zeros({config.action_dim}, true);

    // Fill parameters in declared order: weights U(+-1/sqrt(fan_in)), each
    // bias reusing the bound of the weight declared just before it; norm
    // affine stays at identity and consumes no draws.
    Rng rng(init_seed);
    double last_bound = 0.0;
    for (auto& [name, p] : net.named_parameters()) {
        if (name.find("norm_") != std::string::npos) continue;
        const auto& shape = p.shape();
        if (shape.size() == 3) {
            last_bound = 1.0 / std::sqrt(static_cast<double>(shape[1]) * shape[2]);
        } else if (shape.size() == 2) {
            last_bound = 1.0 / std::sqrt(static_cast<double>(shape[1]));
        }
        auto d = p.data_mut();
        for (auto& v : d) v = rng.uniform(-last_bound, last_bound);
    }
    return net;
}

Tensor DenoiserNet::forward(const Tensor& noisy_actions, int t, std::span<const double> obs) const {
    return forward_diag(noisy_actions, t, obs, DenoiserDiag{});
}

Tensor DenoiserNet::forward_diag(const Tensor& noisy_actions, int t, std::span<const double> obs,
                                 const DenoiserDiag& diag) const {
    const auto& cfg = config_;
    if (noisy_actions.shape() != std::vector<int>{cfg.horizon, cfg.action_dim}) {
        throw ShapeError("denoiser forward: window must be [horizon, action_dim]");
    }
    if (static_cast<int>(obs.size()) != cfg.obs_dim) {
        throw ShapeError("denoiser forward: obs has wrong dimension");
    }
    if (t < 1) throw UsageError("denoiser forward: t must be >= 1");

    const Tensor cond = cond_vector(t, obs, cfg);
    const int L = cfg.levels();

    Tensor h = transpose2d(noisy_actions);  // [action_dim, horizon]
    std::vector<Tensor> skips;
    skips.reserve(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
        h = apply_block(down_[static_cast<std::size_t>(i)], h, cond, cfg.kernel, cfg.groups,
                        diag.apply_film);
        skips.push_back(h);
        h = conv1d(h, ds_w_[static_cast<std::size_t>(i)], 2, (cfg.kernel - 1) / 2);
        h = channel_bias(h, ds_b_[static_cast<std::size_t>(i)]);
    }
    h = apply_block(mid_, h, cond, cfg.kernel, cfg.groups, diag.apply_film);
    for (int j = 0; j < L; ++j) {
        const int i = L - 1 - j;
        h = upsample_nearest2(h);
        Tensor skip = skips[static_cast<std::size_t>(i)];
        if (diag.zero_skips) skip = Tensor::zeros(skip.shape());
        h = concat_channels(h, skip);
        h = apply_block(up_[static_cast<std::size_t>(j)], h, cond, cfg.kernel, cfg.groups,
                        diag.apply_film);
    }
    h = conv1d(h, final_w_, 1, 0);
    h = channel_bias(h, final_b_);
    return transpose2d(h);  // [horizon, action_dim]
}

std::vector<std::pair<std::string, Tensor>> DenoiserNet::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto add_block = [&out](const std::string& prefix, const FilmConvBlock& b) {
        out.emplace_back(prefix + ".conv_w", b.conv_w);
        out.emplace_back(prefix + ".norm_scale", b.norm_scale);
        out.emplace_back(prefix + ".norm_shift", b.norm_shift);
        out.emplace_back(prefix + ".film_gamma_w", b.film_gamma_w);
        out.emplace_back(prefix + ".film_gamma_b", b.film_gamma_b);
        out.emplace_back(prefix + ".film_beta_w", b.film_beta_w);
        out.emplace_back(prefix + ".film_beta_b", b.film_beta_b);
        out.emplace_back(prefix + ".res_w", b.res_w);
    };
    for (std::size_t i = 0; i < down_.size(); ++i) {
        const std::string prefix = "down" + std::to_string(i);
        add_block(prefix, down_[i]);
        out.emplace_back(prefix + ".ds_w", ds_w_[i]);
        out.emplace_back(prefix + ".ds_b", ds_b_[i]);
    }
    add_block("mid", mid_);
    for (std::size_t j = 0; j < up_.size(); ++j) {
        add_block("up" + std::to_string(j), up_[j]);
    }
    out.emplace_back("final_w", final_w_);
    out.emplace_back("final_b", final_b_);
    return out;
}

std::vector<Tensor> DenoiserNet::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
}

std::int64_t DenoiserNet::parameter_count() const {
    std::int64_t n = 0;
    for (auto& [name, p] : named_parameters()) n += p.size();
    return n;
}

Tensor sample_chunk(const DenoiserNet& net, std::span<const double> obs,
                    const NoiseSchedule& sched, std::uint64_t rng_seed) {
    const auto& cfg = net.config();
    auto eps_model = [&](const Tensor& x, int t) { return net.forward(x, t, obs); };
    return sample_window(eps_model, cfg.horizon, cfg.action_dim, sched, rng_seed);
}

}  // namespace diffclone
