#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffclone/schedule.hpp"
#include "diffclone/tensor.hpp"

namespace diffclone {

// Architecture of the noise-prediction U-Net over action windows.
struct DenoiserConfig {
    int action_dim = 7;
    int horizon = 16;
    std::vector<int> channels = {32, 64};  // width per resolution level
    int kernel = 3;
    int groups = 4;
    int time_embed_dim = 32;
    int obs_dim = 0;  // set by caller; conditioning is obs (+) time embedding

    int levels() const { return static_cast<int>(channels.size()); }
    int cond_dim() const { return obs_dim + time_embed_dim; }

    // ConfigError on any violated invariant. The horizon must survive one
    // stride-2 downsample per level (bottleneck length = horizon / 2^levels).
    void validate() const;
};

// Sinusoidal timestep embedding: interleaved sin/cos at geometric
// frequencies, entries in [-1, 1]. dim must be even; t >= 1.
std::vector<double> time_embedding(int t, int dim);

// conv -> group_norm -> FiLM(cond) -> mish, added to a 1x1 projection of the
// block input. The residual path is what lets the net track input magnitude:
// group_norm alone would make every feature invariant to the input's scale,
// and a noise predictor has to be able to output something proportional to
// its input.
struct FilmConvBlock {
    Tensor conv_w;        // [out, in, k]
    Tensor norm_scale;    // [out]
    Tensor norm_shift;    // [out]
    Tensor film_gamma_w;  // [out, cond_dim]
    Tensor film_gamma_b;  // [out]
    Tensor film_beta_w;   // [out, cond_dim]
    Tensor film_beta_b;   // [out]
    Tensor res_w;         // [out, in, 1]
};

// Diagnostic switches for the property tests; defaults reproduce forward().
struct DenoiserDiag {
    bool apply_film = true;
    bool zero_skips = false;
};

class DenoiserNet {
public:
    // Fan-in-scaled uniform init (weights and biases U(+-1/sqrt(fan_in)),
    // norm scale 1, shift 0); parameter draws follow named_parameters order.
    static DenoiserNet build(const DenoiserConfig& config, std::uint64_t init_seed);

    const DenoiserConfig& config() const { return config_; }

    // noisy_actions: [horizon, action_dim]; obs: [obs_dim]; t >= 1.
    // Returns predicted noise with the input's shape.
    Tensor forward(const Tensor& noisy_actions, int t, std::span<const double> obs) const;
    Tensor forward_diag(const Tensor& noisy_actions, int t, std::span<const double> obs,
                        const DenoiserDiag& diag) const;

    // Stable declared order; drives init, checkpoints, and the optimizer.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::int64_t parameter_count() const;

private:
    DenoiserConfig config_;
    std::vector<FilmConvBlock> down_;
    std::vector<Tensor> ds_w_;  // stride-2 conv per level
    std::vector<Tensor> ds_b_;
    FilmConvBlock mid_;
    std::vector<FilmConvBlock> up_;  // in application order (deepest first)
    Tensor final_w_;  // [action_dim, channels[0], 1]
    Tensor final_b_;  // [action_dim]
};

// Ancestral sampling of one action window conditioned on obs, using the
// net's horizon/action_dim. Deterministic given rng_seed.
Tensor sample_chunk(const DenoiserNet& net, std::span<const double> obs,
                    const NoiseSchedule& sched, std::uint64_t rng_seed);

}  // namespace diffclone
