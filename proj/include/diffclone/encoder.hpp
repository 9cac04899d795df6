#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffclone/dataset.hpp"
#include "diffclone/mlp.hpp"
#include "diffclone/tensor.hpp"

namespace diffclone {

struct EncoderConfig {
    int obs_dim = 0;
    int embed_dim = 16;
    std::vector<int> hidden = {32};

    void validate() const;
};

// Small feed-forward encoder: raw observation vector -> embedding vector.
class EncoderNet {
public:
    EncoderNet() = default;

    static EncoderNet build(const EncoderConfig& config, std::uint64_t seed);

    const EncoderConfig& config() const { return config_; }

    // raw_obs: [obs_dim] or [batch, obs_dim]; differentiable.
    Tensor forward(const Tensor& raw_obs) const;

    // Inference convenience; records nothing on the tape.
    std::vector<double> encode(std::span<const double> raw_obs) const;

    // Encoding closure for the dataset pipeline; shares this net's parameters.
    ObsEncodeFn as_encode_fn() const;

    // Deep copy with independent storage.
    EncoderNet clone() const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;

private:
    EncoderConfig config_;
    Mlp mlp_;
};

// Momentum-contrast bookkeeping: EMA target encoder plus a FIFO queue of
// recent key embeddings.
struct MocoState {
    EncoderNet target;
    std::deque<std::vector<double>> queue;
    std::size_t capacity = 256;
    double momentum = 0.99;
    double temperature = 0.07;
};

MocoState make_moco_state(const EncoderNet& online, std::size_t capacity = 256,
                          double momentum = 0.99, double temperature = 0.07);

// target <- momentum * target + (1 - momentum) * online, elementwise.
// The target is never updated by gradients.
void momentum_update(MocoState& state, const std::vector<Tensor>& online_params);

// FIFO append; evicts the oldest entries beyond capacity.
void enqueue_keys(MocoState& state, const std::vector<std::vector<double>>& keys);

// -log( exp(q.k+/tau) / (exp(q.k+/tau) + sum_j exp(q.k-_j/tau)) ), computed
// with max-subtraction. Differentiable in q, k_pos, and the negatives.
Tensor infonce_loss(const Tensor& q, const Tensor& k_pos, const std::vector<Tensor>& negatives,
                    double tau);

// 2 - 2*cos(q_pred, z_target) on L2-normalized inputs; z_target is
// stop-gradient (its gradient is exactly zero).
Tensor byol_loss(const Tensor& q_pred, const Tensor& z_target);

// MSE( head(encode(obs_t1) - encode(obs_t)), state_t1 - state_t ).
Tensor delta_dynamics_loss(const EncoderNet& encoder, const Mlp& head,
                           std::span<const double> obs_t, std::span<const double> obs_t1,
                           std::span<const double> state_t, std::span<const double> state_t1);

enum class PretrainObjective { Moco, Byol, Delta };

// Accepts "moco", "byol", or "delta"; ConfigError otherwise.
PretrainObjective parse_objective(const std::string& name);
std::string objective_name(PretrainObjective objective);

struct PretrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    double aug_noise_sigma = 0.05;
    double aug_dropout_p = 0.1;
    std::size_t queue_capacity = 256;
    double momentum = 0.99;
    double temperature = 0.07;
};

// Trains the encoder in place; returns the mean loss per epoch.
// Views are augmented with additive Gaussian noise and coordinate dropout.
std::vector<double> pretrain(EncoderNet& encoder, const TrajectoryDataset& dataset,
                             PretrainObjective objective, int epochs, std::uint64_t seed,
                             const PretrainConfig& config = {});

}  // namespace diffclone
