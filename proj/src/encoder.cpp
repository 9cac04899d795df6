#include "diffclone/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>

#include "diffclone/errors.hpp"
#include "diffclone/optim.hpp"
#include "diffclone/rng.hpp"
#include "tape.hpp"

namespace diffclone {

using detail::grad_buf;
using detail::make_tensor;
using detail::mark_in_graph;
using detail::push_record;
using detail::should_record;

void EncoderConfig::validate() const {
    if (obs_dim < 1) throw ConfigError("encoder: obs_dim must be positive");
    if (embed_dim < 1) throw ConfigError("encoder: embed_dim must be positive");
    for (int h : hidden)
        if (h < 1) throw ConfigError("encoder: hidden widths must be positive");
}

EncoderNet EncoderNet::build(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    EncoderNet net;
    net.config_ = config;
    net.mlp_ = Mlp::build(MlpConfig{config.obs_dim, config.hidden, config.embed_dim}, seed);
    return net;
}

Tensor EncoderNet::forward(const Tensor& raw_obs) const { return mlp_.forward(raw_obs); }

std::vector<double> EncoderNet::encode(std::span<const double> raw_obs) const {
    NoGradGuard guard;
    Tensor out = forward(Tensor::from_vector({config_.obs_dim},
                                             std::vector<double>(raw_obs.begin(), raw_obs.end())));
    return std::vector<double>(out.data().begin(), out.data().end());
}

ObsEncodeFn EncoderNet::as_encode_fn() const {
    EncoderNet shared = *this;  // shallow copy: shares parameter storage
    return [shared](std::span<const double> raw) { return shared.encode(raw); };
}

EncoderNet EncoderNet::clone() const {
    EncoderNet copy;
    copy.config_ = config_;
    copy.mlp_ = mlp_.clone();
    return copy;
}

std::vector<std::pair<std::string, Tensor>> EncoderNet::named_parameters() const {
    return mlp_.named_parameters();
}

std::vector<Tensor> EncoderNet::parameters() const { return mlp_.parameters(); }

// --- momentum contrast bookkeeping -----------------------------------------

MocoState make_moco_state(const EncoderNet& online, std::size_t capacity, double momentum,
                          double temperature) {
    if (capacity < 1) throw ConfigError("moco: queue capacity must be positive");
    if (momentum < 0.0 || momentum > 1.0) throw ConfigError("moco: momentum must lie in [0, 1]");
    if (temperature <= 0.0) throw ConfigError("moco: temperature must be positive");
    MocoState state;
    state.target = online.clone();
    state.capacity = capacity;
    state.momentum = momentum;
    state.temperature = temperature;
    return state;
}

namespace {

void ema_update(const std::vector<Tensor>& target_params,
                const std::vector<Tensor>& online_params, double m) {
    if (target_params.size() != online_params.size())
        throw ShapeError("momentum_update: parameter count mismatch");
    for (std::size_t i = 0; i < target_params.size(); ++i) {
        if (target_params[i].shape() != online_params[i].shape())
            throw ShapeError("momentum_update: parameter shape mismatch");
        Tensor target = target_params[i];  // shallow handle onto the same storage
        auto dst = target.data_mut();
        const auto src = online_params[i].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (1.0 - m) * src[j];
    }
}

}  // namespace

void momentum_update(MocoState& state, const std::vector<Tensor>& online_params) {
    ema_update(state.target.parameters(), online_params, state.momentum);
}

void enqueue_keys(MocoState& state, const std::vector<std::vector<double>>& keys) {
    const auto dim = static_cast<std::size_t>(state.target.config().embed_dim);
    for (const auto& key : keys) {
        if (key.size() != dim) throw ShapeError("enqueue_keys: key dimension mismatch");
        state.queue.push_back(key);
    }
    while (state.queue.size() > state.capacity) state.queue.pop_front();
}

// --- fused contrastive losses ----------------------------------------------

namespace {

void require_embedding(const Tensor& t, const Tensor& like, const char* what) {
    if (t.shape().size() != 1) throw ShapeError(std::string(what) + " must be a vector");
    if (t.shape() != like.shape()) throw ShapeError(std::string(what) + " dimension mismatch");
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

Tensor infonce_loss(const Tensor& q, const Tensor& k_pos, const std::vector<Tensor>& negatives,
                    double tau) {
    if (tau <= 0.0) throw ConfigError("infonce: temperature must be positive");
    if (q.shape().size() != 1) throw ShapeError("infonce: q must be a vector");
    require_embedding(k_pos, q, "infonce: k_pos");
    for (const auto& n : negatives) require_embedding(n, q, "infonce: negative");

    std::vector<double> logits;
    logits.reserve(negatives.size() + 1);
    logits.push_back(dot(q.data(), k_pos.data()) / tau);
    for (const auto& n : negatives) logits.push_back(dot(q.data(), n.data()) / tau);

    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l - top);
    const double loss = -(logits[0] - top) + std::log(denom);

    std::vector<double> prob(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) prob[j] = std::exp(logits[j] - top) / denom;

    bool any_rg = q.requires_grad() || k_pos.requires_grad();
    for (const auto& n : negatives) any_rg = any_rg || n.requires_grad();

    Tensor out = make_tensor({1}, {loss}, false);
    if (should_record(any_rg)) {
        out.impl()->requires_grad = true;
        mark_in_graph(q.impl());
        mark_in_graph(k_pos.impl());
        std::vector<std::shared_ptr<Tensor::Impl>> neg_impls;
        neg_impls.reserve(negatives.size());
        for (const auto& n : negatives) {
            mark_in_graph(n.impl());
            neg_impls.push_back(n.impl());
        }
        mark_in_graph(out.impl());
        auto qi = q.impl();
        auto ki = k_pos.impl();
        auto oi = out.impl();
        push_record("infonce_loss", [qi, ki, neg_impls, oi, prob, tau] {
            const auto& g = detail::out_grad(*oi);
            if (g.empty()) return;
            const double g0 = g[0];
            const std::size_t d = qi->data.size();
            if (qi->requires_grad) {
                auto& gq = grad_buf(*qi);
                for (std::size_t i = 0; i < d; ++i)
                    gq[i] += g0 * (prob[0] - 1.0) * ki->data[i] / tau;
                for (std::size_t j = 0; j < neg_impls.size(); ++j)
                    for (std::size_t i = 0; i < d; ++i)
                        gq[i] += g0 * prob[j + 1] * neg_impls[j]->data[i] / tau;
            }
            if (ki->requires_grad) {
                auto& gk = grad_buf(*ki);
                for (std::size_t i = 0; i < d; ++i)
                    gk[i] += g0 * (prob[0] - 1.0) * qi->data[i] / tau;
            }
            for (std::size_t j = 0; j < neg_impls.size(); ++j) {
                if (!neg_impls[j]->requires_grad) continue;
                auto& gn = grad_buf(*neg_impls[j]);
                for (std::size_t i = 0; i < d; ++i)
                    gn[i] += g0 * prob[j + 1] * qi->data[i] / tau;
            }
        });
    }
    return out;
}

Tensor byol_loss(const Tensor& q_pred, const Tensor& z_target) {
    if (q_pred.shape().size() != 1) throw ShapeError("byol: q_pred must be a vector");
    require_embedding(z_target, q_pred, "byol: z_target");

    const double nq = l2_norm(q_pred.data());
    const double nz = l2_norm(z_target.data());
    if (nq == 0.0 || nz == 0.0) throw UsageError("byol: zero-norm input");

    const std::size_t d = q_pred.data().size();
    std::vector<double> q_hat(d), z_hat(d);
    for (std::size_t i = 0; i < d; ++i) {
        q_hat[i] = q_pred.data()[i] / nq;
        z_hat[i] = z_target.data()[i] / nz;
    }
    const double cos = dot(q_hat, z_hat);
    Tensor out = make_tensor({1}, {2.0 - 2.0 * cos}, false);

    // z_target is stop-gradient: it is marked as a participant (so backward
    // leaves it an all-zero gradient) but never accumulated into.
    if (should_record(q_pred.requires_grad() || z_target.requires_grad())) {
        out.impl()->requires_grad = true;
        mark_in_graph(q_pred.impl());
        mark_in_graph(z_target.impl());
        mark_in_graph(out.impl());
        auto qi = q_pred.impl();
        auto oi = out.impl();
        push_record("byol_loss", [qi, oi, q_hat, z_hat, cos, nq] {
            const auto& g = detail::out_grad(*oi);
            if (g.empty() || !qi->requires_grad) return;
            auto& gq = grad_buf(*qi);
            for (std::size_t i = 0; i < gq.size(); ++i)
                gq[i] += g[0] * (-2.0 / nq) * (z_hat[i] - cos * q_hat[i]);
        });
    }
    return out;
}

Tensor delta_dynamics_loss(const EncoderNet& encoder, const Mlp& head,
                           std::span<const double> obs_t, std::span<const double> obs_t1,
                           std::span<const double> state_t, std::span<const double> state_t1) {
    if (state_t.size() != state_t1.size())
        throw ShapeError("delta_dynamics: state dimension mismatch");
    if (state_t.empty()) throw ShapeError("delta_dynamics: empty state");

    const int obs_dim = encoder.config().obs_dim;
    auto to_tensor = [](std::span<const double> v, int dim) {
        return Tensor::from_vector({dim}, std::vector<double>(v.begin(), v.end()));
    };
    Tensor e0 = encoder.forward(to_tensor(obs_t, obs_dim));
    Tensor e1 = encoder.forward(to_tensor(obs_t1, obs_dim));
    Tensor pred = head.forward(sub(e1, e0));

    const int state_dim = static_cast<int>(state_t.size());
    std::vector<double> delta(state_t.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = state_t1[i] - state_t[i];
    Tensor target = Tensor::from_vector({state_dim}, std::move(delta));
    return mse_loss(pred, target);
}

// --- pretraining ------------------------------------------------------------

PretrainObjective parse_objective(const std::string& name) {
    if (name == "moco") return PretrainObjective::Moco;
    if (name == "byol") return PretrainObjective::Byol;
    if (name == "delta") return PretrainObjective::Delta;
    throw ConfigError("unknown pretraining objective '" + name + "'");
}

std::string objective_name(PretrainObjective objective) {
    switch (objective) {
        case PretrainObjective::Moco: return "moco";
        case PretrainObjective::Byol: return "byol";
        case PretrainObjective::Delta: return "delta";
    }
    throw ConfigError("unknown pretraining objective");
}

namespace {

std::vector<double> augment(std::span<const double> x, Rng& rng, double sigma, double p) {
    std::vector<double> out(x.begin(), x.end());
    for (auto& v : out) v += sigma * rng.normal();
    for (auto& v : out)
        if (rng.uniform() < p) v = 0.0;
    return out;
}

}  // namespace

std::vector<double> pretrain(EncoderNet& encoder, const TrajectoryDataset& dataset,
                             PretrainObjective objective, int epochs, std::uint64_t seed,
                             const PretrainConfig& config) {
    validate(dataset);
    if (epochs < 0) throw ConfigError("pretrain: epochs must be >= 0");
    if (config.batch_size < 1) throw ConfigError("pretrain: batch_size must be positive");
    if (encoder.config().obs_dim != dataset.obs_dim)
        throw ConfigError("pretrain: encoder obs_dim does not match the dataset");

    // Sample pools. Contrastive objectives see individual steps; the delta
    // objective sees consecutive-step pairs.
    std::vector<const TrajectoryStep*> steps;
    std::vector<std::pair<const TrajectoryStep*, const TrajectoryStep*>> pairs;
    for (const auto& traj : dataset.trajectories) {
        for (std::size_t i = 0; i < traj.steps.size(); ++i) {
            steps.push_back(&traj.steps[i]);
            if (i + 1 < traj.steps.size()) pairs.emplace_back(&traj.steps[i], &traj.steps[i + 1]);
        }
    }
    if (steps.empty()) throw UsageError("pretrain: dataset has no steps");

    const int obs_dim = dataset.obs_dim;
    const int embed_dim = encoder.config().embed_dim;
    const double sigma = config.aug_noise_sigma;
    const double drop_p = config.aug_dropout_p;

    Rng shuffle_rng = Rng::stream(seed, "shuffle");
    Rng noise_rng = Rng::stream(seed, "noise");

    Mlp head;
    std::vector<Tensor> params = encoder.parameters();
    if (objective == PretrainObjective::Delta) {
        if (dataset.joint_dim < 1)
            throw ConfigError("pretrain: delta objective needs joint state");
        if (pairs.empty()) throw UsageError("pretrain: delta objective needs consecutive steps");
        head = Mlp::build(MlpConfig{embed_dim, {32}, dataset.joint_dim},
                          Rng::stream_seed(seed, "init"));
        for (const auto& p : head.parameters()) params.push_back(p);
    }
    if (epochs == 0) return {};

    AdamOptimizer opt(params, config.learning_rate);
    MocoState moco;
    EncoderNet byol_target;
    if (objective == PretrainObjective::Moco)
        moco = make_moco_state(encoder, config.queue_capacity, config.momentum,
                               config.temperature);
    if (objective == PretrainObjective::Byol) byol_target = encoder.clone();

    const std::size_t n_samples =
        objective == PretrainObjective::Delta ? pairs.size() : steps.size();
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<double> epoch_losses;
    epoch_losses.reserve(static_cast<std::size_t>(epochs));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n_samples;
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(n_samples, start + static_cast<std::size_t>(config.batch_size));
            const auto batch_n = static_cast<double>(stop - start);

            Tensor batch_loss = Tensor::scalar(0.0);
            std::vector<std::vector<double>> new_keys;
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = order[b];
                if (objective == PretrainObjective::Moco) {
                    const auto& x = steps[idx]->raw_obs;
                    auto v1 = augment(x, noise_rng, sigma, drop_p);
                    auto v2 = augment(x, noise_rng, sigma, drop_p);
                    Tensor q =
                        l2_normalize(encoder.forward(Tensor::from_vector({obs_dim}, v1)));
                    std::vector<double> key;
                    {
                        NoGradGuard guard;
                        Tensor kt = l2_normalize(
                            moco.target.forward(Tensor::from_vector({obs_dim}, v2)));
                        key.assign(kt.data().begin(), kt.data().end());
                    }
                    std::vector<Tensor> negatives;
                    negatives.reserve(moco.queue.size());
                    for (const auto& e : moco.queue)
                        negatives.push_back(Tensor::from_vector({embed_dim}, e));
                    batch_loss = add(batch_loss,
                                     infonce_loss(q, Tensor::from_vector({embed_dim}, key),
                                                  negatives, moco.temperature));
                    new_keys.push_back(std::move(key));
                } else if (objective == PretrainObjective::Byol) {
                    const auto& x = steps[idx]->raw_obs;
                    auto v1 = augment(x, noise_rng, sigma, drop_p);
                    auto v2 = augment(x, noise_rng, sigma, drop_p);
                    Tensor q = encoder.forward(Tensor::from_vector({obs_dim}, v1));
                    Tensor z;
                    {
                        NoGradGuard guard;
                        z = byol_target.forward(Tensor::from_vector({obs_dim}, v2));
                    }
                    batch_loss = add(batch_loss, byol_loss(q, z));
                } else {
                    const auto& [s0, s1] = pairs[idx];
                    auto a0 = augment(s0->raw_obs, noise_rng, sigma, drop_p);
                    auto a1 = augment(s1->raw_obs, noise_rng, sigma, drop_p);
                    batch_loss = add(batch_loss, delta_dynamics_loss(encoder, head, a0, a1,
                                                                     s0->joint_state,
                                                                     s1->joint_state));
                }
            }
            batch_loss = scale(batch_loss, 1.0 / batch_n);
            loss_sum += batch_loss.item() * batch_n;
            backward(batch_loss);
            opt.step();
            if (objective == PretrainObjective::Moco) {
                momentum_update(moco, encoder.parameters());
                enqueue_keys(moco, new_keys);
            } else if (objective == PretrainObjective::Byol) {
                ema_update(byol_target.parameters(), encoder.parameters(), config.momentum);
            }
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(n_samples));
    }
    return epoch_losses;
}

}  // namespace diffclone
