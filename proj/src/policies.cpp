#include "diffclone/policies.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <exception>
#include <fstream>
#include <numeric>
#include <system_error>
#include <utility>

#include "diffclone/errors.hpp"
#include "diffclone/optim.hpp"
#include "diffclone/rng.hpp"

namespace diffclone {

namespace {

// encode(raw) (+) joint, the observation layout every policy trains on.
std::vector<double> encoded_obs(const ObsEncodeFn& encode, std::span<const double> raw,
                                std::span<const double> joint) {
    std::vector<double> out = encode ? encode(raw)
                                     : std::vector<double>(raw.begin(), raw.end());
    out.insert(out.end(), joint.begin(), joint.end());
    return out;
}

void check_windows(const std::vector<TrainingWindow>& windows) {
    if (windows.empty()) throw UsageError("training requires at least one window");
    const auto& first = windows.front();
    for (const auto& w : windows) {
        if (w.obs.size() != first.obs.size() || w.actions.shape() != first.actions.shape())
            throw ShapeError("training windows disagree on observation or action shape");
    }
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string format_double(double value) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (res.ec != std::errc{}) throw Error("failed to format a number");
    return std::string(buf.data(), res.ptr);
}

void write_train_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "epoch,loss,seconds\n";
    for (const TrainEpoch& row : report.epochs) {
        out << row.epoch << ',' << format_double(row.loss) << ',' << format_double(row.seconds)
            << '\n';
    }
    if (!out) throw Error("failed while writing " + path);
}

void write_eval_csv(const EvalSummary& summary, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "episode,reward,success,steps\n";
    for (std::size_t i = 0; i < summary.episodes.size(); ++i) {
        const EpisodeResult& ep = summary.episodes[i];
        out << i << ',' << format_double(ep.total_reward) << ',' << (ep.success ? 1 : 0) << ','
            << ep.steps << '\n';
    }
    if (!out) throw Error("failed while writing " + path);
}

// --- diffusion policy ---------------------------------------------------------

DiffCloneTrainResult train_diffclone(const std::vector<TrainingWindow>& windows,
                                     const DiffCloneTrainConfig& config, std::uint64_t seed) {
    check_windows(windows);
    if (config.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (config.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(config.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (config.timesteps < 1) throw ConfigError("train: timesteps must be >= 1");

    const std::vector<int>& action_shape = windows.front().actions.shape();
    const int horizon = action_shape[0];
    const int action_dim = action_shape[1];
    if (config.exec_horizon < 1 || config.exec_horizon > horizon)
        throw ConfigError("train: exec_horizon must be in 1..horizon");

    DenoiserConfig net_config;
    net_config.action_dim = action_dim;
    net_config.horizon = horizon;
    net_config.channels = config.channels;
    net_config.kernel = config.kernel;
    net_config.groups = config.groups;
    net_config.time_embed_dim = config.time_embed_dim;
    net_config.obs_dim = static_cast<int>(windows.front().obs.size());

    DiffCloneTrainResult result;
    result.policy.denoiser = DenoiserNet::build(net_config, Rng::stream_seed(seed, "init"));
    result.policy.schedule = NoiseSchedule::square_cosine(config.timesteps);
    result.policy.stats = config.stats;
    result.policy.encode = config.encode ? config.encode : identity_encoder();
    result.policy.horizon = horizon;
    result.policy.exec_horizon = config.exec_horizon;
    if (config.epochs == 0) return result;

    AdamOptimizer opt(result.policy.denoiser.parameters(), config.learning_rate);
    Rng shuffle_rng = Rng::stream(seed, "shuffle");
    Rng noise_rng = Rng::stream(seed, "noise");
    const int n = static_cast<int>(windows.size());
    std::vector<int> order(windows.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (int begin = 0; begin < n; begin += config.batch_size) {
            const int batch_n = std::min(config.batch_size, n - begin);
            Tensor batch_loss;
            for (int j = 0; j < batch_n; ++j) {
                const TrainingWindow& w = windows[static_cast<std::size_t>(order[begin + j])];
                const int t = noise_rng.uniform_int(1, config.timesteps);
                const Tensor eps = Tensor::randn({horizon, action_dim}, noise_rng);
                const Tensor x_t = add_noise(w.actions, eps, t, result.policy.schedule);
                const Tensor pred = result.policy.denoiser.forward(x_t, t, w.obs);
                const Tensor sample_loss = mse_loss(pred, eps);
                batch_loss = (j == 0) ? sample_loss : add(batch_loss, sample_loss);
            }
            batch_loss = scale(batch_loss, 1.0 / batch_n);
            backward(batch_loss);
            opt.step();
            loss_sum += batch_loss.item() * batch_n;
        }
        result.report.epochs.push_back({epoch, loss_sum / n, elapsed_seconds(start)});
    }
    return result;
}

std::vector<std::vector<double>> infer_chunk(const DiffClonePolicy& policy,
                                             std::span<const double> raw_obs,
                                             std::span<const double> joint, std::uint64_t seed) {
    const std::vector<double> obs = encoded_obs(policy.encode, raw_obs, joint);
    const std::vector<double> obs_n =
        normalize(obs, policy.stats.obs_mean, policy.stats.obs_std);
    const Tensor chunk = sample_chunk(policy.denoiser, obs_n, policy.schedule, seed);
    const int horizon = chunk.dim(0);
    const int action_dim = chunk.dim(1);
    const std::span<const double> flat = chunk.data();
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(horizon));
    for (int h = 0; h < horizon; ++h) {
        rows[static_cast<std::size_t>(h)] =
            denormalize(flat.subspan(static_cast<std::size_t>(h) * action_dim,
                                     static_cast<std::size_t>(action_dim)),
                        policy.stats.act_mean, policy.stats.act_std);
    }
    return rows;
}

// --- behavior cloning -----------------------------------------------------------

BcTrainResult train_bc(const std::vector<TrainingWindow>& windows, const BcTrainConfig& config,
                       std::uint64_t seed) {
    check_windows(windows);
    if (config.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (config.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(config.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (windows.front().actions.dim(0) != 1)
        throw ConfigError("behavior cloning expects horizon-1 windows");

    const int obs_dim = static_cast<int>(windows.front().obs.size());
    const int action_dim = windows.front().actions.dim(1);

    MlpConfig net_config;
    net_config.in_dim = obs_dim;
    net_config.hidden = config.hidden;
    net_config.out_dim = action_dim;

    BcTrainResult result;
    result.policy.net = Mlp::build(net_config, Rng::stream_seed(seed, "init"));
    result.policy.stats = config.stats;
    result.policy.encode = config.encode ? config.encode : identity_encoder();
    if (config.epochs == 0) return result;

    AdamOptimizer opt(result.policy.net.parameters(), config.learning_rate);
    Rng shuffle_rng = Rng::stream(seed, "shuffle");
    const int n = static_cast<int>(windows.size());
    std::vector<int> order(windows.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (int begin = 0; begin < n; begin += config.batch_size) {
            const int batch_n = std::min(config.batch_size, n - begin);
            std::vector<double> obs_flat(static_cast<std::size_t>(batch_n) * obs_dim);
            std::vector<double> act_flat(static_cast<std::size_t>(batch_n) * action_dim);
            for (int j = 0; j < batch_n; ++j) {
                const TrainingWindow& w = windows[static_cast<std::size_t>(order[begin + j])];
                std::copy(w.obs.begin(), w.obs.end(),
                          obs_flat.begin() + static_cast<std::size_t>(j) * obs_dim);
                const std::span<const double> row = w.actions.data();
                std::copy(row.begin(), row.end(),
                          act_flat.begin() + static_cast<std::size_t>(j) * action_dim);
            }
            const Tensor obs_mat = Tensor::from_vector({batch_n, obs_dim}, std::move(obs_flat));
            const Tensor act_mat =
                Tensor::from_vector({batch_n, action_dim}, std::move(act_flat));
            const Tensor loss = mse_loss(result.policy.net.forward(obs_mat), act_mat);
            backward(loss);
            opt.step();
            loss_sum += loss.item() * batch_n;
        }
        result.report.epochs.push_back({epoch, loss_sum / n, elapsed_seconds(start)});
    }
    return result;
}

std::vector<double> bc_predict(const BcPolicy& policy, std::span<const double> raw_obs,
                               std::span<const double> joint) {
    NoGradGuard guard;
    const std::vector<double> obs = encoded_obs(policy.encode, raw_obs, joint);
    std::vector<double> obs_n = normalize(obs, policy.stats.obs_mean, policy.stats.obs_std);
    const int obs_dim = static_cast<int>(obs_n.size());
    const Tensor out =
        policy.net.forward(Tensor::from_vector({obs_dim}, std::move(obs_n)));
    return denormalize(out.data(), policy.stats.act_mean, policy.stats.act_std);
}

// --- nearest-neighbor baseline ---------------------------------------------------

VinnPolicy make_vinn(const TrajectoryDataset& dataset, const NormStats& stats,
                     const ObsEncodeFn& encode, int k) {
    validate(dataset);
    if (k < 1) throw ConfigError("vinn: k must be >= 1");
    VinnPolicy policy;
    policy.k = k;
    policy.stats = stats;
    policy.encode = encode ? encode : identity_encoder();
    for (const Trajectory& traj : dataset.trajectories) {
        for (const TrajectoryStep& step : traj.steps) {
            const std::vector<double> obs =
                encoded_obs(policy.encode, step.raw_obs, step.joint_state);
            policy.embeddings.push_back(normalize(obs, stats.obs_mean, stats.obs_std));
            policy.actions.push_back(step.action);
        }
    }
    if (k > static_cast<int>(policy.embeddings.size()))
        throw ConfigError("vinn: k exceeds the demonstration memory size");
    return policy;
}

namespace {

// Indices of the k nearest memory entries with their squared distances,
// nearest first; exact ties resolve to the earlier insertion.
std::vector<std::pair<std::size_t, double>> nearest_entries(const VinnPolicy& policy,
                                                            std::span<const double> embedding) {
    if (policy.embeddings.empty()) throw UsageError("vinn: empty memory");
    if (embedding.size() != policy.embeddings.front().size())
        throw ShapeError("vinn: query dimension does not match the memory");
    if (policy.k < 1 || policy.k > static_cast<int>(policy.embeddings.size()))
        throw ConfigError("vinn: k exceeds the demonstration memory size");
    std::vector<std::pair<std::size_t, double>> ranked(policy.embeddings.size());
    for (std::size_t i = 0; i < policy.embeddings.size(); ++i) {
        const std::vector<double>& m = policy.embeddings[i];
        double d2 = 0.0;
        for (std::size_t j = 0; j < m.size(); ++j) {
            const double diff = embedding[j] - m[j];
            d2 += diff * diff;
        }
        ranked[i] = {i, d2};
    }
    const auto by_distance = [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    };
    const auto mid = ranked.begin() + policy.k;
    std::partial_sort(ranked.begin(), mid, ranked.end(), by_distance);
    ranked.resize(static_cast<std::size_t>(policy.k));
    return ranked;
}

}  // namespace

std::vector<double> vinn_predict(const VinnPolicy& policy, std::span<const double> embedding) {
    const auto selected = nearest_entries(policy, embedding);
    if (policy.k == 1) return policy.actions[selected.front().first];
    const std::size_t action_dim = policy.actions.front().size();
    std::vector<double> numerator(action_dim, 0.0);
    double denominator = 0.0;
    for (const auto& [index, d2] : selected) {
        const double w = std::exp(-d2);
        const std::vector<double>& action = policy.actions[index];
        for (std::size_t j = 0; j < action_dim; ++j) numerator[j] += w * action[j];
        denominator += w;
    }
    for (double& v : numerator) v /= denominator;
    return numerator;
}

std::vector<std::pair<std::size_t, double>> vinn_neighbors(const VinnPolicy& policy,
                                                           std::span<const double> embedding) {
    auto selected = nearest_entries(policy, embedding);
    double total = 0.0;
    for (const auto& [index, d2] : selected) total += std::exp(-d2);
    for (auto& [index, d2] : selected) d2 = std::exp(-d2) / total;
    return selected;
}

std::vector<double> vinn_act(const VinnPolicy& policy, std::span<const double> raw_obs,
                             std::span<const double> joint) {
    const std::vector<double> obs = encoded_obs(policy.encode, raw_obs, joint);
    const std::vector<double> obs_n = normalize(obs, policy.stats.obs_mean, policy.stats.obs_std);
    return vinn_predict(policy, obs_n);
}

// --- receding-horizon control and evaluation --------------------------------------

ChunkPolicyFn as_chunk_policy(const DiffClonePolicy& policy) {
    return [policy](std::span<const double> raw_obs, std::span<const double> joint,
                    std::uint64_t seed) { return infer_chunk(policy, raw_obs, joint, seed); };
}

ChunkPolicyFn as_chunk_policy(const BcPolicy& policy) {
    return [policy](std::span<const double> raw_obs, std::span<const double> joint,
                    std::uint64_t) {
        return std::vector<std::vector<double>>{bc_predict(policy, raw_obs, joint)};
    };
}

ChunkPolicyFn as_chunk_policy(const VinnPolicy& policy) {
    return [policy](std::span<const double> raw_obs, std::span<const double> joint,
                    std::uint64_t) {
        return std::vector<std::vector<double>>{vinn_act(policy, raw_obs, joint)};
    };
}

ChunkPolicyFn expert_chunk_policy(const EnvConfig& config, ExpertMode mode, double noise_scale) {
    return [config, mode, noise_scale](std::span<const double>, std::span<const double> joint,
                                       std::uint64_t seed) {
        if (joint.size() < 3) throw ShapeError("expert policy needs [x, y, tilt] joint state");
        EnvState state;
        state.x = joint[0];
        state.y = joint[1];
        state.tilt = joint[2];
        Rng rng(seed);
        return std::vector<std::vector<double>>{
            scripted_expert(config, state, mode, noise_scale, rng)};
    };
}

EpisodeResult receding_horizon_rollout(const ChunkPolicyFn& policy, int exec_horizon,
                                       const EnvConfig& config, EnvState& state, int max_steps,
                                       std::uint64_t seed) {
    if (!policy) throw UsageError("rollout requires a policy");
    if (exec_horizon < 1) throw ConfigError("rollout: exec_horizon must be >= 1");
    if (max_steps < 1) throw ConfigError("rollout: max_steps must be >= 1");
    if (state.done) throw UsageError("rollout: episode already finished");

    EpisodeResult result;
    while (!state.done && result.steps < max_steps) {
        const std::vector<double> obs = observe(config, state);
        const std::vector<double> joint = joint_state(state);
        const std::uint64_t chunk_seed =
            Rng::stream_seed(seed, "chunk-" + std::to_string(result.inferences));
        const std::vector<std::vector<double>> chunk = policy(obs, joint, chunk_seed);
        if (chunk.empty()) throw UsageError("rollout: policy returned an empty chunk");
        ++result.inferences;
        const int take = std::min(exec_horizon, static_cast<int>(chunk.size()));
        for (int j = 0; j < take && !state.done && result.steps < max_steps; ++j) {
            result.trace.observations.push_back(observe(config, state));
            result.trace.actions.push_back(chunk[static_cast<std::size_t>(j)]);
            const StepOutcome outcome = step(config, state, chunk[static_cast<std::size_t>(j)]);
            result.total_reward += outcome.reward;
            ++result.steps;
        }
    }
    // Small slack so fraction * particles landing a hair above an integer
    // (0.9 * 10 in floating point) still counts delivery of that integer.
    result.success = static_cast<double>(state.particles_delivered) >=
                     config.success_fraction * config.particles - 1e-9;
    return result;
}

EvalSummary evaluate(const ChunkPolicyFn& policy, int exec_horizon, const EnvConfig& config,
                     int n_episodes, std::uint64_t seed, int jobs) {
    if (n_episodes < 1) throw ConfigError("evaluate: n_episodes must be >= 1");
    if (jobs < 1) throw ConfigError("evaluate: jobs must be >= 1");
    config.validate();

    EvalSummary summary;
    summary.episodes.resize(static_cast<std::size_t>(n_episodes));
    const auto run_one = [&](int i) {
        const std::uint64_t ep_seed = Rng::stream_seed(seed, "eval-" + std::to_string(i));
        EnvState state = reset(config, Rng::stream_seed(ep_seed, "env"));
        summary.episodes[static_cast<std::size_t>(i)] = receding_horizon_rollout(
            policy, exec_horizon, config, state, config.max_steps,
            Rng::stream_seed(ep_seed, "policy"));
    };
    if (jobs > 1) {
        std::exception_ptr error = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
        for (int i = 0; i < n_episodes; ++i) {
            try {
                run_one(i);
            } catch (...) {
#pragma omp critical
                if (!error) error = std::current_exception();
            }
        }
        if (error) std::rethrow_exception(error);
    } else {
        for (int i = 0; i < n_episodes; ++i) run_one(i);
    }

    int successes = 0;
    double reward_sum = 0.0;
    for (const EpisodeResult& ep : summary.episodes) {
        reward_sum += ep.total_reward;
        if (ep.success) ++successes;
    }
    summary.mean_reward = reward_sum / n_episodes;
    summary.success_rate_pct = 100.0 * successes / n_episodes;
    return summary;
}

}  // namespace diffclone
