#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffclone/dataset.hpp"
#include "diffclone/denoiser.hpp"
#include "diffclone/mlp.hpp"
#include "diffclone/schedule.hpp"
#include "diffclone/sim.hpp"

namespace diffclone {

// --- training reports --------------------------------------------------------

struct TrainEpoch {
    int epoch = 0;
    double loss = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<TrainEpoch> epochs;
};

// CSV `epoch,loss,seconds`, full round-trip number formatting, LF endings.
void write_train_csv(const TrainReport& report, const std::string& path);

// Shortest round-trip decimal form of a double (the one the CSVs use).
std::string format_double(double value);

// --- diffusion policy ---------------------------------------------------------

struct DiffClonePolicy {
    DenoiserNet denoiser;
    NoiseSchedule schedule;
    NormStats stats;
    ObsEncodeFn encode;  // identity when no pretrained encoder is attached
    int horizon = 16;
    int exec_horizon = 8;
};

struct DiffCloneTrainConfig {
    std::vector<int> channels = {32, 64};
    int kernel = 3;
    int groups = 4;
    int time_embed_dim = 32;
    int timesteps = 50;
    int batch_size = 128;
    double learning_rate = 1e-4;
    int epochs = 50;
    int exec_horizon = 8;
    NormStats stats;     // carried into the policy for inference
    ObsEncodeFn encode;  // empty -> identity
};

struct DiffCloneTrainResult {
    DiffClonePolicy policy;
    TrainReport report;
};

// Noise-prediction training: per sample draw t uniform in 1..T and eps,
// form x_t, minimize MSE(eps, denoiser(x_t, t, obs)). Epochs are seeded
// shuffles; batches are gradient-accumulated. Deterministic per seed.
DiffCloneTrainResult train_diffclone(const std::vector<TrainingWindow>& windows,
                                     const DiffCloneTrainConfig& config, std::uint64_t seed);

// Ancestral sampling conditioned on the normalized observation; rows come
// back denormalized, [horizon][action_dim].
std::vector<std::vector<double>> infer_chunk(const DiffClonePolicy& policy,
                                             std::span<const double> raw_obs,
                                             std::span<const double> joint, std::uint64_t seed);

// --- behavior cloning -----------------------------------------------------------

struct BcPolicy {
    Mlp net;
    NormStats stats;
    ObsEncodeFn encode;
};

struct BcTrainConfig {
    std::vector<int> hidden = {64, 64};
    int batch_size = 128;
    double learning_rate = 1e-3;
    int epochs = 100;
    NormStats stats;
    ObsEncodeFn encode;
};

struct BcTrainResult {
    BcPolicy policy;
    TrainReport report;
};

// Single-step regression MSE(net(obs), action) over horizon-1 windows.
BcTrainResult train_bc(const std::vector<TrainingWindow>& windows, const BcTrainConfig& config,
                       std::uint64_t seed);

std::vector<double> bc_predict(const BcPolicy& policy, std::span<const double> raw_obs,
                               std::span<const double> joint);

// --- nearest-neighbor baseline ---------------------------------------------------

struct VinnPolicy {
    std::vector<std::vector<double>> embeddings;  // normalized obs memory
    std::vector<std::vector<double>> actions;     // raw demonstration actions
    int k = 5;
    NormStats stats;
    ObsEncodeFn encode;
};

// Memory of every demonstration step: embedding = normalized
// (encode(raw_obs) (+) joint), action kept raw.
VinnPolicy make_vinn(const TrajectoryDataset& dataset, const NormStats& stats,
                     const ObsEncodeFn& encode, int k);

// k nearest by L2 (ties by insertion order), then the Euclidean-kernel
// average sum(exp(-d_i^2) a_i) / sum(exp(-d_i^2)). k=1 returns the nearest
// action verbatim.
std::vector<double> vinn_predict(const VinnPolicy& policy, std::span<const double> embedding);

// (memory index, normalized weight) of the selected neighbors, nearest first.
std::vector<std::pair<std::size_t, double>> vinn_neighbors(const VinnPolicy& policy,
                                                           std::span<const double> embedding);

// Embeds a raw observation like the memory entries, then predicts.
std::vector<double> vinn_act(const VinnPolicy& policy, std::span<const double> raw_obs,
                             std::span<const double> joint);

// --- receding-horizon control and evaluation --------------------------------------

// A chunk policy maps (raw observation, joint state, seed) to a list of
// denormalized actions; the controller executes a prefix of it.
using ChunkPolicyFn = std::function<std::vector<std::vector<double>>(
    std::span<const double>, std::span<const double>, std::uint64_t)>;

ChunkPolicyFn as_chunk_policy(const DiffClonePolicy& policy);
ChunkPolicyFn as_chunk_policy(const BcPolicy& policy);
ChunkPolicyFn as_chunk_policy(const VinnPolicy& policy);

// The scripted expert wrapped as a single-step chunk policy.
ChunkPolicyFn expert_chunk_policy(const EnvConfig& config, ExpertMode mode, double noise_scale);

struct RolloutTrace {
    std::vector<std::vector<double>> observations;  // raw obs before each action
    std::vector<std::vector<double>> actions;       // executed actions
};

struct EpisodeResult {
    double total_reward = 0.0;
    bool success = false;
    int steps = 0;
    int inferences = 0;
    RolloutTrace trace;
};

// Repeatedly infer a chunk and execute up to exec_horizon of its actions
// until the episode ends or max_steps executed actions are reached.
EpisodeResult receding_horizon_rollout(const ChunkPolicyFn& policy, int exec_horizon,
                                       const EnvConfig& config, EnvState& state, int max_steps,
                                       std::uint64_t seed);

struct EvalSummary {
    double mean_reward = 0.0;
    double success_rate_pct = 0.0;
    std::vector<EpisodeResult> episodes;
};

// Fresh episode per index with derived seeds; jobs > 1 runs episodes in
// parallel (results identical to the serial order).
EvalSummary evaluate(const ChunkPolicyFn& policy, int exec_horizon, const EnvConfig& config,
                     int n_episodes, std::uint64_t seed, int jobs = 1);

// CSV `episode,reward,success,steps` (success as 0/1), LF endings.
void write_eval_csv(const EvalSummary& summary, const std::string& path);

}  // namespace diffclone
