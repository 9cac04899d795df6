#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffclone/tensor.hpp"

namespace diffclone {

struct TrajectoryStep {
    std::vector<double> raw_obs;
    std::vector<double> joint_state;
    std::vector<double> action;
    double reward = 0.0;
};

struct Trajectory {
    std::string id;
    std::vector<TrajectoryStep> steps;

    double total_reward() const;
};

struct TrajectoryDataset {
    int obs_dim = 0;
    int joint_dim = 0;
    int action_dim = 0;
    std::vector<Trajectory> trajectories;

    std::size_t size() const { return trajectories.size(); }
};

// UsageError when a trajectory is empty, has inconsistent dimensions, or
// carries a non-finite reward.
void validate(const TrajectoryDataset& dataset);

// Newline-delimited records: header line
//   {"format":"diffclone-traj","version":1,"obs_dim":..,"joint_dim":..,"action_dim":..}
// then one {"id":..,"steps":[..]} object per trajectory, numbers at full
// round-trip precision. Serialization is byte-deterministic.
void save(const TrajectoryDataset& dataset, const std::string& path);
TrajectoryDataset load(const std::string& path);

// Keeps trajectories with total episode reward >= tau, in original order.
// EmptySelectionError when nothing survives.
TrajectoryDataset filter_threshold(const TrajectoryDataset& dataset, double tau);

// Keeps the ceil(q*N) highest-total trajectories (ties by id ascending,
// then input position), in original order. q in (0, 1].
TrajectoryDataset filter_top_fraction(const TrajectoryDataset& dataset, double q);

// Keeps steps 0, period, 2*period, ...
Trajectory subsample(const Trajectory& traj, int period);

struct NormStats {
    std::vector<double> obs_mean;
    std::vector<double> obs_std;
    std::vector<double> act_mean;
    std::vector<double> act_std;
    double epsilon = 1e-6;
};

void save_norm_stats(const NormStats& stats, const std::string& path);
NormStats load_norm_stats(const std::string& path);

// Maps a raw observation to the vector the policy conditions on (before
// joint-state concatenation and normalization).
using ObsEncodeFn = std::function<std::vector<double>(std::span<const double>)>;

ObsEncodeFn identity_encoder();

// Population mean/std per dimension across every step, std floored at
// epsilon. Observation statistics cover encode(raw_obs) (+) joint_state.
NormStats compute_norm_stats(const TrajectoryDataset& dataset, const ObsEncodeFn& encode);
NormStats compute_norm_stats(const TrajectoryDataset& dataset);  // identity encoder

// Elementwise z-score and its inverse.
std::vector<double> normalize(std::span<const double> x, std::span<const double> mean,
                              std::span<const double> std_dev);
std::vector<double> denormalize(std::span<const double> x, std::span<const double> mean,
                                std::span<const double> std_dev);

struct TrainingWindow {
    std::vector<double> obs;  // normalized encode(raw_obs) (+) joint_state
    Tensor actions;           // normalized [H, action_dim]
    int pad_count = 0;
};

// One window per timestep; action tails past the episode end repeat the
// final real action (pad_count records how many).
std::vector<TrainingWindow> make_windows(const Trajectory& traj, int horizon,
                                         const NormStats& stats, const ObsEncodeFn& encode);

}  // namespace diffclone
