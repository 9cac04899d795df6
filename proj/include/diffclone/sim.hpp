#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diffclone/dataset.hpp"
#include "diffclone/rng.hpp"

namespace diffclone {

// 2D pouring toy: carry particles from the source around a wall to the
// target cup, then tilt past pour_tilt to release one particle per step.
struct EnvConfig {
    double arena_min = -1.0;
    double arena_max = 1.0;
    double wall_x = 0.0;  // vertical wall segment
    double wall_y_min = -0.3;
    double wall_y_max = 0.3;
    double source_x = -0.8;
    double source_y = 0.0;
    double target_x = 0.8;
    double target_y = 0.0;
    double target_radius = 0.12;
    int particles = 10;
    int max_steps = 80;
    int action_dim = 3;  // dx, dy, dtilt; further dims are inert
    double action_clip = 0.08;
    double pour_tilt = 1.0;      // |tilt| at or beyond this releases particles
    double success_fraction = 0.9;

    void validate() const;  // ConfigError on violated invariants
};

struct EnvState {
    double x = 0.0;
    double y = 0.0;
    double tilt = 0.0;
    int particles_remaining = 0;
    int particles_delivered = 0;
    int particles_spilled = 0;
    int step_index = 0;
    bool done = false;
};

// [x, y, sin(tilt), cos(tilt), remaining/P, target dx, target dy]
inline constexpr int kObsDim = 7;
std::vector<double> observe(const EnvConfig& config, const EnvState& state);

// Proprioceptive part of a record: [x, y, tilt].
inline constexpr int kJointDim = 3;
std::vector<double> joint_state(const EnvState& state);

// Gripper at the source with seeded y jitter of +-0.05, full particles.
EnvState reset(const EnvConfig& config, std::uint64_t seed);

struct StepOutcome {
    double reward = 0.0;
    bool done = false;
};

// Clips the action per axis, moves the gripper (motion crossing the wall
// segment is rejected on the x axis), updates tilt, then transfers one
// particle when |tilt| >= pour_tilt: to `delivered` (reward 1) inside the
// target radius, to `spilled` otherwise. UsageError on a done episode.
StepOutcome step(const EnvConfig& config, EnvState& state, std::span<const double> action);

// Per-axis clipping identical to what step applies.
std::vector<double> clip_action(const EnvConfig& config, std::span<const double> action);

enum class ExpertMode { Left, Right };

// Waypoint controller: detour via (wall_x, +-0.55), then the target, then
// tilt to pour. Gaussian noise of scale noise_scale is added per actuated
// axis (dx, dy, dtilt); padding axes past those stay zero.
std::vector<double> scripted_expert(const EnvConfig& config, const EnvState& state,
                                    ExpertMode mode, double noise_scale, Rng& rng);

// Expert demonstrations: modes alternate per episode, noise levels cycle,
// actions are recorded post-clipping. Deterministic per seed.
TrajectoryDataset generate_dataset(const EnvConfig& config, int n_episodes,
                                   const std::vector<double>& noise_levels, std::uint64_t seed);

}  // namespace diffclone
