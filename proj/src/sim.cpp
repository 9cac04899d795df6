#include "diffclone/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "diffclone/errors.hpp"

namespace diffclone {

void EnvConfig::validate() const {
    if (arena_min >= arena_max) throw ConfigError("env: empty arena");
    auto inside = [&](double vx, double vy) {
        return vx > arena_min && vx < arena_max && vy > arena_min && vy < arena_max;
    };
    if (!inside(source_x, source_y)) throw ConfigError("env: source outside the arena");
    if (!inside(target_x, target_y)) throw ConfigError("env: target outside the arena");
    if (wall_y_min > wall_y_max) throw ConfigError("env: inverted wall span");
    if (particles < 1) throw ConfigError("env: particles must be >= 1");
    if (max_steps < 1) throw ConfigError("env: max_steps must be >= 1");
    if (action_dim < 3) throw ConfigError("env: action_dim must be >= 3");
    if (action_clip <= 0.0) throw ConfigError("env: action_clip must be positive");
    if (target_radius <= 0.0) throw ConfigError("env: target_radius must be positive");
    if (pour_tilt <= 0.0) throw ConfigError("env: pour_tilt must be positive");
    if (success_fraction <= 0.0 || success_fraction > 1.0)
        throw ConfigError("env: success_fraction must lie in (0, 1]");
}

std::vector<double> observe(const EnvConfig& config, const EnvState& state) {
    return {state.x,
            state.y,
            std::sin(state.tilt),
            std::cos(state.tilt),
            static_cast<double>(state.particles_remaining) / config.particles,
            config.target_x - state.x,
            config.target_y - state.y};
}

std::vector<double> joint_state(const EnvState& state) { return {state.x, state.y, state.tilt}; }

EnvState reset(const EnvConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    EnvState state;
    state.x = config.source_x;
    state.y = config.source_y + rng.uniform(-0.05, 0.05);
    state.tilt = 0.0;
    state.particles_remaining = config.particles;
    return state;
}

std::vector<double> clip_action(const EnvConfig& config, std::span<const double> action) {
    if (static_cast<int>(action.size()) != config.action_dim)
        throw ShapeError("env: action dimension mismatch");
    std::vector<double> out(action.begin(), action.end());
    for (auto& v : out) v = std::clamp(v, -config.action_clip, config.action_clip);
    return out;
}

namespace {

// True when the straight move from (x0,y0) to (x1,y1) touches the wall
// segment. The wall is vertical at wall_x spanning [y_min, y_max].
bool crosses_wall(const EnvConfig& c, double x0, double y0, double x1, double y1) {
    if (x0 != x1) {
        const double lo = std::min(x0, x1);
        const double hi = std::max(x0, x1);
        if (lo > c.wall_x || hi < c.wall_x) return false;
        const double t = (c.wall_x - x0) / (x1 - x0);
        const double yc = y0 + t * (y1 - y0);
        return yc >= c.wall_y_min && yc <= c.wall_y_max;
    }
    // Pure vertical motion on the wall line: reject overlap with the span.
    if (x0 != c.wall_x) return false;
    const double lo = std::min(y0, y1);
    const double hi = std::max(y0, y1);
    return hi >= c.wall_y_min && lo <= c.wall_y_max;
}

}  // namespace

StepOutcome step(const EnvConfig& config, EnvState& state, std::span<const double> action) {
    if (state.done) throw UsageError("env: stepping a finished episode");
    const auto a = clip_action(config, action);

    double nx = std::clamp(state.x + a[0], config.arena_min, config.arena_max);
    double ny = std::clamp(state.y + a[1], config.arena_min, config.arena_max);
    if (crosses_wall(config, state.x, state.y, nx, ny)) nx = state.x;
    state.x = nx;
    state.y = ny;
    state.tilt += a[2];

    StepOutcome out;
    if (std::fabs(state.tilt) >= config.pour_tilt && state.particles_remaining > 0) {
        --state.particles_remaining;
        const double dx = state.x - config.target_x;
        const double dy = state.y - config.target_y;
        if (std::sqrt(dx * dx + dy * dy) <= config.target_radius) {
            ++state.particles_delivered;
            out.reward = 1.0;
        } else {
            ++state.particles_spilled;
        }
    }

    ++state.step_index;
    state.done = state.particles_remaining == 0 || state.step_index >= config.max_steps;
    out.done = state.done;
    return out;
}

std::vector<double> scripted_expert(const EnvConfig& config, const EnvState& state,
                                    ExpertMode mode, double noise_scale, Rng& rng) {
    std::vector<double> a(static_cast<std::size_t>(config.action_dim), 0.0);
    const double cl = config.action_clip;
    auto aim = [&](double tx, double ty) {
        a[0] = std::clamp(tx - state.x, -cl, cl);
        a[1] = std::clamp(ty - state.y, -cl, cl);
    };

    const double dx = state.x - config.target_x;
    const double dy = state.y - config.target_y;
    const double target_dist = std::sqrt(dx * dx + dy * dy);
    if (target_dist <= 0.6 * config.target_radius) {
        // Over the cup: hold position and tilt until particles flow.
        aim(config.target_x, config.target_y);
        if (std::fabs(state.tilt) < config.pour_tilt) a[2] = cl;
    } else if (state.x >= config.wall_x - 0.02) {
        // Level with or past the wall: head straight for the cup. Any
        // remaining wall crossing happens out at the detour lane.
        aim(config.target_x, config.target_y);
    } else {
        const double lane = mode == ExpertMode::Left ? 0.55 : -0.55;
        aim(config.wall_x, lane);
    }
    if (noise_scale > 0.0) {
        // Perturb only the actuated axes (dx, dy, dtilt); padding axes beyond
        // them are ignored by the dynamics and stay zero.
        const std::size_t actuated = std::min<std::size_t>(a.size(), 3);
        for (std::size_t i = 0; i < actuated; ++i) a[i] += noise_scale * rng.normal();
    }
    return a;
}

TrajectoryDataset generate_dataset(const EnvConfig& config, int n_episodes,
                                   const std::vector<double>& noise_levels, std::uint64_t seed) {
    config.validate();
    if (n_episodes < 1) throw ConfigError("generate_dataset: n_episodes must be >= 1");
    if (noise_levels.empty()) throw ConfigError("generate_dataset: noise_levels must be nonempty");

    TrajectoryDataset dataset;
    dataset.obs_dim = kObsDim;
    dataset.joint_dim = kJointDim;
    dataset.action_dim = config.action_dim;

    for (int e = 0; e < n_episodes; ++e) {
        const std::string tag = std::to_string(e);
        const auto mode = e % 2 == 0 ? ExpertMode::Left : ExpertMode::Right;
        const double noise = noise_levels[static_cast<std::size_t>(e) % noise_levels.size()];
        EnvState state = reset(config, Rng::stream_seed(seed, "env-" + tag));
        Rng expert_rng = Rng::stream(seed, "expert-" + tag);

        Trajectory traj;
        traj.id = "ep-" + std::string(5 - std::min<std::size_t>(5, tag.size()), '0') + tag;
        while (!state.done) {
            TrajectoryStep record;
            record.raw_obs = observe(config, state);
            record.joint_state = joint_state(state);
            record.action =
                clip_action(config, scripted_expert(config, state, mode, noise, expert_rng));
            record.reward = step(config, state, record.action).reward;
            traj.steps.push_back(std::move(record));
        }
        dataset.trajectories.push_back(std::move(traj));
    }
    return dataset;
}

}  // namespace diffclone
