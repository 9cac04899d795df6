#include "diffclone/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <string>

#include <json.hpp>

#include "diffclone/errors.hpp"

namespace diffclone {

using ordered_json = nlohmann::ordered_json;

double Trajectory::total_reward() const {
    double total = 0.0;
    for (const auto& step : steps) total += step.reward;
    return total;
}

void validate(const TrajectoryDataset& dataset) {
    if (dataset.obs_dim < 1 || dataset.joint_dim < 0 || dataset.action_dim < 1)
        throw UsageError("dataset dimensions must be positive");
    for (const auto& traj : dataset.trajectories) {
        if (traj.steps.empty())
            throw UsageError("trajectory '" + traj.id + "' has no steps");
        for (const auto& step : traj.steps) {
            if (static_cast<int>(step.raw_obs.size()) != dataset.obs_dim ||
                static_cast<int>(step.joint_state.size()) != dataset.joint_dim ||
                static_cast<int>(step.action.size()) != dataset.action_dim)
                throw UsageError("trajectory '" + traj.id + "' has inconsistent dimensions");
            if (!std::isfinite(step.reward))
                throw UsageError("trajectory '" + traj.id + "' has a non-finite reward");
        }
    }
}

namespace {

ordered_json vector_to_json(const std::vector<double>& v) {
    return ordered_json(v);
}

std::vector<double> json_to_vector(const ordered_json& j, const std::string& traj_id,
                                   const char* field) {
    if (!j.is_array())
        throw CorruptionError("trajectory '" + traj_id + "': field '" + field +
                              "' is not an array");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& e : j) {
        if (!e.is_number())
            throw CorruptionError("trajectory '" + traj_id + "': field '" + field +
                                  "' holds a non-number");
        out.push_back(e.get<double>());
    }
    return out;
}

}  // namespace

void save(const TrajectoryDataset& dataset, const std::string& path) {
    validate(dataset);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");

    ordered_json header;
    header["format"] = "diffclone-traj";
    header["version"] = 1;
    header["obs_dim"] = dataset.obs_dim;
    header["joint_dim"] = dataset.joint_dim;
    header["action_dim"] = dataset.action_dim;
    out << header.dump() << '\n';

    for (const auto& traj : dataset.trajectories) {
        ordered_json rec;
        rec["id"] = traj.id;
        ordered_json steps = ordered_json::array();
        for (const auto& step : traj.steps) {
            ordered_json s;
            s["obs"] = vector_to_json(step.raw_obs);
            s["joint"] = vector_to_json(step.joint_state);
            s["action"] = vector_to_json(step.action);
            s["reward"] = step.reward;
            steps.push_back(std::move(s));
        }
        rec["steps"] = std::move(steps);
        out << rec.dump() << '\n';
    }
    if (!out) throw Error("failed writing '" + path + "'");
}

TrajectoryDataset load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");

    std::string line;
    if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");

    ordered_json header = ordered_json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object())
        throw FormatError("'" + path + "' has an unparsable header");
    if (!header.contains("format") || header["format"] != "diffclone-traj")
        throw FormatError("'" + path + "' is not a diffclone-traj file");
    if (!header.contains("version") || header["version"] != 1)
        throw FormatError("'" + path + "' has an unsupported version");
    for (const char* key : {"obs_dim", "joint_dim", "action_dim"})
        if (!header.contains(key) || !header[key].is_number_integer())
            throw FormatError("'" + path + "' header lacks integer '" + std::string(key) + "'");

    TrajectoryDataset dataset;
    dataset.obs_dim = header["obs_dim"].get<int>();
    dataset.joint_dim = header["joint_dim"].get<int>();
    dataset.action_dim = header["action_dim"].get<int>();

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json rec = ordered_json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object())
            throw CorruptionError("'" + path + "' has a truncated or malformed record");
        if (!rec.contains("id") || !rec["id"].is_string() || !rec.contains("steps") ||
            !rec["steps"].is_array())
            throw CorruptionError("'" + path + "' has a record without id/steps");

        Trajectory traj;
        traj.id = rec["id"].get<std::string>();
        if (rec["steps"].empty())
            throw CorruptionError("trajectory '" + traj.id + "' has no steps");
        for (const auto& s : rec["steps"]) {
            if (!s.is_object() || !s.contains("obs") || !s.contains("joint") ||
                !s.contains("action") || !s.contains("reward") || !s["reward"].is_number())
                throw CorruptionError("trajectory '" + traj.id + "' has a malformed step");
            TrajectoryStep step;
            step.raw_obs = json_to_vector(s["obs"], traj.id, "obs");
            step.joint_state = json_to_vector(s["joint"], traj.id, "joint");
            step.action = json_to_vector(s["action"], traj.id, "action");
            step.reward = s["reward"].get<double>();
            if (static_cast<int>(step.raw_obs.size()) != dataset.obs_dim ||
                static_cast<int>(step.joint_state.size()) != dataset.joint_dim ||
                static_cast<int>(step.action.size()) != dataset.action_dim)
                throw CorruptionError("trajectory '" + traj.id +
                                      "' does not match the header dimensions");
            traj.steps.push_back(std::move(step));
        }
        dataset.trajectories.push_back(std::move(traj));
    }
    return dataset;
}

TrajectoryDataset filter_threshold(const TrajectoryDataset& dataset, double tau) {
    if (dataset.trajectories.empty()) throw UsageError("cannot filter an empty dataset");
    TrajectoryDataset out;
    out.obs_dim = dataset.obs_dim;
    out.joint_dim = dataset.joint_dim;
    out.action_dim = dataset.action_dim;
    for (const auto& traj : dataset.trajectories)
        if (traj.total_reward() >= tau) out.trajectories.push_back(traj);
    if (out.trajectories.empty())
        throw EmptySelectionError("no trajectory reaches reward threshold");
    return out;
}

TrajectoryDataset filter_top_fraction(const TrajectoryDataset& dataset, double q) {
    if (dataset.trajectories.empty()) throw UsageError("cannot filter an empty dataset");
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("top fraction must lie in (0, 1]");

    const std::size_t n = dataset.trajectories.size();
    // Nudge keeps an exactly-integral q*n from spilling into the next bucket.
    auto keep = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
    keep = std::clamp<std::size_t>(keep, 1, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ra = dataset.trajectories[a].total_reward();
        const double rb = dataset.trajectories[b].total_reward();
        if (ra != rb) return ra > rb;
        return dataset.trajectories[a].id < dataset.trajectories[b].id;
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());

    TrajectoryDataset out;
    out.obs_dim = dataset.obs_dim;
    out.joint_dim = dataset.joint_dim;
    out.action_dim = dataset.action_dim;
    for (std::size_t idx : order) out.trajectories.push_back(dataset.trajectories[idx]);
    return out;
}

Trajectory subsample(const Trajectory& traj, int period) {
    if (period < 1) throw ConfigError("subsample period must be >= 1");
    Trajectory out;
    out.id = traj.id;
    for (std::size_t i = 0; i < traj.steps.size(); i += static_cast<std::size_t>(period))
        out.steps.push_back(traj.steps[i]);
    return out;
}

void save_norm_stats(const NormStats& stats, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    ordered_json j;
    j["obs_mean"] = stats.obs_mean;
    j["obs_std"] = stats.obs_std;
    j["act_mean"] = stats.act_mean;
    j["act_std"] = stats.act_std;
    j["epsilon"] = stats.epsilon;
    out << j.dump() << '\n';
    if (!out) throw Error("failed writing '" + path + "'");
}

NormStats load_norm_stats(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw FormatError("'" + path + "' is not a normalization stats file");
    for (const char* key : {"obs_mean", "obs_std", "act_mean", "act_std"})
        if (!j.contains(key) || !j[key].is_array())
            throw FormatError("'" + path + "' lacks array '" + std::string(key) + "'");
    if (!j.contains("epsilon") || !j["epsilon"].is_number())
        throw FormatError("'" + path + "' lacks 'epsilon'");
    NormStats stats;
    stats.obs_mean = j["obs_mean"].get<std::vector<double>>();
    stats.obs_std = j["obs_std"].get<std::vector<double>>();
    stats.act_mean = j["act_mean"].get<std::vector<double>>();
    stats.act_std = j["act_std"].get<std::vector<double>>();
    stats.epsilon = j["epsilon"].get<double>();
    if (stats.obs_mean.size() != stats.obs_std.size() ||
        stats.act_mean.size() != stats.act_std.size())
        throw FormatError("'" + path + "' has mismatched mean/std lengths");
    return stats;
}

ObsEncodeFn identity_encoder() {
    return [](std::span<const double> raw) {
        return std::vector<double>(raw.begin(), raw.end());
    };
}

namespace {

std::vector<double> encoded_obs(const TrajectoryStep& step, const ObsEncodeFn& encode) {
    std::vector<double> obs = encode(step.raw_obs);
    obs.insert(obs.end(), step.joint_state.begin(), step.joint_state.end());
    return obs;
}

struct RunningMoments {
    std::vector<double> sum;
    std::vector<double> sum_sq;
    std::size_t count = 0;

    void accumulate(std::span<const double> x) {
        if (sum.empty()) {
            sum.assign(x.size(), 0.0);
            sum_sq.assign(x.size(), 0.0);
        }
        if (x.size() != sum.size())
            throw ConfigError("inconsistent dimension while accumulating statistics");
        for (std::size_t i = 0; i < x.size(); ++i) {
            sum[i] += x[i];
            sum_sq[i] += x[i] * x[i];
        }
        ++count;
    }

    void finish(std::vector<double>& mean, std::vector<double>& std_dev, double eps) const {
        const auto n = static_cast<double>(count);
        mean.resize(sum.size());
        std_dev.resize(sum.size());
        for (std::size_t i = 0; i < sum.size(); ++i) {
            mean[i] = sum[i] / n;
            const double var = std::max(0.0, sum_sq[i] / n - mean[i] * mean[i]);
            std_dev[i] = std::max(std::sqrt(var), eps);
        }
    }
};

}  // namespace

NormStats compute_norm_stats(const TrajectoryDataset& dataset, const ObsEncodeFn& encode) {
    validate(dataset);
    std::size_t steps = 0;
    for (const auto& traj : dataset.trajectories) steps += traj.steps.size();
    if (steps == 0) throw UsageError("cannot compute statistics without steps");

    RunningMoments obs_moments;
    RunningMoments act_moments;
    for (const auto& traj : dataset.trajectories) {
        for (const auto& step : traj.steps) {
            obs_moments.accumulate(encoded_obs(step, encode));
            act_moments.accumulate(step.action);
        }
    }
    NormStats stats;
    obs_moments.finish(stats.obs_mean, stats.obs_std, stats.epsilon);
    act_moments.finish(stats.act_mean, stats.act_std, stats.epsilon);
    return stats;
}

NormStats compute_norm_stats(const TrajectoryDataset& dataset) {
    return compute_norm_stats(dataset, identity_encoder());
}

std::vector<double> normalize(std::span<const double> x, std::span<const double> mean,
                              std::span<const double> std_dev) {
    if (x.size() != mean.size() || mean.size() != std_dev.size())
        throw ShapeError("normalize: dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std_dev[i];
    return out;
}

std::vector<double> denormalize(std::span<const double> x, std::span<const double> mean,
                                std::span<const double> std_dev) {
    if (x.size() != mean.size() || mean.size() != std_dev.size())
        throw ShapeError("denormalize: dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * std_dev[i] + mean[i];
    return out;
}

std::vector<TrainingWindow> make_windows(const Trajectory& traj, int horizon,
                                         const NormStats& stats, const ObsEncodeFn& encode) {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (traj.steps.empty()) throw UsageError("trajectory '" + traj.id + "' has no steps");

    const auto len = traj.steps.size();
    const auto action_dim = stats.act_mean.size();
    std::vector<TrainingWindow> windows;
    windows.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
        const auto obs = encoded_obs(traj.steps[i], encode);
        if (obs.size() != stats.obs_mean.size())
            throw ConfigError("encoder output does not match normalization statistics");

        TrainingWindow w;
        w.obs = normalize(obs, stats.obs_mean, stats.obs_std);

        std::vector<double> actions(static_cast<std::size_t>(horizon) * action_dim);
        for (std::size_t h = 0; h < static_cast<std::size_t>(horizon); ++h) {
            const auto src = std::min(i + h, len - 1);
            const auto& a = traj.steps[src].action;
            if (a.size() != action_dim)
                throw ConfigError("action does not match normalization statistics");
            const auto row = normalize(a, stats.act_mean, stats.act_std);
            std::copy(row.begin(), row.end(), actions.begin() + static_cast<std::ptrdiff_t>(h * action_dim));
        }
        w.actions = Tensor::from_vector({horizon, static_cast<int>(action_dim)}, actions);
        const std::size_t end = i + static_cast<std::size_t>(horizon);
        w.pad_count = static_cast<int>(end > len ? end - len : 0);
        windows.push_back(std::move(w));
    }
    return windows;
}

}  // namespace diffclone
