#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "diffclone/dataset.hpp"
#include "diffclone/errors.hpp"
#include "diffclone/rng.hpp"

using namespace diffclone;

namespace {

std::string tmp_path(const char* name) {
    return std::string("dataset_test_") + name + ".jsonl";
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
}

TrajectoryStep make_step(Rng& rng, int obs_dim, int joint_dim, int action_dim) {
    TrajectoryStep step;
    for (int i = 0; i < obs_dim; ++i) step.raw_obs.push_back(rng.uniform(-2.0, 2.0));
    for (int i = 0; i < joint_dim; ++i) step.joint_state.push_back(rng.normal());
    for (int i = 0; i < action_dim; ++i) step.action.push_back(rng.uniform(-0.1, 0.1));
    step.reward = rng.uniform(0.0, 1.0);
    return step;
}

TrajectoryDataset make_dataset(std::uint64_t seed, int n_traj, int min_len, int max_len,
                               int obs_dim = 3, int joint_dim = 2, int action_dim = 2) {
    Rng rng(seed);
    TrajectoryDataset ds;
    ds.obs_dim = obs_dim;
    ds.joint_dim = joint_dim;
    ds.action_dim = action_dim;
    for (int k = 0; k < n_traj; ++k) {
        Trajectory traj;
        traj.id = "traj-" + std::to_string(k);
        const int len = static_cast<int>(rng.uniform_int(min_len, max_len));
        for (int i = 0; i < len; ++i)
            traj.steps.push_back(make_step(rng, obs_dim, joint_dim, action_dim));
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

}  // namespace

TEST_CASE("save/load round trip preserves every number exactly") {
    auto ds = make_dataset(11, 2, 3, 6);
    ds.trajectories[0].steps[0].raw_obs[0] = 0.1;
    ds.trajectories[0].steps[0].reward = 1.0 / 3.0;
    ds.trajectories[1].steps[0].action[0] = -1e-6;

    const auto path = tmp_path("roundtrip");
    save(ds, path);
    auto loaded = load(path);

    REQUIRE(loaded.size() == 2);
    CHECK(loaded.obs_dim == ds.obs_dim);
    CHECK(loaded.joint_dim == ds.joint_dim);
    CHECK(loaded.action_dim == ds.action_dim);
    for (std::size_t k = 0; k < ds.size(); ++k) {
        const auto& a = ds.trajectories[k];
        const auto& b = loaded.trajectories[k];
        REQUIRE(a.id == b.id);
        REQUIRE(a.steps.size() == b.steps.size());
        for (std::size_t i = 0; i < a.steps.size(); ++i) {
            CHECK(a.steps[i].raw_obs == b.steps[i].raw_obs);
            CHECK(a.steps[i].joint_state == b.steps[i].joint_state);
            CHECK(a.steps[i].action == b.steps[i].action);
            CHECK(a.steps[i].reward == b.steps[i].reward);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("serialization is byte-deterministic and save/load/save is a fixed point") {
    auto ds = make_dataset(12, 3, 2, 5);
    const auto p1 = tmp_path("bytes1");
    const auto p2 = tmp_path("bytes2");
    save(ds, p1);
    save(ds, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));

    auto loaded = load(p1);
    const auto p3 = tmp_path("bytes3");
    save(loaded, p3);
    CHECK(read_bytes(p1) == read_bytes(p3));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(p3.c_str());
}

TEST_CASE("header line pins the format") {
    auto ds = make_dataset(13, 1, 2, 2, 3, 2, 2);
    const auto path = tmp_path("header");
    save(ds, path);
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    CHECK(first ==
          R"({"format":"diffclone-traj","version":1,"obs_dim":3,"joint_dim":2,"action_dim":2})");
    std::remove(path.c_str());
}

TEST_CASE("bad magic and bad version raise FormatError") {
    const auto path = tmp_path("badheader");
    write_bytes(path, "{\"format\":\"something-else\",\"version\":1}\n");
    CHECK_THROWS_AS(load(path), FormatError);
    write_bytes(path,
                "{\"format\":\"diffclone-traj\",\"version\":2,\"obs_dim\":1,\"joint_dim\":1,"
                "\"action_dim\":1}\n");
    CHECK_THROWS_AS(load(path), FormatError);
    write_bytes(path, "");
    CHECK_THROWS_AS(load(path), FormatError);
    write_bytes(path, "not json\n");
    CHECK_THROWS_AS(load(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("truncated and inconsistent records raise CorruptionError naming the trajectory") {
    auto ds = make_dataset(14, 2, 3, 3);
    const auto path = tmp_path("corrupt");
    save(ds, path);
    auto bytes = read_bytes(path);

    // Chop the final record in half.
    write_bytes(path, bytes.substr(0, bytes.size() - 40));
    CHECK_THROWS_AS(load(path), CorruptionError);

    // A record whose action width disagrees with the header.
    std::string doctored =
        "{\"format\":\"diffclone-traj\",\"version\":1,\"obs_dim\":2,\"joint_dim\":1,"
        "\"action_dim\":2}\n"
        "{\"id\":\"bad-one\",\"steps\":[{\"obs\":[0.0,1.0],\"joint\":[0.5],"
        "\"action\":[0.1],\"reward\":0.0}]}\n";
    write_bytes(path, doctored);
    try {
        load(path);
        FAIL("expected CorruptionError");
    } catch (const CorruptionError& e) {
        CHECK(std::string(e.what()).find("bad-one") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("validation rejects empty trajectories and non-finite rewards") {
    auto ds = make_dataset(15, 1, 2, 2);
    ds.trajectories.push_back(Trajectory{"empty", {}});
    CHECK_THROWS_AS(validate(ds), UsageError);
    ds.trajectories.pop_back();

    ds.trajectories[0].steps[0].reward = std::nan("");
    CHECK_THROWS_AS(validate(ds), UsageError);
    const auto path = tmp_path("invalid");
    CHECK_THROWS_AS(save(ds, path), UsageError);
}

TEST_CASE("threshold filter keeps exactly the trajectories at or above tau, in order") {
    auto ds = make_dataset(16, 8, 2, 6);
    const double tau = ds.trajectories[3].total_reward();
    auto kept = filter_threshold(ds, tau);

    std::vector<std::string> expected;
    for (const auto& t : ds.trajectories)
        if (t.total_reward() >= tau) expected.push_back(t.id);
    REQUIRE(kept.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CHECK(kept.trajectories[i].id == expected[i]);
        // Survivors are carried over unmutated.
        CHECK(kept.trajectories[i].steps.size() ==
              ds.trajectories[std::stoul(expected[i].substr(5))].steps.size());
    }

    CHECK_THROWS_AS(filter_threshold(ds, 1e9), EmptySelectionError);
    TrajectoryDataset empty;
    empty.obs_dim = empty.joint_dim = empty.action_dim = 1;
    CHECK_THROWS_AS(filter_threshold(empty, 0.0), UsageError);
}

TEST_CASE("top-fraction filter keeps ceil(q*N) best with ties broken by id") {
    TrajectoryDataset ds;
    ds.obs_dim = 1;
    ds.joint_dim = 0;
    ds.action_dim = 1;
    auto add = [&](const std::string& id, double reward) {
        Trajectory t;
        t.id = id;
        t.steps.push_back(TrajectoryStep{{0.0}, {}, {0.0}, reward});
        ds.trajectories.push_back(std::move(t));
    };
    add("d", 1.0);
    add("b", 2.0);
    add("c", 1.0);
    add("a", 1.0);
    add("e", 0.5);

    // ceil(0.5 * 5) = 3: reward 2 first, then the 1.0 tie resolved as a < c < d.
    auto kept = filter_top_fraction(ds, 0.5);
    REQUIRE(kept.size() == 3);
    // Output preserves input order among survivors: b, c?... survivors are {b, a, c}.
    CHECK(kept.trajectories[0].id == "b");
    CHECK(kept.trajectories[1].id == "c");
    CHECK(kept.trajectories[2].id == "a");

    CHECK(filter_top_fraction(ds, 1.0).size() == 5);
    CHECK(filter_top_fraction(ds, 0.01).size() == 1);
    CHECK_THROWS_AS(filter_top_fraction(ds, 0.0), ConfigError);
    CHECK_THROWS_AS(filter_top_fraction(ds, 1.5), ConfigError);
}

TEST_CASE("top-fraction filter matches a brute-force oracle on random datasets") {
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 12));
        auto ds = make_dataset(1000 + static_cast<std::uint64_t>(trial), n, 1, 4);
        // Force occasional exact ties.
        if (n >= 2) {
            ds.trajectories[1].steps = ds.trajectories[0].steps;
        }
        const double q = rng.uniform(0.05, 1.0);
        auto kept = filter_top_fraction(ds, q);

        const auto expect_count = static_cast<std::size_t>(
            std::ceil(q * static_cast<double>(n) - 1e-9));
        REQUIRE(kept.size() == expect_count);

        // Oracle: sort (reward desc, id asc) and take the prefix.
        std::vector<std::pair<double, std::string>> order;
        for (const auto& t : ds.trajectories) order.emplace_back(-t.total_reward(), t.id);
        std::sort(order.begin(), order.end());
        std::vector<std::string> expect_ids;
        for (std::size_t i = 0; i < expect_count; ++i) expect_ids.push_back(order[i].second);
        std::sort(expect_ids.begin(), expect_ids.end());

        std::vector<std::string> got_ids;
        for (const auto& t : kept.trajectories) got_ids.push_back(t.id);
        std::sort(got_ids.begin(), got_ids.end());
        CHECK(got_ids == expect_ids);
    }
}

TEST_CASE("subsample keeps every period-th step and composes multiplicatively") {
    auto ds = make_dataset(17, 1, 10, 10);
    const auto& traj = ds.trajectories[0];

    auto every3 = subsample(traj, 3);
    REQUIRE(every3.steps.size() == 4);
    for (std::size_t i = 0; i < every3.steps.size(); ++i)
        CHECK(every3.steps[i].raw_obs == traj.steps[3 * i].raw_obs);

    CHECK(subsample(traj, 1).steps.size() == traj.steps.size());
    CHECK_THROWS_AS(subsample(traj, 0), ConfigError);

    Rng rng(78);
    for (int trial = 0; trial < 20; ++trial) {
        auto big = make_dataset(2000 + static_cast<std::uint64_t>(trial), 1, 1, 40);
        const auto& t = big.trajectories[0];
        const int a = static_cast<int>(rng.uniform_int(1, 4));
        const int b = static_cast<int>(rng.uniform_int(1, 4));
        auto twice = subsample(subsample(t, a), b);
        auto once = subsample(t, a * b);
        REQUIRE(twice.steps.size() == once.steps.size());
        for (std::size_t i = 0; i < once.steps.size(); ++i)
            CHECK(twice.steps[i].action == once.steps[i].action);
    }
}

TEST_CASE("norm stats match the textbook example and a two-pass oracle") {
    TrajectoryDataset ds;
    ds.obs_dim = 1;
    ds.joint_dim = 0;
    ds.action_dim = 1;
    Trajectory t;
    t.id = "pair";
    t.steps.push_back(TrajectoryStep{{1.0}, {}, {1.0}, 0.0});
    t.steps.push_back(TrajectoryStep{{3.0}, {}, {3.0}, 0.0});
    ds.trajectories.push_back(t);

    auto stats = compute_norm_stats(ds);
    CHECK(stats.obs_mean[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(stats.obs_std[0] == doctest::Approx(1.0).epsilon(1e-15));  // population std
    CHECK(stats.act_mean[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(stats.act_std[0] == doctest::Approx(1.0).epsilon(1e-15));

    // Two-pass oracle over a random dataset.
    auto big = make_dataset(18, 5, 3, 9);
    auto s = compute_norm_stats(big);
    const std::size_t obs_width = s.obs_mean.size();
    std::size_t count = 0;
    std::vector<double> mean(obs_width, 0.0);
    for (const auto& traj : big.trajectories)
        for (const auto& step : traj.steps) {
            for (std::size_t i = 0; i < step.raw_obs.size(); ++i) mean[i] += step.raw_obs[i];
            for (std::size_t i = 0; i < step.joint_state.size(); ++i)
                mean[step.raw_obs.size() + i] += step.joint_state[i];
            ++count;
        }
    for (auto& m : mean) m /= static_cast<double>(count);
    std::vector<double> var(obs_width, 0.0);
    for (const auto& traj : big.trajectories)
        for (const auto& step : traj.steps) {
            for (std::size_t i = 0; i < step.raw_obs.size(); ++i) {
                const double d = step.raw_obs[i] - mean[i];
                var[i] += d * d;
            }
            for (std::size_t i = 0; i < step.joint_state.size(); ++i) {
                const double d = step.joint_state[i] - mean[step.raw_obs.size() + i];
                var[step.raw_obs.size() + i] += d * d;
            }
        }
    for (std::size_t i = 0; i < obs_width; ++i) {
        CHECK(std::fabs(s.obs_mean[i] - mean[i]) <= 1e-12);
        CHECK(std::fabs(s.obs_std[i] - std::sqrt(var[i] / static_cast<double>(count))) <= 1e-12);
    }
}

TEST_CASE("constant dimensions get the std floor") {
    TrajectoryDataset ds;
    ds.obs_dim = 2;
    ds.joint_dim = 0;
    ds.action_dim = 1;
    Trajectory t;
    t.id = "flat";
    for (int i = 0; i < 5; ++i)
        t.steps.push_back(TrajectoryStep{{7.5, static_cast<double>(i)}, {}, {0.25}, 0.0});
    ds.trajectories.push_back(t);

    auto stats = compute_norm_stats(ds);
    CHECK(stats.obs_std[0] == 1e-6);
    CHECK(stats.obs_std[1] > 1e-6);
    CHECK(stats.act_std[0] == 1e-6);

    TrajectoryDataset none;
    none.obs_dim = none.action_dim = 1;
    CHECK_THROWS_AS(compute_norm_stats(none), UsageError);
}

TEST_CASE("normalize/denormalize invert each other, floored dims included") {
    Rng rng(19);
    std::vector<double> mean = {0.0, 5.0, -3.0, 100.0};
    std::vector<double> std_dev = {1.0, 0.2, 1e-6, 40.0};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x;
        for (int i = 0; i < 4; ++i) x.push_back(rng.uniform(-50.0, 50.0));
        auto z = normalize(x, mean, std_dev);
        auto back = denormalize(z, mean, std_dev);
        for (int i = 0; i < 4; ++i) CHECK(std::fabs(back[static_cast<std::size_t>(i)] -
                                                    x[static_cast<std::size_t>(i)]) <= 1e-9);
    }
    std::vector<double> wrong = {1.0, 2.0};
    CHECK_THROWS_AS(normalize(wrong, mean, std_dev), ShapeError);
    CHECK_THROWS_AS(denormalize(wrong, mean, std_dev), ShapeError);
}

TEST_CASE("norm stats survive the sidecar round trip") {
    auto ds = make_dataset(20, 3, 2, 5);
    auto stats = compute_norm_stats(ds);
    const auto path = tmp_path("stats");
    save_norm_stats(stats, path);
    auto loaded = load_norm_stats(path);
    CHECK(loaded.obs_mean == stats.obs_mean);
    CHECK(loaded.obs_std == stats.obs_std);
    CHECK(loaded.act_mean == stats.act_mean);
    CHECK(loaded.act_std == stats.act_std);
    CHECK(loaded.epsilon == stats.epsilon);

    write_bytes(path, "{\"obs_mean\":[0.0]}\n");
    CHECK_THROWS_AS(load_norm_stats(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("make_windows pads the action tail by repeating the final action") {
    auto ds = make_dataset(21, 1, 20, 20);
    const auto& traj = ds.trajectories[0];
    auto stats = compute_norm_stats(ds);

    auto windows = make_windows(traj, 4, stats, identity_encoder());
    REQUIRE(windows.size() == 20);
    CHECK(windows[0].pad_count == 0);
    CHECK(windows[16].pad_count == 0);
    CHECK(windows[17].pad_count == 1);
    CHECK(windows[18].pad_count == 2);
    CHECK(windows[19].pad_count == 3);

    // Window 18 holds a18, a19, a19, a19 (normalized).
    const auto& w = windows[18];
    REQUIRE(w.actions.shape() == std::vector<int>({4, 2}));
    auto row = [&](int h, int j) { return w.actions.at(h * 2 + j); };
    auto norm_action = [&](std::size_t i, std::size_t j) {
        return (traj.steps[i].action[j] - stats.act_mean[j]) / stats.act_std[j];
    };
    for (int j = 0; j < 2; ++j) {
        CHECK(row(0, j) == doctest::Approx(norm_action(18, static_cast<std::size_t>(j)))
                               .epsilon(1e-12));
        for (int h = 1; h < 4; ++h)
            CHECK(row(h, j) == doctest::Approx(norm_action(19, static_cast<std::size_t>(j)))
                                   .epsilon(1e-12));
    }

    // Observation is the normalized raw_obs (+) joint_state.
    const auto& s18 = traj.steps[18];
    std::vector<double> cat(s18.raw_obs);
    cat.insert(cat.end(), s18.joint_state.begin(), s18.joint_state.end());
    auto expect_obs = normalize(cat, stats.obs_mean, stats.obs_std);
    REQUIRE(w.obs.size() == expect_obs.size());
    for (std::size_t i = 0; i < expect_obs.size(); ++i)
        CHECK(std::fabs(w.obs[i] - expect_obs[i]) <= 1e-12);
}

TEST_CASE("make_windows edge cases: single step, horizon one, bad config") {
    auto ds = make_dataset(22, 1, 1, 1);
    auto stats = compute_norm_stats(ds);
    auto windows = make_windows(ds.trajectories[0], 4, stats, identity_encoder());
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].pad_count == 3);
    for (int h = 1; h < 4; ++h)
        for (int j = 0; j < 2; ++j)
            CHECK(windows[0].actions.at(h * 2 + j) == windows[0].actions.at(j));

    auto plain = make_windows(ds.trajectories[0], 1, stats, identity_encoder());
    REQUIRE(plain.size() == 1);
    CHECK(plain[0].pad_count == 0);

    CHECK_THROWS_AS(make_windows(ds.trajectories[0], 0, stats, identity_encoder()), ConfigError);

    // Encoder whose output width disagrees with the statistics.
    auto doubling = [](std::span<const double> raw) {
        std::vector<double> out(raw.begin(), raw.end());
        out.insert(out.end(), raw.begin(), raw.end());
        return out;
    };
    CHECK_THROWS_AS(make_windows(ds.trajectories[0], 4, stats, doubling), ConfigError);
}

TEST_CASE("a custom encoder flows through stats and windows consistently") {
    auto ds = make_dataset(23, 2, 4, 8);
    auto halve = [](std::span<const double> raw) {
        std::vector<double> out;
        for (double v : raw) out.push_back(0.5 * v);
        return out;
    };
    auto stats = compute_norm_stats(ds, halve);
    REQUIRE(stats.obs_mean.size() == static_cast<std::size_t>(ds.obs_dim + ds.joint_dim));
    auto windows = make_windows(ds.trajectories[0], 3, stats, halve);
    CHECK(windows.size() == ds.trajectories[0].steps.size());
}

TEST_CASE("windows over a whole dataset are normalized to zero mean and unit variance") {
    auto ds = make_dataset(24, 6, 5, 15);
    auto stats = compute_norm_stats(ds);

    std::vector<double> sum(stats.obs_mean.size(), 0.0);
    std::vector<double> sum_sq(stats.obs_mean.size(), 0.0);
    std::size_t count = 0;
    for (const auto& traj : ds.trajectories) {
        for (const auto& w : make_windows(traj, 1, stats, identity_encoder())) {
            for (std::size_t i = 0; i < w.obs.size(); ++i) {
                sum[i] += w.obs[i];
                sum_sq[i] += w.obs[i] * w.obs[i];
            }
            ++count;
        }
    }
    for (std::size_t i = 0; i < sum.size(); ++i) {
        const double mean = sum[i] / static_cast<double>(count);
        const double var = sum_sq[i] / static_cast<double>(count) - mean * mean;
        CHECK(std::fabs(mean) <= 1e-9);
        CHECK(std::fabs(std::sqrt(std::max(var, 0.0)) - 1.0) <= 1e-6);
    }
}
