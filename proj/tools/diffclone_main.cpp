#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffclone/checkpoint.hpp"
#include "diffclone/config.hpp"
#include "diffclone/dataset.hpp"
#include "diffclone/denoiser.hpp"
#include "diffclone/encoder.hpp"
#include "diffclone/errors.hpp"
#include "diffclone/mlp.hpp"
#include "diffclone/policies.hpp"
#include "diffclone/rng.hpp"
#include "diffclone/schedule.hpp"
#include "diffclone/sim.hpp"
#include "diffclone/tensor.hpp"

using namespace diffclone;

namespace {

// --- logging (DIFFCLONE_LOG = quiet | info | debug; default info) -------------

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("DIFFCLONE_LOG");
        if (env == nullptr) return LogLevel::Info;
        const std::string v = env;
        if (v == "quiet") return LogLevel::Quiet;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (static_cast<int>(log_level()) >= static_cast<int>(LogLevel::Info))
        std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (static_cast<int>(log_level()) >= static_cast<int>(LogLevel::Debug))
        std::cerr << "[debug] " << msg << "\n";
}

void log_report(const TrainReport& report) {
    for (const auto& row : report.epochs)
        log_debug("epoch=" + std::to_string(row.epoch) + " loss=" + format_double(row.loss) +
                  " seconds=" + format_double(row.seconds));
}

// --- config resolution: defaults -> --config file -> --set -> dedicated flags --

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::string> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "flat key=value config file");
    cmd->add_option("--set", f.sets, "config override key=value (repeatable)");
    cmd->add_option("--seed", f.seed, "root random seed");
}

using FlagKv = std::pair<const char*, const std::optional<std::string>*>;

RunConfig resolve_config(const CommonFlags& common, const std::vector<FlagKv>& flags) {
    RunConfig cfg;
    if (!common.config_path.empty()) apply_config_file(cfg, common.config_path);
    for (const std::string& pair : common.sets) {
        const std::size_t eq = pair.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + pair + "'");
        apply_kv(cfg, pair.substr(0, eq), pair.substr(eq + 1));
    }
    if (common.seed) apply_kv(cfg, "seed", *common.seed);
    for (const auto& [key, value] : flags)
        if (value->has_value()) apply_kv(cfg, key, **value);
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("failed while writing " + path);
}

NormStats scalar_identity_stats() {
    NormStats stats;
    stats.obs_mean = {0.0};
    stats.obs_std = {1.0};
    stats.act_mean = {0.0};
    stats.act_std = {1.0};
    return stats;
}

// --- gen-data -----------------------------------------------------------------

int run_gen_data(const CommonFlags& common, const std::optional<std::string>& episodes,
                 const std::optional<std::string>& noise, const std::string& out) {
    const RunConfig cfg =
        resolve_config(common, {{"episodes", &episodes}, {"noise_levels", &noise}});
    log_info("generating " + std::to_string(cfg.episodes) + " scripted episodes");
    const TrajectoryDataset ds = generate_dataset(cfg.env, cfg.episodes, cfg.noise_levels, cfg.seed);
    save(ds, out);
    log_info("wrote " + out);

    std::vector<double> rewards;
    rewards.reserve(ds.size());
    for (const auto& traj : ds.trajectories) rewards.push_back(traj.total_reward());
    std::sort(rewards.begin(), rewards.end());
    const auto quantile = [&](double p) {
        const double h = p * static_cast<double>(rewards.size() - 1);
        const auto lo = static_cast<std::size_t>(h);
        const std::size_t hi = std::min(lo + 1, rewards.size() - 1);
        return rewards[lo] + (h - static_cast<double>(lo)) * (rewards[hi] - rewards[lo]);
    };
    std::cout << "episodes=" << ds.size() << " reward_min=" << format_double(quantile(0.0))
              << " reward_q1=" << format_double(quantile(0.25))
              << " reward_median=" << format_double(quantile(0.5))
              << " reward_q3=" << format_double(quantile(0.75))
              << " reward_max=" << format_double(quantile(1.0)) << "\n";
    return 0;
}

// --- pretrain -------------------------------------------------------------------

int run_pretrain(const CommonFlags& common, const std::string& data,
                 const std::optional<std::string>& objective,
                 const std::optional<std::string>& epochs, const std::string& out) {
    const RunConfig cfg =
        resolve_config(common, {{"objective", &objective}, {"pretrain_epochs", &epochs}});
    const TrajectoryDataset ds = load(data);
    validate(ds);
    log_info("loaded " + std::to_string(ds.size()) + " trajectories from " + data);

    RunManifest manifest;
    manifest.command = "pretrain --data " + data + " --out " + out;
    manifest.inputs = {data};
    if (!common.config_path.empty()) manifest.inputs.push_back(common.config_path);
    manifest.outputs = {out, out + ".loss.csv"};
    manifest.config = cfg;
    write_manifest(manifest, out + ".manifest");

    EncoderConfig ecfg;
    ecfg.obs_dim = ds.obs_dim;
    ecfg.embed_dim = cfg.embed_dim;
    ecfg.hidden = cfg.encoder_hidden;
    EncoderNet encoder = EncoderNet::build(ecfg, Rng::stream_seed(cfg.seed, "init"));

    PretrainConfig pc;
    pc.learning_rate = cfg.pretrain_learning_rate;
    pc.batch_size = cfg.pretrain_batch_size;
    const PretrainObjective obj = parse_objective(cfg.objective);
    log_info("pretraining encoder, objective=" + cfg.objective);
    const std::vector<double> losses = pretrain(encoder, ds, obj, cfg.pretrain_epochs, cfg.seed, pc);

    save_encoder_checkpoint(encoder, out);
    std::string csv = "epoch,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i)
        csv += std::to_string(i) + "," + format_double(losses[i]) + "\n";
    write_text(out + ".loss.csv", csv);

    std::cout << "objective=" << cfg.objective << " epochs=" << losses.size() << " final_loss="
              << format_double(losses.empty() ? 0.0 : losses.back()) << " checkpoint=" << out
              << "\n";
    return 0;
}

// --- train ----------------------------------------------------------------------

std::vector<TrainingWindow> window_all(const TrajectoryDataset& ds, int horizon,
                                       const NormStats& stats, const ObsEncodeFn& encode) {
    std::vector<TrainingWindow> windows;
    for (const auto& traj : ds.trajectories) {
        auto w = make_windows(traj, horizon, stats, encode);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
    }
    return windows;
}

int run_train(const CommonFlags& common, const std::string& agent, const std::string& data,
              const std::string& encoder_path, const std::string& out) {
    const RunConfig cfg = resolve_config(common, {});
    TrajectoryDataset ds = load(data);
    validate(ds);
    log_info("loaded " + std::to_string(ds.size()) + " trajectories from " + data);

    TrajectoryDataset selected;
    try {
        if (cfg.filter == "threshold") selected = filter_threshold(ds, cfg.filter_tau);
        else if (cfg.filter == "top_fraction") selected = filter_top_fraction(ds, cfg.filter_q);
        else selected = std::move(ds);
    } catch (const EmptySelectionError&) {
        throw EmptySelectionError(
            "no trajectories survive the demonstration filter (filter=" + cfg.filter +
            (cfg.filter == "threshold" ? ", filter_tau=" + format_double(cfg.filter_tau)
                                       : ", filter_q=" + format_double(cfg.filter_q)) +
            ")");
    }
    if (cfg.subsample_period > 1)
        for (auto& traj : selected.trajectories) traj = subsample(traj, cfg.subsample_period);
    log_info("kept " + std::to_string(selected.size()) + " trajectories (filter=" + cfg.filter +
             ", subsample_period=" + std::to_string(cfg.subsample_period) + ")");

    ObsEncodeFn encode = identity_encoder();
    std::optional<EncoderNet> encoder;
    if (!encoder_path.empty()) {
        encoder = load_encoder_checkpoint(encoder_path);
        if (encoder->config().obs_dim != selected.obs_dim) {
            throw ConfigError("encoder expects obs_dim " +
                              std::to_string(encoder->config().obs_dim) + " but the dataset has " +
                              std::to_string(selected.obs_dim));
        }
        encode = encoder->as_encode_fn();
        log_info("attached pretrained encoder " + encoder_path);
    }
    const NormStats stats = compute_norm_stats(selected, encode);

    RunManifest manifest;
    manifest.command = "train --agent " + agent + " --data " + data +
                       (encoder_path.empty() ? "" : " --encoder " + encoder_path) + " --out " + out;
    manifest.inputs = {data};
    if (!encoder_path.empty()) manifest.inputs.push_back(encoder_path);
    if (!common.config_path.empty()) manifest.inputs.push_back(common.config_path);
    manifest.outputs = {out, out + ".norm", out + ".loss.csv"};
    manifest.config = cfg;
    write_manifest(manifest, out + ".manifest");

    const EncoderNet* encoder_ptr = encoder ? &*encoder : nullptr;
    TrainReport report;
    std::string summary;
    if (agent == "diffclone") {
        const auto windows = window_all(selected, cfg.horizon, stats, encode);
        DiffCloneTrainConfig tc;
        tc.channels = cfg.channels;
        tc.kernel = cfg.kernel;
        tc.groups = cfg.groups;
        tc.time_embed_dim = cfg.time_embed_dim;
        tc.timesteps = cfg.timesteps;
        tc.batch_size = cfg.batch_size;
        tc.learning_rate = cfg.learning_rate;
        tc.epochs = cfg.epochs;
        tc.exec_horizon = cfg.exec_horizon;
        tc.stats = stats;
        tc.encode = encode;
        log_info("training diffclone on " + std::to_string(windows.size()) + " windows");
        DiffCloneTrainResult result = train_diffclone(windows, tc, cfg.seed);
        save_diffclone_checkpoint(result.policy, encoder_ptr, out);
        report = std::move(result.report);
        summary = "agent=diffclone epochs=" + std::to_string(report.epochs.size());
    } else if (agent == "bc") {
        const auto windows = window_all(selected, 1, stats, encode);
        BcTrainConfig tc;
        tc.hidden = cfg.bc_hidden;
        tc.batch_size = cfg.batch_size;
        tc.learning_rate = cfg.bc_learning_rate;
        tc.epochs = cfg.bc_epochs;
        tc.stats = stats;
        tc.encode = encode;
        log_info("training bc on " + std::to_string(windows.size()) + " steps");
        BcTrainResult result = train_bc(windows, tc, cfg.seed);
        save_bc_checkpoint(result.policy, encoder_ptr, out);
        report = std::move(result.report);
        summary = "agent=bc epochs=" + std::to_string(report.epochs.size());
    } else {  // vinn (the flag parser restricts the choices)
        const VinnPolicy policy = make_vinn(selected, stats, encode, cfg.vinn_k);
        save_vinn_checkpoint(policy, encoder_ptr, out);
        summary = "agent=vinn entries=" + std::to_string(policy.embeddings.size());
    }
    save_norm_stats(stats, out + ".norm");
    write_train_csv(report, out + ".loss.csv");
    log_report(report);

    if (!report.epochs.empty())
        summary += " final_loss=" + format_double(report.epochs.back().loss);
    std::cout << summary << " checkpoint=" << out << "\n";
    return 0;
}

// --- eval -----------------------------------------------------------------------

int run_eval(const CommonFlags& common, const std::string& ckpt,
             const std::optional<std::string>& episodes, const std::optional<std::string>& jobs,
             const std::string& out) {
    const RunConfig cfg = resolve_config(common, {{"eval_episodes", &episodes}, {"jobs", &jobs}});

    ChunkPolicyFn policy;
    int exec_horizon = 1;
    std::string kind;
    if (ckpt == "expert") {  // built-in zero-noise scripted-expert profile
        kind = "expert";
        policy = expert_chunk_policy(cfg.env, ExpertMode::Left, 0.0);
    } else {
        kind = checkpoint_kind(ckpt);
        const NormStats stats = load_norm_stats(ckpt + ".norm");
        const auto check_action_dim = [&](int action_dim) {
            if (action_dim != cfg.env.action_dim) {
                throw ConfigError("checkpoint action_dim " + std::to_string(action_dim) +
                                  " does not match env action_dim " +
                                  std::to_string(cfg.env.action_dim));
            }
        };
        if (kind == "diffclone") {
            DiffClonePolicy p = load_diffclone_checkpoint(ckpt);
            p.stats = stats;
            check_action_dim(p.denoiser.config().action_dim);
            exec_horizon = p.exec_horizon;
            policy = as_chunk_policy(p);
        } else if (kind == "bc") {
            BcPolicy p = load_bc_checkpoint(ckpt);
            p.stats = stats;
            check_action_dim(p.net.config().out_dim);
            policy = as_chunk_policy(p);
        } else if (kind == "vinn") {
            VinnPolicy p = load_vinn_checkpoint(ckpt);
            p.stats = stats;
            check_action_dim(static_cast<int>(p.actions.front().size()));
            policy = as_chunk_policy(p);
        } else {
            throw FormatError(ckpt + ": cannot evaluate a checkpoint of kind '" + kind + "'");
        }
    }

    log_info("evaluating " + kind + " over " + std::to_string(cfg.eval_episodes) + " episodes");
    const EvalSummary summary =
        evaluate(policy, exec_horizon, cfg.env, cfg.eval_episodes, cfg.seed, cfg.jobs);
    write_eval_csv(summary, out);
    std::cout << "mean_reward=" << format_double(summary.mean_reward)
              << " success_rate=" << format_double(summary.success_rate_pct) << "%\n";
    return 0;
}

// --- diag -------------------------------------------------------------------------

// Central-difference sweep over every parameter coordinate; returns the
// largest relative error against the backward-pass gradient.
double gradcheck_sweep(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn) {
    for (auto& p : params) p.zero_grad();
    backward(loss_fn());
    const double h = 1e-5;
    double max_rel = 0.0;
    for (auto& p : params) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        NoGradGuard ng;
        auto d = p.data_mut();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double saved = d[i];
            d[i] = saved + h;
            const double up = loss_fn().item();
            d[i] = saved - h;
            const double down = loss_fn().item();
            d[i] = saved;
            const double fd = (up - down) / (2 * h);
            const double rel = std::fabs(analytic[i] - fd) /
                               std::max({std::fabs(analytic[i]), std::fabs(fd), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    clear_graph();
    return max_rel;
}

int diag_gradcheck() {
    const double tol = 1e-4;
    bool all_pass = true;
    const auto report = [&](const std::string& net, double max_rel) {
        const bool pass = max_rel <= tol;
        all_pass = all_pass && pass;
        std::cout << "gradcheck net=" << net << " max_rel_err=" << format_double(max_rel)
                  << " tol=" << format_double(tol) << " status=" << (pass ? "pass" : "fail")
                  << "\n";
    };

    {
        DenoiserConfig cfg;
        cfg.action_dim = 2;
        cfg.horizon = 4;
        cfg.channels = {4, 8};
        cfg.groups = 2;
        cfg.time_embed_dim = 8;
        cfg.obs_dim = 3;
        const DenoiserNet net = DenoiserNet::build(cfg, 101);
        Rng rng(102);
        const Tensor x = Tensor::randn({cfg.horizon, cfg.action_dim}, rng);
        const Tensor target = Tensor::randn({cfg.horizon, cfg.action_dim}, rng);
        const std::vector<double> obs = {0.4, -0.8, 0.2};
        report("denoiser", gradcheck_sweep(net.parameters(), [&] {
                   return mse_loss(net.forward(x, 7, obs), target);
               }));
    }
    {
        MlpConfig cfg;
        cfg.in_dim = 5;
        cfg.hidden = {8, 8};
        cfg.out_dim = 3;
        const Mlp net = Mlp::build(cfg, 103);
        Rng rng(104);
        const Tensor x = Tensor::randn({6, cfg.in_dim}, rng);
        const Tensor target = Tensor::randn({6, cfg.out_dim}, rng);
        report("bc", gradcheck_sweep(net.parameters(),
                                     [&] { return mse_loss(net.forward(x), target); }));
    }
    {
        EncoderConfig cfg;
        cfg.obs_dim = 7;
        cfg.embed_dim = 4;
        cfg.hidden = {10};
        const EncoderNet net = EncoderNet::build(cfg, 105);
        Rng rng(106);
        const Tensor x = Tensor::randn({6, cfg.obs_dim}, rng);
        const Tensor target = Tensor::randn({6, cfg.embed_dim}, rng);
        report("encoder", gradcheck_sweep(net.parameters(),
                                          [&] { return mse_loss(net.forward(x), target); }));
    }

    std::cout << "diag=gradcheck status=" << (all_pass ? "pass" : "fail") << "\n";
    return all_pass ? 0 : 1;
}

int diag_schedule(int T) {
    const NoiseSchedule sched = NoiseSchedule::square_cosine(T);
    bool all_pass = true;
    const auto report = [&](const std::string& check, const std::string& detail, bool pass) {
        all_pass = all_pass && pass;
        std::cout << "schedule T=" << T << " check=" << check << " " << detail
                  << " status=" << (pass ? "pass" : "fail") << "\n";
    };

    const double start_dev = std::fabs(sched.alpha_bar(0) - 1.0);
    report("alpha_bar_start_is_one", "measured=" + format_double(start_dev), start_dev == 0.0);

    double min_drop = std::numeric_limits<double>::infinity();
    for (int t = 1; t <= T; ++t)
        min_drop = std::min(min_drop, sched.alpha_bar(t - 1) - sched.alpha_bar(t));
    report("alpha_bar_strictly_decreasing", "min_step=" + format_double(min_drop), min_drop > 0.0);

    const double s = 0.008;
    const auto f = [&](double t) {
        const double arg = ((t / T + s) / (1.0 + s)) * (std::numbers::pi / 2.0);
        const double c = std::cos(arg);
        return c * c;
    };
    const double end_err = std::fabs(sched.alpha_bar(T) - f(static_cast<double>(T)) / f(0.0));
    report("alpha_bar_end_closed_form", "abs_err=" + format_double(end_err) + " tol=1e-12",
           end_err <= 1e-12);

    report("sigma_first_step", "measured=" + format_double(sched.sigma(1)), sched.sigma(1) == 0.0);

    // Noising to t=1 and stepping back with the exact noise recovers the data.
    Rng rng(107);
    const Tensor x0 = Tensor::randn({4, 2}, rng);
    const Tensor eps = Tensor::randn({4, 2}, rng);
    const Tensor x1 = add_noise(x0, eps, 1, sched);
    const Tensor back = ddpm_step(x1, eps, 1, sched, Tensor::zeros({4, 2}));
    double max_err = 0.0;
    for (std::int64_t i = 0; i < x0.size(); ++i)
        max_err = std::max(max_err, std::fabs(back.at(i) - x0.at(i)));
    report("first_step_inversion", "max_abs_err=" + format_double(max_err) + " tol=1e-10",
           max_err <= 1e-10);

    std::cout << "diag=schedule status=" << (all_pass ? "pass" : "fail") << "\n";
    return all_pass ? 0 : 1;
}

int diag_bimodal(std::uint64_t seed) {
    // Constant observation, scalar action chunks committed to +1 or -1 in
    // equal measure: the diffusion sampler must reproduce both modes while
    // plain regression collapses to their mean.
    const int horizon = 4;
    std::vector<TrainingWindow> windows;
    for (int i = 0; i < 64; ++i) {
        TrainingWindow w;
        w.obs = {0.5};
        const double mode = i % 2 == 0 ? 1.0 : -1.0;
        w.actions = Tensor::from_vector({horizon, 1},
                                        std::vector<double>(static_cast<std::size_t>(horizon), mode));
        windows.push_back(std::move(w));
    }

    DiffCloneTrainConfig dc;
    dc.channels = {16, 32};
    dc.groups = 2;
    dc.time_embed_dim = 16;
    dc.timesteps = 25;
    dc.batch_size = 16;
    dc.learning_rate = 1e-3;
    dc.epochs = 2000;
    dc.exec_horizon = 2;
    dc.stats = scalar_identity_stats();
    log_info("training tiny diffusion policy (2000 epochs, ~15s)");
    const DiffCloneTrainResult diff = train_diffclone(windows, dc, seed);

    const int n_samples = 200;
    int pos = 0;
    int neg = 0;
    int zero = 0;
    for (int i = 0; i < n_samples; ++i) {
        const auto chunk = infer_chunk(diff.policy, std::vector<double>{0.5}, {},
                                       Rng::stream_seed(seed, "sample-" + std::to_string(i)));
        const double a = chunk.front().front();
        if (std::fabs(a - 1.0) <= 0.2) ++pos;
        if (std::fabs(a + 1.0) <= 0.2) ++neg;
        if (std::fabs(a) <= 0.2) ++zero;
    }
    const double frac_pos = static_cast<double>(pos) / n_samples;
    const double frac_neg = static_cast<double>(neg) / n_samples;
    const double frac_zero = static_cast<double>(zero) / n_samples;
    const bool diff_pass = frac_pos >= 0.25 && frac_neg >= 0.25 && frac_zero <= 0.10;
    std::cout << "bimodal net=diffclone frac_pos=" << format_double(frac_pos)
              << " frac_neg=" << format_double(frac_neg)
              << " frac_zero=" << format_double(frac_zero)
              << " status=" << (diff_pass ? "pass" : "fail") << "\n";

    std::vector<TrainingWindow> bc_windows;
    for (int i = 0; i < 64; ++i) {
        TrainingWindow w;
        w.obs = {0.5};
        w.actions = Tensor::from_vector({1, 1}, {i % 2 == 0 ? 1.0 : -1.0});
        bc_windows.push_back(std::move(w));
    }
    BcTrainConfig bc;
    bc.hidden = {16};
    bc.batch_size = 16;
    bc.learning_rate = 1e-2;
    bc.epochs = 200;
    bc.stats = scalar_identity_stats();
    log_info("training bc baseline (200 epochs)");
    const BcTrainResult reg = train_bc(bc_windows, bc, seed);
    const double bc_out = bc_predict(reg.policy, std::vector<double>{0.5}, {}).front();
    const bool bc_pass = std::fabs(bc_out) <= 0.2;
    std::cout << "bimodal net=bc mean_prediction=" << format_double(bc_out)
              << " status=" << (bc_pass ? "pass" : "fail") << "\n";

    const bool all_pass = diff_pass && bc_pass;
    std::cout << "diag=bimodal status=" << (all_pass ? "pass" : "fail") << "\n";
    return all_pass ? 0 : 1;
}

int run_diag(const CommonFlags& common, const std::string& which) {
    const RunConfig cfg = resolve_config(common, {});
    if (which == "gradcheck") return diag_gradcheck();
    if (which == "schedule") return diag_schedule(cfg.timesteps);
    return diag_bimodal(cfg.seed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"offline imitation learning on a toy pouring task"};
    app.require_subcommand(1);

    CommonFlags gen_common;
    std::optional<std::string> gen_episodes, gen_noise;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "generate scripted expert demonstrations");
    add_common(gen, gen_common);
    gen->add_option("--episodes", gen_episodes, "number of episodes");
    gen->add_option("--noise", gen_noise, "comma-separated expert noise levels");
    gen->add_option("--out", gen_out, "output dataset path")->required();

    CommonFlags pre_common;
    std::optional<std::string> pre_objective, pre_epochs;
    std::string pre_data, pre_out;
    auto* pre = app.add_subcommand("pretrain", "pretrain an observation encoder");
    add_common(pre, pre_common);
    pre->add_option("--data", pre_data, "trajectory dataset")->required();
    pre->add_option("--objective", pre_objective, "moco | byol | delta");
    pre->add_option("--epochs", pre_epochs, "pretraining epochs");
    pre->add_option("--out", pre_out, "output encoder checkpoint path")->required();

    CommonFlags train_common;
    std::string train_agent, train_data, train_encoder, train_out;
    auto* train = app.add_subcommand("train", "train a policy on demonstrations");
    add_common(train, train_common);
    train->add_option("--agent", train_agent, "diffclone | bc | vinn")
        ->required()
        ->check(CLI::IsMember({"diffclone", "bc", "vinn"}));
    train->add_option("--data", train_data, "trajectory dataset")->required();
    train->add_option("--encoder", train_encoder, "pretrained encoder checkpoint");
    train->add_option("--out", train_out, "output checkpoint path")->required();

    CommonFlags eval_common;
    std::optional<std::string> eval_episodes, eval_jobs;
    std::string eval_ckpt, eval_out;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint in the environment");
    add_common(eval, eval_common);
    eval->add_option("--checkpoint", eval_ckpt, "policy checkpoint ('expert' for the scripted profile)")
        ->required();
    eval->add_option("--episodes", eval_episodes, "evaluation episodes");
    eval->add_option("--jobs", eval_jobs, "parallel evaluation workers");
    eval->add_option("--out", eval_out, "per-episode CSV path")->required();

    CommonFlags diag_common;
    std::string diag_which;
    auto* diag = app.add_subcommand("diag", "run a named diagnostic");
    add_common(diag, diag_common);
    diag->add_option("name", diag_which, "gradcheck | schedule | bimodal")
        ->required()
        ->check(CLI::IsMember({"gradcheck", "schedule", "bimodal"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(gen))
            return run_gen_data(gen_common, gen_episodes, gen_noise, gen_out);
        if (app.got_subcommand(pre))
            return run_pretrain(pre_common, pre_data, pre_objective, pre_epochs, pre_out);
        if (app.got_subcommand(train))
            return run_train(train_common, train_agent, train_data, train_encoder, train_out);
        if (app.got_subcommand(eval))
            return run_eval(eval_common, eval_ckpt, eval_episodes, eval_jobs, eval_out);
        return run_diag(diag_common, diag_which);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
