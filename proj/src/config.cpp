#include "diffclone/config.hpp"

#include <cstdio>
#include <fstream>
#include <string>

#include "diffclone/checkpoint.hpp"
#include "diffclone/denoiser.hpp"
#include "diffclone/encoder.hpp"
#include "diffclone/errors.hpp"
#include "diffclone/policies.hpp"

namespace diffclone {

namespace {

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for '" + key + "': " + value);
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(value, &used);
        if (used != value.size() || value.front() == '-') throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for '" + key + "': " + value);
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for '" + key + "': " + value);
    }
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& value, Parse parse) {
    std::vector<T> out;
    if (value.empty()) return out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t comma = std::min(value.find(',', pos), value.size());
        out.push_back(parse(key, value.substr(pos, comma - pos)));
        if (comma == value.size()) break;
        pos = comma + 1;
    }
    return out;
}

std::string join_doubles(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += format_double(xs[i]);
    }
    return out;
}

std::string join_ints(const std::vector<int>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

}  // namespace

void RunConfig::validate() const {
    if (episodes < 1) throw ConfigError("config: episodes must be >= 1");
    if (noise_levels.empty()) throw ConfigError("config: noise_levels must be non-empty");
    for (double s : noise_levels)
        if (s < 0.0) throw ConfigError("config: noise levels must be >= 0");
    if (filter != "none" && filter != "threshold" && filter != "top_fraction")
        throw ConfigError("config: filter must be none, threshold, or top_fraction");
    if (filter == "top_fraction" && !(filter_q > 0.0 && filter_q <= 1.0))
        throw ConfigError("config: filter_q must lie in (0, 1]");
    if (subsample_period < 1) throw ConfigError("config: subsample_period must be >= 1");
    if (exec_horizon < 1 || exec_horizon > horizon)
        throw ConfigError("config: exec_horizon must lie in [1, horizon]");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (timesteps < 1) throw ConfigError("config: timesteps must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("config: learning_rate must be positive");
    if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (bc_learning_rate <= 0.0) throw ConfigError("config: bc_learning_rate must be positive");
    if (bc_epochs < 0) throw ConfigError("config: bc_epochs must be >= 0");
    if (vinn_k < 1) throw ConfigError("config: vinn_k must be >= 1");
    (void)parse_objective(objective);
    if (pretrain_epochs < 0) throw ConfigError("config: pretrain_epochs must be >= 0");
    if (pretrain_learning_rate <= 0.0)
        throw ConfigError("config: pretrain_learning_rate must be positive");
    if (pretrain_batch_size < 1) throw ConfigError("config: pretrain_batch_size must be >= 1");
    if (eval_episodes < 1) throw ConfigError("config: eval_episodes must be >= 1");
    if (jobs < 1) throw ConfigError("config: jobs must be >= 1");

    // Re-check downstream architecture invariants with the dims known so far
    // (observation dims come from the dataset later).
    DenoiserConfig dn;
    dn.action_dim = env.action_dim;
    dn.horizon = horizon;
    dn.channels = channels;
    dn.kernel = kernel;
    dn.groups = groups;
    dn.time_embed_dim = time_embed_dim;
    dn.obs_dim = 1;
    dn.validate();
    MlpConfig bc;
    bc.in_dim = 1;
    bc.hidden = bc_hidden;
    bc.out_dim = env.action_dim;
    bc.validate();
    EncoderConfig enc;
    enc.obs_dim = 1;
    enc.embed_dim = embed_dim;
    enc.hidden = encoder_hidden;
    enc.validate();
    env.validate();
}

void apply_kv(RunConfig& c, const std::string& key, const std::string& value) {
    const auto as_int = [&] { return parse_int(key, value); };
    const auto as_double = [&] { return parse_double(key, value); };
    if (key == "episodes") c.episodes = as_int();
    else if (key == "noise_levels") c.noise_levels = parse_list<double>(key, value, parse_double);
    else if (key == "filter") c.filter = value;
    else if (key == "filter_q") c.filter_q = as_double();
    else if (key == "filter_tau") c.filter_tau = as_double();
    else if (key == "subsample_period") c.subsample_period = as_int();
    else if (key == "horizon") c.horizon = as_int();
    else if (key == "exec_horizon") c.exec_horizon = as_int();
    else if (key == "batch_size") c.batch_size = as_int();
    else if (key == "timesteps") c.timesteps = as_int();
    else if (key == "learning_rate") c.learning_rate = as_double();
    else if (key == "epochs") c.epochs = as_int();
    else if (key == "channels") c.channels = parse_list<int>(key, value, parse_int);
    else if (key == "kernel") c.kernel = as_int();
    else if (key == "groups") c.groups = as_int();
    else if (key == "time_embed_dim") c.time_embed_dim = as_int();
    else if (key == "bc_hidden") c.bc_hidden = parse_list<int>(key, value, parse_int);
    else if (key == "bc_learning_rate") c.bc_learning_rate = as_double();
    else if (key == "bc_epochs") c.bc_epochs = as_int();
    else if (key == "vinn_k") c.vinn_k = as_int();
    else if (key == "objective") c.objective = value;
    else if (key == "pretrain_epochs") c.pretrain_epochs = as_int();
    else if (key == "pretrain_learning_rate") c.pretrain_learning_rate = as_double();
    else if (key == "pretrain_batch_size") c.pretrain_batch_size = as_int();
    else if (key == "embed_dim") c.embed_dim = as_int();
    else if (key == "encoder_hidden") c.encoder_hidden = parse_list<int>(key, value, parse_int);
    else if (key == "eval_episodes") c.eval_episodes = as_int();
    else if (key == "jobs") c.jobs = as_int();
    else if (key == "seed") c.seed = parse_u64(key, value);
    else if (key == "action_dim") c.env.action_dim = as_int();
    else if (key == "env.arena_min") c.env.arena_min = as_double();
    else if (key == "env.arena_max") c.env.arena_max = as_double();
    else if (key == "env.wall_x") c.env.wall_x = as_double();
    else if (key == "env.wall_y_min") c.env.wall_y_min = as_double();
    else if (key == "env.wall_y_max") c.env.wall_y_max = as_double();
    else if (key == "env.source_x") c.env.source_x = as_double();
    else if (key == "env.source_y") c.env.source_y = as_double();
    else if (key == "env.target_x") c.env.target_x = as_double();
    else if (key == "env.target_y") c.env.target_y = as_double();
    else if (key == "env.target_radius") c.env.target_radius = as_double();
    else if (key == "env.particles") c.env.particles = as_int();
    else if (key == "env.max_steps") c.env.max_steps = as_int();
    else if (key == "env.action_clip") c.env.action_clip = as_double();
    else if (key == "env.pour_tilt") c.env.pour_tilt = as_double();
    else if (key == "env.success_fraction") c.env.success_fraction = as_double();
    else throw ConfigError("config: unknown key '" + key + "'");
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("config: " + path + ":" + std::to_string(line_no) +
                              ": expected key=value, got '" + stripped + "'");
        }
        apply_kv(config, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
}

std::vector<std::pair<std::string, std::string>> to_kv(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> kv;
    const auto put = [&](const char* key, const std::string& value) {
        kv.emplace_back(key, value);
    };
    put("episodes", std::to_string(c.episodes));
    put("noise_levels", join_doubles(c.noise_levels));
    put("filter", c.filter);
    put("filter_q", format_double(c.filter_q));
    put("filter_tau", format_double(c.filter_tau));
    put("subsample_period", std::to_string(c.subsample_period));
    put("horizon", std::to_string(c.horizon));
    put("exec_horizon", std::to_string(c.exec_horizon));
    put("batch_size", std::to_string(c.batch_size));
    put("timesteps", std::to_string(c.timesteps));
    put("learning_rate", format_double(c.learning_rate));
    put("epochs", std::to_string(c.epochs));
    put("channels", join_ints(c.channels));
    put("kernel", std::to_string(c.kernel));
    put("groups", std::to_string(c.groups));
    put("time_embed_dim", std::to_string(c.time_embed_dim));
    put("bc_hidden", join_ints(c.bc_hidden));
    put("bc_learning_rate", format_double(c.bc_learning_rate));
    put("bc_epochs", std::to_string(c.bc_epochs));
    put("vinn_k", std::to_string(c.vinn_k));
    put("objective", c.objective);
    put("pretrain_epochs", std::to_string(c.pretrain_epochs));
    put("pretrain_learning_rate", format_double(c.pretrain_learning_rate));
    put("pretrain_batch_size", std::to_string(c.pretrain_batch_size));
    put("embed_dim", std::to_string(c.embed_dim));
    put("encoder_hidden", join_ints(c.encoder_hidden));
    put("eval_episodes", std::to_string(c.eval_episodes));
    put("jobs", std::to_string(c.jobs));
    put("seed", std::to_string(c.seed));
    put("action_dim", std::to_string(c.env.action_dim));
    put("env.arena_min", format_double(c.env.arena_min));
    put("env.arena_max", format_double(c.env.arena_max));
    put("env.wall_x", format_double(c.env.wall_x));
    put("env.wall_y_min", format_double(c.env.wall_y_min));
    put("env.wall_y_max", format_double(c.env.wall_y_max));
    put("env.source_x", format_double(c.env.source_x));
    put("env.source_y", format_double(c.env.source_y));
    put("env.target_x", format_double(c.env.target_x));
    put("env.target_y", format_double(c.env.target_y));
    put("env.target_radius", format_double(c.env.target_radius));
    put("env.particles", std::to_string(c.env.particles));
    put("env.max_steps", std::to_string(c.env.max_steps));
    put("env.action_clip", format_double(c.env.action_clip));
    put("env.pour_tilt", format_double(c.env.pour_tilt));
    put("env.success_fraction", format_double(c.env.success_fraction));
    return kv;
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
    std::string text;
    text += "version=";
    text += kVersion;
    text += '\n';
    text += "command=" + manifest.command + '\n';
    for (const std::string& input : manifest.inputs) {
        char digest[17];
        std::snprintf(digest, sizeof digest, "%016llx",
                      static_cast<unsigned long long>(fnv1a64_file(input)));
        text += "input=" + input + " fnv1a64:" + digest + '\n';
    }
    for (const std::string& output : manifest.outputs) text += "output=" + output + '\n';
    for (const auto& [key, value] : to_kv(manifest.config))
        text += "config." + key + "=" + value + '\n';

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("failed while writing " + path);
}

}  // namespace diffclone
