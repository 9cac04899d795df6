#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffclone/sim.hpp"

namespace diffclone {

inline constexpr const char* kVersion = "0.1.0";

// Every tunable of the pipeline with its default. A config file and command
// line flags both mutate one of these; downstream module constraints are
// re-validated here before any command runs.
struct RunConfig {
    // data generation
    int episodes = 200;
    std::vector<double> noise_levels = {0.0, 0.05, 0.1};

    // demonstration selection
    std::string filter = "top_fraction";  // none | threshold | top_fraction
    double filter_q = 0.5;
    double filter_tau = 0.0;
    int subsample_period = 1;

    // diffusion policy
    int horizon = 16;
    int exec_horizon = 8;
    int batch_size = 128;
    int timesteps = 50;
    double learning_rate = 1e-4;
    int epochs = 50;
    std::vector<int> channels = {32, 64};
    int kernel = 3;
    int groups = 4;
    int time_embed_dim = 32;

    // behavior-cloning baseline
    std::vector<int> bc_hidden = {64, 64};
    double bc_learning_rate = 1e-3;
    int bc_epochs = 100;

    // nearest-neighbor baseline
    int vinn_k = 5;

    // encoder pretraining
    std::string objective = "moco";  // moco | byol | delta
    int pretrain_epochs = 20;
    double pretrain_learning_rate = 1e-3;
    int pretrain_batch_size = 32;
    int embed_dim = 16;
    std::vector<int> encoder_hidden = {32};

    // evaluation
    int eval_episodes = 50;
    int jobs = 1;

    std::uint64_t seed = 0;

    // Environment; actions carry env.action_dim entries (default 7), of
    // which the toy environment uses the first three.
    EnvConfig env{};

    RunConfig() { env.action_dim = 7; }

    void validate() const;  // ConfigError, re-checking downstream invariants
};

// Applies one assignment; ConfigError on an unknown key or a bad value.
// The environment is spelled env.<field>, except `action_dim` at top level.
void apply_kv(RunConfig& config, const std::string& key, const std::string& value);

// Applies every assignment in a flat key=value file (blank lines and lines
// starting with '#' are skipped) on top of the current values.
void apply_config_file(RunConfig& config, const std::string& path);

// Full snapshot in fixed declaration order; parsing the pairs back through
// apply_kv reproduces the config exactly.
std::vector<std::pair<std::string, std::string>> to_kv(const RunConfig& config);

// Record of one command invocation, written before any training starts.
struct RunManifest {
    std::string command;               // e.g. "train --agent diffclone"
    std::vector<std::string> inputs;   // digested at write time
    std::vector<std::string> outputs;  // planned artifact paths
    RunConfig config;
};

// Flat key=value text: version, command, one input=<path> fnv1a64:<hex> line
// per input, one output=<path> line per output, then config.<key> lines.
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace diffclone
