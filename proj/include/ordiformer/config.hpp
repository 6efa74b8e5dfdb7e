#pragma once

#include "ordiformer/inference.hpp"
#include "ordiformer/pipeline.hpp"
#include "ordiformer/semalign.hpp"
#include "ordiformer/synthgen.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ordiformer {

/// Every tunable of a run. Defaults follow the reference hyperparameter
/// table: lr 3e-5, weight decay 0.05, batch 8, cosine T_max 80, patience 10,
/// sample weights [1, 1.5, 1.5, 1, 1], tau grid 0.30..0.70 step 0.01,
/// seed 42, four TTA views.
struct RunConfig {
    SynthConfig synth;
    TrainConfig train;
    int folds = 5;
    SplitRegime regime = SplitRegime::train_val_test;
    PromptSource prompt_source = PromptSource::ordinal_synthetic;
    std::string prompt_file;
    std::uint64_t prompt_seed = 7;
    /// Prompt embedding width; the projection head matches it when
    /// alignment is on.
    int prompt_dim = 32;
    TtaPolicy tta = TtaPolicy::standard();
    TauGrid tau_grid;
    int bootstrap_samples = 1000;
    double bootstrap_level = 0.95;
    std::uint64_t bootstrap_seed = 42;

    RunConfig();

    /// Keeps the projection width in step with the alignment mode.
    void sync();
    void validate() const;
};

using ConfigMap = std::map<std::string, std::string>;

/// All keys with their current values, `section.key` form.
ConfigMap to_config_map(const RunConfig& config);
/// Starts from defaults; unknown keys or malformed values throw ConfigError.
RunConfig run_config_from_map(const ConfigMap& values);

/// INI-style `[section]` / `key = value` file; `;` starts a comment.
RunConfig load_run_config(const std::filesystem::path& path);
/// Raw `section.key -> value` pairs of a config file, unvalidated.
ConfigMap read_config_map(const std::filesystem::path& path);
std::string to_ini(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace ordiformer
