#pragma once

#include "ordiformer/config.hpp"
#include "ordiformer/inference.hpp"
#include "ordiformer/io.hpp"
#include "ordiformer/metrics.hpp"

#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ordiformer {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int divergence = 4;
}  // namespace exit_code

/// Maps an exception escaping a command to the process exit code.
int exit_code_for(const std::exception& e);

/// ORDIFORMER_THREADS if set to a positive integer, else 1.
int fold_threads_from_env();

void cmd_synth(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

struct TrainSummary {
    std::vector<CheckpointInfo> folds;
    std::vector<EpochLog> best;
};

/// Trains every fold and writes fold_<k>.json/.bin, fold_<k>_log.csv,
/// splits.json, summary.csv and config.ini into `out_dir`. Folds run on up
/// to `threads` threads; files are written afterwards in fold order.
TrainSummary cmd_train(RunConfig config, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
                       int threads, std::ostream& log);

struct CalibrationOutcome {
    TauResult result;
    std::size_t n_val = 0;
};

/// Pools TTA validation logits from every fold listed in splits.json and
/// tunes tau. Writes calibration.json and val_logits.csv.
CalibrationOutcome cmd_calibrate(const std::filesystem::path& run_dir, const std::filesystem::path& data_dir,
                                 const std::filesystem::path& out_dir, bool use_tta, std::ostream& log);

enum class EvalMode { single, ensemble };

EvalMode parse_eval_mode(const std::string& s);

struct EvalOptions {
    EvalMode mode = EvalMode::ensemble;
    CombineMode combine = CombineMode::logit_mean;
    bool tta = true;
    /// Falls back to calibration.json in the run directory.
    std::optional<double> tau;
    /// Single mode: this fold instead of the best-validation one.
    std::optional<int> fold;
    /// Ensemble mode: restrict to these folds.
    std::vector<int> members;
};

/// Writes report.json, report.csv, confusion.csv and predictions.csv.
MetricsReport cmd_eval(const std::filesystem::path& run_dir, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out_dir, const EvalOptions& options, std::ostream& log);

struct ExplainResult {
    Matrix grid;
    Image heatmap;
};

/// Rollout saliency for one image: `out_path` gets the upsampled heatmap
/// PGM, the same path with a .csv extension gets the raw grid.
ExplainResult cmd_explain(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
                          const std::filesystem::path& out_path, std::ostream& log);

/// Heatmap from a patch grid: nearest-neighbour upsampling, min-max to
/// [0, 1]; an all-equal grid gives 128/255 everywhere.
Image saliency_heatmap(const Matrix& grid, int height, int width);

/// Paired t-test on one column of two per-fold CSV logs.
TTestResult cmd_compare(const std::filesystem::path& log_a, const std::filesystem::path& log_b,
                        const std::string& metric, std::ostream& log);

/// Column `metric` of a CSV file with a header row.
std::vector<double> read_csv_column(const std::filesystem::path& path, const std::string& metric);

}  // namespace ordiformer
