#pragma once

#include "ordiformer/config.hpp"
#include "ordiformer/model.hpp"
#include "ordiformer/synthgen.hpp"

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

namespace ordiformer {

/// Missing, unreadable or malformed files on disk.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// 8-bit binary PGM (P5); pixel values map to [0, 1] by /255.
Image read_pgm(const std::filesystem::path& path);
/// Values are clipped to [0, 1] and rounded to the nearest byte.
void write_pgm(const std::filesystem::path& path, const Image& image);

/// Writes `<id>.pgm` per sample, labels.csv (`id,label,gap_width`) and
/// dataset.json holding the grade count.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data);
/// Reads labels.csv and the referenced images. An optional `group` column
/// fills Dataset::groups. A dataset.json whose grade count differs from
/// `num_grades` raises ConfigError.
Dataset read_dataset(const std::filesystem::path& dir, int num_grades = 5);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
    int fold_index = 0;
    int best_epoch = -1;
    double best_score = 0.0;
    int epochs_run = 0;
    bool early_stopped = false;
};

/// JSON manifest at `manifest` plus a little-endian float32 blob beside it
/// (same stem, `.bin`).
void save_checkpoint(const std::filesystem::path& manifest, Model& model, const RunConfig& config,
                     const CheckpointInfo& info);

struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    RunConfig config;
    CheckpointInfo info;
};

/// Rebuilds the model from the manifest and fills every parameter from the
/// blob. Version mismatch, missing tensors or shape mismatch throw DataError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest);

}  // namespace ordiformer
