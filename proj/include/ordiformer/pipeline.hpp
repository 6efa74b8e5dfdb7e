#pragma once

#include "ordiformer/model.hpp"
#include "ordiformer/random.hpp"
#include "ordiformer/semalign.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ordiformer {

struct Dataset {
    std::vector<ImageSample> samples;
    int num_grades = 5;
    /// Optional subject ids; samples sharing a group stay in one split part.
    std::vector<std::string> groups;

    std::size_t size() const { return samples.size(); }
    std::vector<int> labels() const;
    std::vector<int> labels(std::span<const std::size_t> ids) const;
    std::vector<Image> images(std::span<const std::size_t> ids) const;
};

// ---------------------------------------------------------------- splits

/// train_val_test: test = bin i, val = bin i+1, train = rest.
/// train_val: val = bin i, train = rest, no test part.
enum class SplitRegime { train_val_test, train_val };

SplitRegime parse_split_regime(const std::string& s);
std::string to_string(SplitRegime r);

struct FoldSplit {
    int fold_index = 0;
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> val_ids;
    std::vector<std::size_t> test_ids;
};

/// Per grade, a seeded shuffle then round-robin assignment into k bins.
std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed,
                                        SplitRegime regime = SplitRegime::train_val_test,
                                        std::span<const std::string> groups = {});

// ---------------------------------------------------------- augmentation

Image hflip(const Image& image);
/// Counter-clockwise rotation about the image centre, bilinear, zero padding.
Image rotate(const Image& image, float degrees);
/// Square crop covering `area_scale` of the image at fractional offset
/// (ox, oy) of the free margin, bilinearly resized back to full size.
Image resized_crop(const Image& image, float area_scale, float offset_x, float offset_y);

struct AugmentationPolicy {
    float crop_scale_min = 0.8f;
    float crop_scale_max = 1.0f;
    float flip_prob = 0.5f;
    float rotation_deg = 10.0f;

    void validate() const;
};

struct AugmentParams {
    float scale = 1.0f;
    float offset_x = 0.0f;
    float offset_y = 0.0f;
    bool flip = false;
    float angle = 0.0f;
};

/// Draws scale, offset_x, offset_y, flip, angle in that order.
AugmentParams sample_augment(const AugmentationPolicy& policy, Rng& rng);
/// Crop, then flip, then rotate.
Image apply_augment(const Image& image, const AugmentParams& params);
Image augment(const Image& image, const AugmentationPolicy& policy, Rng& rng);

// ------------------------------------------------------------- optimiser

struct AdamWConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.05f;
};

struct AdamWState {
    long step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

/// theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta, for
/// every trainable parameter.
void adamw_step(std::span<Parameter* const> params, AdamWState& state, float lr, const AdamWConfig& config);

/// lr_min + (lr0 - lr_min)(1 + cos(pi t / t_max)) / 2; t beyond t_max gives
/// lr_min.
double cosine_lr(double t, double t_max, double lr0, double lr_min = 0.0);

// -------------------------------------------------------------- training

enum class EarlyStopMetric { accuracy, macro_f1, mae };

EarlyStopMetric parse_early_stop_metric(const std::string& s);
std::string to_string(EarlyStopMetric m);

struct TrainConfig {
    ModelConfig model;
    float lr = 3e-5f;
    float weight_decay = 0.05f;
    int batch_size = 8;
    int t_max = 80;
    int max_epochs = 80;
    int patience = 10;
    std::uint64_t seed = 42;
    double alpha = 1.5;
    std::vector<int> emphasised_grades{1, 2};
    bool pos_weighting = true;
    bool augment = true;
    AugmentationPolicy augmentation;
    AlignmentConfig align;
    EarlyStopMetric early_stop = EarlyStopMetric::accuracy;
    double val_tau = 0.5;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
    double val_mae = 0.0;
};

std::string training_log_csv(std::span<const EpochLog> log);

/// Higher score is better; MAE enters negated.
double early_stop_score(EarlyStopMetric metric, const EpochLog& e);

class EarlyStopState {
   public:
    explicit EarlyStopState(int patience) : patience_(patience) {}

    /// Returns true when `score` improves on the best seen so far.
    bool update(double score, int epoch);
    bool should_stop() const { return since_improvement_ >= patience_; }

    double best_score() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    int epochs_since_improvement() const { return since_improvement_; }

   private:
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
    int since_improvement_ = 0;
};

struct DivergenceError : std::runtime_error {
    DivergenceError(int epoch_, const std::string& what)
        : std::runtime_error("training diverged at epoch " + std::to_string(epoch_) + ": " + what), epoch(epoch_) {}
    int epoch;
};

struct FoldResult {
    int fold_index = 0;
    std::unique_ptr<Model> model;  // holds the best-validation weights
    int best_epoch = -1;
    double best_score = 0.0;
    EpochLog best;
    std::vector<EpochLog> log;
    bool early_stopped = false;
};

/// Decoded grades for logits of either head type.
std::vector<int> decode_logits(const Matrix& logits, HeadMode mode, double tau);

/// Logits for dataset rows `ids`, evaluated in fixed-size chunks.
Matrix predict_ids(Model& model, const Dataset& data, std::span<const std::size_t> ids);

/// Loss of one mini-batch under the configured objective; used by the
/// training loop.
Tensor batch_loss(Tape& tape, Model& model, std::span<const Image> images, std::span<const int> labels,
                  const TrainConfig& config, const RowVector& pos_weights, const RowVector& grade_weights,
                  const PromptSet* prompts);

/// Runs the full training loop on one fold. The fold's RNG is seeded with
/// seed + fold_index; each epoch shuffles then draws augmentations in batch
/// order.
FoldResult train_fold(const Dataset& data, const FoldSplit& split, const TrainConfig& config,
                      const PromptSet* prompts = nullptr);

}  // namespace ordiformer
