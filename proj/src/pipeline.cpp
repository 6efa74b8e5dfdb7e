#include "ordiformer/pipeline.hpp"

#include "ordiformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace ordiformer {

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

std::vector<int> Dataset::labels(std::span<const std::size_t> ids) const {
    std::vector<int> out;
    out.reserve(ids.size());
    for (std::size_t i : ids) out.push_back(samples.at(i).label);
    return out;
}

std::vector<Image> Dataset::images(std::span<const std::size_t> ids) const {
    std::vector<Image> out;
    out.reserve(ids.size());
    for (std::size_t i : ids) out.push_back(samples.at(i).pixels);
    return out;
}

SplitRegime parse_split_regime(const std::string& s) {
    if (s == "train_val_test") return SplitRegime::train_val_test;
    if (s == "train_val") return SplitRegime::train_val;
    throw ConfigError("unknown split regime '" + s + "' (expected train_val_test|train_val)");
}

std::string to_string(SplitRegime r) { return r == SplitRegime::train_val_test ? "train_val_test" : "train_val"; }

std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed, SplitRegime regime,
                                        std::span<const std::string> groups) {
    if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2");
    if (regime == SplitRegime::train_val_test && k < 3) {
        throw ConfigError("stratified_kfold: train_val_test regime needs k >= 3");
    }
    if (!groups.empty() && groups.size() != labels.size()) {
        throw ConfigError("stratified_kfold: group column length differs from labels");
    }

    // Units are samples, or groups of samples when group ids are given. A
    // group is stratified by the label of its first sample.
    std::vector<std::vector<std::size_t>> units;
    std::vector<int> unit_label;
    if (groups.empty()) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            units.push_back({i});
            unit_label.push_back(labels[i]);
        }
    } else {
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto [it, fresh] = index.emplace(groups[i], units.size());
            if (fresh) {
                units.emplace_back();
                unit_label.push_back(labels[i]);
            }
            units[it->second].push_back(i);
        }
    }

    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t u = 0; u < units.size(); ++u) by_label[unit_label[u]].push_back(u);

    Rng rng = make_stream(seed, 0x73706c6974ULL);
    std::vector<std::vector<std::size_t>> bins(static_cast<std::size_t>(k));
    for (auto& [label, members] : by_label) {
        if (static_cast<int>(members.size()) < k) {
            throw ConfigError("stratified_kfold: grade " + std::to_string(label) + " has " +
                              std::to_string(members.size()) + " units, fewer than k=" + std::to_string(k));
        }
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t j = 0; j < members.size(); ++j) {
            for (std::size_t i : units[members[j]]) bins[j % static_cast<std::size_t>(k)].push_back(i);
        }
    }
    for (auto& b : bins) std::sort(b.begin(), b.end());

    std::vector<FoldSplit> folds;
    for (int f = 0; f < k; ++f) {
        FoldSplit s;
        s.fold_index = f;
        const int val_bin = regime == SplitRegime::train_val_test ? (f + 1) % k : f;
        const int test_bin = regime == SplitRegime::train_val_test ? f : -1;
        for (int b = 0; b < k; ++b) {
            auto& dst = b == test_bin ? s.test_ids : (b == val_bin ? s.val_ids : s.train_ids);
            dst.insert(dst.end(), bins[static_cast<std::size_t>(b)].begin(), bins[static_cast<std::size_t>(b)].end());
        }
        std::sort(s.train_ids.begin(), s.train_ids.end());
        folds.push_back(std::move(s));
    }
    return folds;
}

Image hflip(const Image& image) { return image.rowwise().reverse(); }

namespace {

// Bilinear sample with zero outside the image.
float sample_zero_pad(const Image& img, double y, double x) {
    const double fy = std::floor(y);
    const double fx = std::floor(x);
    const auto y0 = static_cast<Eigen::Index>(fy);
    const auto x0 = static_cast<Eigen::Index>(fx);
    const double wy = y - fy;
    const double wx = x - fx;
    auto at = [&](Eigen::Index r, Eigen::Index c) -> double {
        if (r < 0 || c < 0 || r >= img.rows() || c >= img.cols()) return 0.0;
        return img(r, c);
    };
    const double v = (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                     wy * ((1.0 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    return static_cast<float>(v);
}

// Bilinear sample clamped to the image border.
float sample_clamped(const Image& img, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(img.rows() - 1));
    x = std::clamp(x, 0.0, static_cast<double>(img.cols() - 1));
    const auto y0 = static_cast<Eigen::Index>(std::floor(y));
    const auto x0 = static_cast<Eigen::Index>(std::floor(x));
    const auto y1 = std::min(y0 + 1, img.rows() - 1);
    const auto x1 = std::min(x0 + 1, img.cols() - 1);
    const double wy = y - static_cast<double>(y0);
    const double wx = x - static_cast<double>(x0);
    const double v = (1.0 - wy) * ((1.0 - wx) * img(y0, x0) + wx * img(y0, x1)) +
                     wy * ((1.0 - wx) * img(y1, x0) + wx * img(y1, x1));
    return static_cast<float>(v);
}

}  // namespace

Image rotate(const Image& image, float degrees) {
    if (degrees == 0.0f) return image;
    const double rad = static_cast<double>(degrees) * std::numbers::pi / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    const double cy = (static_cast<double>(image.rows()) - 1.0) / 2.0;
    const double cx = (static_cast<double>(image.cols()) - 1.0) / 2.0;
    Image out(image.rows(), image.cols());
    for (Eigen::Index y = 0; y < image.rows(); ++y) {
        for (Eigen::Index x = 0; x < image.cols(); ++x) {
            // Inverse map; image rows grow downward, so a visually
            // counter-clockwise turn uses this sign pattern.
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double sx = c * dx - s * dy + cx;
            const double sy = s * dx + c * dy + cy;
            out(y, x) = sample_zero_pad(image, sy, sx);
        }
    }
    return out;
}

Image resized_crop(const Image& image, float area_scale, float offset_x, float offset_y) {
    if (!(area_scale > 0.0f && area_scale <= 1.0f)) throw InputError("resized_crop: scale must lie in (0, 1]");
    if (area_scale == 1.0f) return image;
    const double side = std::sqrt(static_cast<double>(area_scale));
    const double ch = side * static_cast<double>(image.rows());
    const double cw = side * static_cast<double>(image.cols());
    const double oy = static_cast<double>(offset_y) * (static_cast<double>(image.rows()) - ch);
    const double ox = static_cast<double>(offset_x) * (static_cast<double>(image.cols()) - cw);
    Image out(image.rows(), image.cols());
    for (Eigen::Index y = 0; y < image.rows(); ++y) {
        const double sy = oy + (static_cast<double>(y) + 0.5) * ch / static_cast<double>(image.rows()) - 0.5;
        for (Eigen::Index x = 0; x < image.cols(); ++x) {
            const double sx = ox + (static_cast<double>(x) + 0.5) * cw / static_cast<double>(image.cols()) - 0.5;
            out(y, x) = sample_clamped(image, sy, sx);
        }
    }
    return out;
}

void AugmentationPolicy::validate() const {
    if (!(crop_scale_min > 0.0f && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0f)) {
        throw ConfigError("augmentation: crop scale range must lie within (0, 1]");
    }
    if (flip_prob < 0.0f || flip_prob > 1.0f) throw ConfigError("augmentation: flip probability outside [0, 1]");
    if (rotation_deg < 0.0f) throw ConfigError("augmentation: rotation range must be non-negative");
}

AugmentParams sample_augment(const AugmentationPolicy& policy, Rng& rng) {
    AugmentParams p;
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    p.scale = policy.crop_scale_min + (policy.crop_scale_max - policy.crop_scale_min) * unit(rng);
    p.offset_x = unit(rng);
    p.offset_y = unit(rng);
    p.flip = unit(rng) < policy.flip_prob;
    p.angle = policy.rotation_deg * (2.0f * unit(rng) - 1.0f);
    return p;
}

Image apply_augment(const Image& image, const AugmentParams& params) {
    Image out = resized_crop(image, params.scale, params.offset_x, params.offset_y);
    if (params.flip) out = hflip(out);
    return rotate(out, params.angle);
}

Image augment(const Image& image, const AugmentationPolicy& policy, Rng& rng) {
    return apply_augment(image, sample_augment(policy, rng));
}

void adamw_step(std::span<Parameter* const> params, AdamWState& state, float lr, const AdamWConfig& config) {
    if (state.m.empty()) {
        for (Parameter* p : params) {
            state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (state.m.size() != params.size()) throw UsageError("adamw_step: optimiser state does not match parameters");
    ++state.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(config.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(config.beta2), static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (!p.trainable) continue;
        Matrix& m = state.m[i];
        Matrix& v = state.v[i];
        m = config.beta1 * m + (1.0f - config.beta1) * p.grad;
        v = config.beta2 * v + (1.0f - config.beta2) * p.grad.cwiseAbs2();
        const Matrix mhat = m / static_cast<float>(bc1);
        const Matrix vhat = v / static_cast<float>(bc2);
        const Matrix step = mhat.array() / (vhat.array().sqrt() + config.eps);
        p.value -= lr * step + (lr * config.weight_decay) * p.value;
    }
}

double cosine_lr(double t, double t_max, double lr0, double lr_min) {
    if (t < 0.0) throw InputError("cosine_lr: negative step");
    if (!(t_max > 0.0)) throw InputError("cosine_lr: t_max must be positive");
    if (t > t_max) return lr_min;
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t / t_max));
}

EarlyStopMetric parse_early_stop_metric(const std::string& s) {
    if (s == "accuracy") return EarlyStopMetric::accuracy;
    if (s == "macro_f1") return EarlyStopMetric::macro_f1;
    if (s == "mae") return EarlyStopMetric::mae;
    throw ConfigError("unknown early-stop metric '" + s + "' (expected accuracy|macro_f1|mae)");
}

std::string to_string(EarlyStopMetric m) {
    switch (m) {
        case EarlyStopMetric::accuracy: return "accuracy";
        case EarlyStopMetric::macro_f1: return "macro_f1";
        case EarlyStopMetric::mae: return "mae";
    }
    return "?";
}

void TrainConfig::validate() const {
    model.validate();
    augmentation.validate();
    align.validate();
    if (!(lr > 0.0f)) throw ConfigError("train: lr must be positive");
    if (weight_decay < 0.0f) throw ConfigError("train: weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (t_max < 1 || max_epochs < 1) throw ConfigError("train: t_max and max_epochs must be >= 1");
    if (patience < 1 || patience > t_max) throw ConfigError("train: patience must lie in 1..t_max");
    if (!(alpha > 0.0)) throw ConfigError("train: alpha must be positive");
    if (!(val_tau > 0.0 && val_tau < 1.0)) throw ConfigError("train: val_tau must lie in (0, 1)");
    if (align.mode != AlignMode::off && model.projection_dim == 0) {
        throw ConfigError("train: alignment enabled but the model has no projection head");
    }
}

std::string training_log_csv(std::span<const EpochLog> log) {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,lr,train_loss,val_accuracy,val_macro_f1,val_mae\n";
    for (const auto& e : log) {
        os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_accuracy << ',' << e.val_macro_f1 << ','
           << e.val_mae << '\n';
    }
    return os.str();
}

double early_stop_score(EarlyStopMetric metric, const EpochLog& e) {
    switch (metric) {
        case EarlyStopMetric::accuracy: return e.val_accuracy;
        case EarlyStopMetric::macro_f1: return e.val_macro_f1;
        case EarlyStopMetric::mae: return -e.val_mae;
    }
    return e.val_accuracy;
}

bool EarlyStopState::update(double score, int epoch) {
    if (score > best_) {
        best_ = score;
        best_epoch_ = epoch;
        since_improvement_ = 0;
        return true;
    }
    ++since_improvement_;
    return false;
}

std::vector<int> decode_logits(const Matrix& logits, HeadMode mode, double tau) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        if (mode == HeadMode::ce) {
            Eigen::Index best = 0;
            logits.row(i).maxCoeff(&best);
            out.push_back(static_cast<int>(best));
        } else {
            const RowVector probs = logits.row(i).unaryExpr([](float z) {
                return z >= 0.0f ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
            });
            out.push_back(decode(probs, tau));
        }
    }
    return out;
}

Matrix predict_ids(Model& model, const Dataset& data, std::span<const std::size_t> ids) {
    constexpr std::size_t kChunk = 64;
    Matrix out(static_cast<Eigen::Index>(ids.size()), model.num_outputs());
    for (std::size_t start = 0; start < ids.size(); start += kChunk) {
        const auto chunk = ids.subspan(start, std::min(kChunk, ids.size() - start));
        const std::vector<Image> imgs = data.images(chunk);
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(chunk.size())) =
            model.predict_logits(imgs);
    }
    return out;
}

Tensor batch_loss(Tape& tape, Model& model, std::span<const Image> images, std::span<const int> labels,
                  const TrainConfig& config, const RowVector& pos_weights, const RowVector& grade_weights,
                  const PromptSet* prompts) {
    Model::Forward fwd = model.forward(tape, images);
    const bool ce = model.config().head == HeadMode::ce;
    Tensor main = ce ? ce_head_loss(fwd.logits, labels, grade_weights)
                     : coral_loss(fwd.logits, ordinal_targets(labels, model.config().num_grades), pos_weights,
                                  sample_weights(labels, grade_weights));
    Tensor align;
    if (config.align.mode != AlignMode::off && config.align.lambda > 0.0f) {
        if (prompts == nullptr) throw ConfigError("alignment enabled but no prompt set supplied");
        Tensor f = model.project(tape, fwd.embedding);
        if (config.align.mode == AlignMode::contrastive) {
            align = contrastive_loss(f, labels, *prompts, config.align.temperature);
        } else {
            Tensor teacher = teacher_distribution(f, *prompts, config.align.temperature);
            Tensor student = ce ? softmax(fwd.logits, 1) : coral_class_distribution(sigmoid(fwd.logits));
            align = kl_distill_loss(teacher, student);
        }
    }
    Tensor reg;
    if (config.align.mu > 0.0f) {
        auto params = model.parameters();
        reg = l2_regularizer(tape, params);
    }
    return total_loss(main, align, reg, config.align.lambda, config.align.mu);
}

FoldResult train_fold(const Dataset& data, const FoldSplit& split, const TrainConfig& config,
                      const PromptSet* prompts) {
    config.validate();
    if (split.train_ids.empty() || split.val_ids.empty()) {
        throw ConfigError("train_fold: fold " + std::to_string(split.fold_index) + " has an empty train or val part");
    }
    const std::uint64_t fold_seed = config.seed + static_cast<std::uint64_t>(split.fold_index);
    FoldResult result;
    result.fold_index = split.fold_index;
    result.model = std::make_unique<Model>(config.model, fold_seed);
    Model& model = *result.model;
    const int k = config.model.num_grades;

    const std::vector<int> train_labels = data.labels(split.train_ids);
    const std::vector<int> val_labels = data.labels(split.val_ids);
    for (int y : train_labels) {
        if (y < 0 || y >= k) throw ConfigError("train_fold: label " + std::to_string(y) + " outside model grades");
    }
    const RowVector pos_w = config.model.head != HeadMode::ce && config.pos_weighting
                                ? compute_pos_weights(train_labels, k)
                                : RowVector::Ones(std::max(1, k - 1));
    const RowVector grade_w = class_weights(config.alpha, k, config.emphasised_grades);

    Rng rng = make_stream(fold_seed, 0x747261696eULL);
    AdamWState opt;
    const AdamWConfig adamw{0.9f, 0.999f, 1e-8f, config.weight_decay};
    auto params = model.parameters();
    EarlyStopState stopper(config.patience);
    std::vector<Matrix> best_state = model.state();
    std::vector<std::size_t> order = split.train_ids;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        const double lr = cosine_lr(epoch, config.t_max, config.lr);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t count = std::min(static_cast<std::size_t>(config.batch_size), order.size() - start);
            std::vector<Image> imgs;
            std::vector<int> labels;
            for (std::size_t j = start; j < start + count; ++j) {
                const auto& s = data.samples[order[j]];
                imgs.push_back(config.augment ? augment(s.pixels, config.augmentation, rng) : s.pixels);
                labels.push_back(s.label);
            }
            try {
                Tape tape;
                Tensor loss = batch_loss(tape, model, imgs, labels, config, pos_w, grade_w, prompts);
                tape.backward(loss);
                loss_sum += static_cast<double>(loss.value()(0, 0)) * static_cast<double>(count);
                adamw_step(params, opt, static_cast<float>(lr), adamw);
                for (Parameter* p : params) check_finite(p->value, p->name);
            } catch (const NumericError& e) {
                throw DivergenceError(epoch, e.what());
            }
        }

        EpochLog e;
        e.epoch = epoch;
        e.lr = lr;
        e.train_loss = loss_sum / static_cast<double>(order.size());
        const Matrix val_logits = predict_ids(model, data, split.val_ids);
        const std::vector<int> pred = decode_logits(val_logits, config.model.head, config.val_tau);
        const MetricsReport rep = classification_metrics(confusion(val_labels, pred, k));
        e.val_accuracy = rep.accuracy;
        e.val_macro_f1 = rep.macro_f1;
        e.val_mae = rep.mae;
        result.log.push_back(e);

        if (stopper.update(early_stop_score(config.early_stop, e), epoch)) {
            best_state = model.state();
            result.best = e;
        }
        if (stopper.should_stop()) {
            result.early_stopped = true;
            break;
        }
    }
    model.load_state(best_state);
    result.best_epoch = stopper.best_epoch();
    result.best_score = stopper.best_score();
    return result;
}

}  // namespace ordiformer
