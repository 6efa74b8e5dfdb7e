#include "ordiformer/ordinal.hpp"

#include <cmath>

namespace ordiformer {

HeadMode parse_head_mode(const std::string& s) {
    if (s == "shared") return HeadMode::shared;
    if (s == "independent") return HeadMode::independent;
    if (s == "ce") return HeadMode::ce;
    throw ConfigError("unknown head mode '" + s + "' (expected shared|independent|ce)");
}

std::string to_string(HeadMode m) {
    switch (m) {
        case HeadMode::shared: return "shared";
        case HeadMode::independent: return "independent";
        case HeadMode::ce: return "ce";
    }
    return "?";
}

OrdinalHead::OrdinalHead(HeadMode mode, int embed_dim, int num_grades, Rng& rng, float bias_spacing)
    : mode_(mode), num_grades_(num_grades) {
    if (num_grades < 2) throw ConfigError("ordinal head: need at least 2 grades");
    if (embed_dim <= 0) throw ConfigError("ordinal head: embedding dimension must be positive");
    const float stddev = std::sqrt(1.0f / static_cast<float>(embed_dim));
    const int outs = num_outputs();
    if (mode == HeadMode::shared) {
        weight_ = Parameter("head.weight", normal_matrix(embed_dim, 1, stddev, rng));
        // Descending start: rank-consistent from the first step. Narrow gaps
        // let pos-weighted thresholds pull inner grades outward.
        if (!(bias_spacing >= 0.0f)) throw ConfigError("ordinal head: bias spacing must be non-negative");
        Matrix b(1, outs);
        for (int k = 0; k < outs; ++k) b(0, k) = bias_spacing * (0.5f * static_cast<float>(outs - 1) - static_cast<float>(k));
        bias_ = Parameter("head.bias", b, false);
    } else {
        weight_ = Parameter("head.weight", normal_matrix(embed_dim, outs, stddev, rng));
        bias_ = Parameter("head.bias", Matrix::Zero(1, outs), false);
    }
}

Tensor OrdinalHead::forward(Tape& tape, const Tensor& embedding) {
    if (embedding.cols() != weight_.value.rows()) {
        throw DimensionError("ordinal head: embedding width " + std::to_string(embedding.cols()) + " != " +
                             std::to_string(weight_.value.rows()));
    }
    Tensor proj = matmul(embedding, tape.param(weight_));
    if (mode_ == HeadMode::shared) {
        proj = matmul(proj, tape.constant(Matrix::Ones(1, num_outputs())));
    }
    return add_row(proj, tape.param(bias_));
}

RowVector encode_labels(int y, int num_grades) {
    if (num_grades < 2) throw InputError("encode_labels: need at least 2 grades");
    if (y < 0 || y >= num_grades) {
        throw InputError("encode_labels: label " + std::to_string(y) + " outside 0.." + std::to_string(num_grades - 1));
    }
    RowVector t(num_grades - 1);
    for (int k = 0; k < num_grades - 1; ++k) t(k) = y > k ? 1.0f : 0.0f;
    return t;
}

Matrix ordinal_targets(std::span<const int> labels, int num_grades) {
    Matrix t(static_cast<Eigen::Index>(labels.size()), num_grades - 1);
    for (std::size_t i = 0; i < labels.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = encode_labels(labels[i], num_grades);
    return t;
}

RowVector compute_pos_weights(std::span<const int> labels, int num_grades) {
    RowVector w(num_grades - 1);
    for (int k = 0; k < num_grades - 1; ++k) {
        long pos = 0;
        long neg = 0;
        for (int y : labels) (y > k ? pos : neg)++;
        if (pos == 0 || neg == 0) {
            throw ConfigError("compute_pos_weights: threshold " + std::to_string(k) + " has no " +
                              (pos == 0 ? "positive" : "negative") + " samples");
        }
        w(k) = static_cast<float>(static_cast<double>(neg) / static_cast<double>(pos));
    }
    return w;
}

RowVector class_weights(double alpha, int num_grades, const std::vector<int>& emphasised) {
    if (!(alpha > 0.0)) throw InputError("class_weights: alpha must be positive");
    RowVector w = RowVector::Ones(num_grades);
    for (int g : emphasised) {
        if (g < 0 || g >= num_grades) throw InputError("class_weights: emphasised grade out of range");
        w(g) = static_cast<float>(alpha);
    }
    return w;
}

Eigen::VectorXf sample_weights(std::span<const int> labels, const RowVector& per_grade) {
    Eigen::VectorXf w(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= per_grade.size()) throw InputError("sample_weights: label out of range");
        w(static_cast<Eigen::Index>(i)) = per_grade(labels[i]);
    }
    return w;
}

Tensor coral_loss(const Tensor& logits, const Matrix& targets, const RowVector& pos_weights,
                  const Eigen::VectorXf& sample_w) {
    check_finite(logits.value(), "coral_loss logits");
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
        throw DimensionError("coral_loss: targets shape differs from logits");
    }
    if (pos_weights.size() != logits.cols()) throw DimensionError("coral_loss: pos_weights length != K-1");
    if (sample_w.size() != logits.rows()) throw DimensionError("coral_loss: sample weight count != N");
    Tape& tape = *logits.tape();
    Tensor pos_term = tape.constant(targets.array().rowwise() * pos_weights.array());
    Tensor neg_term = tape.constant((1.0f - targets.array()).matrix());
    Tensor per = add(mul(softplus(scale(logits, -1.0f)), pos_term), mul(softplus(logits), neg_term));
    per = mul_col(per, tape.constant(sample_w));
    return mean(per);
}

Tensor ce_head_loss(const Tensor& logits, std::span<const int> labels, const RowVector& class_w) {
    check_finite(logits.value(), "ce_head_loss logits");
    const auto n = logits.rows();
    const auto k = logits.cols();
    if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionError("ce_head_loss: label count != N");
    if (class_w.size() != 0 && class_w.size() != k) throw DimensionError("ce_head_loss: class weight length != K");
    Matrix pick = Matrix::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw InputError("ce_head_loss: label " + std::to_string(y) + " out of range");
        pick(i, y) = class_w.size() == 0 ? 1.0f : class_w(y);
    }
    Tape& tape = *logits.tape();
    return scale(sum(mul(log_softmax(logits), tape.constant(std::move(pick)))), -1.0f / static_cast<float>(n));
}

namespace {

// (K+1) x K map taking [1, P(y>0), ..., P(y>K-2), 0] to adjacent differences.
Matrix difference_map(int num_grades) {
    Matrix d = Matrix::Zero(num_grades + 1, num_grades);
    for (int c = 0; c < num_grades; ++c) {
        d(c, c) = 1.0f;
        d(c + 1, c) = -1.0f;
    }
    return d;
}

}  // namespace

RowVector coral_probs_to_class_dist(const RowVector& probs) {
    const int k = static_cast<int>(probs.size()) + 1;
    RowVector ext(k + 1);
    ext(0) = 1.0f;
    ext.segment(1, k - 1) = probs;
    ext(k) = 0.0f;
    RowVector p = (ext * difference_map(k)).cwiseMax(0.0f);
    const double total = p.cast<double>().sum();
    if (total <= 0.0) return RowVector::Constant(k, 1.0f / static_cast<float>(k));
    return (p.cast<double>() / total).cast<float>();
}

Tensor coral_class_distribution(const Tensor& probs) {
    Tape& tape = *probs.tape();
    const auto n = probs.rows();
    const int k = static_cast<int>(probs.cols()) + 1;
    Tensor ext = concat_cols({tape.constant(Matrix::Ones(n, 1)), probs, tape.constant(Matrix::Zero(n, 1))});
    return normalize_distribution_rows(relu(matmul(ext, tape.constant(difference_map(k)))));
}

}  // namespace ordiformer
