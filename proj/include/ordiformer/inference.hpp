#pragma once

#include "ordiformer/model.hpp"
#include "ordiformer/ordinal.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace ordiformer {

struct TtaView {
    bool flip = false;
    float angle = 0.0f;

    std::string name() const;
    Image apply(const Image& image) const;
    bool operator==(const TtaView&) const = default;
};

/// Accepts identity, hflip, rot+<deg>, rot-<deg>.
TtaView parse_tta_view(const std::string& s);

struct TtaPolicy {
    std::vector<TtaView> views;

    /// identity, horizontal flip, +10 and -10 degree rotations.
    static TtaPolicy standard();
    static TtaPolicy identity_only();
    void validate() const;
    std::vector<std::string> names() const;
};

enum class CombineMode { logit_mean, majority_vote };

CombineMode parse_combine_mode(const std::string& s);
std::string to_string(CombineMode m);

struct TauGrid {
    double lo = 0.30;
    double hi = 0.70;
    double step = 0.01;

    void validate() const;
    /// lo + i * step for i = 0..n, rounded to 1e-9.
    std::vector<double> points() const;
};

/// Mean of per-view logits, summed in double in listed view order. One row
/// per image.
Matrix tta_logits(Model& model, std::span<const Image> images, const TtaPolicy& policy);
RowVector tta_logits(Model& model, const Image& image, const TtaPolicy& policy);

/// Mean over members of tta_logits, accumulated in member order.
Matrix ensemble_logits(std::span<Model* const> members, std::span<const Image> images, const TtaPolicy& policy);
RowVector ensemble_logits(std::span<Model* const> members, const Image& image, const TtaPolicy& policy);

/// Element-wise mean of logit matrices in double.
Matrix mean_logits(std::span<const Matrix> per_member);

/// Modal grade, ties to the lower grade.
int majority_vote(std::span<const int> votes);

/// sigmoid then threshold count.
template <typename Derived>
int predict(const Eigen::MatrixBase<Derived>& logits, double tau) {
    RowVector probs(logits.size());
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
        const float z = static_cast<float>(logits(k));
        probs(k) = z >= 0.0f ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
    }
    return decode(probs, tau);
}

struct TauResult {
    double tau = 0.30;
    double macro_f1 = 0.0;
};

/// Exhaustive macro-F1 search over the grid; the smallest maximiser wins.
TauResult tune_tau(const Matrix& val_logits, std::span<const int> val_labels, const TauGrid& grid = {});

/// Class distribution per row: CORAL probabilities converted with
/// clamp-and-renormalise, or softmax for ce logits.
Matrix class_distributions(const Matrix& logits, HeadMode mode);

/// `id,label,z0,...` with one logit column per output.
std::string logit_dump_csv(std::span<const std::string> ids, std::span<const int> labels, const Matrix& logits);

struct LogitDump {
    std::vector<std::string> ids;
    std::vector<int> labels;
    Matrix logits;
};
LogitDump parse_logit_dump_csv(const std::string& text);

}  // namespace ordiformer
