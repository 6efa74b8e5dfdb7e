#pragma once

#include "ordiformer/random.hpp"
#include "ordiformer/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace ordiformer {

/// shared: one weight vector plus K-1 biases (CORAL weight sharing).
/// independent: a full (K-1) x d map. ce: K-way softmax baseline.
enum class HeadMode { shared, independent, ce };

HeadMode parse_head_mode(const std::string& s);
std::string to_string(HeadMode m);

class OrdinalHead {
   public:
    /// Shared-mode biases start at spacing * ((K-2)/2 - k): descending and
    /// centred on zero.
    OrdinalHead(HeadMode mode, int embed_dim, int num_grades, Rng& rng, float bias_spacing = 4.0f);

    /// N x (K-1) threshold logits, or N x K class logits in ce mode.
    Tensor forward(Tape& tape, const Tensor& embedding);

    HeadMode mode() const { return mode_; }
    int num_grades() const { return num_grades_; }
    int num_outputs() const { return mode_ == HeadMode::ce ? num_grades_ : num_grades_ - 1; }
    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }
    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }

   private:
    HeadMode mode_;
    int num_grades_;
    Parameter weight_;
    Parameter bias_;
};

/// Component k is 1 iff y > k.
RowVector encode_labels(int y, int num_grades);
/// N x (K-1) stacked indicators.
Matrix ordinal_targets(std::span<const int> labels, int num_grades);

/// w_k = #{y <= k} / #{y > k}, computed on the labels given.
RowVector compute_pos_weights(std::span<const int> labels, int num_grades);

/// Ones everywhere except `alpha` at the emphasised grades.
RowVector class_weights(double alpha, int num_grades = 5, const std::vector<int>& emphasised = {1, 2});

/// Per-sample weights looked up from per-grade weights.
Eigen::VectorXf sample_weights(std::span<const int> labels, const RowVector& per_grade);

/// Mean over samples and thresholds of
/// w_i * (pos_w_k * t log(1 + e^-z) + (1 - t) log(1 + e^z)).
Tensor coral_loss(const Tensor& logits, const Matrix& targets, const RowVector& pos_weights,
                  const Eigen::VectorXf& sample_w);

/// Mean over samples of w_{y_i} * -log softmax(z_i)[y_i]. Pass an empty
/// vector for unweighted cross-entropy.
Tensor ce_head_loss(const Tensor& logits, std::span<const int> labels, const RowVector& class_w = RowVector());

/// Number of thresholds with probability >= tau.
template <typename Derived>
int decode(const Eigen::MatrixBase<Derived>& probs, double tau) {
    int grade = 0;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
        if (static_cast<double>(probs(k)) >= tau) ++grade;
    }
    return grade;
}

/// p(c) = max(P(y > c-1) - P(y > c), 0), renormalised; uniform when every
/// entry clamps to zero.
RowVector coral_probs_to_class_dist(const RowVector& probs);

/// Differentiable form over N x (K-1) probabilities.
Tensor coral_class_distribution(const Tensor& probs);

}  // namespace ordiformer
