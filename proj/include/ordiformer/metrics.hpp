#pragma once

#include "ordiformer/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ordiformer {

struct UndefinedMetricError : std::domain_error {
    using std::domain_error::domain_error;
};
struct DegenerateInputError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Rows are true grades, columns predicted grades.
struct ConfusionMatrix {
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;

    int num_grades() const { return static_cast<int>(counts.rows()); }
    long total() const { return counts.sum(); }
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int num_grades);

struct ClassStats {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double specificity = 0.0;
    long support = 0;
};

struct MetricsReport {
    long n = 0;
    double accuracy = 0.0;
    std::vector<ClassStats> per_class;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double macro_specificity = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    double weighted_specificity = 0.0;
    std::optional<double> macro_auroc;
    double mae = 0.0;
    ConfusionMatrix cm;
    std::optional<std::pair<double, double>> accuracy_ci;

    struct Provenance {
        std::optional<double> tau;
        std::string combine;
        std::vector<std::string> members;
        std::vector<std::string> tta_views;
    } provenance;
};

/// Every metric except AUROC. Macro means run over grades present in the
/// ground truth; any 0/0 rate is 0.
MetricsReport classification_metrics(const ConfusionMatrix& cm);

double mae(std::span<const int> truth, std::span<const int> pred);
double accuracy(std::span<const int> truth, std::span<const int> pred);
double macro_f1(std::span<const int> truth, std::span<const int> pred, int num_grades);

/// One-vs-rest AUROC per grade by pair counting (ties count half), averaged
/// over grades with at least one positive and one negative.
template <typename Derived>
double auroc_ovr_macro(const Eigen::MatrixBase<Derived>& scores, std::span<const int> truth) {
    const auto n = scores.rows();
    if (static_cast<Eigen::Index>(truth.size()) != n) throw DimensionError("auroc: label count != score rows");
    double total = 0.0;
    int used = 0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        std::vector<double> neg;
        std::vector<double> pos;
        for (Eigen::Index i = 0; i < n; ++i) {
            (truth[static_cast<std::size_t>(i)] == c ? pos : neg).push_back(static_cast<double>(scores(i, c)));
        }
        if (pos.empty() || neg.empty()) continue;
        std::sort(neg.begin(), neg.end());
        std::uint64_t twice_wins = 0;
        for (double s : pos) {
            const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
            const auto hi = std::upper_bound(lo, neg.end(), s);
            twice_wins += 2 * static_cast<std::uint64_t>(lo - neg.begin()) + static_cast<std::uint64_t>(hi - lo);
        }
        total += static_cast<double>(twice_wins) /
                 (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
        ++used;
    }
    if (used == 0) throw UndefinedMetricError("auroc: no grade has both positive and negative samples");
    return total / used;
}

using PairMetric = std::function<double(std::span<const int>, std::span<const int>)>;

/// Percentile interval over `resamples` draws with replacement of
/// (truth, pred) pairs.
std::pair<double, double> bootstrap_ci(const PairMetric& metric, std::span<const int> truth, std::span<const int> pred,
                                       int resamples = 1000, double level = 0.95, std::uint64_t seed = 42);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
    std::vector<double> differences;
};

/// Two-sided paired t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_two_sided_p(double t, double df);

nlohmann::json to_json(const MetricsReport& report);
/// Flat single-row form; column order given by metrics_csv_header().
std::string metrics_csv_header(int num_grades);
std::string metrics_csv_row(const MetricsReport& report);
std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace ordiformer
