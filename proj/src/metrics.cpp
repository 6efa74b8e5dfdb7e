#include "ordiformer/metrics.hpp"

#include "ordiformer/random.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace ordiformer {

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int num_grades) {
    if (truth.size() != pred.size()) throw InputError("confusion: label and prediction counts differ");
    ConfusionMatrix cm{Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_grades, num_grades)};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_grades || pred[i] < 0 || pred[i] >= num_grades) {
            throw InputError("confusion: label out of range at index " + std::to_string(i));
        }
        ++cm.counts(truth[i], pred[i]);
    }
    return cm;
}

namespace {

double ratio(long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

MetricsReport classification_metrics(const ConfusionMatrix& cm) {
    const long n = cm.total();
    if (n <= 0) throw InputError("classification_metrics: empty confusion matrix");
    const int k = cm.num_grades();
    MetricsReport r;
    r.n = n;
    r.cm = cm;
    r.accuracy = ratio(cm.counts.trace(), n);
    double abs_err = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) abs_err += static_cast<double>(std::abs(i - j)) * cm.counts(i, j);
    }
    r.mae = abs_err / static_cast<double>(n);

    int present = 0;
    for (int c = 0; c < k; ++c) {
        const long tp = cm.counts(c, c);
        const long support = cm.counts.row(c).sum();
        const long predicted = cm.counts.col(c).sum();
        const long fp = predicted - tp;
        const long fn = support - tp;
        const long tn = n - tp - fp - fn;
        ClassStats s;
        s.support = support;
        s.precision = ratio(tp, tp + fp);
        s.recall = ratio(tp, tp + fn);
        s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        s.specificity = ratio(tn, tn + fp);
        r.per_class.push_back(s);
        if (support == 0) continue;
        ++present;
        r.macro_precision += s.precision;
        r.macro_recall += s.recall;
        r.macro_f1 += s.f1;
        r.macro_specificity += s.specificity;
        const double w = static_cast<double>(support) / static_cast<double>(n);
        r.weighted_precision += w * s.precision;
        r.weighted_recall += w * s.recall;
        r.weighted_f1 += w * s.f1;
        r.weighted_specificity += w * s.specificity;
    }
    r.macro_precision /= present;
    r.macro_recall /= present;
    r.macro_f1 /= present;
    r.macro_specificity /= present;
    return r;
}

double mae(std::span<const int> truth, std::span<const int> pred) {
    if (truth.size() != pred.size()) throw InputError("mae: label and prediction counts differ");
    if (truth.empty()) throw InputError("mae: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) acc += std::abs(truth[i] - pred[i]);
    return acc / static_cast<double>(truth.size());
}

double accuracy(std::span<const int> truth, std::span<const int> pred) {
    if (truth.size() != pred.size()) throw InputError("accuracy: label and prediction counts differ");
    if (truth.empty()) throw InputError("accuracy: empty input");
    long hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double macro_f1(std::span<const int> truth, std::span<const int> pred, int num_grades) {
    return classification_metrics(confusion(truth, pred, num_grades)).macro_f1;
}

std::pair<double, double> bootstrap_ci(const PairMetric& metric, std::span<const int> truth, std::span<const int> pred,
                                       int resamples, double level, std::uint64_t seed) {
    if (truth.empty() || truth.size() != pred.size()) throw InputError("bootstrap_ci: need equal non-empty inputs");
    if (resamples < 1 || !(level > 0.0 && level < 1.0)) throw InputError("bootstrap_ci: bad resamples or level");
    Rng rng = make_stream(seed, 0x626f6f74ULL);
    std::uniform_int_distribution<std::size_t> pick(0, truth.size() - 1);
    std::vector<int> t(truth.size());
    std::vector<int> p(truth.size());
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(resamples));
    for (int b = 0; b < resamples; ++b) {
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const std::size_t j = pick(rng);
            t[i] = truth[j];
            p[i] = pred[j];
        }
        stats.push_back(metric(t, p));
    }
    std::sort(stats.begin(), stats.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(stats.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, stats.size() - 1);
        return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
    };
    const double tail = (1.0 - level) / 2.0;
    return {quantile(tail), quantile(1.0 - tail)};
}

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) throw DomainError("incomplete beta: a, b must be positive");
    if (x < 0.0 || x > 1.0) throw DomainError("incomplete beta: x outside [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) throw DomainError("t distribution: df must be positive");
    if (std::isinf(t)) return 0.0;
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InputError("paired_t_test: samples have different lengths");
    if (a.size() < 2) throw InputError("paired_t_test: need at least two pairs");
    TTestResult r;
    const auto n = static_cast<double>(a.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        r.differences.push_back(a[i] - b[i]);
        m += r.differences.back();
    }
    m /= n;
    double ss = 0.0;
    for (double d : r.differences) ss += (d - m) * (d - m);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0)) throw DegenerateInputError("paired_t_test: differences have zero variance");
    r.df = static_cast<int>(a.size()) - 1;
    r.t = m / (sd / std::sqrt(n));
    r.p = student_t_two_sided_p(r.t, r.df);
    return r;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["n"] = r.n;
    j["accuracy"] = r.accuracy;
    j["mae"] = r.mae;
    j["macro"] = {{"precision", r.macro_precision},
                  {"recall", r.macro_recall},
                  {"f1", r.macro_f1},
                  {"specificity", r.macro_specificity}};
    j["weighted"] = {{"precision", r.weighted_precision},
                     {"recall", r.weighted_recall},
                     {"f1", r.weighted_f1},
                     {"specificity", r.weighted_specificity}};
    j["macro_auroc"] = r.macro_auroc ? nlohmann::json(*r.macro_auroc) : nlohmann::json(nullptr);
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& s = r.per_class[c];
        per.push_back({{"grade", c},
                       {"precision", s.precision},
                       {"recall", s.recall},
                       {"f1", s.f1},
                       {"specificity", s.specificity},
                       {"support", s.support}});
    }
    j["per_class"] = per;
    nlohmann::json cm = nlohmann::json::array();
    for (Eigen::Index i = 0; i < r.cm.counts.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < r.cm.counts.cols(); ++c) row.push_back(r.cm.counts(i, c));
        cm.push_back(row);
    }
    j["confusion_matrix"] = cm;
    if (r.accuracy_ci) j["accuracy_ci"] = {r.accuracy_ci->first, r.accuracy_ci->second};
    j["provenance"] = {{"tau", r.provenance.tau ? nlohmann::json(*r.provenance.tau) : nlohmann::json(nullptr)},
                       {"combine", r.provenance.combine},
                       {"members", r.provenance.members},
                       {"tta_views", r.provenance.tta_views}};
    return j;
}

std::string metrics_csv_header(int num_grades) {
    std::ostringstream os;
    os << "n,accuracy,mae,macro_precision,macro_recall,macro_f1,macro_specificity,weighted_precision,"
          "weighted_recall,weighted_f1,weighted_specificity,macro_auroc,accuracy_ci_lo,accuracy_ci_hi,tau";
    for (int c = 0; c < num_grades; ++c) {
        os << ",precision_" << c << ",recall_" << c << ",f1_" << c << ",specificity_" << c << ",support_" << c;
    }
    return os.str();
}

std::string metrics_csv_row(const MetricsReport& r) {
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    auto opt = [&](const std::optional<double>& v) {
        if (v) os << *v;
    };
    os << r.n << ',' << r.accuracy << ',' << r.mae << ',' << r.macro_precision << ',' << r.macro_recall << ','
       << r.macro_f1 << ',' << r.macro_specificity << ',' << r.weighted_precision << ',' << r.weighted_recall << ','
       << r.weighted_f1 << ',' << r.weighted_specificity << ',';
    opt(r.macro_auroc);
    os << ',';
    if (r.accuracy_ci) os << r.accuracy_ci->first;
    os << ',';
    if (r.accuracy_ci) os << r.accuracy_ci->second;
    os << ',';
    opt(r.provenance.tau);
    for (const auto& s : r.per_class) {
        os << ',' << s.precision << ',' << s.recall << ',' << s.f1 << ',' << s.specificity << ',' << s.support;
    }
    return os.str();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    std::ostringstream os;
    os << "true\\pred";
    for (int c = 0; c < cm.num_grades(); ++c) os << ',' << c;
    os << '\n';
    for (int i = 0; i < cm.num_grades(); ++i) {
        os << i;
        for (int c = 0; c < cm.num_grades(); ++c) os << ',' << cm.counts(i, c);
        os << '\n';
    }
    return os.str();
}

}  // namespace ordiformer
