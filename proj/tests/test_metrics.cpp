#include "ordiformer/metrics.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <gtest/gtest.h>

using namespace ordiformer;
using namespace ordiformer::testing;

namespace {

const std::vector<int> kTruth{0, 0, 1, 1, 2};
const std::vector<int> kPred{0, 1, 1, 1, 2};

std::vector<int> random_grades(std::size_t n, int k, Rng& rng) {
    std::vector<int> v(n);
    for (auto& x : v) x = std::uniform_int_distribution<int>(0, k - 1)(rng);
    return v;
}

double boost_two_sided(double t, double df) {
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace

TEST(Confusion, WorkedExample) {
    const ConfusionMatrix cm = confusion(kTruth, kPred, 5);
    EXPECT_EQ(cm.counts(0, 0), 1);
    EXPECT_EQ(cm.counts(0, 1), 1);
    EXPECT_EQ(cm.counts(1, 1), 2);
    EXPECT_EQ(cm.counts(2, 2), 1);
    EXPECT_EQ(cm.total(), 5);
    EXPECT_EQ(cm.counts.row(0).sum(), 2);
    EXPECT_EQ(cm.counts.row(1).sum(), 2);
}

TEST(Confusion, PerfectIsDiagonalAndRangeChecked) {
    const std::vector<int> y{0, 1, 2, 3, 4, 4};
    const ConfusionMatrix cm = confusion(y, y, 5);
    EXPECT_EQ(cm.counts.trace(), 6);
    EXPECT_TRUE(cm.counts.isDiagonal());
    const std::vector<int> bad{5};
    const std::vector<int> ok{0};
    EXPECT_THROW(confusion(bad, ok, 5), InputError);
    EXPECT_THROW(confusion(ok, bad, 5), InputError);
}

TEST(ClassificationMetrics, WorkedExample) {
    const MetricsReport r = classification_metrics(confusion(kTruth, kPred, 5));
    EXPECT_DOUBLE_EQ(r.accuracy, 0.8);
    EXPECT_NEAR(r.per_class[0].f1, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.per_class[1].f1, 0.8, 1e-12);
    EXPECT_NEAR(r.per_class[2].f1, 1.0, 1e-12);
    EXPECT_NEAR(r.macro_f1, 0.8222, 1e-4);
    EXPECT_NEAR(r.macro_f1, (2.0 / 3.0 + 0.8 + 1.0) / 3.0, 1e-12);
    EXPECT_NEAR(r.macro_specificity, (1.0 + 2.0 / 3.0 + 1.0) / 3.0, 1e-12);
    EXPECT_NEAR(r.macro_specificity, 0.8889, 1e-4);
    EXPECT_DOUBLE_EQ(r.mae, 0.2);
}

TEST(ClassificationMetrics, PerfectScoresOne) {
    const std::vector<int> y{0, 1, 1, 3};
    const MetricsReport r = classification_metrics(confusion(y, y, 5));
    for (double v : {r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, r.macro_specificity,
                     r.weighted_precision, r.weighted_recall, r.weighted_f1, r.weighted_specificity})
        EXPECT_DOUBLE_EQ(v, 1.0);
    EXPECT_DOUBLE_EQ(r.mae, 0.0);
}

TEST(ClassificationMetrics, MatchesScalarOracleExactly) {
    Rng rng = make_stream(42, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(trial) * 3;
        const std::vector<int> y = random_grades(n, 5, rng);
        const std::vector<int> p = random_grades(n, 5, rng);
        const MetricsReport r = classification_metrics(confusion(y, p, 5));
        const oracle::Scalars o = oracle::scalar_metrics(y, p, 5);
        EXPECT_EQ(r.accuracy, o.accuracy);
        EXPECT_EQ(r.mae, o.mae);
        EXPECT_EQ(r.macro_precision, o.macro_precision);
        EXPECT_EQ(r.macro_recall, o.macro_recall);
        EXPECT_EQ(r.macro_f1, o.macro_f1);
        EXPECT_EQ(r.macro_specificity, o.macro_specificity);
        EXPECT_EQ(r.weighted_precision, o.weighted_precision);
        EXPECT_EQ(r.weighted_recall, o.weighted_recall);
        EXPECT_EQ(r.weighted_f1, o.weighted_f1);
        EXPECT_EQ(r.weighted_specificity, o.weighted_specificity);
        for (int c = 0; c < 5; ++c) EXPECT_EQ(r.per_class[static_cast<std::size_t>(c)].f1, o.f1[static_cast<std::size_t>(c)]);
        EXPECT_EQ(r.accuracy, static_cast<double>(r.cm.counts.trace()) / static_cast<double>(r.n));
        for (double v : {r.accuracy, r.macro_f1, r.weighted_f1, r.macro_specificity}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(ClassificationMetrics, UniformSupportWeightedEqualsMacro) {
    Rng rng = make_stream(42, 1);
    std::vector<int> y;
    for (int c = 0; c < 5; ++c)
        for (int i = 0; i < 13; ++i) y.push_back(c);
    const std::vector<int> p = random_grades(y.size(), 5, rng);
    const MetricsReport r = classification_metrics(confusion(y, p, 5));
    EXPECT_NEAR(r.weighted_f1, r.macro_f1, 1e-9);
}

TEST(ClassificationMetrics, AbsentClassesSkippedInMacro) {
    const std::vector<int> y{0, 0, 2};
    const std::vector<int> p{0, 0, 2};
    EXPECT_DOUBLE_EQ(classification_metrics(confusion(y, p, 5)).macro_f1, 1.0);
}

TEST(Auroc, Examples) {
    Matrix s(4, 2);
    s << 0.9f, 0.1f,
         0.8f, 0.2f,
         0.1f, 0.9f,
         0.2f, 0.8f;
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(auroc_ovr_macro(s, y), 1.0);
    EXPECT_DOUBLE_EQ(auroc_ovr_macro(Matrix::Constant(6, 3, 0.3f), std::vector<int>{0, 1, 2, 0, 1, 2}), 0.5);
    EXPECT_THROW(auroc_ovr_macro(Matrix::Constant(3, 3, 0.3f), std::vector<int>{1, 1, 1}), UndefinedMetricError);
}

TEST(Auroc, MatchesPairCountOracleExactly) {
    Rng rng = make_stream(42, 2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = trial == 0 ? 200 : 2 + static_cast<std::size_t>(trial);
        const std::vector<int> y = random_grades(n, 5, rng);
        Matrix s = uniform_matrix(static_cast<Eigen::Index>(n), 5, 0.0f, 1.0f, rng);
        // Coarse values force ties.
        if (trial % 2) s = (s * 4.0f).array().round() / 4.0f;
        std::vector<std::vector<double>> rows(n);
        for (std::size_t i = 0; i < n; ++i)
            for (int c = 0; c < 5; ++c) rows[i].push_back(s(static_cast<Eigen::Index>(i), c));
        bool defined = false;
        const double want = oracle::auroc_pairs(rows, y, 5, &defined);
        if (!defined) {
            EXPECT_THROW(auroc_ovr_macro(s, y), UndefinedMetricError);
            continue;
        }
        EXPECT_EQ(auroc_ovr_macro(s, y), want) << "trial " << trial;
    }
}

TEST(Auroc, InvariantUnderIncreasingTransform) {
    Rng rng = make_stream(42, 3);
    const std::vector<int> y = random_grades(80, 5, rng);
    const Matrix s = uniform_matrix(80, 5, 0.05f, 1.0f, rng);
    const Matrix t = s.array().cube() * 3.0f + 1.0f;
    EXPECT_EQ(auroc_ovr_macro(s, y), auroc_ovr_macro(t, y));
}

TEST(Mae, Examples) {
    EXPECT_DOUBLE_EQ(mae(std::vector<int>{1, 2}, std::vector<int>{1, 2}), 0.0);
    EXPECT_DOUBLE_EQ(mae(std::vector<int>{0, 4}, std::vector<int>{4, 0}), 4.0);
    EXPECT_DOUBLE_EQ(mae(std::vector<int>{0, 1, 2, 3}, std::vector<int>{1, 2, 3, 2}), 1.0);
}

TEST(Bootstrap, AllCorrectGivesUnitInterval) {
    const std::vector<int> y{0, 1, 2, 3, 4, 1, 2};
    const auto ci = bootstrap_ci(accuracy, y, y);
    EXPECT_DOUBLE_EQ(ci.first, 1.0);
    EXPECT_DOUBLE_EQ(ci.second, 1.0);
}

TEST(Bootstrap, OrderedNestedAndDeterministic) {
    Rng rng = make_stream(42, 4);
    const std::vector<int> y = random_grades(60, 5, rng);
    std::vector<int> p = y;
    for (std::size_t i = 0; i < p.size(); i += 3) p[i] = (p[i] + 1) % 5;
    const auto wide = bootstrap_ci(accuracy, y, p, 1000, 0.95, 7);
    const auto narrow = bootstrap_ci(accuracy, y, p, 1000, 0.5, 7);
    const auto tiny = bootstrap_ci(accuracy, y, p, 1000, 1e-6, 7);
    EXPECT_LE(wide.first, wide.second);
    EXPECT_LE(wide.first, narrow.first);
    EXPECT_GE(wide.second, narrow.second);
    // A vanishing level collapses to the resampling median, which every wider interval contains.
    EXPECT_NEAR(tiny.first, tiny.second, 1e-6);
    EXPECT_LE(narrow.first, tiny.first);
    EXPECT_GE(narrow.second, tiny.second);
    EXPECT_EQ(bootstrap_ci(accuracy, y, p, 1000, 0.95, 7), wide);
    EXPECT_NE(bootstrap_ci(accuracy, y, p, 1000, 0.95, 8), wide);
}

TEST(TTest, TablePointAtDf4) {
    EXPECT_NEAR(student_t_two_sided_p(4.604, 4), 0.01, 1e-4);
    EXPECT_NEAR(student_t_two_sided_p(4.604, 4), boost_two_sided(4.604, 4), 1e-10);
}

TEST(TTest, PValuesMatchBoost) {
    Rng rng = make_stream(42, 5);
    for (int i = 0; i < 200; ++i) {
        const double t = uniform(rng, -8.0f, 8.0f);
        const double df = 1 + std::uniform_int_distribution<int>(0, 40)(rng);
        EXPECT_NEAR(student_t_two_sided_p(t, df), boost_two_sided(t, df), 1e-10) << t << " " << df;
    }
}

TEST(TTest, IncompleteBetaMatchesBoost) {
    Rng rng = make_stream(42, 6);
    for (int i = 0; i < 200; ++i) {
        const double a = uniform(rng, 0.2f, 30.0f);
        const double b = uniform(rng, 0.2f, 30.0f);
        const double x = uniform(rng, 0.0f, 1.0f);
        EXPECT_NEAR(regularized_incomplete_beta(a, b, x), boost::math::ibeta(a, b, x), 1e-10);
    }
    EXPECT_DOUBLE_EQ(regularized_incomplete_beta(2, 3, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(regularized_incomplete_beta(2, 3, 1.0), 1.0);
}

TEST(TTest, PairedStatistic) {
    const std::vector<double> a{0.80, 0.82, 0.79, 0.85, 0.81};
    const std::vector<double> b{0.75, 0.78, 0.77, 0.80, 0.74};
    const TTestResult r = paired_t_test(a, b);
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= 5.0;
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double t = mean / std::sqrt(ss / 4.0 / 5.0);
    EXPECT_NEAR(r.t, t, 1e-12);
    EXPECT_EQ(r.df, 4);
    EXPECT_NEAR(r.p, boost_two_sided(t, 4), 1e-10);
    EXPECT_EQ(r.differences.size(), 5u);
    const TTestResult s = paired_t_test(b, a);
    EXPECT_DOUBLE_EQ(s.t, -r.t);
    EXPECT_DOUBLE_EQ(s.p, r.p);
}

TEST(TTest, NullAndDegenerateCases) {
    const std::vector<double> a{0.5, 0.6, 0.7, 0.8};
    const std::vector<double> b{0.5 + 1e-3, 0.6 - 1e-3, 0.7 + 1e-3, 0.8 - 1e-3};
    EXPECT_GT(paired_t_test(a, b).p, 0.99);
    const std::vector<double> ints{1, 2, 3, 4};
    const std::vector<double> shifted{2, 3, 4, 5};
    EXPECT_THROW(paired_t_test(shifted, ints), DegenerateInputError);
    EXPECT_THROW(paired_t_test(a, a), DegenerateInputError);
    EXPECT_THROW(paired_t_test(std::vector<double>{1.0}, std::vector<double>{2.0}), InputError);
    EXPECT_THROW(paired_t_test(a, std::span<const double>(shifted).first(3)), InputError);
}

TEST(Serialization, JsonAndCsvShapes) {
    MetricsReport r = classification_metrics(confusion(kTruth, kPred, 5));
    r.macro_auroc = 0.75;
    r.provenance.tau = 0.45;
    r.provenance.combine = "logit_mean";
    const auto j = to_json(r);
    EXPECT_DOUBLE_EQ(j["accuracy"].get<double>(), 0.8);
    EXPECT_EQ(j["per_class"].size(), 5u);
    const auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
    EXPECT_EQ(count(metrics_csv_header(5)), count(metrics_csv_row(r)));
    EXPECT_EQ(confusion_csv(r.cm).substr(0, 4), "true");
}
