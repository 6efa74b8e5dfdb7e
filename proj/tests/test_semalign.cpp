#include "ordiformer/semalign.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ordiformer;
using namespace ordiformer::testing;

namespace {

PromptSet identity_prompts(int k, int m) {
    PromptSet p;
    p.embeddings = Matrix::Zero(k, m);
    for (int i = 0; i < k; ++i) p.embeddings(i, i) = 1.0f;
    p.texts = default_prompt_texts(k);
    return p;
}

Matrix unit_row(int m, int i) {
    Matrix r = Matrix::Zero(1, m);
    r(0, i) = 1.0f;
    return r;
}

}  // namespace

TEST(Contrastive, OrthogonalPromptsClosedForm) {
    const PromptSet p = identity_prompts(5, 5);
    for (int y = 0; y < 5; ++y) {
        Tape t;
        const std::vector<int> labels{y};
        const float loss = contrastive_loss(t.constant(unit_row(5, y)), labels, p, 1.0f).value()(0, 0);
        EXPECT_NEAR(loss, -std::log(std::exp(1.0) / (std::exp(1.0) + 4.0)), 1e-6);
        // The commonly quoted 0.9050 is rounded up from 0.904832.
        EXPECT_NEAR(loss, 0.9050, 2e-4);
    }
}

TEST(Contrastive, IdenticalPromptsGiveLnK) {
    PromptSet p;
    p.embeddings = Matrix::Zero(5, 4);
    p.embeddings.col(1).setOnes();
    Rng rng = make_stream(42, 0);
    Tape t;
    Tensor f = normalize_rows(t.constant(normal_matrix(3, 4, 1.0f, rng)));
    const std::vector<int> labels{0, 2, 4};
    EXPECT_NEAR(contrastive_loss(f, labels, p, 0.1f).value()(0, 0), std::log(5.0), 1e-5);
}

TEST(Contrastive, RejectsBadInputs) {
    const PromptSet p = identity_prompts(5, 5);
    Tape t;
    const std::vector<int> bad{5};
    EXPECT_THROW(contrastive_loss(t.constant(unit_row(5, 0)), bad, p, 1.0f), InputError);
    const std::vector<int> ok{0};
    EXPECT_THROW(contrastive_loss(t.constant(unit_row(4, 0)), ok, p, 1.0f), DimensionError);
    EXPECT_THROW(contrastive_loss(t.constant(unit_row(5, 0)), ok, p, 0.0f), DomainError);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng = make_stream(42, static_cast<std::uint64_t>(seed));
        const PromptSet p = build_prompt_set(PromptSource::ordinal_synthetic, 5, 6, static_cast<std::uint64_t>(seed));
        const std::vector<int> labels{0, 3};
        const double err = gradient_check(
            [&](Tape&, const std::vector<Tensor>& v) { return contrastive_loss(normalize_rows(v[0]), labels, p, 0.5f); },
            {normal_matrix(2, 6, 1.0f, rng)}, rng);
        EXPECT_LE(err, kGradTol) << "seed " << seed;
    }
}

TEST(Teacher, OrthogonalEmbeddingGivesUniform) {
    const PromptSet p = identity_prompts(5, 6);
    const RowVector d = teacher_distribution(RowVector(unit_row(6, 5)), p, 0.1f);
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(d(c), 0.2f, 1e-7);
}

TEST(Teacher, SmallTemperatureApproachesOneHot) {
    const PromptSet p = build_prompt_set(PromptSource::ordinal_synthetic, 5, 8, 7);
    for (int y = 0; y < 5; ++y) {
        const RowVector d = teacher_distribution(RowVector(p.embeddings.row(y)), p, 1e-3f);
        for (int c = 0; c < 5; ++c) EXPECT_NEAR(d(c), c == y ? 1.0f : 0.0f, 1e-3);
    }
}

TEST(Teacher, TensorFormMatchesRowForm) {
    Rng rng = make_stream(42, 1);
    const PromptSet p = build_prompt_set(PromptSource::ordinal_synthetic, 5, 8, 3);
    Tape t;
    Tensor f = normalize_rows(t.constant(normal_matrix(4, 8, 1.0f, rng)));
    const Matrix d = teacher_distribution(f, p, 0.1f).value();
    for (Eigen::Index i = 0; i < 4; ++i) {
        EXPECT_TRUE(d.row(i).isApprox(teacher_distribution(RowVector(f.value().row(i)), p, 0.1f), 1e-6f));
        EXPECT_NEAR(d.row(i).cast<double>().sum(), 1.0, 1e-6);
    }
}

TEST(Teacher, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng = make_stream(42, static_cast<std::uint64_t>(seed));
        const PromptSet p = build_prompt_set(PromptSource::ordinal_synthetic, 5, 6, static_cast<std::uint64_t>(seed));
        const double err = gradient_check(
            [&](Tape&, const std::vector<Tensor>& v) { return teacher_distribution(normalize_rows(v[0]), p, 0.5f); },
            {normal_matrix(3, 6, 1.0f, rng)}, rng);
        EXPECT_LE(err, kGradTol) << "seed " << seed;
    }
}

TEST(KlDistill, Examples) {
    Tape t;
    Tensor d = t.constant(row({0.1f, 0.2f, 0.3f, 0.25f, 0.15f}));
    EXPECT_NEAR(kl_distill_loss(d, d).value()(0, 0), 0.0f, 1e-7);
    Tensor onehot = t.constant(row({0, 0, 1, 0, 0}));
    Tensor uni = t.constant(Matrix::Constant(1, 5, 0.2f));
    EXPECT_NEAR(kl_distill_loss(onehot, uni).value()(0, 0), std::log(5.0), 1e-6);
    EXPECT_NEAR(kl_divergence(RowVector(row({0, 0, 1, 0, 0})), RowVector::Constant(5, 0.2f)), std::log(5.0), 1e-6);
}

TEST(KlDistill, NonNegativeOnRandomPairs) {
    Rng rng = make_stream(42, 2);
    for (int i = 0; i < 100; ++i) {
        Tape t;
        Tensor a = softmax(t.constant(normal_matrix(1, 5, 2.0f, rng)));
        Tensor b = softmax(t.constant(normal_matrix(1, 5, 2.0f, rng)));
        EXPECT_GE(kl_distill_loss(a, b).value()(0, 0), 0.0f);
    }
}

TEST(KlDistill, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng = make_stream(42, static_cast<std::uint64_t>(seed));
        const double err = gradient_check(
            [](Tape&, const std::vector<Tensor>& v) { return kl_distill_loss(softmax(v[0]), softmax(v[1])); },
            {normal_matrix(1, 5, 1.5f, rng), normal_matrix(1, 5, 1.5f, rng)}, rng);
        EXPECT_LE(err, kGradTol) << "seed " << seed;
    }
}

TEST(TotalLoss, WeightsCombineTerms) {
    Tape t;
    Tensor coral = t.constant(row({0.7f}));
    Tensor align = t.constant(row({0.4f}));
    Tensor reg = t.constant(row({2.0f}));
    EXPECT_FLOAT_EQ(total_loss(coral, align, reg, 0.0f, 0.0f).value()(0, 0), 0.7f);
    EXPECT_FLOAT_EQ(total_loss(coral, Tensor(), Tensor(), 0.5f, 0.1f).value()(0, 0), 0.7f);
    EXPECT_NEAR(total_loss(coral, align, reg, 0.5f, 0.1f).value()(0, 0), 0.7 + 0.2 + 0.2, 1e-6);
    EXPECT_THROW(total_loss(coral, align, reg, -1.0f, 0.0f), DomainError);
}

TEST(TotalLoss, RegularizerOfZeroParamsIsZero) {
    Parameter w("w", Matrix::Zero(3, 3));
    Parameter b("b", Matrix::Constant(1, 3, 5.0f), false);
    std::vector<Parameter*> ps{&w, &b};
    Tape t;
    EXPECT_FLOAT_EQ(l2_regularizer(t, ps).value()(0, 0), 0.0f);
    w.value.setConstant(2.0f);
    Tape t2;
    EXPECT_FLOAT_EQ(l2_regularizer(t2, ps).value()(0, 0), 36.0f);
}

TEST(Prompts, SyntheticSetIsUnitNormDeterministicAndOrdinal) {
    const PromptSet a = build_prompt_set(PromptSource::ordinal_synthetic, 5, 32, 7);
    const PromptSet b = build_prompt_set(PromptSource::ordinal_synthetic, 5, 32, 7);
    const PromptSet c = build_prompt_set(PromptSource::ordinal_synthetic, 5, 32, 8);
    EXPECT_EQ(a.embeddings, b.embeddings);
    EXPECT_NE(a.embeddings, c.embeddings);
    EXPECT_EQ(a.texts.size(), 5u);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(a.embeddings.row(i).norm(), 1.0f, 1e-6);
    // Cosine similarity falls with grade distance.
    const Matrix g = a.embeddings * a.embeddings.transpose();
    for (int i = 0; i < 5; ++i)
        for (int j = i + 1; j + 1 < 5; ++j) EXPECT_GT(g(i, j), g(i, j + 1));
    EXPECT_NEAR(g(0, 4), 0.0f, 1e-6);
}

TEST(Prompts, FileRoundTripAndErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "ordiformer_prompts";
    std::filesystem::create_directories(dir);
    const PromptSet a = build_prompt_set(PromptSource::ordinal_synthetic, 5, 6, 11);
    save_prompt_file(a, dir / "p.txt");
    const PromptSet b = build_prompt_set(PromptSource::file, 5, 6, 0, dir / "p.txt");
    EXPECT_TRUE(b.embeddings.isApprox(a.embeddings, 1e-6f));
    EXPECT_THROW(build_prompt_set(PromptSource::file, 4, 6, 0, dir / "p.txt"), InputError);
    {
        std::ofstream out(dir / "short.txt");
        out << "5 6\n1 2 3\n";
    }
    EXPECT_THROW(load_prompt_file(dir / "short.txt"), InputError);
    std::filesystem::remove_all(dir);
}

TEST(ProjectionHead, OutputsUnitRows) {
    Rng rng = make_stream(42, 3);
    ProjectionHead head(8, 4, rng);
    Tape t;
    const Matrix f = head.forward(t, t.constant(normal_matrix(5, 8, 1.0f, rng))).value();
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(f.row(i).norm(), 1.0f, 1e-6);
}

TEST(AlignmentConfig, Validation) {
    AlignmentConfig c;
    EXPECT_EQ(c.mode, AlignMode::kl_distill);
    EXPECT_FLOAT_EQ(c.temperature, 0.1f);
    EXPECT_FLOAT_EQ(c.lambda, 0.5f);
    c.temperature = 0.0f;
    EXPECT_THROW(c.validate(), ConfigError);
    for (AlignMode m : {AlignMode::off, AlignMode::contrastive, AlignMode::kl_distill})
        EXPECT_EQ(parse_align_mode(to_string(m)), m);
    EXPECT_THROW(parse_align_mode("clip"), ConfigError);
}
