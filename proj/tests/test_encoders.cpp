#include "ordiformer/encoders.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace ordiformer;
using namespace ordiformer::testing;

namespace {

PatchEncoderConfig tiny_patch() {
    PatchEncoderConfig c;
    c.image_height = 8;
    c.image_width = 8;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.mlp_ratio = 2;
    return c;
}

void scramble(const std::vector<Parameter*>& params, Rng& rng, float sd) {
    for (Parameter* p : params) p->value += normal_matrix(p->value.rows(), p->value.cols(), sd, rng);
}

Image random_image(int h, int w, Rng& rng) { return uniform_matrix(h, w, 0.0f, 1.0f, rng); }

/// Swaps whole patch columns left-right while keeping each patch's pixels.
Image mirror_patch_positions(const Image& img, int p) {
    Image out(img.rows(), img.cols());
    const int gw = static_cast<int>(img.cols()) / p;
    for (int j = 0; j < gw; ++j) out.middleCols((gw - 1 - j) * p, p) = img.middleCols(j * p, p);
    return out;
}

}  // namespace

TEST(Patchify, TokenCounts) {
    EXPECT_EQ(patchify(Image::Zero(224, 224), 16).rows(), 196);
    EXPECT_EQ(patchify(Image::Zero(224, 224), 16).cols(), 256);
    EXPECT_EQ(patchify(Image::Zero(32, 32), 8).rows(), 16);
}

TEST(Patchify, ConstantImageGivesIdenticalTokens) {
    const Matrix t = patchify(Image::Constant(32, 32, 0.3f), 8);
    for (Eigen::Index i = 1; i < t.rows(); ++i) EXPECT_EQ(t.row(i), t.row(0));
}

TEST(Patchify, RasterOrder) {
    Image img(4, 4);
    for (int i = 0; i < 16; ++i) img.data()[i] = static_cast<float>(i);
    const Matrix t = patchify(img, 2);
    EXPECT_EQ(t.row(0), row({0, 1, 4, 5}));
    EXPECT_EQ(t.row(1), row({2, 3, 6, 7}));
    EXPECT_EQ(t.row(2), row({8, 9, 12, 13}));
}

TEST(Patchify, IndivisibleThrows) { EXPECT_THROW(patchify(Image::Zero(30, 32), 8), ConfigError); }

TEST(PatchEncoderConfig, RejectsBadGeometry) {
    PatchEncoderConfig c;
    c.num_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = PatchEncoderConfig{};
    c.num_layers = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = PatchEncoderConfig{};
    c.image_width = 36;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PatchEncoder, ZeroAttentionProjectionsGiveUniformRows) {
    Rng rng = make_stream(42, 0);
    PatchEncoder enc(tiny_patch(), rng);
    for (auto& L : enc.layers()) {
        L.qkv_weight.value.setZero();
        L.qkv_bias.value.setZero();
    }
    Tape t;
    const std::vector<Image> imgs{random_image(8, 8, rng)};
    auto out = enc.encode(t, imgs);
    const float n = static_cast<float>(tiny_patch().num_patches() + 1);
    for (const Matrix& a : out.attn_maps[0]) EXPECT_TRUE(a.isApprox(Matrix::Constant(a.rows(), a.cols(), 1.0f / n)));
}

TEST(PatchEncoder, AttentionRowsAreStochastic) {
    Rng rng = make_stream(42, 1);
    PatchEncoder enc(tiny_patch(), rng);
    scramble(enc.parameters(), rng, 0.5f);
    Tape t;
    const std::vector<Image> imgs{random_image(8, 8, rng), random_image(8, 8, rng)};
    auto out = enc.encode(t, imgs);
    ASSERT_EQ(out.attn_maps.size(), 2u);
    for (const auto& per_image : out.attn_maps) {
        ASSERT_EQ(per_image.size(), 2u);
        for (const Matrix& a : per_image) {
            EXPECT_EQ(a.rows(), 5);
            for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).cast<double>().sum(), 1.0, 1e-5);
        }
    }
}

TEST(PatchEncoder, DeterministicAndIdenticalImagesMatch) {
    Rng rng = make_stream(42, 2);
    PatchEncoder enc(tiny_patch(), rng);
    const Image img = random_image(8, 8, rng);
    const std::vector<Image> imgs{img, img};
    Tape t1, t2;
    const Matrix a = enc.encode(t1, imgs).embedding.value();
    const Matrix b = enc.encode(t2, imgs).embedding.value();
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.row(0), a.row(1));
}

TEST(PatchEncoder, PixelShuffleChangesEmbedding) {
    Rng rng = make_stream(42, 3);
    PatchEncoder enc(tiny_patch(), rng);
    scramble(enc.parameters(), rng, 0.3f);
    Image img = random_image(8, 8, rng);
    Image shuffled = img;
    std::shuffle(shuffled.data(), shuffled.data() + shuffled.size(), rng);
    Tape t;
    const std::vector<Image> imgs{img, shuffled};
    const Matrix e = enc.encode(t, imgs).embedding.value();
    EXPECT_GT((e.row(0) - e.row(1)).norm(), 1e-4f);
}

TEST(PatchEncoder, WrongImageSizeThrows) {
    Rng rng = make_stream(42, 4);
    PatchEncoder enc(tiny_patch(), rng);
    Tape t;
    const std::vector<Image> imgs{Image::Zero(16, 16)};
    EXPECT_THROW(enc.encode(t, imgs), ConfigError);
}

TEST(PatchEncoder, MirroredPatchesGiveMirroredSaliency) {
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng = make_stream(43, static_cast<std::uint64_t>(seed));
        PatchEncoderConfig c = tiny_patch();
        c.image_width = 16;
        PatchEncoder enc(c, rng);
        scramble(enc.parameters(), rng, 0.5f);
        enc.positional().value.setZero();
        const Image img = random_image(8, 16, rng);
        Tape t;
        const std::vector<Image> imgs{img, mirror_patch_positions(img, c.patch_size)};
        auto out = enc.encode(t, imgs);
        const Matrix s = attention_rollout(out.attn_maps[0], c.grid_height(), c.grid_width());
        const Matrix m = attention_rollout(out.attn_maps[1], c.grid_height(), c.grid_width());
        EXPECT_TRUE(m.isApprox(s.rowwise().reverse(), 1e-5f)) << "seed " << seed;
    }
}

TEST(PatchEncoder, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng = make_stream(42, static_cast<std::uint64_t>(seed));
        PatchEncoder enc(tiny_patch(), rng);
        scramble(enc.parameters(), rng, 0.3f);
        const std::vector<Image> imgs{random_image(8, 8, rng), random_image(8, 8, rng)};
        const double err = gradient_check_params([&](Tape& t) { return enc.encode(t, imgs).embedding; },
                                                 enc.parameters(), rng);
        EXPECT_LE(err, kGradTol) << "seed " << seed;
    }
}

TEST(MlpEncoder, ZeroWeightsGiveZeroEmbedding) {
    Rng rng = make_stream(42, 5);
    MlpEncoderConfig c;
    c.image_height = 4;
    c.image_width = 4;
    c.widths = {6};
    MlpEncoder enc(c, rng);
    for (Parameter* p : enc.parameters()) p->value.setZero();
    Tape t;
    const std::vector<Image> imgs{random_image(4, 4, rng)};
    EXPECT_TRUE(enc.encode(t, imgs).embedding.value().isZero(0.0f));
    EXPECT_FALSE(enc.has_attention());
}

TEST(MlpEncoder, RejectsBadWidths) {
    MlpEncoderConfig c;
    c.widths = {};
    EXPECT_THROW(c.validate(), ConfigError);
    c.widths = {8, 0};
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MlpEncoder, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng = make_stream(42, static_cast<std::uint64_t>(seed));
        MlpEncoderConfig c;
        c.image_height = 4;
        c.image_width = 4;
        c.widths = {6, 5};
        MlpEncoder enc(c, rng);
        scramble(enc.parameters(), rng, 0.2f);
        const std::vector<Image> imgs{random_image(4, 4, rng), random_image(4, 4, rng), random_image(4, 4, rng)};
        const double err = gradient_check_params([&](Tape& t) { return enc.encode(t, imgs).embedding; },
                                                 enc.parameters(), rng);
        EXPECT_LE(err, kGradTol) << "seed " << seed;
    }
}

// ------------------------------------------------------------------ rollout

TEST(Rollout, UniformAttentionGivesUniformSaliency) {
    const std::vector<Matrix> maps(3, Matrix::Constant(5, 5, 0.2f));
    const Matrix s = attention_rollout(maps, 2, 2);
    for (Eigen::Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s.data()[i], s.data()[0], 1e-7);
    EXPECT_GT(s(0, 0), 0.0f);
}

TEST(Rollout, IdentityAttentionGivesZeroSaliency) {
    const std::vector<Matrix> maps(2, Matrix::Identity(5, 5));
    EXPECT_TRUE(attention_rollout(maps, 2, 2).isZero(0.0f));
}

TEST(Rollout, OneHotClsRowThreeTokens) {
    // CLS attends only to patch 0. Mixed row: [0.5, 0.5, 0], already stochastic.
    Matrix a(3, 3);
    a << 0, 1, 0,
         0.3f, 0.3f, 0.4f,
         0.5f, 0.25f, 0.25f;
    const std::vector<Matrix> maps{a};
    const Matrix s = attention_rollout(maps, 1, 2);
    EXPECT_FLOAT_EQ(s(0, 0), 0.5f);
    EXPECT_FLOAT_EQ(s(0, 1), 0.0f);
    const RowVector cls = rollout_cls_row(maps);
    EXPECT_FLOAT_EQ(cls(0), 0.5f);
}

TEST(Rollout, ClsRowIsDistribution) {
    Rng rng = make_stream(42, 6);
    std::vector<Matrix> maps;
    for (int l = 0; l < 3; ++l) {
        Matrix a = uniform_matrix(5, 5, 0.0f, 1.0f, rng);
        for (Eigen::Index i = 0; i < 5; ++i) a.row(i) /= a.row(i).sum();
        maps.push_back(a);
    }
    const RowVector cls = rollout_cls_row(maps);
    EXPECT_NEAR(cls.cast<double>().sum(), 1.0, 1e-5);
    EXPECT_TRUE((cls.array() >= 0.0f).all());
    const Matrix s = attention_rollout(maps, 2, 2);
    EXPECT_LE(s.cast<double>().sum(), 1.0 + 1e-6);
}

TEST(Rollout, RejectsNonStochasticRows) {
    const std::vector<Matrix> maps{Matrix::Constant(5, 5, 0.3f)};
    EXPECT_THROW(attention_rollout(maps, 2, 2), InputError);
    const std::vector<Matrix> wrong{Matrix::Constant(5, 5, 0.2f)};
    EXPECT_THROW(attention_rollout(wrong, 3, 3), InputError);
}
