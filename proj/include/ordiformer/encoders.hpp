#pragma once

#include "ordiformer/random.hpp"
#include "ordiformer/tensor.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ordiformer {

/// Single-channel image, H x W, values in [0, 1].
using Image = Matrix;

struct ImageSample {
    Image pixels;
    int label = 0;
    std::string id;
};

struct PatchEncoderConfig {
    int image_height = 32;
    int image_width = 32;
    int patch_size = 8;
    int embed_dim = 64;
    int num_heads = 4;
    int num_layers = 2;
    int mlp_ratio = 4;

    int grid_height() const { return image_height / patch_size; }
    int grid_width() const { return image_width / patch_size; }
    int num_patches() const { return grid_height() * grid_width(); }
    /// Throws ConfigError on inconsistent geometry.
    void validate() const;
};

struct MlpEncoderConfig {
    int image_height = 32;
    int image_width = 32;
    std::vector<int> widths{64, 64};

    void validate() const;
};

struct EncoderOutput {
    /// N x d, one row per image.
    Tensor embedding;
    /// Per image, per layer: (T+1) x (T+1) head-averaged attention. Empty for
    /// encoders without attention.
    std::vector<std::vector<Matrix>> attn_maps;
};

class Encoder {
   public:
    virtual ~Encoder() = default;
    virtual EncoderOutput encode(Tape& tape, std::span<const Image> images) = 0;
    virtual int embed_dim() const = 0;
    virtual bool has_attention() const = 0;
    virtual std::vector<Parameter*> parameters() = 0;
};

/// Splits an image into (H/P)(W/P) tokens of length P^2, raster order over
/// patches and row-major within a patch.
Matrix patchify(const Image& image, int patch_size);

class PatchEncoder final : public Encoder {
   public:
    PatchEncoder(const PatchEncoderConfig& config, Rng& rng);

    EncoderOutput encode(Tape& tape, std::span<const Image> images) override;
    int embed_dim() const override { return config_.embed_dim; }
    bool has_attention() const override { return true; }
    std::vector<Parameter*> parameters() override;

    const PatchEncoderConfig& config() const { return config_; }
    Parameter& positional() { return pos_; }

    struct Layer {
        Parameter ln1_gain, ln1_bias;
        Parameter qkv_weight, qkv_bias;
        Parameter out_weight, out_bias;
        Parameter ln2_gain, ln2_bias;
        Parameter fc1_weight, fc1_bias;
        Parameter fc2_weight, fc2_bias;
    };
    std::vector<Layer>& layers() { return layers_; }

   private:
    Tensor encode_one(Tape& tape, const Image& image, std::vector<Matrix>& maps);

    PatchEncoderConfig config_;
    Parameter patch_weight_, patch_bias_;
    Parameter cls_, pos_;
    std::vector<Layer> layers_;
    Parameter final_gain_, final_bias_;
};

/// Flatten then dense + gelu per width.
class MlpEncoder final : public Encoder {
   public:
    MlpEncoder(const MlpEncoderConfig& config, Rng& rng);

    EncoderOutput encode(Tape& tape, std::span<const Image> images) override;
    int embed_dim() const override { return config_.widths.back(); }
    bool has_attention() const override { return false; }
    std::vector<Parameter*> parameters() override;

    std::vector<Parameter>& weights() { return weights_; }
    std::vector<Parameter>& biases() { return biases_; }

   private:
    MlpEncoderConfig config_;
    std::vector<Parameter> weights_;
    std::vector<Parameter> biases_;
};

/// Attention rollout over head-averaged maps. Each layer contributes
/// rownorm(0.5 A + 0.5 I); the CLS row of the product, restricted to patch
/// columns, is returned as a grid_h x grid_w saliency map.
Matrix attention_rollout(std::span<const Matrix> attn_maps, int grid_height, int grid_width);

/// Full CLS row of the rollout product, CLS column included.
RowVector rollout_cls_row(std::span<const Matrix> attn_maps);

}  // namespace ordiformer
