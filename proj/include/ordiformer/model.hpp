#pragma once

#include "ordiformer/encoders.hpp"
#include "ordiformer/ordinal.hpp"
#include "ordiformer/semalign.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ordiformer {

enum class EncoderKind { mlp, patch };

EncoderKind parse_encoder_kind(const std::string& s);
std::string to_string(EncoderKind k);

struct ModelConfig {
    EncoderKind encoder = EncoderKind::mlp;
    MlpEncoderConfig mlp;
    PatchEncoderConfig patch;
    HeadMode head = HeadMode::shared;
    int num_grades = 5;
    /// Gap between initial shared-mode threshold biases, in logits.
    float bias_spacing = 4.0f;
    /// Width of the alignment projection; 0 builds no projection head.
    int projection_dim = 32;

    int image_height() const { return encoder == EncoderKind::mlp ? mlp.image_height : patch.image_height; }
    int image_width() const { return encoder == EncoderKind::mlp ? mlp.image_width : patch.image_width; }
    void validate() const;
};

/// Encoder, ordinal (or ce) head and optional projection, with parameters
/// initialised from `seed` in that order.
class Model {
   public:
    Model(const ModelConfig& config, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    struct Forward {
        Tensor embedding;
        Tensor logits;
        std::vector<std::vector<Matrix>> attn_maps;
    };

    Forward forward(Tape& tape, std::span<const Image> images);
    /// Unit-norm alignment features; throws UsageError without a projection.
    Tensor project(Tape& tape, const Tensor& embedding);

    /// Logits without gradient bookkeeping leaking out; N x outputs.
    Matrix predict_logits(std::span<const Image> images);

    const ModelConfig& config() const { return config_; }
    int num_outputs() const { return head_->num_outputs(); }
    bool has_projection() const { return projection_ != nullptr; }
    Encoder& encoder() { return *encoder_; }
    OrdinalHead& head() { return *head_; }

    std::vector<Parameter*> parameters();
    Parameter* find(const std::string& name);

    /// Copies of every parameter value, in parameters() order.
    std::vector<Matrix> state();
    void load_state(const std::vector<Matrix>& values);

   private:
    ModelConfig config_;
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<OrdinalHead> head_;
    std::unique_ptr<ProjectionHead> projection_;
};

}  // namespace ordiformer
