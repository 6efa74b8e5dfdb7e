#include "ordiformer/model.hpp"

namespace ordiformer {

EncoderKind parse_encoder_kind(const std::string& s) {
    if (s == "mlp") return EncoderKind::mlp;
    if (s == "patch") return EncoderKind::patch;
    throw ConfigError("unknown encoder '" + s + "' (expected mlp|patch)");
}

std::string to_string(EncoderKind k) { return k == EncoderKind::mlp ? "mlp" : "patch"; }

void ModelConfig::validate() const {
    if (num_grades < 2) throw ConfigError("model: need at least 2 grades");
    if (projection_dim < 0) throw ConfigError("model: projection_dim must be >= 0");
    if (encoder == EncoderKind::mlp) {
        mlp.validate();
    } else {
        patch.validate();
    }
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng = make_stream(seed, 0x6d6f64656cULL);
    if (config_.encoder == EncoderKind::mlp) {
        encoder_ = std::make_unique<MlpEncoder>(config_.mlp, rng);
    } else {
        encoder_ = std::make_unique<PatchEncoder>(config_.patch, rng);
    }
    head_ = std::make_unique<OrdinalHead>(config_.head, encoder_->embed_dim(), config_.num_grades, rng, config_.bias_spacing);
    if (config_.projection_dim > 0) {
        projection_ = std::make_unique<ProjectionHead>(encoder_->embed_dim(), config_.projection_dim, rng);
    }
}

Model::Forward Model::forward(Tape& tape, std::span<const Image> images) {
    EncoderOutput enc = encoder_->encode(tape, images);
    Tensor logits = head_->forward(tape, enc.embedding);
    return Forward{enc.embedding, logits, std::move(enc.attn_maps)};
}

Tensor Model::project(Tape& tape, const Tensor& embedding) {
    if (!projection_) throw UsageError("model has no projection head");
    return projection_->forward(tape, embedding);
}

Matrix Model::predict_logits(std::span<const Image> images) {
    Tape tape;
    return forward(tape, images).logits.value();
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out = encoder_->parameters();
    for (Parameter* p : head_->parameters()) out.push_back(p);
    if (projection_) {
        for (Parameter* p : projection_->parameters()) out.push_back(p);
    }
    return out;
}

Parameter* Model::find(const std::string& name) {
    for (Parameter* p : parameters()) {
        if (p->name == name) return p;
    }
    return nullptr;
}

std::vector<Matrix> Model::state() {
    std::vector<Matrix> out;
    for (Parameter* p : parameters()) out.push_back(p->value);
    return out;
}

void Model::load_state(const std::vector<Matrix>& values) {
    auto params = parameters();
    if (values.size() != params.size()) throw ConfigError("load_state: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (values[i].rows() != params[i]->value.rows() || values[i].cols() != params[i]->value.cols()) {
            throw ConfigError("load_state: shape mismatch for " + params[i]->name);
        }
        params[i]->value = values[i];
    }
}

}  // namespace ordiformer
