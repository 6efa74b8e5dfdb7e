#include "ordiformer/encoders.hpp"

#include <cmath>

namespace ordiformer {

namespace {

Matrix dense_init(int fan_in, int fan_out, Rng& rng) {
    return normal_matrix(fan_in, fan_out, std::sqrt(1.0f / static_cast<float>(fan_in)), rng);
}

Matrix zeros(int r, int c) { return Matrix::Zero(r, c); }
Matrix ones(int r, int c) { return Matrix::Ones(r, c); }

Tensor dense(Tape& tape, const Tensor& x, Parameter& w, Parameter& b) {
    return add_row(matmul(x, tape.param(w)), tape.param(b));
}

}  // namespace

void PatchEncoderConfig::validate() const {
    if (patch_size <= 0 || image_height <= 0 || image_width <= 0) {
        throw ConfigError("patch encoder: sizes must be positive");
    }
    if (image_height % patch_size != 0 || image_width % patch_size != 0) {
        throw ConfigError("patch encoder: image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                          " not divisible by patch size " + std::to_string(patch_size));
    }
    if (num_heads <= 0 || embed_dim <= 0 || embed_dim % num_heads != 0) {
        throw ConfigError("patch encoder: embed_dim must be divisible by num_heads");
    }
    if (num_layers < 1) throw ConfigError("patch encoder: num_layers must be >= 1");
    if (mlp_ratio < 1) throw ConfigError("patch encoder: mlp_ratio must be >= 1");
}

void MlpEncoderConfig::validate() const {
    if (image_height <= 0 || image_width <= 0) throw ConfigError("mlp encoder: image size must be positive");
    if (widths.empty()) throw ConfigError("mlp encoder: at least one width required");
    for (int w : widths) {
        if (w <= 0) throw ConfigError("mlp encoder: widths must be positive");
    }
}

Matrix patchify(const Image& image, int patch_size) {
    const auto h = image.rows();
    const auto w = image.cols();
    if (patch_size <= 0 || h % patch_size != 0 || w % patch_size != 0) {
        throw ConfigError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by patch size " + std::to_string(patch_size));
    }
    const auto gh = h / patch_size;
    const auto gw = w / patch_size;
    Matrix tokens(gh * gw, patch_size * patch_size);
    for (Eigen::Index py = 0; py < gh; ++py) {
        for (Eigen::Index px = 0; px < gw; ++px) {
            auto row = tokens.row(py * gw + px);
            for (int y = 0; y < patch_size; ++y) {
                for (int x = 0; x < patch_size; ++x) {
                    row(y * patch_size + x) = image(py * patch_size + y, px * patch_size + x);
                }
            }
        }
    }
    return tokens;
}

PatchEncoder::PatchEncoder(const PatchEncoderConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const int d = config_.embed_dim;
    const int p2 = config_.patch_size * config_.patch_size;
    const int hidden = d * config_.mlp_ratio;
    patch_weight_ = Parameter("encoder.patch_embed.weight", dense_init(p2, d, rng));
    patch_bias_ = Parameter("encoder.patch_embed.bias", zeros(1, d), false);
    cls_ = Parameter("encoder.cls_token", normal_matrix(1, d, 0.02f, rng), false);
    pos_ = Parameter("encoder.pos_embed", normal_matrix(config_.num_patches() + 1, d, 0.02f, rng), false);
    layers_.resize(static_cast<std::size_t>(config_.num_layers));
    for (int l = 0; l < config_.num_layers; ++l) {
        const std::string pre = "encoder.layer" + std::to_string(l) + ".";
        auto& L = layers_[static_cast<std::size_t>(l)];
        L.ln1_gain = Parameter(pre + "ln1.gain", ones(1, d), false);
        L.ln1_bias = Parameter(pre + "ln1.bias", zeros(1, d), false);
        L.qkv_weight = Parameter(pre + "attn.qkv.weight", dense_init(d, 3 * d, rng));
        L.qkv_bias = Parameter(pre + "attn.qkv.bias", zeros(1, 3 * d), false);
        L.out_weight = Parameter(pre + "attn.out.weight", dense_init(d, d, rng));
        L.out_bias = Parameter(pre + "attn.out.bias", zeros(1, d), false);
        L.ln2_gain = Parameter(pre + "ln2.gain", ones(1, d), false);
        L.ln2_bias = Parameter(pre + "ln2.bias", zeros(1, d), false);
        L.fc1_weight = Parameter(pre + "mlp.fc1.weight", dense_init(d, hidden, rng));
        L.fc1_bias = Parameter(pre + "mlp.fc1.bias", zeros(1, hidden), false);
        L.fc2_weight = Parameter(pre + "mlp.fc2.weight", dense_init(hidden, d, rng));
        L.fc2_bias = Parameter(pre + "mlp.fc2.bias", zeros(1, d), false);
    }
    final_gain_ = Parameter("encoder.final_ln.gain", ones(1, d), false);
    final_bias_ = Parameter("encoder.final_ln.bias", zeros(1, d), false);
}

std::vector<Parameter*> PatchEncoder::parameters() {
    std::vector<Parameter*> out{&patch_weight_, &patch_bias_, &cls_, &pos_};
    for (auto& L : layers_) {
        for (Parameter* p : {&L.ln1_gain, &L.ln1_bias, &L.qkv_weight, &L.qkv_bias, &L.out_weight, &L.out_bias,
                             &L.ln2_gain, &L.ln2_bias, &L.fc1_weight, &L.fc1_bias, &L.fc2_weight, &L.fc2_bias}) {
            out.push_back(p);
        }
    }
    out.push_back(&final_gain_);
    out.push_back(&final_bias_);
    return out;
}

Tensor PatchEncoder::encode_one(Tape& tape, const Image& image, std::vector<Matrix>& maps) {
    if (image.rows() != config_.image_height || image.cols() != config_.image_width) {
        throw ConfigError("patch encoder: expected " + std::to_string(config_.image_height) + "x" +
                          std::to_string(config_.image_width) + " image, got " + std::to_string(image.rows()) + "x" +
                          std::to_string(image.cols()));
    }
    const int d = config_.embed_dim;
    const int heads = config_.num_heads;
    const int hd = d / heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));

    Tensor tokens = tape.constant(patchify(image, config_.patch_size));
    Tensor x = concat_rows({tape.param(cls_), dense(tape, tokens, patch_weight_, patch_bias_)});
    x = add(x, tape.param(pos_));

    for (auto& L : layers_) {
        Tensor h = layer_norm(x, tape.param(L.ln1_gain), tape.param(L.ln1_bias));
        Tensor qkv = dense(tape, h, L.qkv_weight, L.qkv_bias);
        std::vector<Tensor> outs;
        Matrix avg = Matrix::Zero(x.rows(), x.rows());
        for (int i = 0; i < heads; ++i) {
            Tensor q = slice_cols(qkv, i * hd, hd);
            Tensor k = slice_cols(qkv, d + i * hd, hd);
            Tensor v = slice_cols(qkv, 2 * d + i * hd, hd);
            Tensor a = softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1);
            avg += a.value();
            outs.push_back(matmul(a, v));
        }
        maps.push_back(avg / static_cast<float>(heads));
        x = add(x, dense(tape, concat_cols(outs), L.out_weight, L.out_bias));
        Tensor h2 = layer_norm(x, tape.param(L.ln2_gain), tape.param(L.ln2_bias));
        x = add(x, dense(tape, gelu(dense(tape, h2, L.fc1_weight, L.fc1_bias)), L.fc2_weight, L.fc2_bias));
    }
    Tensor out = layer_norm(x, tape.param(final_gain_), tape.param(final_bias_));
    return slice_rows(out, 0, 1);
}

EncoderOutput PatchEncoder::encode(Tape& tape, std::span<const Image> images) {
    if (images.empty()) throw ConfigError("patch encoder: empty batch");
    EncoderOutput out;
    std::vector<Tensor> rows;
    rows.reserve(images.size());
    for (const auto& img : images) {
        std::vector<Matrix> maps;
        rows.push_back(encode_one(tape, img, maps));
        out.attn_maps.push_back(std::move(maps));
    }
    out.embedding = rows.size() == 1 ? rows.front() : concat_rows(rows);
    return out;
}

MlpEncoder::MlpEncoder(const MlpEncoderConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    int fan_in = config_.image_height * config_.image_width;
    for (std::size_t i = 0; i < config_.widths.size(); ++i) {
        const int w = config_.widths[i];
        const std::string pre = "encoder.dense" + std::to_string(i) + ".";
        weights_.emplace_back(pre + "weight", dense_init(fan_in, w, rng));
        biases_.emplace_back(pre + "bias", zeros(1, w), false);
        fan_in = w;
    }
}

std::vector<Parameter*> MlpEncoder::parameters() {
    std::vector<Parameter*> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out.push_back(&weights_[i]);
        out.push_back(&biases_[i]);
    }
    return out;
}

EncoderOutput MlpEncoder::encode(Tape& tape, std::span<const Image> images) {
    if (images.empty()) throw ConfigError("mlp encoder: empty batch");
    const Eigen::Index n_in = static_cast<Eigen::Index>(config_.image_height) * config_.image_width;
    Matrix flat(static_cast<Eigen::Index>(images.size()), n_in);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        if (img.rows() != config_.image_height || img.cols() != config_.image_width) {
            throw ConfigError("mlp encoder: expected " + std::to_string(config_.image_height) + "x" +
                              std::to_string(config_.image_width) + " image");
        }
        flat.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(img.data(), n_in);
    }
    Tensor x = tape.constant(std::move(flat));
    for (std::size_t i = 0; i < weights_.size(); ++i) x = gelu(dense(tape, x, weights_[i], biases_[i]));
    return EncoderOutput{x, {}};
}

RowVector rollout_cls_row(std::span<const Matrix> attn_maps) {
    if (attn_maps.empty()) throw InputError("attention_rollout: no attention maps");
    const auto n = attn_maps.front().rows();
    Eigen::MatrixXd rollout = Eigen::MatrixXd::Identity(n, n);
    for (const auto& a : attn_maps) {
        if (a.rows() != n || a.cols() != n) throw InputError("attention_rollout: inconsistent map shapes");
        if ((a.array() < 0.0f).any()) throw InputError("attention_rollout: negative attention weight");
        const Eigen::VectorXd sums = a.cast<double>().rowwise().sum();
        if (((sums.array() - 1.0).abs() > 1e-4).any()) {
            throw InputError("attention_rollout: attention rows are not stochastic");
        }
        Eigen::MatrixXd mixed = 0.5 * a.cast<double>() + 0.5 * Eigen::MatrixXd::Identity(n, n);
        mixed = mixed.array().colwise() / mixed.rowwise().sum().array();
        rollout = mixed * rollout;
    }
    return rollout.row(0).cast<float>();
}

Matrix attention_rollout(std::span<const Matrix> attn_maps, int grid_height, int grid_width) {
    const RowVector cls = rollout_cls_row(attn_maps);
    if (cls.size() != static_cast<Eigen::Index>(grid_height) * grid_width + 1) {
        throw InputError("attention_rollout: map size does not match the patch grid");
    }
    Matrix grid(grid_height, grid_width);
    for (int i = 0; i < grid_height * grid_width; ++i) grid(i / grid_width, i % grid_width) = cls(i + 1);
    return grid;
}

}  // namespace ordiformer
