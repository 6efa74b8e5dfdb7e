#pragma once

#include "ordiformer/random.hpp"
#include "ordiformer/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ordiformer {

/// One unit-norm embedding per grade, standing in for frozen text-encoder
/// outputs of the grade descriptions.
struct PromptSet {
    std::vector<std::string> texts;
    /// K x m, rows unit L2 norm.
    Matrix embeddings;

    int num_grades() const { return static_cast<int>(embeddings.rows()); }
    int dim() const { return static_cast<int>(embeddings.cols()); }
};

enum class PromptSource { file, ordinal_synthetic };
enum class AlignMode { off, contrastive, kl_distill };

AlignMode parse_align_mode(const std::string& s);
std::string to_string(AlignMode m);
PromptSource parse_prompt_source(const std::string& s);
std::string to_string(PromptSource s);

struct AlignmentConfig {
    AlignMode mode = AlignMode::kl_distill;
    float temperature = 0.1f;
    float lambda = 0.5f;
    float mu = 0.0f;

    void validate() const;
};

/// Default descriptions for the five-grade scale.
std::vector<std::string> default_prompt_texts(int num_grades);

/// Reads `K m` then K rows of m floats; rows are L2-normalised on load.
PromptSet load_prompt_file(const std::filesystem::path& path);
void save_prompt_file(const PromptSet& prompts, const std::filesystem::path& path);

/// ordinal_synthetic: e_c = cos(theta_c) u + sin(theta_c) v with theta_c
/// equally spaced over a quarter circle and (u, v) a seeded orthonormal pair,
/// so cosine similarity falls with grade distance.
PromptSet build_prompt_set(PromptSource source, int num_grades, int dim, std::uint64_t seed,
                           const std::filesystem::path& file = {});

/// Dense d -> m followed by row L2 normalisation.
class ProjectionHead {
   public:
    ProjectionHead(int embed_dim, int out_dim, Rng& rng);
    Tensor forward(Tape& tape, const Tensor& embedding);
    std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }

   private:
    Parameter weight_;
    Parameter bias_;
};

/// Mean over rows of -log softmax(<f_i, e_c> / tau)[y_i]. `f_img` rows must
/// be unit norm.
Tensor contrastive_loss(const Tensor& f_img, std::span<const int> labels, const PromptSet& prompts, float tau);

/// Row-wise softmax over cosine(f_i, e_c) / tau.
Tensor teacher_distribution(const Tensor& f_img, const PromptSet& prompts, float tau);
RowVector teacher_distribution(const RowVector& f_img, const PromptSet& prompts, float tau);

/// Mean over rows of KL(teacher || student), student floored at 1e-8.
Tensor kl_distill_loss(const Tensor& teacher, const Tensor& student);
double kl_divergence(const RowVector& teacher, const RowVector& student);

/// Sum of squared entries over decay-marked parameters.
Tensor l2_regularizer(Tape& tape, std::span<Parameter* const> params);

/// coral + lambda * align + mu * reg. `align`/`reg` may be invalid handles
/// when unused.
Tensor total_loss(const Tensor& coral, const Tensor& align, const Tensor& reg, float lambda, float mu);

}  // namespace ordiformer
