#include "ordiformer/semalign.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ordiformer {

AlignMode parse_align_mode(const std::string& s) {
    if (s == "off") return AlignMode::off;
    if (s == "contrastive") return AlignMode::contrastive;
    if (s == "kl_distill") return AlignMode::kl_distill;
    throw ConfigError("unknown alignment mode '" + s + "' (expected off|contrastive|kl_distill)");
}

std::string to_string(AlignMode m) {
    switch (m) {
        case AlignMode::off: return "off";
        case AlignMode::contrastive: return "contrastive";
        case AlignMode::kl_distill: return "kl_distill";
    }
    return "?";
}

PromptSource parse_prompt_source(const std::string& s) {
    if (s == "file") return PromptSource::file;
    if (s == "ordinal_synthetic") return PromptSource::ordinal_synthetic;
    throw ConfigError("unknown prompt source '" + s + "' (expected file|ordinal_synthetic)");
}

std::string to_string(PromptSource s) { return s == PromptSource::file ? "file" : "ordinal_synthetic"; }

void AlignmentConfig::validate() const {
    if (!(temperature > 0.0f)) throw ConfigError("alignment temperature must be positive");
    if (lambda < 0.0f || mu < 0.0f) throw ConfigError("alignment weights must be non-negative");
}

std::vector<std::string> default_prompt_texts(int num_grades) {
    if (num_grades == 5) {
        return {"no radiographic osteoarthritis", "doubtful joint space narrowing",
                "definite osteophytes, possible narrowing", "multiple osteophytes, definite narrowing",
                "severe narrowing and subchondral sclerosis"};
    }
    std::vector<std::string> out;
    for (int c = 0; c < num_grades; ++c) out.push_back("grade " + std::to_string(c));
    return out;
}

namespace {

Matrix normalized(Matrix m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).cast<double>().norm();
        if (!(n > 0.0)) throw NumericError("prompt embedding row " + std::to_string(i) + " has zero norm");
        m.row(i) = (m.row(i).cast<double>() / n).cast<float>();
    }
    return m;
}

}  // namespace

PromptSet load_prompt_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open prompt file " + path.string());
    long k = 0;
    long m = 0;
    if (!(in >> k >> m) || k < 2 || m < 1) throw InputError("prompt file " + path.string() + ": bad header");
    Matrix e(k, m);
    for (long i = 0; i < k; ++i) {
        for (long j = 0; j < m; ++j) {
            if (!(in >> e(i, j))) {
                throw InputError("prompt file " + path.string() + ": expected " + std::to_string(k * m) + " values");
            }
        }
    }
    std::string extra;
    if (in >> extra) throw InputError("prompt file " + path.string() + ": trailing data");
    return PromptSet{default_prompt_texts(static_cast<int>(k)), normalized(std::move(e))};
}

void save_prompt_file(const PromptSet& prompts, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write prompt file " + path.string());
    out << prompts.embeddings.rows() << ' ' << prompts.embeddings.cols() << '\n';
    out.precision(9);
    for (Eigen::Index i = 0; i < prompts.embeddings.rows(); ++i) {
        for (Eigen::Index j = 0; j < prompts.embeddings.cols(); ++j) {
            out << (j ? " " : "") << prompts.embeddings(i, j);
        }
        out << '\n';
    }
}

PromptSet build_prompt_set(PromptSource source, int num_grades, int dim, std::uint64_t seed,
                           const std::filesystem::path& file) {
    if (source == PromptSource::file) {
        PromptSet p = load_prompt_file(file);
        if (p.num_grades() != num_grades) {
            throw InputError("prompt file has " + std::to_string(p.num_grades()) + " grades, expected " +
                             std::to_string(num_grades));
        }
        return p;
    }
    if (num_grades < 2 || dim < 2) throw ConfigError("synthetic prompts need K >= 2 and m >= 2");
    Rng rng = make_stream(seed, 0x70726f6d7074ULL);
    std::normal_distribution<double> dist;
    Eigen::VectorXd u(dim);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) u(i) = dist(rng);
    for (int i = 0; i < dim; ++i) v(i) = dist(rng);
    u.normalize();
    v -= v.dot(u) * u;
    v.normalize();
    Matrix e(num_grades, dim);
    const double span = std::numbers::pi / 2.0;
    for (int c = 0; c < num_grades; ++c) {
        const double theta = span * c / (num_grades - 1);
        e.row(c) = (std::cos(theta) * u + std::sin(theta) * v).transpose().cast<float>();
    }
    return PromptSet{default_prompt_texts(num_grades), normalized(std::move(e))};
}

ProjectionHead::ProjectionHead(int embed_dim, int out_dim, Rng& rng)
    : weight_("align.proj.weight", normal_matrix(embed_dim, out_dim, std::sqrt(1.0f / static_cast<float>(embed_dim)), rng)),
      bias_("align.proj.bias", Matrix::Zero(1, out_dim), false) {}

Tensor ProjectionHead::forward(Tape& tape, const Tensor& embedding) {
    return normalize_rows(add_row(matmul(embedding, tape.param(weight_)), tape.param(bias_)));
}

Tensor contrastive_loss(const Tensor& f_img, std::span<const int> labels, const PromptSet& prompts, float tau) {
    if (!(tau > 0.0f)) throw DomainError("contrastive_loss: temperature must be positive");
    if (f_img.cols() != prompts.dim()) throw DimensionError("contrastive_loss: embedding width != prompt dim");
    const auto n = f_img.rows();
    if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionError("contrastive_loss: label count != N");
    Tape& tape = *f_img.tape();
    Matrix pick = Matrix::Zero(n, prompts.num_grades());
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= prompts.num_grades()) throw InputError("contrastive_loss: label out of range");
        pick(i, y) = 1.0f;
    }
    Tensor sims = matmul(f_img, tape.constant(prompts.embeddings.transpose()));
    Tensor logp = log_softmax(scale(sims, 1.0f / tau));
    return scale(sum(mul(logp, tape.constant(std::move(pick)))), -1.0f / static_cast<float>(n));
}

Tensor teacher_distribution(const Tensor& f_img, const PromptSet& prompts, float tau) {
    if (!(tau > 0.0f)) throw DomainError("teacher_distribution: temperature must be positive");
    if (f_img.cols() != prompts.dim()) throw DimensionError("teacher_distribution: embedding width != prompt dim");
    Tape& tape = *f_img.tape();
    Tensor cos = matmul(normalize_rows(f_img), tape.constant(prompts.embeddings.transpose()));
    return softmax(scale(cos, 1.0f / tau), 1);
}

RowVector teacher_distribution(const RowVector& f_img, const PromptSet& prompts, float tau) {
    Tape tape;
    return teacher_distribution(tape.constant(f_img), prompts, tau).value();
}

Tensor kl_distill_loss(const Tensor& teacher, const Tensor& student) {
    return mean(kl_divergence_rows(teacher, student, 1e-8f));
}

double kl_divergence(const RowVector& teacher, const RowVector& student) {
    Tape tape;
    return kl_distill_loss(tape.constant(teacher), tape.constant(student)).value()(0, 0);
}

Tensor l2_regularizer(Tape& tape, std::span<Parameter* const> params) {
    std::vector<Tensor> terms;
    for (Parameter* p : params) {
        if (!p->decay || !p->trainable) continue;
        Tensor t = tape.param(*p);
        terms.push_back(sum(mul(t, t)));
    }
    if (terms.empty()) return tape.constant(Matrix::Zero(1, 1));
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

Tensor total_loss(const Tensor& coral, const Tensor& align, const Tensor& reg, float lambda, float mu) {
    if (lambda < 0.0f || mu < 0.0f) throw DomainError("total_loss: weights must be non-negative");
    Tensor out = coral;
    if (align.valid() && lambda != 0.0f) out = add(out, scale(align, lambda));
    if (reg.valid() && mu != 0.0f) out = add(out, scale(reg, mu));
    return out;
}

}  // namespace ordiformer
