#include "ordiformer/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace ordiformer {

void SynthConfig::validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("synth: image size must be positive");
    if (num_grades < 2) throw ConfigError("synth: need at least 2 grades");
    if (gap_step < 0) throw ConfigError("synth: gap_step must be non-negative");
    if (gap_width(num_grades - 1) < 1) {
        throw ConfigError("synth: gap_base - (K-1) * gap_step = " + std::to_string(gap_width(num_grades - 1)) +
                          " must be >= 1 pixel");
    }
    if (gap_jitter < 0 || border < 0) throw ConfigError("synth: jitter and border must be non-negative");
    if (gap_base + 2 * gap_jitter + 2 * border + 2 > height) {
        throw ConfigError("synth: gap geometry does not fit in " + std::to_string(height) + " rows");
    }
    if (margin_width < 2 || 2 * margin_width >= width) throw ConfigError("synth: margin_width out of range");
    if (blob_count_per_grade < 0) throw ConfigError("synth: blob_count_per_grade must be non-negative");
    if (noise_sigma < 0.0f) throw ConfigError("synth: noise_sigma must be non-negative");
    if (static_cast<int>(class_proportions.size()) != num_grades) {
        throw ConfigError("synth: class_proportions must have one entry per grade");
    }
    double total = 0.0;
    for (double p : class_proportions) {
        if (p < 0.0) throw ConfigError("synth: negative class proportion");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ConfigError("synth: class proportions must sum to 1");
    if (n_samples < 0) throw ConfigError("synth: n_samples must be non-negative");
}

std::vector<int> grade_counts(int n_samples, const std::vector<double>& proportions) {
    std::vector<int> counts(proportions.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t c = 0; c < proportions.size(); ++c) {
        const double exact = n_samples * proportions[c];
        counts[c] = static_cast<int>(std::floor(exact + 1e-9));
        assigned += counts[c];
        remainders.emplace_back(exact - counts[c], c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n_samples; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];
    return counts;
}

std::vector<double> imbalanced_preset() { return {0.38, 0.18, 0.26, 0.13, 0.05}; }

std::vector<double> uniform_preset(int num_grades) {
    return std::vector<double>(static_cast<std::size_t>(num_grades), 1.0 / num_grades);
}

namespace {

void draw_sample(const SynthConfig& cfg, int grade, Rng& rng, Image& img, SampleMeta& meta) {
    std::uniform_int_distribution<int> jitter(-cfg.gap_jitter, cfg.gap_jitter);
    const int center = cfg.height / 2 + jitter(rng);
    meta.gap_width = cfg.gap_width(grade);
    meta.gap_top = center - meta.gap_width / 2;
    meta.gap_bottom = meta.gap_top + meta.gap_width;

    img = Image::Constant(cfg.height, cfg.width, cfg.background);
    img.middleRows(cfg.border, meta.gap_top - cfg.border).setConstant(cfg.bone);
    img.middleRows(meta.gap_bottom, cfg.height - cfg.border - meta.gap_bottom).setConstant(cfg.bone);

    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    const int n_blobs = grade * cfg.blob_count_per_grade;
    for (int b = 0; b < n_blobs; ++b) {
        Blob blob;
        const bool right = unit(rng) < 0.5f;
        const bool lower = unit(rng) < 0.5f;
        const float offset = 1.0f + unit(rng) * static_cast<float>(cfg.margin_width - 2);
        blob.cx = right ? static_cast<float>(cfg.width - 1) - offset : offset;
        blob.cy = (lower ? static_cast<float>(meta.gap_bottom) : static_cast<float>(meta.gap_top)) - 0.5f +
                  (unit(rng) - 0.5f);
        blob.rx = 1.5f + unit(rng);
        blob.ry = 1.0f + unit(rng);
        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                const float dy = (static_cast<float>(y) - blob.cy) / blob.ry;
                const float dx = (static_cast<float>(x) - blob.cx) / blob.rx;
                if (dy * dy + dx * dx <= 1.0f) img(y, x) = cfg.blob;
            }
        }
        meta.blobs.push_back(blob);
    }

    if (cfg.noise_sigma > 0.0f) {
        std::normal_distribution<float> noise(0.0f, cfg.noise_sigma);
        for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] += noise(rng);
    }
    img = img.cwiseMax(0.0f).cwiseMin(1.0f);
}

}  // namespace

SynthDataset generate(const SynthConfig& config) {
    config.validate();
    const std::vector<int> counts = grade_counts(config.n_samples, config.class_proportions);
    std::vector<int> labels;
    for (int g = 0; g < config.num_grades; ++g) labels.insert(labels.end(), counts[static_cast<std::size_t>(g)], g);
    Rng order_rng = make_stream(config.seed, 0xffffffffffffffffULL);
    std::shuffle(labels.begin(), labels.end(), order_rng);

    SynthDataset out;
    out.data.num_grades = config.num_grades;
    out.data.samples.resize(labels.size());
    out.meta.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Rng rng = make_stream(config.seed, i);
        auto& s = out.data.samples[i];
        s.label = labels[i];
        std::ostringstream id;
        id << labels[i] << '_' << std::setw(5) << std::setfill('0') << i;
        s.id = id.str();
        draw_sample(config, labels[i], rng, s.pixels, out.meta[i]);
    }
    return out;
}

}  // namespace ordiformer
