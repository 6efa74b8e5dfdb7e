#pragma once

#include "ordiformer/pipeline.hpp"

#include <cstdint>
#include <vector>

namespace ordiformer {

/// Procedural ordinal images: two bright horizontal bands separated by a
/// dark gap that narrows with grade, plus grade-proportional bright blobs at
/// the lateral margins of the gap.
struct SynthConfig {
    int height = 32;
    int width = 32;
    int num_grades = 5;
    int gap_base = 14;
    int gap_step = 3;
    /// Vertical jitter of the gap centre, in whole pixels either way.
    int gap_jitter = 1;
    int blob_count_per_grade = 1;
    float noise_sigma = 0.0f;
    std::vector<double> class_proportions{0.2, 0.2, 0.2, 0.2, 0.2};
    int n_samples = 1000;
    std::uint64_t seed = 42;

    float background = 0.1f;
    float bone = 0.8f;
    float blob = 1.0f;
    /// Rows of background kept above the upper band and below the lower one.
    int border = 3;
    /// Blobs are centred within this many columns of either side.
    int margin_width = 7;

    int gap_width(int grade) const { return gap_base - grade * gap_step; }
    void validate() const;
};

struct Blob {
    float cy = 0.0f;
    float cx = 0.0f;
    float ry = 0.0f;
    float rx = 0.0f;
};

struct SampleMeta {
    int gap_width = 0;
    /// First gap row and one past the last.
    int gap_top = 0;
    int gap_bottom = 0;
    std::vector<Blob> blobs;
};

struct SynthDataset {
    Dataset data;
    std::vector<SampleMeta> meta;
};

/// Per-grade counts: floor of n * p plus largest-remainder top-up.
std::vector<int> grade_counts(int n_samples, const std::vector<double>& proportions);

/// Each sample draws from its own (seed, index) stream.
SynthDataset generate(const SynthConfig& config);

/// [0.38, 0.18, 0.26, 0.13, 0.05]: grade 0 and 2 dominant, grade 4 rare.
std::vector<double> imbalanced_preset();
std::vector<double> uniform_preset(int num_grades = 5);

}  // namespace ordiformer
