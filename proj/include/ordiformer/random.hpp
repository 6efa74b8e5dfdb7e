#pragma once

#include "ordiformer/tensor.hpp"

#include <cstdint>
#include <random>

namespace ordiformer {

using Rng = std::mt19937_64;

/// Independent stream for (seed, index); order of creation does not matter.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, float stddev, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

inline float uniform(Rng& rng, float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
}

}  // namespace ordiformer
