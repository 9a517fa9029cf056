// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/feature_tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace m3 {

/// Principal scene components of one foundation model plus the learnable
/// projection lifting an s-dimensional query into feature space.
struct MemoryBank {
    std::string model_name;
    std::uint32_t d = 0;
    float theta = 0.9f;
    std::vector<std::uint32_t> selected_indices; // ascending rows of the flattened raw features
    std::vector<float> psc;                      // t*d, exact copies of the selected rows
    std::uint32_t degree = 0;                    // s
    std::vector<float> w_m;                      // s*d, row-major

    std::size_t size() const { return selected_indices.size(); }
    std::span<const float> row(std::size_t k) const { return {psc.data() + k * d, d}; }
    void validate() const;
};

inline constexpr float kDefaultTheta = 0.9f;
inline constexpr std::size_t kDefaultChunk = 1024;

/// Cosine similarity used by the reduction: dot(a, b) * (inv_norm_a * inv_norm_b)
/// with the dot summed in double in index order. Symmetric in (a, b) bit for bit.
double reduction_similarity(std::span<const float> a, std::span<const float> b, double inv_norm_a,
                            double inv_norm_b);

/// Greedy similarity reduction over rows of a row-major (rows x d) matrix.
/// Rows are visited in index order, one chunk of `chunk` rows at a time; an
/// unused row is kept iff every row at cosine >= theta from it (itself included)
/// is still unused, and then all of those rows are marked used. The trailing
/// partial chunk is processed too, so the result does not depend on `chunk`.
/// Returns ascending row indices. Throws std::invalid_argument for theta outside
/// (0, 1] or chunk == 0, DimensionError naming the first zero-norm row.
std::vector<std::uint32_t> reduce_rows(std::span<const float> rows, std::size_t d, float theta,
                                       std::size_t chunk);

/// reduce_rows over all rows of `raw`; psc is filled, w_m left empty.
MemoryBank reduce_similarity(const FeatureTensor& raw, float theta = kDefaultTheta,
                             std::size_t chunk = kDefaultChunk);

/// w_m entries ~ Normal(0, 1/sqrt(d)), deterministic per seed.
void init_projection(MemoryBank& bank, std::uint32_t degree, std::uint64_t seed);

/// M3PB: magic, version, name, t, d, s, theta f32, indices u32[t], psc f32[t*d],
/// w_m f32[s*d], little-endian.
void save_bank(const MemoryBank& bank, const std::filesystem::path& path);
MemoryBank load_bank(const std::filesystem::path& path);

} // namespace m3
