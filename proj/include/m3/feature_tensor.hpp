// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace m3 {

/// Dense per-view feature maps, flattened to rows: row index is
/// (view * h + y) * w + x, each row d float32 values.
struct FeatureTensor {
    std::string model_name;
    std::uint32_t n_views = 0;
    std::uint32_t h = 0;
    std::uint32_t w = 0;
    std::uint32_t d = 0;
    std::vector<float> data;

    std::size_t rows() const { return std::size_t(n_views) * h * w; }
    std::size_t view_rows() const { return std::size_t(h) * w; }
    std::span<const float> row(std::size_t i) const { return {data.data() + i * d, d}; }
    std::span<float> row(std::size_t i) { return {data.data() + i * d, d}; }
    std::span<const float> view(std::size_t v) const { return {data.data() + v * view_rows() * d, view_rows() * d}; }

    /// Throws DimensionError on shape mismatch or d == 0, NumericalError on NaN/Inf.
    void validate() const;

    /// Single-view tensor holding rows [v*h*w, (v+1)*h*w).
    FeatureTensor slice_view(std::size_t v) const;
};

FeatureTensor make_features(std::string model, std::uint32_t n, std::uint32_t h, std::uint32_t w,
                            std::uint32_t d);

/// M3FT: magic, version u32, name, n, h, w, d u32, then f32 rows, all little-endian.
FeatureTensor load_features(const std::filesystem::path& path);
void save_features(const FeatureTensor& tensor, const std::filesystem::path& path);

/// Stack single- or multi-view tensors of the same model and shape.
FeatureTensor concat_views(std::span<const FeatureTensor> parts);

} // namespace m3
