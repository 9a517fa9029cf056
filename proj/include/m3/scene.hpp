// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m3 {

/// One 3D Gaussian. Opacity and scale live in optimization-friendly spaces
/// (logit and log); `color_sh` is the degree-0 RGB payload and `query` the
/// principal-query payload, both composited linearly by the rasterizer.
struct GaussianPrimitive {
    std::array<float, 3> centroid{};
    std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f}; // w, x, y, z
    std::array<float, 3> log_scale{};
    float opacity_logit = 0.0f;
    std::array<float, 3> color_sh{};
    std::vector<float> query;

    double opacity() const;
    std::array<double, 3> scale() const;
};

/// Contiguous range of the query vector owned by one foundation model.
struct QuerySlice {
    std::string model;
    std::uint32_t start = 0;
    std::uint32_t length = 0;

    std::uint32_t end() const { return start + length; }
};

struct GaussianScene {
    std::vector<GaussianPrimitive> primitives;
    std::vector<QuerySlice> model_slices; // sorted by start

    std::size_t size() const { return primitives.size(); }
    std::size_t query_length() const;
    const QuerySlice& slice(std::string_view model) const;
    bool has_model(std::string_view model) const;

    /// Throws DimensionError unless slices partition [0, l) and every
    /// primitive carries exactly l query values.
    void validate() const;
    void normalize_rotations();
};

/// Slices laid out back to back in the given order.
std::vector<QuerySlice> make_slices(std::span<const std::pair<std::string, std::uint32_t>> degrees);

GaussianScene load_scene(const std::filesystem::path& path);
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);

struct ColoredPoint {
    std::array<float, 3> position{};
    std::array<float, 3> rgb{};
};

/// One primitive per point: identity rotation, opacity 0.1, zero queries,
/// isotropic scale from the mean distance to (up to) three nearest neighbours.
GaussianScene init_scene_from_points(std::span<const ColoredPoint> points,
                                     std::vector<QuerySlice> slices);
GaussianScene init_scene_from_points(std::span<const ColoredPoint> points,
                                     std::uint32_t query_length);

/// Resize every primitive's query to the slices' total length, zeroed.
void reset_queries(GaussianScene& scene, std::vector<QuerySlice> slices);

double sigmoid(double x);
double logit(double p);

} // namespace m3
