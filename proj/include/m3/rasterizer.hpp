// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/camera.hpp"
#include "m3/scene.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace m3::raster {

inline constexpr int kTileSize = 16;
inline constexpr double kNearPlane = 0.01;
inline constexpr double kLowPass = 0.3;        // px^2 added to the 2D covariance diagonal
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;

/// A primitive projected into one camera.
struct SplatFragment {
    std::uint32_t gaussian_index = 0;
    std::array<double, 2> mean{};  // pixel coordinates
    std::array<double, 3> cov{};   // xx, xy, yy (px^2), low-pass applied
    std::array<double, 3> conic{}; // inverse of cov, same layout
    double depth = 0.0;
    double opacity = 0.0;          // sigmoid(opacity_logit)
    int radius = 0;                // 3-sigma pixel radius

    /// Per-pixel alpha before clamping; zero outside the Gaussian's support.
    double evaluate(double px, double py) const;
};

/// EWA projection; nullopt when the centroid is at or behind the near plane.
std::optional<SplatFragment> project(const GaussianPrimitive& primitive, std::uint32_t index,
                                     const CameraView& camera);

struct PixelFragment {
    double depth = 0.0;
    double alpha = 0.0;
    std::span<const double> payload;
};

struct CompositeResult {
    std::vector<double> payload;
    double transmittance = 1.0;
    std::size_t composited = 0;
};

/// Front-to-back compositing of depth-sorted fragments:
/// out = sum_i p_i a_i T_i,  T_i = prod_{j<i} (1 - a_j).
/// Alphas are clamped to kMaxAlpha; stops once T drops below kMinTransmittance.
CompositeResult composite_pixel(std::span<const PixelFragment> fragments, std::size_t channels);

struct QueryRange {
    std::uint32_t start = 0;
    std::uint32_t length = 0;
};

struct RenderRequest {
    bool rgb = true;
    std::optional<QueryRange> query;

    static RenderRequest rgb_only() { return {true, std::nullopt}; }
    static RenderRequest query_only(QueryRange r) { return {false, r}; }
};

/// rgb is h*w*3, query_map h*w*query_channels, alpha h*w; row-major pixels.
struct RenderOutput {
    int width = 0;
    int height = 0;
    std::size_t query_channels = 0;
    std::vector<double> rgb;
    std::vector<double> query_map;
    std::vector<double> alpha;
};

RenderOutput render_view(const GaussianScene& scene, const CameraView& camera,
                         const RenderRequest& request);

/// Per-primitive gradients. `query` is size()*range.length, laid out per
/// primitive over the rendered range only.
struct RenderGradients {
    std::vector<double> color;         // size()*3
    std::vector<double> opacity_logit; // size()
    std::vector<double> query;
    QueryRange range;
};

/// Analytic appearance/query gradients for the same request as the forward
/// pass. An empty gradient span means "no loss on that channel"; a non-empty
/// span for a channel the request did not render is an error.
RenderGradients backward_render(const GaussianScene& scene, const CameraView& camera,
                                const RenderRequest& request, std::span<const double> grad_rgb,
                                std::span<const double> grad_query);

/// Per-camera fragments, depth order, and 16x16 tile lists.
struct Binning {
    std::vector<SplatFragment> fragments; // global depth order
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> tiles; // indices into fragments
};

Binning bin_fragments(const GaussianScene& scene, const CameraView& camera);

} // namespace m3::raster
