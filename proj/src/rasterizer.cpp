// SPDX-License-Identifier: Apache-2.0
#include "m3/rasterizer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace m3::raster {
namespace {

Eigen::Matrix3d quaternion_to_matrix(const std::array<float, 4>& q) {
    Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    if (quat.norm() == 0.0) return Eigen::Matrix3d::Identity();
    return quat.normalized().toRotationMatrix();
}

// Payload layout shared by forward and backward: [rgb?][query range].
struct Payloads {
    std::size_t channels = 0;
    std::size_t rgb_channels = 0;
    std::vector<double> values; // fragment-major, matches Binning::fragments
};

Payloads gather_payloads(const GaussianScene& scene, const Binning& bins, const RenderRequest& request) {
    Payloads p;
    p.rgb_channels = request.rgb ? 3 : 0;
    const std::size_t q = request.query ? request.query->length : 0;
    p.channels = p.rgb_channels + q;
    p.values.resize(bins.fragments.size() * p.channels);
    for (std::size_t f = 0; f < bins.fragments.size(); ++f) {
        const auto& prim = scene.primitives[bins.fragments[f].gaussian_index];
        double* dst = p.values.data() + f * p.channels;
        if (request.rgb) {
            for (int c = 0; c < 3; ++c) dst[c] = prim.color_sh[c];
        }
        for (std::size_t c = 0; c < q; ++c) dst[p.rgb_channels + c] = prim.query[request.query->start + c];
    }
    return p;
}

void check_request(const GaussianScene& scene, const RenderRequest& request) {
    if (request.query) {
        const auto end = std::size_t(request.query->start) + request.query->length;
        if (end > scene.query_length()) {
            throw std::invalid_argument("query range exceeds scene query length");
        }
    }
}

} // namespace

double SplatFragment::evaluate(double px, double py) const {
    const double dx = px - mean[0];
    const double dy = py - mean[1];
    const double power = -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
    if (power > 0.0) return 0.0;
    return opacity * std::exp(power);
}

std::optional<SplatFragment> project(const GaussianPrimitive& primitive, std::uint32_t index,
                                     const CameraView& camera) {
    const auto& m = camera.world_to_camera;
    Eigen::Matrix3d view;
    view << m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10];
    const Eigen::Vector3d translation(m[3], m[7], m[11]);
    const Eigen::Vector3d world(primitive.centroid[0], primitive.centroid[1], primitive.centroid[2]);
    const Eigen::Vector3d p = view * world + translation;
    if (p.z() <= kNearPlane) return std::nullopt;

    const auto s = primitive.scale();
    const Eigen::Matrix3d rs = quaternion_to_matrix(primitive.rotation) * Eigen::Vector3d(s[0], s[1], s[2]).asDiagonal();
    const Eigen::Matrix3d cov3 = view * (rs * rs.transpose()) * view.transpose();

    const double inv_z = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << camera.fx * inv_z, 0.0, -camera.fx * p.x() * inv_z * inv_z,
           0.0, camera.fy * inv_z, -camera.fy * p.y() * inv_z * inv_z;
    Eigen::Matrix2d cov2 = jac * cov3 * jac.transpose();
    cov2(0, 0) += kLowPass;
    cov2(1, 1) += kLowPass;

    SplatFragment f;
    f.gaussian_index = index;
    f.mean = {camera.fx * p.x() * inv_z + camera.cx, camera.fy * p.y() * inv_z + camera.cy};
    f.cov = {cov2(0, 0), 0.5 * (cov2(0, 1) + cov2(1, 0)), cov2(1, 1)};
    const double det = f.cov[0] * f.cov[2] - f.cov[1] * f.cov[1];
    f.conic = {f.cov[2] / det, -f.cov[1] / det, f.cov[0] / det};
    f.depth = p.z();
    f.opacity = primitive.opacity();

    // Extent beyond which opacity * exp(-m^2/2) < kMinAlpha, so tiling never
    // drops a contribution the per-pixel definition would keep.
    if (f.opacity >= kMinAlpha) {
        const double mid = 0.5 * (f.cov[0] + f.cov[2]);
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
        const double mahalanobis = std::sqrt(2.0 * std::log(f.opacity / kMinAlpha));
        f.radius = static_cast<int>(std::ceil(mahalanobis * std::sqrt(lambda_max))) + 1;
    }
    return f;
}

CompositeResult composite_pixel(std::span<const PixelFragment> fragments, std::size_t channels) {
#ifndef NDEBUG
    for (std::size_t i = 1; i < fragments.size(); ++i) {
        if (fragments[i].depth < fragments[i - 1].depth) {
            throw std::logic_error("composite_pixel: fragments not depth-sorted");
        }
    }
#endif
    CompositeResult r;
    r.payload.assign(channels, 0.0);
    double t = 1.0;
    for (const auto& f : fragments) {
        if (t < kMinTransmittance) break;
        assert(f.payload.size() >= channels);
        const double a = std::min(f.alpha, kMaxAlpha);
        const double w = a * t;
        for (std::size_t c = 0; c < channels; ++c) r.payload[c] += f.payload[c] * w;
        t *= 1.0 - a;
        ++r.composited;
    }
    r.transmittance = t;
    return r;
}

Binning bin_fragments(const GaussianScene& scene, const CameraView& camera) {
    Binning bins;
    const std::size_t n = scene.size();
    std::vector<std::optional<SplatFragment>> projected(n);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        projected[i] = project(scene.primitives[i], static_cast<std::uint32_t>(i), camera);
    }
    for (auto& f : projected) {
        if (f && f->radius > 0) bins.fragments.push_back(*f);
    }
    std::stable_sort(bins.fragments.begin(), bins.fragments.end(),
                     [](const SplatFragment& a, const SplatFragment& b) { return a.depth < b.depth; });

    bins.tiles_x = (camera.width + kTileSize - 1) / kTileSize;
    bins.tiles_y = (camera.height + kTileSize - 1) / kTileSize;
    bins.tiles.assign(std::size_t(bins.tiles_x) * bins.tiles_y, {});
    for (std::size_t k = 0; k < bins.fragments.size(); ++k) {
        const auto& f = bins.fragments[k];
        const double r = f.radius;
        const double x0 = std::floor((f.mean[0] - r) / kTileSize);
        const double x1 = std::floor((f.mean[0] + r) / kTileSize);
        const double y0 = std::floor((f.mean[1] - r) / kTileSize);
        const double y1 = std::floor((f.mean[1] + r) / kTileSize);
        if (x1 < 0 || y1 < 0 || x0 >= bins.tiles_x || y0 >= bins.tiles_y) continue;
        const int tx0 = std::max(0, int(x0)), tx1 = std::min(bins.tiles_x - 1, int(x1));
        const int ty0 = std::max(0, int(y0)), ty1 = std::min(bins.tiles_y - 1, int(y1));
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                bins.tiles[std::size_t(ty) * bins.tiles_x + tx].push_back(static_cast<std::uint32_t>(k));
            }
        }
    }
    return bins;
}

RenderOutput render_view(const GaussianScene& scene, const CameraView& camera,
                         const RenderRequest& request) {
    check_request(scene, request);
    const Binning bins = bin_fragments(scene, camera);
    const Payloads payloads = gather_payloads(scene, bins, request);
    const std::size_t channels = payloads.channels;
    const std::size_t qc = channels - payloads.rgb_channels;

    RenderOutput out;
    out.width = camera.width;
    out.height = camera.height;
    out.query_channels = qc;
    const std::size_t pixels = camera.pixel_count();
    if (request.rgb) out.rgb.assign(pixels * 3, 0.0);
    out.query_map.assign(pixels * qc, 0.0);
    out.alpha.assign(pixels, 0.0);

    const int tile_count = bins.tiles_x * bins.tiles_y;
#pragma omp parallel
    {
        std::vector<double> acc(channels);
#pragma omp for schedule(dynamic, 1)
        for (int tile = 0; tile < tile_count; ++tile) {
            const auto& list = bins.tiles[tile];
            const int tx = tile % bins.tiles_x, ty = tile / bins.tiles_x;
            const int x_end = std::min(camera.width, (tx + 1) * kTileSize);
            const int y_end = std::min(camera.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y_end; ++y) {
                for (int x = tx * kTileSize; x < x_end; ++x) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    double t = 1.0;
                    for (const auto k : list) {
                        if (t < kMinTransmittance) break;
                        double a = bins.fragments[k].evaluate(x + 0.5, y + 0.5);
                        if (a < kMinAlpha) continue;
                        a = std::min(a, kMaxAlpha);
                        const double w = a * t;
                        const double* p = payloads.values.data() + std::size_t(k) * channels;
                        for (std::size_t c = 0; c < channels; ++c) acc[c] += p[c] * w;
                        t *= 1.0 - a;
                    }
                    const std::size_t pix = std::size_t(y) * camera.width + x;
                    if (request.rgb) std::copy_n(acc.begin(), 3, out.rgb.begin() + pix * 3);
                    std::copy_n(acc.begin() + payloads.rgb_channels, qc, out.query_map.begin() + pix * qc);
                    out.alpha[pix] = 1.0 - t;
                }
            }
        }
    }
    return out;
}

RenderGradients backward_render(const GaussianScene& scene, const CameraView& camera,
                                const RenderRequest& request, std::span<const double> grad_rgb,
                                std::span<const double> grad_query) {
    check_request(scene, request);
    const std::size_t pixels = camera.pixel_count();
    const std::size_t qlen = request.query ? request.query->length : 0;
    if (!grad_rgb.empty() && !request.rgb) {
        throw std::invalid_argument("rgb gradient supplied but rgb was not rendered");
    }
    if (!grad_query.empty() && !request.query) {
        throw std::invalid_argument("query gradient supplied but no query range was rendered");
    }
    if (!grad_rgb.empty() && grad_rgb.size() != pixels * 3) {
        throw std::invalid_argument("rgb gradient has wrong size");
    }
    if (!grad_query.empty() && grad_query.size() != pixels * qlen) {
        throw std::invalid_argument("query gradient has wrong size");
    }

    const Binning bins = bin_fragments(scene, camera);
    const Payloads payloads = gather_payloads(scene, bins, request);
    const std::size_t channels = payloads.channels;
    const std::size_t rgb_ch = payloads.rgb_channels;
    // per local fragment: payload grads (channels) + alpha-logit grad
    const std::size_t stride = channels + 1;

    const int tile_count = bins.tiles_x * bins.tiles_y;
    std::vector<std::vector<double>> partials(tile_count);

#pragma omp parallel
    {
        struct Hit {
            std::uint32_t local;
            double alpha;
            double transmittance;
            double dalpha_dlogit;
        };
        std::vector<Hit> hits;
        std::vector<double> grad(channels), suffix(channels);
#pragma omp for schedule(dynamic, 1)
        for (int tile = 0; tile < tile_count; ++tile) {
            const auto& list = bins.tiles[tile];
            auto& partial = partials[tile];
            partial.assign(list.size() * stride, 0.0);
            const int tx = tile % bins.tiles_x, ty = tile / bins.tiles_x;
            const int x_end = std::min(camera.width, (tx + 1) * kTileSize);
            const int y_end = std::min(camera.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y_end; ++y) {
                for (int x = tx * kTileSize; x < x_end; ++x) {
                    const std::size_t pix = std::size_t(y) * camera.width + x;
                    bool any = false;
                    for (std::size_t c = 0; c < rgb_ch; ++c) {
                        grad[c] = grad_rgb.empty() ? 0.0 : grad_rgb[pix * 3 + c];
                        any |= grad[c] != 0.0;
                    }
                    for (std::size_t c = 0; c < qlen; ++c) {
                        grad[rgb_ch + c] = grad_query.empty() ? 0.0 : grad_query[pix * qlen + c];
                        any |= grad[rgb_ch + c] != 0.0;
                    }
                    if (!any) continue;

                    hits.clear();
                    double t = 1.0;
                    for (std::uint32_t local = 0; local < list.size(); ++local) {
                        if (t < kMinTransmittance) break;
                        const auto& frag = bins.fragments[list[local]];
                        const double raw = frag.evaluate(x + 0.5, y + 0.5);
                        if (raw < kMinAlpha) continue;
                        const double a = std::min(raw, kMaxAlpha);
                        // d(o*G)/d(logit) = o*G*(1-o); zero once clamped
                        const double da = raw > kMaxAlpha ? 0.0 : raw * (1.0 - frag.opacity);
                        hits.push_back({local, a, t, da});
                        t *= 1.0 - a;
                    }

                    std::fill(suffix.begin(), suffix.end(), 0.0);
                    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                        const double* p = payloads.values.data() + std::size_t(list[it->local]) * channels;
                        double* g = partial.data() + std::size_t(it->local) * stride;
                        const double w = it->alpha * it->transmittance;
                        double dalpha = 0.0;
                        const double inv_one_minus = 1.0 / (1.0 - it->alpha);
                        for (std::size_t c = 0; c < channels; ++c) {
                            g[c] += grad[c] * w;
                            dalpha += grad[c] * (p[c] * it->transmittance - suffix[c] * inv_one_minus);
                            suffix[c] += p[c] * w;
                        }
                        g[channels] += dalpha * it->dalpha_dlogit;
                    }
                }
            }
        }
    }

    RenderGradients out;
    const std::size_t n = scene.size();
    out.color.assign(n * 3, 0.0);
    out.opacity_logit.assign(n, 0.0);
    out.query.assign(n * qlen, 0.0);
    if (request.query) out.range = *request.query;
    // fixed tile order keeps the sums independent of the worker count
    for (int tile = 0; tile < tile_count; ++tile) {
        const auto& list = bins.tiles[tile];
        const auto& partial = partials[tile];
        for (std::size_t local = 0; local < list.size(); ++local) {
            const auto gi = bins.fragments[list[local]].gaussian_index;
            const double* g = partial.data() + local * stride;
            for (std::size_t c = 0; c < rgb_ch; ++c) out.color[gi * 3 + c] += g[c];
            for (std::size_t c = 0; c < qlen; ++c) out.query[gi * qlen + c] += g[rgb_ch + c];
            out.opacity_logit[gi] += g[channels];
        }
    }
    return out;
}

} // namespace m3::raster
