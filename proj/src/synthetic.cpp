// SPDX-License-Identifier: Apache-2.0
#include "m3/synthetic.hpp"

#include "m3/errors.hpp"
#include "m3/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace m3 {
namespace {

std::array<float, 4> random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::array<double, 4> q{n(rng), n(rng), n(rng), n(rng)};
    const double len = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    return {float(q[0] / len), float(q[1] / len), float(q[2] / len), float(q[3] / len)};
}

} // namespace

std::vector<std::uint32_t> render_labels(const GaussianScene& geometry, std::span<const std::uint32_t> labels,
                                         std::uint32_t t, const CameraView& camera) {
    if (labels.size() != geometry.size()) throw DimensionError("one label per primitive expected");
    GaussianScene onehot = geometry;
    const std::pair<std::string, std::uint32_t> slice{"labels", t};
    reset_queries(onehot, make_slices(std::span(&slice, 1)));
    for (std::size_t i = 0; i < onehot.size(); ++i) onehot.primitives[i].query[labels[i]] = 1.0f;
    const auto out = raster::render_view(onehot, camera, raster::RenderRequest::query_only({0, t}));
    std::vector<std::uint32_t> result(camera.pixel_count());
    for (std::size_t p = 0; p < result.size(); ++p) {
        const double* w = out.query_map.data() + p * t;
        result[p] = std::uint32_t(std::max_element(w, w + t) - w);
    }
    return result;
}

SyntheticData make_synthetic(const SyntheticOptions& o) {
    if (o.views < 3 || o.heldout < 1 || o.heldout + 2 > o.views) {
        throw ConfigError("synthetic data needs >= 2 training and >= 1 held-out views");
    }
    if (o.width < 1 || o.height < 1 || o.d < 1 || o.components < 1 || o.models.empty()) {
        throw ConfigError("synthetic sizes must be positive");
    }
    std::mt19937_64 rng(o.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticData s;
    auto& prims = s.truth.primitives;
    for (int gy = -1; gy <= 1; ++gy) {
        for (int gx = -1; gx <= 1; ++gx) {
            GaussianPrimitive g;
            g.centroid = {float(1.8 * gx), float(1.5 * gy), -1.2f};
            g.log_scale = {std::log(1.1f), std::log(1.0f), std::log(0.1f)};
            g.opacity_logit = float(logit(0.98));
            for (auto& c : g.color_sh) c = float(0.1 + 0.8 * unit(rng));
            prims.push_back(g);
        }
    }
    for (std::uint32_t i = 0; i < o.object_primitives; ++i) {
        GaussianPrimitive g;
        g.centroid = {float(-0.9 + 1.8 * unit(rng)), float(-0.9 + 1.8 * unit(rng)), float(-0.6 + 1.4 * unit(rng))};
        g.rotation = random_rotation(rng);
        for (auto& ls : g.log_scale) ls = float(std::log(0.18 + 0.17 * unit(rng)));
        g.opacity_logit = float(1.5 + 2.5 * unit(rng));
        for (auto& c : g.color_sh) c = float(0.05 + 0.9 * unit(rng));
        prims.push_back(g);
    }

    // Labels cycle through [0, t) in a shuffled order so every label occurs.
    std::vector<std::uint32_t> order(prims.size());
    std::iota(order.begin(), order.end(), 0u);
    std::shuffle(order.begin(), order.end(), rng);
    s.labels.resize(prims.size());
    for (std::size_t k = 0; k < order.size(); ++k) s.labels[order[k]] = std::uint32_t(k % o.components);

    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& model : o.models) {
        std::vector<float> rows(std::size_t(o.components) * o.d);
        for (std::uint32_t k = 0; k < o.components; ++k) {
            std::vector<double> v(o.d);
            double norm = 0.0;
            for (auto& x : v) {
                x = normal(rng);
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (std::uint32_t j = 0; j < o.d; ++j) rows[std::size_t(k) * o.d + j] = float(v[j] / norm);
        }
        s.components[model] = std::move(rows);
    }

    const double pi = std::numbers::pi;
    for (std::uint32_t v = 0; v < o.views; ++v) {
        const double a = (-20.0 + 40.0 * double(v) / double(o.views - 1)) * pi / 180.0;
        const double e = (v % 2 == 0 ? 5.0 : -5.0) * pi / 180.0;
        const double r = 4.0;
        CameraView cam;
        cam.width = o.width;
        cam.height = o.height;
        cam.fx = cam.fy = 1.4 * o.width;
        cam.cx = 0.5 * o.width;
        cam.cy = 0.5 * o.height;
        cam.world_to_camera = look_at({r * std::sin(a) * std::cos(e), r * std::sin(e), r * std::cos(a) * std::cos(e)},
                                      {0.0, 0.0, -0.2}, {0.0, 1.0, 0.0});
        s.data.cameras.push_back(cam);
    }
    // Held-out views spread evenly, never the first one.
    for (std::uint32_t h = 0; h < o.heldout; ++h) {
        s.heldout_views.push_back(std::size_t((std::uint64_t(2 * h + 1) * o.views) / (2 * o.heldout)));
    }
    for (std::size_t v = 0; v < o.views; ++v) {
        if (std::find(s.heldout_views.begin(), s.heldout_views.end(), v) == s.heldout_views.end()) {
            s.train_views.push_back(v);
        }
    }

    for (const auto& cam : s.data.cameras) {
        const auto out = raster::render_view(s.truth, cam, raster::RenderRequest::rgb_only());
        s.data.images.push_back(to_image(out.rgb, cam.width, cam.height));
    }
    for (const auto& model : o.models) {
        const auto& rows = s.components[model];
        FeatureTensor ft = make_features(model, o.views, std::uint32_t(o.height), std::uint32_t(o.width), o.d);
        for (std::uint32_t v = 0; v < o.views; ++v) {
            const auto label = render_labels(s.truth, s.labels, o.components, s.data.cameras[v]);
            float* view = ft.data.data() + std::size_t(v) * ft.view_rows() * o.d;
            for (std::size_t p = 0; p < label.size(); ++p) {
                std::copy_n(rows.begin() + std::size_t(label[p]) * o.d, o.d, view + p * o.d);
            }
        }
        s.data.features.emplace(model, std::move(ft));
    }

    s.initial = s.truth;
    for (auto& g : s.initial.primitives) {
        g.color_sh = {0.5f, 0.5f, 0.5f};
        g.opacity_logit = float(logit(0.1));
    }
    return s;
}

} // namespace m3
