// SPDX-License-Identifier: Apache-2.0
#include "m3/scene.hpp"

#include "m3/binary_io.hpp"
#include "m3/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace m3 {
namespace {

constexpr std::string_view kMagic = "M3GS";
constexpr std::uint32_t kVersion = 1;

} // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

double GaussianPrimitive::opacity() const { return sigmoid(opacity_logit); }

std::array<double, 3> GaussianPrimitive::scale() const {
    return {std::exp(double(log_scale[0])), std::exp(double(log_scale[1])),
            std::exp(double(log_scale[2]))};
}

std::size_t GaussianScene::query_length() const {
    std::size_t l = 0;
    for (const auto& s : model_slices) l += s.length;
    return l;
}

const QuerySlice& GaussianScene::slice(std::string_view model) const {
    for (const auto& s : model_slices) {
        if (s.model == model) return s;
    }
    throw DimensionError("scene has no query slice for model '" + std::string(model) + "'");
}

bool GaussianScene::has_model(std::string_view model) const {
    return std::any_of(model_slices.begin(), model_slices.end(),
                       [&](const QuerySlice& s) { return s.model == model; });
}

void GaussianScene::validate() const {
    if (primitives.empty()) throw DimensionError("empty scene");
    std::uint32_t cursor = 0;
    for (std::size_t i = 0; i < model_slices.size(); ++i) {
        const auto& s = model_slices[i];
        if (s.start != cursor) {
            throw DimensionError("query slices are not contiguous at '" + s.model + "'");
        }
        if (s.length == 0) throw DimensionError("query slice '" + s.model + "' is empty");
        for (std::size_t j = 0; j < i; ++j) {
            if (model_slices[j].model == s.model) {
                throw DimensionError("duplicate query slice '" + s.model + "'");
            }
        }
        cursor += s.length;
    }
    for (std::size_t i = 0; i < primitives.size(); ++i) {
        if (primitives[i].query.size() != cursor) {
            throw DimensionError("primitive " + std::to_string(i) + " has query length " +
                                 std::to_string(primitives[i].query.size()) + ", slices cover " +
                                 std::to_string(cursor));
        }
    }
}

void GaussianScene::normalize_rotations() {
    for (auto& p : primitives) {
        double n = 0.0;
        for (float c : p.rotation) n += double(c) * c;
        n = std::sqrt(n);
        if (n == 0.0) {
            p.rotation = {1.0f, 0.0f, 0.0f, 0.0f};
            continue;
        }
        for (auto& c : p.rotation) c = static_cast<float>(c / n);
    }
}

std::vector<QuerySlice> make_slices(std::span<const std::pair<std::string, std::uint32_t>> degrees) {
    std::vector<QuerySlice> out;
    std::uint32_t cursor = 0;
    for (const auto& [name, len] : degrees) {
        out.push_back({name, cursor, len});
        cursor += len;
    }
    return out;
}

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
    scene.validate();
    const auto l = static_cast<std::uint32_t>(scene.query_length());
    io::ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(scene.size()));
    w.u32(l);
    for (const auto& p : scene.primitives) {
        w.f32s(p.centroid);
        w.f32s(p.rotation);
        w.f32s(p.log_scale);
        w.f32(p.opacity_logit);
        w.f32s(p.color_sh);
        w.f32s(p.query);
    }
    for (const auto& s : scene.model_slices) {
        w.str(s.model);
        w.u32(s.start);
        w.u32(s.length);
    }
    w.write_file(path);
}

GaussianScene load_scene(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic(kMagic);
    if (const auto v = r.u32(); v != kVersion) {
        throw FormatError(path.string() + ": unsupported M3GS version " + std::to_string(v));
    }
    const auto count = r.u32();
    const auto l = r.u32();
    if (count == 0) throw FormatError(path.string() + ": empty scene");
    const std::size_t per_primitive = 3 + 4 + 3 + 1 + 3 + std::size_t(l);
    if (r.remaining() / 4 / per_primitive < count) {
        throw DimensionError(path.string() + ": primitive payload shorter than count x l");
    }

    GaussianScene scene;
    scene.primitives.resize(count);
    for (auto& p : scene.primitives) {
        r.f32s(p.centroid);
        r.f32s(p.rotation);
        r.f32s(p.log_scale);
        p.opacity_logit = r.f32();
        r.f32s(p.color_sh);
        p.query.resize(l);
        r.f32s(p.query);
    }
    while (!r.at_end()) {
        QuerySlice s;
        s.model = r.str();
        s.start = r.u32();
        s.length = r.u32();
        scene.model_slices.push_back(std::move(s));
    }
    std::sort(scene.model_slices.begin(), scene.model_slices.end(),
              [](const QuerySlice& a, const QuerySlice& b) { return a.start < b.start; });
    if (scene.query_length() != l) {
        throw DimensionError(path.string() + ": slice manifest covers " +
                             std::to_string(scene.query_length()) + " of l=" + std::to_string(l));
    }
    scene.validate();
    return scene;
}

GaussianScene init_scene_from_points(std::span<const ColoredPoint> points,
                                     std::vector<QuerySlice> slices) {
    if (points.empty()) throw DimensionError("init_scene_from_points: no points");
    GaussianScene scene;
    scene.model_slices = std::move(slices);
    const auto l = scene.query_length();
    const std::size_t n = points.size();
    scene.primitives.resize(n);

    constexpr std::size_t kNeighbours = 3;
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, kNeighbours> best;
        best.fill(std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double diff = double(points[i].position[k]) - points[j].position[k];
                d2 += diff * diff;
            }
            const double d = std::sqrt(d2);
            if (d < best.back()) {
                best.back() = d;
                std::sort(best.begin(), best.end());
            }
        }
        const std::size_t found = std::min(kNeighbours, n - 1);
        double mean = 1.0;
        if (found > 0) {
            mean = 0.0;
            for (std::size_t k = 0; k < found; ++k) mean += best[k];
            mean /= double(found);
        }
        // Coincident points would give log(0).
        mean = std::max(mean, 1e-7);

        auto& p = scene.primitives[i];
        p.centroid = points[i].position;
        p.rotation = {1.0f, 0.0f, 0.0f, 0.0f};
        const float ls = static_cast<float>(std::log(mean));
        p.log_scale = {ls, ls, ls};
        p.opacity_logit = static_cast<float>(logit(0.1));
        p.color_sh = points[i].rgb;
        p.query.assign(l, 0.0f);
    }
    return scene;
}

GaussianScene init_scene_from_points(std::span<const ColoredPoint> points,
                                     std::uint32_t query_length) {
    std::vector<QuerySlice> slices;
    if (query_length > 0) slices.push_back({"default", 0, query_length});
    return init_scene_from_points(points, std::move(slices));
}

void reset_queries(GaussianScene& scene, std::vector<QuerySlice> slices) {
    scene.model_slices = std::move(slices);
    const auto l = scene.query_length();
    for (auto& p : scene.primitives) p.query.assign(l, 0.0f);
}

} // namespace m3
