// SPDX-License-Identifier: Apache-2.0
#include "m3/feature_tensor.hpp"

#include "m3/binary_io.hpp"
#include "m3/errors.hpp"

#include <cmath>

namespace m3 {
namespace {
constexpr std::string_view kMagic = "M3FT";
constexpr std::uint32_t kVersion = 1;
} // namespace

void FeatureTensor::validate() const {
    if (d == 0) throw DimensionError("feature tensor '" + model_name + "' has d = 0");
    if (data.size() != rows() * d) {
        throw DimensionError("feature tensor '" + model_name + "' holds " + std::to_string(data.size()) +
                             " values, expected n*h*w*d = " + std::to_string(rows() * d));
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw NumericalError("feature tensor '" + model_name + "' has a non-finite value in row " +
                                 std::to_string(i / d));
        }
    }
}

FeatureTensor FeatureTensor::slice_view(std::size_t v) const {
    if (v >= n_views) throw DimensionError("view index out of range");
    FeatureTensor out = make_features(model_name, 1, h, w, d);
    const auto src = view(v);
    std::copy(src.begin(), src.end(), out.data.begin());
    return out;
}

FeatureTensor make_features(std::string model, std::uint32_t n, std::uint32_t h, std::uint32_t w,
                            std::uint32_t d) {
    FeatureTensor t;
    t.model_name = std::move(model);
    t.n_views = n;
    t.h = h;
    t.w = w;
    t.d = d;
    t.data.assign(t.rows() * d, 0.0f);
    return t;
}

FeatureTensor load_features(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic(kMagic);
    if (const auto v = r.u32(); v != kVersion) {
        throw FormatError(path.string() + ": unsupported M3FT version " + std::to_string(v));
    }
    FeatureTensor t;
    t.model_name = r.str();
    t.n_views = r.u32();
    t.h = r.u32();
    t.w = r.u32();
    t.d = r.u32();
    const std::size_t count = t.rows() * t.d;
    if (r.remaining() != count * 4) {
        throw FormatError(path.string() + ": payload size does not match n*h*w*d");
    }
    t.data.resize(count);
    r.f32s(t.data);
    t.validate();
    return t;
}

void save_features(const FeatureTensor& tensor, const std::filesystem::path& path) {
    tensor.validate();
    io::ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.str(tensor.model_name);
    w.u32(tensor.n_views);
    w.u32(tensor.h);
    w.u32(tensor.w);
    w.u32(tensor.d);
    w.f32s(tensor.data);
    w.write_file(path);
}

FeatureTensor concat_views(std::span<const FeatureTensor> parts) {
    if (parts.empty()) throw DimensionError("concat_views: nothing to concatenate");
    const auto& first = parts.front();
    FeatureTensor out = make_features(first.model_name, 0, first.h, first.w, first.d);
    for (const auto& p : parts) {
        if (p.h != first.h || p.w != first.w || p.d != first.d) {
            throw DimensionError("concat_views: shape mismatch");
        }
        out.n_views += p.n_views;
        out.data.insert(out.data.end(), p.data.begin(), p.data.end());
    }
    return out;
}

} // namespace m3
