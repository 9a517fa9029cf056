// SPDX-License-Identifier: Apache-2.0
#include "m3/memory_bank.hpp"

#include "m3/binary_io.hpp"
#include "m3/errors.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

namespace m3 {
namespace {

constexpr std::string_view kMagic = "M3PB";
constexpr std::uint32_t kVersion = 1;

using Word = std::uint64_t;
constexpr std::size_t kWordBits = 64;

bool test_bit(const std::vector<Word>& bits, std::size_t i) {
    return (bits[i / kWordBits] >> (i % kWordBits)) & 1u;
}

void set_bit(std::vector<Word>& bits, std::size_t i) { bits[i / kWordBits] |= Word{1} << (i % kWordBits); }

} // namespace

void MemoryBank::validate() const {
    if (selected_indices.empty()) throw DimensionError("memory bank '" + model_name + "' is empty");
    if (d == 0 || psc.size() != selected_indices.size() * std::size_t(d)) {
        throw DimensionError("memory bank '" + model_name + "' psc is not t x d");
    }
    if (w_m.size() != std::size_t(degree) * d) {
        throw DimensionError("memory bank '" + model_name + "' w_m is not s x d");
    }
    if (!(theta > 0.0f && theta <= 1.0f)) throw DimensionError("memory bank theta outside (0, 1]");
    for (float v : w_m) {
        if (!std::isfinite(v)) throw NumericalError("memory bank '" + model_name + "' w_m is not finite");
    }
}

double reduction_similarity(std::span<const float> a, std::span<const float> b, double inv_norm_a,
                            double inv_norm_b) {
    double dot = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) dot += double(a[k]) * double(b[k]);
    return dot * (inv_norm_a * inv_norm_b);
}

std::vector<std::uint32_t> reduce_rows(std::span<const float> rows, std::size_t d, float theta,
                                       std::size_t chunk) {
    if (!(theta > 0.0f && theta <= 1.0f)) throw std::invalid_argument("theta must lie in (0, 1]");
    if (chunk == 0) throw std::invalid_argument("chunk size must be positive");
    if (d == 0 || rows.size() % d != 0) throw DimensionError("rows are not a multiple of d");
    const std::size_t n = rows.size() / d;
    auto row = [&](std::size_t i) { return rows.subspan(i * d, d); };

    std::vector<double> inv_norm(n);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (float v : row(i)) s += double(v) * v;
        inv_norm[i] = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (inv_norm[i] == 0.0) throw DimensionError("raw feature row " + std::to_string(i) + " has zero norm");
    }

    const std::size_t words = (n + kWordBits - 1) / kWordBits;
    const double threshold = theta;
    std::vector<Word> used(words, 0);
    std::vector<std::uint32_t> selected;
    std::vector<std::uint32_t> candidates;
    std::vector<std::vector<Word>> similar;

    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t end = std::min(n, begin + chunk);
        candidates.clear();
        for (std::size_t j = begin; j < end; ++j) {
            if (!test_bit(used, j)) candidates.push_back(static_cast<std::uint32_t>(j));
        }
        // Similarity rows of this chunk against all rows, kept as bit sets {i : S_ji >= theta}.
        similar.resize(candidates.size());
#pragma omp parallel for schedule(dynamic, 4)
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            auto& bits = similar[c];
            bits.assign(words, 0);
            const std::size_t j = candidates[c];
            const auto rj = row(j);
            for (std::size_t i = 0; i < n; ++i) {
                if (reduction_similarity(rj, row(i), inv_norm[j], inv_norm[i]) >= threshold) set_bit(bits, i);
            }
        }
        // Decisions stay sequential in global index order.
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const std::size_t j = candidates[c];
            if (test_bit(used, j)) continue;
            const auto& bits = similar[c];
            bool clean = true;
            for (std::size_t w = 0; w < words && clean; ++w) clean = (bits[w] & used[w]) == 0;
            if (!clean) continue;
            selected.push_back(static_cast<std::uint32_t>(j));
            for (std::size_t w = 0; w < words; ++w) used[w] |= bits[w];
            set_bit(used, j);
        }
    }
    return selected;
}

MemoryBank reduce_similarity(const FeatureTensor& raw, float theta, std::size_t chunk) {
    if (raw.d == 0 || raw.data.size() != raw.rows() * raw.d) {
        throw DimensionError("feature tensor shape does not match its data");
    }
    MemoryBank bank;
    bank.model_name = raw.model_name;
    bank.d = raw.d;
    bank.theta = theta;
    bank.selected_indices = reduce_rows(raw.data, raw.d, theta, chunk);
    bank.psc.reserve(bank.selected_indices.size() * raw.d);
    for (auto idx : bank.selected_indices) {
        const auto r = raw.row(idx);
        bank.psc.insert(bank.psc.end(), r.begin(), r.end());
    }
    return bank;
}

void init_projection(MemoryBank& bank, std::uint32_t degree, std::uint64_t seed) {
    if (degree == 0) throw std::invalid_argument("projection degree must be >= 1");
    if (bank.d == 0) throw DimensionError("bank has d = 0");
    bank.degree = degree;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, static_cast<float>(1.0 / std::sqrt(double(bank.d))));
    bank.w_m.resize(std::size_t(degree) * bank.d);
    for (auto& v : bank.w_m) v = normal(rng);
}

void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
    bank.validate();
    io::ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.str(bank.model_name);
    w.u32(static_cast<std::uint32_t>(bank.size()));
    w.u32(bank.d);
    w.u32(bank.degree);
    w.f32(bank.theta);
    w.u32s(bank.selected_indices);
    w.f32s(bank.psc);
    w.f32s(bank.w_m);
    w.write_file(path);
}

MemoryBank load_bank(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic(kMagic);
    if (const auto v = r.u32(); v != kVersion) {
        throw FormatError(path.string() + ": unsupported M3PB version " + std::to_string(v));
    }
    MemoryBank bank;
    bank.model_name = r.str();
    const auto t = r.u32();
    bank.d = r.u32();
    bank.degree = r.u32();
    bank.theta = r.f32();
    const std::size_t expected = std::size_t(t) + std::size_t(t) * bank.d + std::size_t(bank.degree) * bank.d;
    if (r.remaining() != expected * 4) throw FormatError(path.string() + ": truncated or oversized bank");
    bank.selected_indices.resize(t);
    r.u32s(bank.selected_indices);
    bank.psc.resize(std::size_t(t) * bank.d);
    r.f32s(bank.psc);
    bank.w_m.resize(std::size_t(bank.degree) * bank.d);
    r.f32s(bank.w_m);
    try {
        bank.validate();
    } catch (const DimensionError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return bank;
}

} // namespace m3
