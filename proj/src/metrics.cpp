// SPDX-License-Identifier: Apache-2.0
#include "m3/metrics.hpp"

#include "m3/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace m3::metrics {

double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    return dot / std::max(std::sqrt(na) * std::sqrt(nb), kCosineEps);
}

FeatureDistances cosine_l2_maps(std::span<const double> pred, std::span<const double> gt, std::size_t d) {
    if (d == 0 || pred.size() != gt.size() || pred.size() % d != 0) {
        throw DimensionError("feature maps have different shapes");
    }
    const std::size_t pixels = pred.size() / d;
    if (pixels == 0) throw DimensionError("feature maps are empty");
    std::vector<double> cos_dist(pixels), l2(pixels);
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < pixels; ++p) {
        const auto a = pred.subspan(p * d, d);
        const auto b = gt.subspan(p * d, d);
        // rounding can push |cos| a hair past 1
        cos_dist[p] = std::clamp(1.0 - cosine(a, b), 0.0, 2.0);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
        l2[p] = s;
    }
    double cos_sum = 0.0, l2_sum = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
        cos_sum += cos_dist[p];
        l2_sum += l2[p];
    }
    return {cos_sum / double(pixels), l2_sum / double(pixels)};
}

void RetrievalSet::validate() const {
    if (m < 2) throw DimensionError("retrieval set needs at least two pairs");
    if (d == 0 || images.size() != m * d || texts.size() != m * d) throw DimensionError("retrieval set is not m x d");
    for (double v : images) if (!std::isfinite(v)) throw NumericalError("retrieval image embedding not finite");
    for (double v : texts) if (!std::isfinite(v)) throw NumericalError("retrieval text embedding not finite");
}

namespace {

// Rank of the positive (index `self`) among candidates by descending similarity.
std::size_t positive_rank(std::span<const double> sims, std::size_t self) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < sims.size(); ++j) {
        if (sims[j] > sims[self] || (sims[j] == sims[self] && j < self)) ++rank;
    }
    return rank;
}

} // namespace

RetrievalScores retrieval_at_k(const RetrievalSet& set, std::span<const int> ks) {
    set.validate();
    for (int k : ks) {
        if (k < 1 || std::size_t(k) > set.m) throw std::invalid_argument("retrieval k must lie in [1, m]");
    }
    const std::size_t m = set.m, d = set.d;
    std::vector<double> sim(m * m);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            sim[i * m + j] = cosine({set.images.data() + i * d, d}, {set.texts.data() + j * d, d});
        }
    }
    std::vector<std::size_t> i2t_rank(m), t2i_rank(m);
    std::vector<double> column(m);
    for (std::size_t i = 0; i < m; ++i) {
        i2t_rank[i] = positive_rank({sim.data() + i * m, m}, i);
        for (std::size_t j = 0; j < m; ++j) column[j] = sim[j * m + i];
        t2i_rank[i] = positive_rank(column, i);
    }
    RetrievalScores scores;
    for (int k : ks) {
        const auto hits = [&](const std::vector<std::size_t>& ranks) {
            return 100.0 * double(std::count_if(ranks.begin(), ranks.end(),
                                                [&](std::size_t r) { return r < std::size_t(k); })) /
                   double(m);
        };
        scores.ks.push_back(k);
        scores.i2t.push_back(hits(i2t_rank));
        scores.t2i.push_back(hits(t2i_rank));
    }
    return scores;
}

Pooling parse_pooling(std::string_view name) {
    if (name == "mean") return Pooling::Mean;
    if (name == "center_crop") return Pooling::CenterCrop;
    throw std::invalid_argument("unknown pooling '" + std::string(name) + "'");
}

std::vector<double> pool_feature_map(std::span<const double> map, int width, int height, std::size_t d,
                                     Pooling mode, std::span<const std::uint8_t> mask) {
    const std::size_t pixels = std::size_t(width) * height;
    if (map.size() != pixels * d) throw DimensionError("pool_feature_map: map is not h x w x d");
    if (!mask.empty() && mask.size() != pixels) throw DimensionError("pool_feature_map: mask size mismatch");
    int x0 = 0, x1 = width, y0 = 0, y1 = height;
    if (mode == Pooling::CenterCrop) {
        x0 = width / 4;
        x1 = std::max(x0 + 1, width - width / 4);
        y0 = height / 4;
        y1 = std::max(y0 + 1, height - height / 4);
    }
    std::vector<double> out(d, 0.0);
    std::size_t count = 0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const std::size_t p = std::size_t(y) * width + x;
            if (!mask.empty() && !mask[p]) continue;
            for (std::size_t k = 0; k < d; ++k) out[k] += map[p * d + k];
            ++count;
        }
    }
    if (count == 0) throw DimensionError("pool_feature_map: no pixels to pool");
    for (auto& v : out) v /= double(count);
    return out;
}

void GroundingSet::validate() const {
    if (queries.empty()) throw DimensionError("grounding set is empty");
    const std::size_t pixels = std::size_t(width) * height;
    for (const auto& q : queries) {
        if (q.embedding.size() != d) throw DimensionError("grounding embedding has wrong dimension");
        if (q.mask.size() != pixels) throw DimensionError("grounding mask does not match image size");
        if (std::none_of(q.mask.begin(), q.mask.end(), [](std::uint8_t v) { return v != 0; })) {
            throw DimensionError("grounding mask has no positive pixel");
        }
        for (double v : q.embedding) if (!std::isfinite(v)) throw NumericalError("grounding embedding not finite");
    }
}

std::vector<int> grounding_labels(std::span<const double> rendered, const GroundingSet& set) {
    set.validate();
    const std::size_t pixels = std::size_t(set.width) * set.height;
    if (rendered.size() != pixels * set.d) throw DimensionError("rendered map does not match grounding set");
    std::vector<int> labels(pixels, -1);
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < pixels; ++p) {
        const auto f = rendered.subspan(p * set.d, set.d);
        double best = 0.0;
        for (std::size_t q = 0; q < set.queries.size(); ++q) {
            const double s = cosine(f, set.queries[q].embedding);
            if (s > best) {
                best = s;
                labels[p] = static_cast<int>(q);
            }
        }
    }
    return labels;
}

GroundingScores grounding_scores(std::span<const double> rendered, const GroundingSet& set,
                                 std::span<const double> thresholds) {
    const auto labels = grounding_labels(rendered, set);
    GroundingScores s;
    s.thresholds.assign(thresholds.begin(), thresholds.end());
    std::size_t inter_total = 0, union_total = 0;
    for (std::size_t q = 0; q < set.queries.size(); ++q) {
        std::size_t inter = 0, uni = 0;
        const auto& mask = set.queries[q].mask;
        for (std::size_t p = 0; p < labels.size(); ++p) {
            const bool pred = labels[p] == int(q);
            const bool gt = mask[p] != 0;
            inter += pred && gt;
            uni += pred || gt;
        }
        s.iou.push_back(double(inter) / double(uni));
        inter_total += inter;
        union_total += uni;
    }
    for (double v : s.iou) s.miou += v;
    s.miou /= double(s.iou.size());
    s.ciou = double(inter_total) / double(union_total);
    for (double tau : s.thresholds) {
        const auto hits = std::count_if(s.iou.begin(), s.iou.end(), [&](double v) { return v >= tau; });
        s.ap.push_back(double(hits) / double(s.iou.size()));
    }
    return s;
}

} // namespace m3::metrics
