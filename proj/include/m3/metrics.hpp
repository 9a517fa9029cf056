// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m3::metrics {

inline constexpr double kCosineEps = 1e-8;

/// cos(a, b) = a.b / max(|a||b|, 1e-8).
double cosine(std::span<const double> a, std::span<const double> b);

struct FeatureDistances {
    double cosine = 0.0; // mean over pixels of (1 - cos)
    double l2 = 0.0;     // mean over pixels of sum_d (pred - gt)^2
};

/// Maps are pixels x d, row-major.
FeatureDistances cosine_l2_maps(std::span<const double> pred, std::span<const double> gt, std::size_t d);

struct RetrievalSet {
    std::size_t m = 0;
    std::size_t d = 0;
    std::vector<double> images; // m*d; row i pairs with text row i
    std::vector<double> texts;  // m*d
    void validate() const;
};

struct RetrievalScores {
    std::vector<int> ks;
    std::vector<double> i2t; // percent, aligned with ks
    std::vector<double> t2i;
};

/// Recall@k by cosine ranking, ties broken toward the lower index.
RetrievalScores retrieval_at_k(const RetrievalSet& set, std::span<const int> ks = std::vector<int>{1, 5, 10});

enum class Pooling { Mean, CenterCrop };
Pooling parse_pooling(std::string_view name);

/// One embedding per feature map: mean over the pixels (optionally within
/// `mask`), or over the central half-width/half-height crop.
std::vector<double> pool_feature_map(std::span<const double> map, int width, int height, std::size_t d,
                                     Pooling mode, std::span<const std::uint8_t> mask = {});

struct GroundingQuery {
    std::vector<double> embedding;
    std::vector<std::uint8_t> mask; // width*height, 1 = positive
};

struct GroundingSet {
    int width = 0;
    int height = 0;
    std::size_t d = 0;
    std::vector<GroundingQuery> queries;
    void validate() const;
};

struct GroundingScores {
    double miou = 0.0;
    double ciou = 0.0;
    std::vector<double> thresholds;
    std::vector<double> ap; // fraction of queries with IoU >= threshold
    std::vector<double> iou;
};

/// Each pixel takes the query with the highest cosine similarity (lower index
/// on ties) when that similarity is > 0; otherwise it stays unlabelled.
GroundingScores grounding_scores(std::span<const double> rendered, const GroundingSet& set,
                                 std::span<const double> thresholds = std::vector<double>{0.5, 0.6});

/// Per-pixel argmax labels used by grounding_scores; -1 means unlabelled.
std::vector<int> grounding_labels(std::span<const double> rendered, const GroundingSet& set);

} // namespace m3::metrics
