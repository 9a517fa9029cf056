// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/metrics.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace m3 {

/// Embedding list: an M3FT file with n = 1, h = 1, w = m rows.
struct EmbeddingList {
    std::string model;
    std::size_t m = 0;
    std::size_t d = 0;
    std::vector<double> rows; // m*d

    std::span<const double> row(std::size_t i) const { return {rows.data() + i * d, d}; }
};

EmbeddingList load_embedding_list(const std::filesystem::path& path);
void save_embedding_list(const EmbeddingList& list, const std::filesystem::path& path);

/// JSON object {"model", "view", "embeddings", "masks": [png, ...]}; one mask
/// per embedding row, all at the same resolution.
struct GroundingManifest {
    std::string model;
    std::size_t view = 0;
    metrics::GroundingSet set;
};

GroundingManifest load_grounding_manifest(const std::filesystem::path& path);

/// JSON object {"model", "texts", "views"?, "pooling"?, "images"?}. Without
/// "images", image embeddings are pooled from the listed views of the
/// rendered feature maps (all views when "views" is absent).
struct RetrievalManifest {
    std::string model;
    EmbeddingList texts;
    std::optional<EmbeddingList> images;
    std::vector<std::size_t> views;
    metrics::Pooling pooling = metrics::Pooling::Mean;
};

RetrievalManifest load_retrieval_manifest(const std::filesystem::path& path);

} // namespace m3
