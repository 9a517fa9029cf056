// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace m3 {

/// Command configuration, stored as a flat JSON object with fixed keys:
///   scene, cameras, out, grounding, retrieval                  paths
///   features.<model>, bank.<model>, pred.<model>               paths
///   theta, chunk, degrees | degrees.<model>, iters, iters_rgb,
///   points, seed, holdout, temperature, temperature_scale.<model>,
///   lambda_cos, lambda_l2, lr.query, lr.w_m, lr.color, lr.opacity,
///   lr.temperature, log_interval
/// Unknown keys are rejected. Relative paths resolve against the file.
struct RunConfig {
    std::optional<std::filesystem::path> scene, cameras, out, grounding, retrieval;
    std::vector<std::string> models; // order of first appearance
    std::map<std::string, std::filesystem::path> features, banks, preds;
    std::map<std::string, std::uint32_t> degrees;
    std::uint32_t default_degree = TrainConfig::kDefaultDegree;
    std::vector<std::size_t> holdout;
    std::map<std::string, double> temperature_scales;
    TrainConfig train;

    static RunConfig load(const std::filesystem::path& path);
    static RunConfig parse(const std::string& json_text, const std::filesystem::path& base_dir);
    void save(const std::filesystem::path& path) const;

    std::uint32_t degree_for(const std::string& model) const;
    attention::AttentionConfig attention_for(const std::string& model) const;
    /// TrainConfig with the per-model degrees filled in, in model order.
    TrainConfig train_config() const;

    /// ConfigError unless every listed key is set and every path it names exists.
    void require(std::initializer_list<std::string_view> keys) const;
};

} // namespace m3
