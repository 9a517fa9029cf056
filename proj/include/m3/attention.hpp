// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/memory_bank.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m3::attention {

enum class TemperatureMode { None, InvSqrtD, Learned };

TemperatureMode parse_temperature(std::string_view name);
std::string to_string(TemperatureMode mode);

/// How the logits q * W_m * PSC^T are evaluated. Direct projects the query to
/// d dimensions first (s*d + t*d per row); Materialized precomputes the s x t
/// product once (s*t per row). Auto picks the cheaper one from the shapes alone.
enum class LogitPath { Auto, Direct, Materialized };

struct AttentionConfig {
    TemperatureMode mode = TemperatureMode::InvSqrtD;
    double learned_scale = 1.0; // logit multiplier in Learned mode
    LogitPath path = LogitPath::Auto;
};

/// Multiplier applied to the raw logits.
double logit_scale(const AttentionConfig& config, std::size_t d);

LogitPath resolve_path(const AttentionConfig& config, std::size_t rows, std::size_t s, std::size_t t,
                       std::size_t d);

/// Max-subtracted softmax in place.
void stable_softmax(std::span<double> logits);

struct AttentionOutput {
    std::size_t rows = 0;
    std::size_t d = 0;
    std::size_t t = 0;
    std::vector<double> features; // rows*d
    std::vector<double> weights;  // rows*t, only when requested
};

/// features = softmax(scale * (q W_m) PSC^T) PSC for every query row
/// (`queries` is rows x s, row-major; a query map h*w*s is rows = h*w).
AttentionOutput attend(std::span<const double> queries, std::size_t s, const MemoryBank& bank,
                       const AttentionConfig& config = {}, bool keep_weights = false);

struct AttentionGradients {
    std::vector<double> query; // rows*s
    std::vector<double> w_m;   // s*d
    double scale = 0.0;        // d loss / d logit multiplier
};

/// Gradients of <grad_features, attend(queries)> with respect to the queries,
/// W_m, and the logit multiplier. PSC is frozen and receives none.
AttentionGradients attend_backward(std::span<const double> queries, std::size_t s, const MemoryBank& bank,
                                   const AttentionConfig& config, std::span<const double> grad_features);

struct TraceEntry {
    std::uint32_t psc_index = 0;
    double weight = 0.0;
    std::uint32_t source_row = 0; // row of the flattened raw features the component was copied from
};

/// Top-k attention weights for one query, descending, ties to the lower index.
std::vector<TraceEntry> trace_top_k(std::span<const double> query, const MemoryBank& bank,
                                    const AttentionConfig& config, std::size_t k);

} // namespace m3::attention
