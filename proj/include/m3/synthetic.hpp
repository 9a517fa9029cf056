// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/memory_bank.hpp"
#include "m3/scene.hpp"
#include "m3/trainer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace m3 {

struct SyntheticOptions {
    std::uint32_t object_primitives = 11; // on top of a 3x3 backdrop
    std::uint32_t views = 10;
    std::uint32_t heldout = 2;
    int width = 32;
    int height = 32;
    std::uint32_t d = 64;
    std::uint32_t components = 5; // t
    std::uint64_t seed = 7;
    std::vector<std::string> models{"synthetic"};
};

/// Scene with known geometry, colors, and a per-primitive label in [0, t).
/// The feature map of a model at a pixel is the bank row of the label with
/// the largest composited weight there, so every map holds exactly t
/// distinct rows.
struct SyntheticData {
    GaussianScene truth;        // appearance ground truth, no queries
    GaussianScene initial;      // same geometry, gray colors, opacity 0.1
    std::vector<std::uint32_t> labels;
    std::map<std::string, std::vector<float>> components; // model -> t*d unit rows
    Dataset data;
    std::vector<std::size_t> train_views;
    std::vector<std::size_t> heldout_views;
};

SyntheticData make_synthetic(const SyntheticOptions& options = {});

/// Per-pixel label of one view (argmax composited label weight, lower label on ties).
std::vector<std::uint32_t> render_labels(const GaussianScene& geometry, std::span<const std::uint32_t> labels,
                                         std::uint32_t t, const CameraView& camera);

} // namespace m3
