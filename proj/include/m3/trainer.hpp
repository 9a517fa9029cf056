// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/attention.hpp"
#include "m3/camera.hpp"
#include "m3/feature_tensor.hpp"
#include "m3/image.hpp"
#include "m3/memory_bank.hpp"
#include "m3/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace m3 {

struct LearningRates {
    double query = 2.5e-2;
    double w_m = 1e-3;
    double color = 2.5e-3;
    double opacity = 5e-2;
    double temperature = 1e-3; // learned logit multiplier
};

struct TrainConfig {
    static constexpr std::uint32_t kDefaultDegree = 16;

    std::vector<std::pair<std::string, std::uint32_t>> degrees; // query slice per model, in order
    std::uint32_t iterations = 30000;            // memory phase
    std::uint32_t appearance_iterations = 30000; // RGB phase
    std::uint32_t points_per_step = 2000;
    double lambda_cos = 1.0;
    double lambda_l2 = 0.2;
    LearningRates lr;
    std::uint64_t seed = 0;
    float theta = kDefaultTheta;
    std::size_t chunk = kDefaultChunk;
    attention::AttentionConfig attention;
    std::uint32_t log_interval = 100;

    /// 7k-iteration budget for both phases.
    static TrainConfig fast();
    void validate() const;
};

/// Views with their images and per-model feature maps; every FeatureTensor
/// holds one view per camera at the camera's resolution.
struct Dataset {
    std::vector<CameraView> cameras;
    std::vector<Image> images;
    std::map<std::string, FeatureTensor> features;

    std::size_t size() const { return cameras.size(); }
};

struct LossRecord {
    std::string phase; // "appearance" or "memory"
    std::uint32_t iteration = 0;
    double loss = 0.0; // mean over the logged interval
    std::vector<std::pair<std::string, double>> per_model;
};

struct HeldOutScore {
    std::string model;
    double cosine = 0.0;
    double l2 = 0.0;
};

struct TrainReport {
    std::vector<LossRecord> records;
    std::vector<double> step_losses; // every iteration, last phase run
    std::vector<HeldOutScore> heldout;
    double heldout_psnr = 0.0;
    double wall_clock_seconds = 0.0;
    std::uint32_t iterations = 0;

    /// One JSON record per log interval, then a summary record. Timing goes
    /// only into the summary and only when `include_timing` is set.
    void write_jsonl(const std::filesystem::path& path, bool include_timing = true) const;
};

/// Phase 1: fit color_sh and opacity (geometry frozen) with
/// 0.8 * L1 + 0.2 * (1 - SSIM). Throws NumericalError if the loss stops being
/// finite or no training view sees any primitive.
GaussianScene fit_appearance(GaussianScene scene, const Dataset& data, std::span<const std::size_t> train_views,
                             std::span<const std::size_t> heldout_views, const TrainConfig& config,
                             TrainReport* report = nullptr);

/// Row-level point loss: mean over rows of
/// lambda_cos * (1 - cos(pred, gt)) + lambda_l2 * |pred - gt|^2 / d.
/// Writes d loss / d pred into `grad` (same shape as pred).
double point_loss_rows(std::span<const double> pred, std::span<const double> gt, std::size_t d,
                       double lambda_cos, double lambda_l2, std::span<double> grad);

/// P pixel indices: without replacement (ascending) when P <= pixels, else with replacement.
std::vector<std::size_t> sample_points(std::size_t pixels, std::size_t count, std::mt19937_64& rng);

struct PointLoss {
    double loss = 0.0;
    std::vector<std::size_t> samples;
    std::vector<double> grad; // h*w*d, zero off the samples
};

/// Point-sampled feature loss over whole maps (pixels x d), same pixel
/// locations in prediction and ground truth.
PointLoss point_feature_loss(std::span<const double> pred, std::span<const double> gt, std::size_t d,
                             std::size_t points, std::uint64_t seed, double lambda_cos = 1.0,
                             double lambda_l2 = 0.2);

struct MemoryFit {
    GaussianScene scene;
    std::vector<MemoryBank> banks;
    std::map<std::string, double> learned_scales; // Learned temperature mode only
    TrainReport report;
};

/// Phase 2: train query slices and W_m against the feature maps; geometry,
/// colors and PSC stay frozen. Banks must carry an initialized W_m whose
/// degree matches the scene slice of the same model.
MemoryFit fit_memory(GaussianScene scene, const Dataset& data, std::vector<MemoryBank> banks,
                     std::span<const std::size_t> train_views, std::span<const std::size_t> heldout_views,
                     const TrainConfig& config);

/// Full-view feature rendering: rasterize the model's query slice and run memory attention.
std::vector<double> render_features(const GaussianScene& scene, const CameraView& camera, const MemoryBank& bank,
                                    const attention::AttentionConfig& config);

Image to_image(const std::vector<double>& rgb, int width, int height);

} // namespace m3
