// SPDX-License-Identifier: Apache-2.0
#include "m3/trainer.hpp"

#include "m3/errors.hpp"
#include "m3/image_metrics.hpp"
#include "m3/metrics.hpp"
#include "m3/optim.hpp"
#include "m3/rasterizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace m3 {
namespace {

using Clock = std::chrono::steady_clock;

constexpr double kL1Weight = 0.8;
constexpr double kSsimWeight = 0.2;

void check_views(const Dataset& data, std::span<const std::size_t> views) {
    for (auto v : views) {
        if (v >= data.size()) throw ConfigError("view index " + std::to_string(v) + " out of range");
    }
}

// Flat copies of the per-primitive attributes the optimizers touch.
std::vector<float> gather_colors(const GaussianScene& s) {
    std::vector<float> out(s.size() * 3);
    for (std::size_t i = 0; i < s.size(); ++i) std::copy_n(s.primitives[i].color_sh.begin(), 3, out.begin() + i * 3);
    return out;
}

void scatter_colors(GaussianScene& s, const std::vector<float>& v) {
    for (std::size_t i = 0; i < s.size(); ++i) std::copy_n(v.begin() + i * 3, 3, s.primitives[i].color_sh.begin());
}

std::vector<float> gather_queries(const GaussianScene& s) {
    const auto l = s.query_length();
    std::vector<float> out(s.size() * l);
    for (std::size_t i = 0; i < s.size(); ++i) std::copy_n(s.primitives[i].query.begin(), l, out.begin() + i * l);
    return out;
}

void scatter_queries(GaussianScene& s, const std::vector<float>& v) {
    const auto l = s.query_length();
    for (std::size_t i = 0; i < s.size(); ++i) std::copy_n(v.begin() + i * l, l, s.primitives[i].query.begin());
}

void record_interval(TrainReport& report, const std::string& phase, std::uint32_t iteration, double loss_sum,
                     std::vector<std::pair<std::string, double>> per_model, std::uint32_t count) {
    LossRecord rec;
    rec.phase = phase;
    rec.iteration = iteration;
    rec.loss = loss_sum / double(count);
    for (auto& [name, v] : per_model) v /= double(count);
    rec.per_model = std::move(per_model);
    report.records.push_back(std::move(rec));
}

} // namespace

TrainConfig TrainConfig::fast() {
    TrainConfig c;
    c.iterations = 7000;
    c.appearance_iterations = 7000;
    return c;
}

void TrainConfig::validate() const {
    if (points_per_step < 1) throw ConfigError("points_per_step must be >= 1");
    if (!(lr.query > 0 && lr.w_m > 0 && lr.color > 0 && lr.opacity > 0 && lr.temperature > 0)) {
        throw ConfigError("learning rates must be positive");
    }
    if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
    if (!(theta > 0.0f && theta <= 1.0f)) throw ConfigError("theta must lie in (0, 1]");
    if (chunk < 1) throw ConfigError("chunk must be >= 1");
    for (const auto& [name, s] : degrees) {
        if (s < 1) throw ConfigError("degree for '" + name + "' must be >= 1");
    }
}

void TrainReport::write_jsonl(const std::filesystem::path& path, bool include_timing) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write report: " + path.string());
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["phase"] = r.phase;
        j["iteration"] = r.iteration;
        j["loss"] = r.loss;
        for (const auto& [name, v] : r.per_model) j["loss." + name] = v;
        out << j.dump() << '\n';
    }
    nlohmann::ordered_json s;
    s["summary"] = true;
    s["iterations"] = iterations;
    if (heldout_psnr > 0.0) s["heldout.psnr"] = heldout_psnr;
    for (const auto& h : heldout) {
        s["heldout." + h.model + ".cosine"] = h.cosine;
        s["heldout." + h.model + ".l2"] = h.l2;
    }
    if (include_timing) s["wall_clock_s"] = wall_clock_seconds;
    out << s.dump() << '\n';
}

Image to_image(const std::vector<double>& rgb, int width, int height) {
    Image img{width, height, 3, rgb};
    return img;
}

GaussianScene fit_appearance(GaussianScene scene, const Dataset& data, std::span<const std::size_t> train_views,
                             std::span<const std::size_t> heldout_views, const TrainConfig& config,
                             TrainReport* report) {
    config.validate();
    scene.validate();
    check_views(data, train_views);
    check_views(data, heldout_views);
    if (train_views.size() < 2) throw ConfigError("appearance fitting needs at least two training views");
    if (data.images.size() != data.size()) throw ConfigError("every view needs an image");
    for (auto v : train_views) {
        const auto& img = data.images[v];
        if (img.width != data.cameras[v].width || img.height != data.cameras[v].height || img.channels != 3) {
            throw DimensionError("image " + std::to_string(v) + " does not match its camera");
        }
    }

    TrainReport local;
    TrainReport& rep = report ? *report : local;
    rep.step_losses.clear();
    const auto start = Clock::now();

    if (config.appearance_iterations > 0) {
        bool any_overlap = false;
        for (auto v : train_views) {
            const auto bins = raster::bin_fragments(scene, data.cameras[v]);
            for (const auto& tile : bins.tiles) any_overlap = any_overlap || !tile.empty();
        }
        if (!any_overlap) throw NumericalError("no training view overlaps the scene");
    }

    const std::size_t n = scene.size();
    Adam color_opt(n * 3, config.lr.color);
    Adam opacity_opt(n, config.lr.opacity);
    auto colors = gather_colors(scene);
    std::vector<float> opacity(n);
    for (std::size_t i = 0; i < n; ++i) opacity[i] = scene.primitives[i].opacity_logit;

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train_views.begin(), train_views.end());
    std::size_t cursor = order.size();
    double interval_loss = 0.0;
    std::uint32_t interval_count = 0;

    for (std::uint32_t it = 0; it < config.appearance_iterations; ++it) {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::size_t v = order[cursor++];
        const auto& cam = data.cameras[v];
        const auto& target = data.images[v];

        const auto out = raster::render_view(scene, cam, raster::RenderRequest::rgb_only());
        const Image rendered = to_image(out.rgb, cam.width, cam.height);
        const auto ssim = metrics::ssim_with_gradient(rendered, target);
        const double inv_n = 1.0 / double(out.rgb.size());
        double l1 = 0.0;
        std::vector<double> grad(out.rgb.size());
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double diff = out.rgb[i] - target.data[i];
            l1 += std::abs(diff);
            grad[i] = kL1Weight * inv_n * double((diff > 0.0) - (diff < 0.0)) - kSsimWeight * ssim.grad[i];
        }
        const double loss = kL1Weight * l1 * inv_n + kSsimWeight * (1.0 - ssim.value);
        if (!std::isfinite(loss)) {
            rep.iterations = it;
            throw NumericalError("appearance loss is not finite at iteration " + std::to_string(it));
        }
        rep.step_losses.push_back(loss);
        interval_loss += loss;
        ++interval_count;

        const auto g = raster::backward_render(scene, cam, raster::RenderRequest::rgb_only(), grad, {});
        color_opt.step(colors, g.color);
        opacity_opt.step(opacity, g.opacity_logit);
        scatter_colors(scene, colors);
        for (std::size_t i = 0; i < n; ++i) scene.primitives[i].opacity_logit = opacity[i];

        if ((it + 1) % config.log_interval == 0 || it + 1 == config.appearance_iterations) {
            record_interval(rep, "appearance", it + 1, interval_loss, {}, interval_count);
            interval_loss = 0.0;
            interval_count = 0;
        }
    }

    if (!heldout_views.empty()) {
        double psnr_sum = 0.0;
        for (auto v : heldout_views) {
            const auto& cam = data.cameras[v];
            const auto out = raster::render_view(scene, cam, raster::RenderRequest::rgb_only());
            psnr_sum += metrics::psnr(to_image(out.rgb, cam.width, cam.height), data.images[v]);
        }
        rep.heldout_psnr = psnr_sum / double(heldout_views.size());
    }
    rep.iterations = config.appearance_iterations;
    rep.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return scene;
}

double point_loss_rows(std::span<const double> pred, std::span<const double> gt, std::size_t d,
                       double lambda_cos, double lambda_l2, std::span<double> grad) {
    if (d == 0 || pred.size() != gt.size() || pred.size() % d != 0 || grad.size() != pred.size()) {
        throw DimensionError("point loss: shape mismatch");
    }
    const std::size_t rows = pred.size() / d;
    if (rows == 0) return 0.0;
    const double inv_rows = 1.0 / double(rows);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = pred.data() + r * d;
        const double* g = gt.data() + r * d;
        double* out = grad.data() + r * d;
        double dot = 0.0, pp = 0.0, gg = 0.0, sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += p[k] * g[k];
            pp += p[k] * p[k];
            gg += g[k] * g[k];
            sq += (p[k] - g[k]) * (p[k] - g[k]);
        }
        const double np = std::sqrt(pp), ng = std::sqrt(gg);
        const double denom = np * ng;
        const bool guarded = denom <= metrics::kCosineEps;
        const double cos = dot / (guarded ? metrics::kCosineEps : denom);
        total += lambda_cos * (1.0 - cos) + lambda_l2 * sq / double(d);
        for (std::size_t k = 0; k < d; ++k) {
            const double dcos = guarded ? g[k] / metrics::kCosineEps : g[k] / denom - cos * p[k] / pp;
            out[k] = inv_rows * (-lambda_cos * dcos + lambda_l2 * 2.0 * (p[k] - g[k]) / double(d));
        }
    }
    return total * inv_rows;
}

std::vector<std::size_t> sample_points(std::size_t pixels, std::size_t count, std::mt19937_64& rng) {
    if (pixels == 0) throw DimensionError("cannot sample from an empty map");
    std::vector<std::size_t> out;
    out.reserve(count);
    if (count <= pixels) {
        std::vector<std::size_t> all(pixels);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, pixels - 1);
        for (std::size_t i = 0; i < count; ++i) out.push_back(pick(rng));
    }
    return out;
}

PointLoss point_feature_loss(std::span<const double> pred, std::span<const double> gt, std::size_t d,
                             std::size_t points, std::uint64_t seed, double lambda_cos, double lambda_l2) {
    if (d == 0 || pred.size() != gt.size() || pred.size() % d != 0) throw DimensionError("point loss: shape mismatch");
    if (points < 1) throw std::invalid_argument("point loss needs at least one sample");
    std::mt19937_64 rng(seed);
    PointLoss result;
    result.samples = sample_points(pred.size() / d, points, rng);
    std::vector<double> p_rows(points * d), g_rows(points * d), g_grad(points * d);
    for (std::size_t i = 0; i < points; ++i) {
        const auto px = result.samples[i];
        std::copy_n(pred.begin() + px * d, d, p_rows.begin() + i * d);
        std::copy_n(gt.begin() + px * d, d, g_rows.begin() + i * d);
    }
    result.loss = point_loss_rows(p_rows, g_rows, d, lambda_cos, lambda_l2, g_grad);
    result.grad.assign(pred.size(), 0.0);
    for (std::size_t i = 0; i < points; ++i) {
        const auto px = result.samples[i];
        for (std::size_t k = 0; k < d; ++k) result.grad[px * d + k] += g_grad[i * d + k];
    }
    return result;
}

std::vector<double> render_features(const GaussianScene& scene, const CameraView& camera, const MemoryBank& bank,
                                    const attention::AttentionConfig& config) {
    const auto& slice = scene.slice(bank.model_name);
    const auto out = raster::render_view(scene, camera, raster::RenderRequest::query_only({slice.start, slice.length}));
    return attention::attend(out.query_map, slice.length, bank, config).features;
}

MemoryFit fit_memory(GaussianScene scene, const Dataset& data, std::vector<MemoryBank> banks,
                     std::span<const std::size_t> train_views, std::span<const std::size_t> heldout_views,
                     const TrainConfig& config) {
    config.validate();
    scene.validate();
    check_views(data, train_views);
    check_views(data, heldout_views);
    if (banks.empty()) throw ConfigError("memory fitting needs at least one bank");
    if (train_views.empty() && config.iterations > 0) throw ConfigError("memory fitting needs training views");

    // Every (view, model) pair must be present before any compute.
    for (const auto& bank : banks) {
        const auto it = data.features.find(bank.model_name);
        if (it == data.features.end()) throw ConfigError("no feature maps for model '" + bank.model_name + "'");
        const auto& ft = it->second;
        if (ft.n_views != data.size()) {
            throw ConfigError("feature maps for '" + bank.model_name + "' cover " + std::to_string(ft.n_views) +
                              " views, expected " + std::to_string(data.size()));
        }
        if (ft.d != bank.d) throw DimensionError("feature dimension differs from bank '" + bank.model_name + "'");
        for (const auto& cam : data.cameras) {
            if (ft.h != std::uint32_t(cam.height) || ft.w != std::uint32_t(cam.width)) {
                throw DimensionError("feature maps for '" + bank.model_name + "' do not match camera resolution");
            }
        }
        if (!scene.has_model(bank.model_name)) {
            throw DimensionError("scene has no query slice for '" + bank.model_name + "'");
        }
        if (scene.slice(bank.model_name).length != bank.degree || bank.w_m.size() != std::size_t(bank.degree) * bank.d) {
            throw DimensionError("bank '" + bank.model_name + "' projection does not match its query slice");
        }
        bank.validate();
    }

    MemoryFit fit;
    TrainReport& rep = fit.report;
    const auto start = Clock::now();

    const std::size_t n = scene.size();
    const std::size_t l = scene.query_length();
    auto queries = gather_queries(scene);
    Adam query_opt(n * l, config.lr.query);
    std::vector<Adam> w_opt;
    std::vector<attention::AttentionConfig> att(banks.size(), config.attention);
    std::vector<Adam> scale_opt;
    for (std::size_t b = 0; b < banks.size(); ++b) {
        w_opt.emplace_back(banks[b].w_m.size(), config.lr.w_m);
        scale_opt.emplace_back(1, config.lr.temperature);
        if (config.attention.mode == attention::TemperatureMode::Learned) {
            att[b].learned_scale = 1.0 / std::sqrt(double(banks[b].d));
        }
    }

    std::mt19937_64 rng(config.seed);
    const raster::RenderRequest request = raster::RenderRequest::query_only({0, static_cast<std::uint32_t>(l)});
    double interval_loss = 0.0;
    std::vector<double> interval_model(banks.size(), 0.0);
    std::uint32_t interval_count = 0;

    for (std::uint32_t it = 0; it < config.iterations; ++it) {
        const std::size_t v = train_views[it % train_views.size()];
        const auto& cam = data.cameras[v];
        const std::size_t pixels = cam.pixel_count();
        const auto rendered = raster::render_view(scene, cam, request);
        std::vector<double> grad_qmap(pixels * l, 0.0);

        double step_loss = 0.0;
        std::vector<std::vector<double>> w_grads(banks.size());
        std::vector<double> scale_grads(banks.size(), 0.0);
        for (std::size_t b = 0; b < banks.size(); ++b) {
            const auto& bank = banks[b];
            const auto& slice = scene.slice(bank.model_name);
            const std::size_t s = slice.length, d = bank.d;
            const auto samples = sample_points(pixels, config.points_per_step, rng);
            const std::size_t count = samples.size();

            std::vector<double> q_rows(count * s), gt_rows(count * d);
            const auto gt_view = data.features.at(bank.model_name).view(v);
            for (std::size_t i = 0; i < count; ++i) {
                const auto px = samples[i];
                std::copy_n(rendered.query_map.begin() + px * l + slice.start, s, q_rows.begin() + i * s);
                std::copy_n(gt_view.begin() + px * d, d, gt_rows.begin() + i * d);
            }
            const auto pred = attention::attend(q_rows, s, bank, att[b]);
            std::vector<double> grad_pred(count * d);
            const double loss = point_loss_rows(pred.features, gt_rows, d, config.lambda_cos, config.lambda_l2, grad_pred);
            if (!std::isfinite(loss)) {
                rep.iterations = it;
                throw NumericalError("feature loss for '" + bank.model_name + "' is not finite at iteration " +
                                     std::to_string(it));
            }
            step_loss += loss;
            interval_model[b] += loss;

            auto ag = attention::attend_backward(q_rows, s, bank, att[b], grad_pred);
            for (std::size_t i = 0; i < count; ++i) {
                double* dst = grad_qmap.data() + samples[i] * l + slice.start;
                for (std::size_t a = 0; a < s; ++a) dst[a] += ag.query[i * s + a];
            }
            w_grads[b] = std::move(ag.w_m);
            scale_grads[b] = ag.scale;
        }

        const auto rg = raster::backward_render(scene, cam, request, {}, grad_qmap);
        query_opt.step(queries, rg.query);
        scatter_queries(scene, queries);
        for (std::size_t b = 0; b < banks.size(); ++b) {
            w_opt[b].step(banks[b].w_m, w_grads[b]);
            if (config.attention.mode == attention::TemperatureMode::Learned) {
                std::array<double, 1> sc{att[b].learned_scale};
                scale_opt[b].step(std::span<double>(sc), std::span<const double>(&scale_grads[b], 1));
                att[b].learned_scale = sc[0];
            }
        }

        rep.step_losses.push_back(step_loss);
        interval_loss += step_loss;
        ++interval_count;
        if ((it + 1) % config.log_interval == 0 || it + 1 == config.iterations) {
            std::vector<std::pair<std::string, double>> per_model;
            for (std::size_t b = 0; b < banks.size(); ++b) per_model.emplace_back(banks[b].model_name, interval_model[b]);
            record_interval(rep, "memory", it + 1, interval_loss, std::move(per_model), interval_count);
            interval_loss = 0.0;
            std::fill(interval_model.begin(), interval_model.end(), 0.0);
            interval_count = 0;
        }
    }

    for (std::size_t b = 0; b < banks.size() && !heldout_views.empty(); ++b) {
        HeldOutScore score{banks[b].model_name, 0.0, 0.0};
        for (auto v : heldout_views) {
            const auto pred = render_features(scene, data.cameras[v], banks[b], att[b]);
            const auto gt_view = data.features.at(banks[b].model_name).view(v);
            const std::vector<double> gt(gt_view.begin(), gt_view.end());
            const auto dist = metrics::cosine_l2_maps(pred, gt, banks[b].d);
            score.cosine += dist.cosine;
            score.l2 += dist.l2;
        }
        score.cosine /= double(heldout_views.size());
        score.l2 /= double(heldout_views.size());
        rep.heldout.push_back(score);
    }
    if (config.attention.mode == attention::TemperatureMode::Learned) {
        for (std::size_t b = 0; b < banks.size(); ++b) fit.learned_scales[banks[b].model_name] = att[b].learned_scale;
    }

    rep.iterations = config.iterations;
    rep.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    fit.scene = std::move(scene);
    fit.banks = std::move(banks);
    return fit;
}

} // namespace m3
