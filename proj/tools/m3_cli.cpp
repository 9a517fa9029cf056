// SPDX-License-Identifier: Apache-2.0
// m3: command-line front end for training, rendering and evaluating
// Gaussian scenes with memory-backed feature queries.
#include "m3/attention.hpp"
#include "m3/camera.hpp"
#include "m3/config.hpp"
#include "m3/errors.hpp"
#include "m3/feature_tensor.hpp"
#include "m3/image.hpp"
#include "m3/image_metrics.hpp"
#include "m3/manifest.hpp"
#include "m3/memory_bank.hpp"
#include "m3/metrics.hpp"
#include "m3/parallel.hpp"
#include "m3/pca.hpp"
#include "m3/rasterizer.hpp"
#include "m3/scene.hpp"
#include "m3/synthetic.hpp"
#include "m3/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;
using namespace m3;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

std::string view_name(std::size_t v, const char* prefix = "view_") {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03zu", prefix, v);
    return buf;
}

RunConfig load_config(const std::string& path) {
    return RunConfig::load(fs::absolute(path));
}

fs::path out_dir(const RunConfig& c) {
    if (!c.out) throw ConfigError("config key 'out' is required");
    return *c.out;
}

std::vector<CameraView> load_camera_list(const RunConfig& c, bool need_images) {
    auto cams = load_cameras(*c.cameras);
    if (cams.empty()) throw ConfigError("camera list is empty");
    for (std::size_t v = 0; v < cams.size(); ++v) {
        if (need_images) {
            if (cams[v].image_path.empty()) throw ConfigError("camera " + std::to_string(v) + " has no image");
            if (!fs::exists(cams[v].image_path)) throw ConfigError("image does not exist: " + cams[v].image_path);
        }
    }
    return cams;
}

void check_holdout(const RunConfig& c, std::size_t views) {
    for (auto h : c.holdout) {
        if (h >= views) throw ConfigError("holdout view " + std::to_string(h) + " out of range");
    }
}

std::vector<std::size_t> training_views(const RunConfig& c, std::size_t views) {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < views; ++v) {
        if (std::find(c.holdout.begin(), c.holdout.end(), v) == c.holdout.end()) out.push_back(v);
    }
    return out;
}

std::vector<Image> load_images(const std::vector<CameraView>& cams) {
    std::vector<Image> images;
    for (const auto& cam : cams) {
        auto img = read_png(cam.image_path);
        if (img.width != cam.width || img.height != cam.height) {
            throw DimensionError("image size differs from its camera: " + cam.image_path);
        }
        images.push_back(std::move(img));
    }
    return images;
}

// Per-model features: the config path when given, otherwise the per-camera
// single-view files stacked in camera order.
std::map<std::string, fs::path> feature_sources(const RunConfig& c, const std::vector<CameraView>& cams) {
    std::map<std::string, fs::path> out(c.features.begin(), c.features.end());
    for (const auto& m : c.models) {
        if (out.count(m)) continue;
        const bool all = std::all_of(cams.begin(), cams.end(), [&](const CameraView& cam) {
            return cam.feature_paths.count(m) > 0;
        });
        if (!all) continue;
        for (const auto& cam : cams) {
            if (!fs::exists(cam.feature_paths.at(m))) throw ConfigError("feature file missing: " + cam.feature_paths.at(m));
        }
        out[m] = fs::path{};
    }
    return out;
}

FeatureTensor load_model_features(const std::string& model, const fs::path& path, const std::vector<CameraView>& cams) {
    FeatureTensor ft;
    if (!path.empty()) {
        ft = load_features(path);
    } else {
        std::vector<FeatureTensor> parts;
        for (const auto& cam : cams) parts.push_back(load_features(cam.feature_paths.at(model)));
        ft = concat_views(parts);
    }
    ft.model_name = model;
    if (ft.n_views != cams.size()) {
        throw DimensionError("features for '" + model + "' hold " + std::to_string(ft.n_views) + " views, cameras " +
                             std::to_string(cams.size()));
    }
    for (const auto& cam : cams) {
        if (ft.h != std::uint32_t(cam.height) || ft.w != std::uint32_t(cam.width)) {
            throw DimensionError("features for '" + model + "' do not match camera resolution");
        }
    }
    return ft;
}

FeatureTensor render_all(const GaussianScene& scene, const std::vector<CameraView>& cams, const MemoryBank& bank,
                         const attention::AttentionConfig& att) {
    for (const auto& cam : cams) {
        if (cam.width != cams[0].width || cam.height != cams[0].height) {
            throw DimensionError("feature rendering needs one resolution across views");
        }
    }
    FeatureTensor ft = make_features(bank.model_name, std::uint32_t(cams.size()), std::uint32_t(cams[0].height),
                                     std::uint32_t(cams[0].width), bank.d);
    for (std::size_t v = 0; v < cams.size(); ++v) {
        const auto map = render_features(scene, cams[v], bank, att);
        std::copy(map.begin(), map.end(), ft.data.begin() + std::ptrdiff_t(v * ft.view_rows() * ft.d));
    }
    return ft;
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string out;
    std::uint64_t seed = 7;
    int size = 32;
    std::uint32_t views = 10;
    std::uint32_t heldout = 2;
    std::uint32_t d = 64;
    std::uint32_t components = 5;
    std::vector<std::string> models{"synthetic"};
    std::uint32_t iters = 2000;
};

void cmd_synth(const SynthArgs& a) {
    SyntheticOptions o;
    o.seed = a.seed;
    o.width = o.height = a.size;
    o.views = a.views;
    o.heldout = a.heldout;
    o.d = a.d;
    o.components = a.components;
    o.models = a.models;
    const auto s = make_synthetic(o);

    const fs::path out = fs::absolute(a.out);
    fs::create_directories(out / "images");
    fs::create_directories(out / "masks");

    auto cams = s.data.cameras;
    for (std::size_t v = 0; v < cams.size(); ++v) {
        const auto rel = fs::path("images") / (view_name(v) + ".png");
        write_png(s.data.images[v], out / rel);
        cams[v].image_path = rel.string();
    }
    save_cameras(cams, out / "cameras.json");
    save_scene(s.initial, out / "scene_init.m3gs");
    save_scene(s.truth, out / "truth.m3gs");

    nlohmann::ordered_json cfg;
    cfg["scene"] = "scene_init.m3gs";
    cfg["cameras"] = "cameras.json";
    for (const auto& m : o.models) {
        save_features(s.data.features.at(m), out / ("features." + m + ".m3ft"));
        const auto& rows = s.components.at(m);
        save_embedding_list({m, o.components, o.d, to_double(rows)}, out / ("components." + m + ".m3ft"));
        cfg["features." + m] = "features." + m + ".m3ft";
    }

    // Grounding on the first held-out view of the first model: one query per
    // label visible there, the label's bank row as embedding.
    const std::string& model = o.models.front();
    const std::size_t gview = s.heldout_views.front();
    const auto labels = render_labels(s.truth, s.labels, o.components, cams[gview]);
    EmbeddingList queries{model, 0, o.d, {}};
    nlohmann::ordered_json grounding;
    grounding["model"] = model;
    grounding["view"] = gview;
    grounding["embeddings"] = "grounding_queries.m3ft";
    std::vector<std::string> mask_files;
    for (std::uint32_t k = 0; k < o.components; ++k) {
        Image mask = Image::zeros(o.width, o.height, 1);
        std::size_t hits = 0;
        for (std::size_t p = 0; p < labels.size(); ++p) {
            if (labels[p] == k) {
                mask.data[p] = 1.0;
                ++hits;
            }
        }
        if (hits == 0) continue;
        const auto rel = fs::path("masks") / ("label_" + std::to_string(k) + ".png");
        write_png(mask, out / rel);
        mask_files.push_back(rel.string());
        const auto& rows = s.components.at(model);
        queries.rows.insert(queries.rows.end(), rows.begin() + std::ptrdiff_t(k * o.d),
                            rows.begin() + std::ptrdiff_t((k + 1) * o.d));
        ++queries.m;
    }
    save_embedding_list(queries, out / "grounding_queries.m3ft");
    grounding["masks"] = mask_files;
    std::ofstream(out / "grounding.json") << grounding.dump(2) << '\n';

    // Retrieval: each view's mean-pooled ground-truth map is the text side.
    const auto& ft = s.data.features.at(model);
    EmbeddingList texts{model, ft.n_views, ft.d, {}};
    for (std::size_t v = 0; v < ft.n_views; ++v) {
        const auto pooled = metrics::pool_feature_map(to_double(ft.view(v)), int(ft.w), int(ft.h), ft.d,
                                                      metrics::Pooling::Mean);
        texts.rows.insert(texts.rows.end(), pooled.begin(), pooled.end());
    }
    save_embedding_list(texts, out / "retrieval_texts.m3ft");
    nlohmann::ordered_json retrieval;
    retrieval["model"] = model;
    retrieval["texts"] = "retrieval_texts.m3ft";
    retrieval["pooling"] = "mean";
    std::ofstream(out / "retrieval.json") << retrieval.dump(2) << '\n';

    cfg["holdout"] = s.heldout_views;
    cfg["degrees"] = 8;
    cfg["iters"] = a.iters;
    cfg["iters_rgb"] = a.iters;
    cfg["seed"] = a.seed;
    cfg["grounding"] = "grounding.json";
    cfg["retrieval"] = "retrieval.json";
    cfg["out"] = "run";
    std::ofstream(out / "train.json") << cfg.dump(2) << '\n';

    std::cout << "wrote " << o.views << " views (" << s.heldout_views.size() << " held out), "
              << s.truth.size() << " primitives, t=" << o.components << " per model to " << out.string() << '\n';
}

// ---------------------------------------------------------------- reduce

void cmd_reduce(const std::string& config_path) {
    const auto c = load_config(config_path);
    c.require({"features"});
    const fs::path out = c.out ? *c.out : fs::path(".");
    std::vector<FeatureTensor> raw;
    for (const auto& m : c.models) {
        if (c.features.count(m)) {
            raw.push_back(load_features(c.features.at(m)));
            raw.back().model_name = m;
        }
    }
    fs::create_directories(out);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& ft = raw[i];
        auto bank = reduce_similarity(ft, c.train.theta, c.train.chunk);
        init_projection(bank, c.degree_for(ft.model_name), c.train.seed + i);
        const fs::path dst = c.banks.count(ft.model_name) ? c.banks.at(ft.model_name)
                                                          : out / ("bank." + ft.model_name + ".m3pb");
        save_bank(bank, dst);
        const double ratio = double(ft.rows()) / double(bank.size());
        std::cout << ft.model_name << ": t=" << bank.size() << " ratio=" << ratio << " -> " << dst.string() << '\n';
    }
}

// ---------------------------------------------------------------- fit-rgb / train

void cmd_fit_rgb(const std::string& config_path) {
    const auto c = load_config(config_path);
    c.require({"scene", "cameras", "out"});
    const auto cams = load_camera_list(c, true);
    check_holdout(c, cams.size());
    auto scene = load_scene(*c.scene);
    Dataset data{cams, load_images(cams), {}};
    const auto train = training_views(c, cams.size());

    TrainReport report;
    scene = fit_appearance(std::move(scene), data, train, c.holdout, c.train, &report);
    const auto out = out_dir(c);
    fs::create_directories(out);
    save_scene(scene, out / "scene.m3gs");
    report.write_jsonl(out / "report_rgb.jsonl");
    if (!c.holdout.empty()) std::cout << "held-out PSNR " << report.heldout_psnr << " dB\n";
}

void cmd_train(const std::string& config_path) {
    const auto c = load_config(config_path);
    c.require({"scene", "cameras", "out"});
    const auto cfg = c.train_config();
    const auto cams = load_camera_list(c, cfg.appearance_iterations > 0);
    check_holdout(c, cams.size());
    const auto sources = feature_sources(c, cams);
    for (const auto& m : c.models) {
        if (!sources.count(m)) throw ConfigError("no feature maps for model '" + m + "'");
    }
    if (c.models.empty()) throw ConfigError("config needs at least one features.<model> entry");
    for (const auto& [m, p] : c.banks) {
        if (!fs::exists(p)) throw ConfigError("bank." + m + " does not exist: " + p.string());
    }
    if (cfg.attention.mode == attention::TemperatureMode::Learned) {
        for (const auto& m : c.models) {
            if (c.temperature_scales.count(m)) {
                throw ConfigError("temperature_scale." + m + " is an output of training, not an input");
            }
        }
    }

    auto scene = load_scene(*c.scene);
    Dataset data;
    data.cameras = cams;
    if (cfg.appearance_iterations > 0) data.images = load_images(cams);
    for (const auto& m : c.models) data.features.emplace(m, load_model_features(m, sources.at(m), cams));
    const auto train = training_views(c, cams.size());

    TrainReport rgb_report;
    if (cfg.appearance_iterations > 0) {
        scene = fit_appearance(std::move(scene), data, train, c.holdout, cfg, &rgb_report);
    }

    const auto slices = make_slices(cfg.degrees);
    bool same_layout = scene.model_slices.size() == slices.size();
    for (std::size_t i = 0; same_layout && i < slices.size(); ++i) {
        same_layout = scene.model_slices[i].model == slices[i].model && scene.model_slices[i].length == slices[i].length;
    }
    if (!same_layout) reset_queries(scene, slices);

    std::vector<MemoryBank> banks;
    for (std::size_t i = 0; i < c.models.size(); ++i) {
        const auto& m = c.models[i];
        const auto degree = c.degree_for(m);
        MemoryBank bank;
        if (c.banks.count(m)) {
            bank = load_bank(c.banks.at(m));
            bank.model_name = m;
        } else {
            bank = reduce_similarity(data.features.at(m), cfg.theta, cfg.chunk);
        }
        if (bank.degree != degree) init_projection(bank, degree, cfg.seed + i);
        std::cout << m << ": t=" << bank.size() << " s=" << bank.degree << '\n';
        banks.push_back(std::move(bank));
    }

    auto fit = fit_memory(std::move(scene), data, std::move(banks), train, c.holdout, cfg);

    const auto out = out_dir(c);
    fs::create_directories(out);
    save_scene(fit.scene, out / "scene.m3gs");
    RunConfig next;
    next.scene = out / "scene.m3gs";
    next.cameras = c.cameras;
    next.out = out / "render";
    next.grounding = c.grounding;
    next.retrieval = c.retrieval;
    next.models = c.models;
    next.holdout = c.holdout;
    next.train = c.train;
    next.default_degree = c.default_degree;
    next.degrees = c.degrees;
    for (const auto& bank : fit.banks) {
        const auto path = out / ("bank." + bank.model_name + ".m3pb");
        save_bank(bank, path);
        next.banks[bank.model_name] = path;
        next.preds[bank.model_name] = out / "render" / ("pred." + bank.model_name + ".m3ft");
        if (c.features.count(bank.model_name)) next.features[bank.model_name] = c.features.at(bank.model_name);
    }
    next.temperature_scales = fit.learned_scales;
    next.save(out / "render.json");

    TrainReport combined = fit.report;
    combined.records.insert(combined.records.begin(), rgb_report.records.begin(), rgb_report.records.end());
    combined.heldout_psnr = rgb_report.heldout_psnr;
    combined.wall_clock_seconds += rgb_report.wall_clock_seconds;
    combined.write_jsonl(out / "report.jsonl");

    if (rgb_report.heldout_psnr > 0.0) std::cout << "held-out PSNR " << rgb_report.heldout_psnr << " dB\n";
    for (const auto& h : fit.report.heldout) {
        std::cout << h.model << ": held-out cosine " << h.cosine << " l2 " << h.l2 << '\n';
    }
    std::cout << "next: m3 render " << (out / "render.json").string() << '\n';
}

// ---------------------------------------------------------------- render

void cmd_render(const std::string& config_path, bool pca) {
    const auto c = load_config(config_path);
    c.require({"scene", "cameras", "out"});
    for (const auto& [m, p] : c.banks) {
        if (!fs::exists(p)) throw ConfigError("bank." + m + " does not exist: " + p.string());
    }
    std::vector<attention::AttentionConfig> att;
    for (const auto& m : c.models) {
        if (c.banks.count(m)) att.push_back(c.attention_for(m));
    }
    const auto cams = load_camera_list(c, false);
    const auto scene = load_scene(*c.scene);
    scene.validate();
    std::vector<MemoryBank> banks;
    for (const auto& m : c.models) {
        if (!c.banks.count(m)) continue;
        auto bank = load_bank(c.banks.at(m));
        if (bank.model_name != m) throw DimensionError("bank file for '" + m + "' holds '" + bank.model_name + "'");
        if (!scene.has_model(m) || scene.slice(m).length != bank.degree) {
            throw DimensionError("scene query slice does not match bank '" + m + "'");
        }
        banks.push_back(std::move(bank));
    }

    const auto out = out_dir(c);
    fs::create_directories(out);
    for (std::size_t v = 0; v < cams.size(); ++v) {
        const auto r = raster::render_view(scene, cams[v], raster::RenderRequest::rgb_only());
        write_png(to_image(r.rgb, cams[v].width, cams[v].height), out / (view_name(v) + ".png"));
    }
    for (std::size_t b = 0; b < banks.size(); ++b) {
        const auto& m = banks[b].model_name;
        const auto ft = render_all(scene, cams, banks[b], att[b]);
        const fs::path dst = c.preds.count(m) ? c.preds.at(m) : out / ("pred." + m + ".m3ft");
        fs::create_directories(dst.parent_path());
        save_features(ft, dst);
        if (pca && ft.d >= 3) {
            for (std::size_t v = 0; v < ft.n_views; ++v) {
                write_png(pca_visualize(to_double(ft.view(v)), int(ft.w), int(ft.h), ft.d),
                          out / ("pca." + m + "." + view_name(v) + ".png"));
            }
        }
    }
    std::cout << "rendered " << cams.size() << " views, " << banks.size() << " feature maps to " << out.string() << '\n';
}

// ---------------------------------------------------------------- eval

void cmd_eval(const std::string& config_path) {
    const auto c = load_config(config_path);
    c.require({"pred"});
    for (const auto& [m, p] : c.features) {
        if (!fs::exists(p)) throw ConfigError("features." + m + " does not exist: " + p.string());
    }
    if (c.grounding) c.require({"grounding"});
    if (c.retrieval) c.require({"retrieval"});
    if (c.scene) c.require({"scene", "cameras"});

    std::map<std::string, FeatureTensor> preds;
    for (const auto& [m, p] : c.preds) preds.emplace(m, load_features(p));
    std::vector<nlohmann::ordered_json> records;

    std::cout << "model\tcosine\tl2\n";
    for (const auto& [m, pred] : preds) {
        if (!c.features.count(m)) continue;
        const auto gt = load_features(c.features.at(m));
        if (gt.n_views != pred.n_views || gt.h != pred.h || gt.w != pred.w || gt.d != pred.d) {
            throw DimensionError("prediction and ground truth differ in shape for '" + m + "'");
        }
        // Held-out views only when the config names some.
        std::vector<std::size_t> views = c.holdout;
        if (views.empty()) {
            views.resize(gt.n_views);
            std::iota(views.begin(), views.end(), std::size_t{0});
        }
        metrics::FeatureDistances sum;
        for (auto v : views) {
            if (v >= gt.n_views) throw ConfigError("holdout view out of range");
            const auto d = metrics::cosine_l2_maps(to_double(pred.view(v)), to_double(gt.view(v)), gt.d);
            sum.cosine += d.cosine;
            sum.l2 += d.l2;
        }
        sum.cosine /= double(views.size());
        sum.l2 /= double(views.size());
        std::printf("%s\t%.6f\t%.6f\n", m.c_str(), sum.cosine, sum.l2);
        nlohmann::ordered_json r;
        r["metric"] = "features";
        r["model"] = m;
        r["views"] = views.size();
        r["cosine"] = sum.cosine;
        r["l2"] = sum.l2;
        records.push_back(r);
    }

    if (c.scene) {
        const auto cams = load_camera_list(c, true);
        const auto scene = load_scene(*c.scene);
        std::vector<std::size_t> views = c.holdout;
        if (views.empty()) {
            views.resize(cams.size());
            std::iota(views.begin(), views.end(), std::size_t{0});
        }
        double psnr = 0.0, ssim = 0.0;
        for (auto v : views) {
            if (v >= cams.size()) throw ConfigError("holdout view out of range");
            const auto gt = read_png(cams[v].image_path);
            const auto r = raster::render_view(scene, cams[v], raster::RenderRequest::rgb_only());
            const auto img = to_image(r.rgb, cams[v].width, cams[v].height);
            psnr += metrics::psnr(img, gt);
            ssim += metrics::ssim(img, gt);
        }
        psnr /= double(views.size());
        ssim /= double(views.size());
        std::printf("rgb\tpsnr\tssim\n-\t%.4f\t%.6f\n", psnr, ssim);
        nlohmann::ordered_json r;
        r["metric"] = "rgb";
        r["views"] = views.size();
        r["psnr"] = psnr;
        r["ssim"] = ssim;
        records.push_back(r);
    }

    if (c.grounding) {
        const auto g = load_grounding_manifest(*c.grounding);
        if (!preds.count(g.model)) throw ConfigError("grounding model '" + g.model + "' has no pred." + g.model);
        const auto& pred = preds.at(g.model);
        if (g.view >= pred.n_views || int(pred.w) != g.set.width || int(pred.h) != g.set.height || pred.d != g.set.d) {
            throw DimensionError("grounding set does not match the rendered features");
        }
        const auto s = metrics::grounding_scores(to_double(pred.view(g.view)), g.set);
        std::printf("grounding\tmIoU\tcIoU\tAP50\tAP60\n%s\t%.6f\t%.6f\t%.6f\t%.6f\n", g.model.c_str(), s.miou, s.ciou,
                    s.ap[0], s.ap[1]);
        nlohmann::ordered_json r;
        r["metric"] = "grounding";
        r["model"] = g.model;
        r["miou"] = s.miou;
        r["ciou"] = s.ciou;
        r["ap50"] = s.ap[0];
        r["ap60"] = s.ap[1];
        records.push_back(r);
    }

    if (c.retrieval) {
        const auto rm = load_retrieval_manifest(*c.retrieval);
        metrics::RetrievalSet set;
        set.m = rm.texts.m;
        set.d = rm.texts.d;
        set.texts = rm.texts.rows;
        if (rm.images) {
            set.images = rm.images->rows;
        } else {
            if (!preds.count(rm.model)) throw ConfigError("retrieval model '" + rm.model + "' has no pred." + rm.model);
            const auto& pred = preds.at(rm.model);
            std::vector<std::size_t> views = rm.views;
            if (views.empty()) {
                views.resize(pred.n_views);
                std::iota(views.begin(), views.end(), std::size_t{0});
            }
            if (views.size() != set.m || pred.d != set.d) throw DimensionError("retrieval texts do not match the views");
            for (auto v : views) {
                if (v >= pred.n_views) throw ConfigError("retrieval view out of range");
                const auto pooled = metrics::pool_feature_map(to_double(pred.view(v)), int(pred.w), int(pred.h), pred.d,
                                                              rm.pooling);
                set.images.insert(set.images.end(), pooled.begin(), pooled.end());
            }
        }
        std::vector<int> ks;
        for (int k : {1, 5, 10}) {
            if (std::size_t(k) <= set.m) ks.push_back(k);
        }
        const auto s = metrics::retrieval_at_k(set, ks);
        nlohmann::ordered_json r;
        r["metric"] = "retrieval";
        r["model"] = rm.model;
        std::printf("retrieval");
        for (int k : ks) std::printf("\tI2T@%d", k);
        for (int k : ks) std::printf("\tT2I@%d", k);
        std::printf("\n%s", rm.model.c_str());
        for (std::size_t i = 0; i < ks.size(); ++i) {
            std::printf("\t%.2f", s.i2t[i]);
            r["i2t@" + std::to_string(ks[i])] = s.i2t[i];
        }
        for (std::size_t i = 0; i < ks.size(); ++i) {
            std::printf("\t%.2f", s.t2i[i]);
            r["t2i@" + std::to_string(ks[i])] = s.t2i[i];
        }
        std::printf("\n");
        records.push_back(r);
    }

    if (c.out) {
        fs::create_directories(*c.out);
        std::ofstream f(*c.out / "metrics.jsonl");
        for (const auto& r : records) f << r.dump() << '\n';
    }
}

// ---------------------------------------------------------------- query / trace

struct QueryArgs {
    std::string config;
    std::string embedding;
    std::size_t row = 0;
    std::string model;
    std::size_t view = 0;
    std::string out = "heatmap.png";
};

std::string pick_model(const RunConfig& c, const std::string& requested) {
    if (!requested.empty()) return requested;
    if (c.models.size() + c.preds.size() == 0) throw ConfigError("config names no model");
    return c.models.empty() ? c.preds.begin()->first : c.models.front();
}

void cmd_query(const QueryArgs& a) {
    const auto c = load_config(a.config);
    if (!fs::exists(a.embedding)) throw ConfigError("embedding file does not exist: " + a.embedding);
    const auto model = pick_model(c, a.model);
    const bool from_pred = c.preds.count(model) > 0;
    if (from_pred) {
        if (!fs::exists(c.preds.at(model))) throw ConfigError("pred." + model + " does not exist");
    } else {
        c.require({"scene", "cameras"});
        if (!c.banks.count(model)) throw ConfigError("query needs pred." + model + " or bank." + model);
        if (!fs::exists(c.banks.at(model))) throw ConfigError("bank." + model + " does not exist");
    }
    std::optional<std::vector<CameraView>> cams;
    if (c.cameras) {
        c.require({"cameras"});
        cams = load_cameras(*c.cameras);
    }

    const auto emb = load_embedding_list(a.embedding);
    if (a.row >= emb.m) throw ConfigError("embedding row out of range");
    std::vector<double> features;
    int width = 0, height = 0;
    std::size_t d = 0;
    if (from_pred) {
        const auto ft = load_features(c.preds.at(model));
        if (a.view >= ft.n_views) throw ConfigError("view out of range");
        features = to_double(ft.view(a.view));
        width = int(ft.w);
        height = int(ft.h);
        d = ft.d;
    } else {
        if (a.view >= cams->size()) throw ConfigError("view out of range");
        const auto scene = load_scene(*c.scene);
        const auto bank = load_bank(c.banks.at(model));
        features = render_features(scene, (*cams)[a.view], bank, c.attention_for(model));
        width = (*cams)[a.view].width;
        height = (*cams)[a.view].height;
        d = bank.d;
    }
    if (emb.d != d) throw DimensionError("embedding dimension differs from the feature maps");

    const std::size_t pixels = std::size_t(width) * height;
    std::vector<double> sim(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        sim[p] = metrics::cosine({features.data() + p * d, d}, emb.row(a.row));
    }
    const auto best = std::size_t(std::max_element(sim.begin(), sim.end()) - sim.begin());
    const auto [lo, hi] = std::minmax_element(sim.begin(), sim.end());
    const double range = *hi - *lo;

    Image base = Image::zeros(width, height, 3);
    std::fill(base.data.begin(), base.data.end(), 0.5);
    if (cams && a.view < cams->size() && !(*cams)[a.view].image_path.empty() &&
        fs::exists((*cams)[a.view].image_path)) {
        auto img = read_png((*cams)[a.view].image_path);
        if (img.width == width && img.height == height) base = std::move(img);
    }
    Image heat = base;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double s = range > 0.0 ? (sim[p] - *lo) / range : 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            const double overlay = ch == 0 ? 1.0 : 0.0;
            heat.data[p * 3 + ch] = (1.0 - 0.7 * s) * base.data[p * 3 + ch] + 0.7 * s * overlay;
        }
    }
    write_png(heat, a.out);
    std::printf("argmax x=%zu y=%zu similarity=%.6f\n", best % std::size_t(width), best / std::size_t(width), sim[best]);
}

struct TraceArgs {
    std::string config;
    std::string model;
    std::size_t view = 0;
    int x = 0, y = 0;
    std::size_t k = 3;
};

void cmd_trace(const TraceArgs& a) {
    const auto c = load_config(a.config);
    c.require({"scene", "cameras"});
    const auto model = pick_model(c, a.model);
    if (!c.banks.count(model)) throw ConfigError("trace needs bank." + model);
    if (!fs::exists(c.banks.at(model))) throw ConfigError("bank." + model + " does not exist");
    const auto att = c.attention_for(model);
    const auto cams = load_cameras(*c.cameras);
    if (a.view >= cams.size()) throw ConfigError("view out of range");
    const auto& cam = cams[a.view];
    if (a.x < 0 || a.y < 0 || a.x >= cam.width || a.y >= cam.height) throw ConfigError("pixel outside the view");

    const auto scene = load_scene(*c.scene);
    const auto bank = load_bank(c.banks.at(model));
    const auto& slice = scene.slice(model);
    const auto r = raster::render_view(scene, cam, raster::RenderRequest::query_only({slice.start, slice.length}));
    const std::size_t p = std::size_t(a.y) * cam.width + std::size_t(a.x);
    const std::span<const double> q(r.query_map.data() + p * slice.length, slice.length);
    const auto top = attention::trace_top_k(q, bank, att, a.k);
    const std::size_t hw = cam.pixel_count();
    std::printf("rank\tcomponent\tweight\tsource_view\tsource_x\tsource_y\n");
    for (std::size_t i = 0; i < top.size(); ++i) {
        const std::size_t row = top[i].source_row;
        std::printf("%zu\t%u\t%.6f\t%zu\t%zu\t%zu\n", i + 1, top[i].psc_index, top[i].weight, row / hw,
                    (row % hw) % std::size_t(cam.width), (row % hw) / std::size_t(cam.width));
    }
}

// ---------------------------------------------------------------- pca

void cmd_pca(const std::string& features, const std::string& out, std::optional<std::size_t> view) {
    if (!fs::exists(features)) throw ConfigError("feature file does not exist: " + features);
    const auto ft = load_features(features);
    if (view && *view >= ft.n_views) throw ConfigError("view out of range");
    fs::create_directories(out);
    for (std::size_t v = 0; v < ft.n_views; ++v) {
        if (view && v != *view) continue;
        write_png(pca_visualize(to_double(ft.view(v)), int(ft.w), int(ft.h), ft.d),
                  fs::path(out) / ("pca_" + view_name(v, "") + ".png"));
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"m3: Gaussian scenes with memory-backed foundation-model features"};
    app.require_subcommand(1);
    std::function<void()> run;

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a synthetic scene, views, features and ready-to-run configs");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--size", synth.size, "Image width and height")->check(CLI::PositiveNumber);
    s->add_option("--views", synth.views, "Number of views");
    s->add_option("--heldout", synth.heldout, "Held-out views");
    s->add_option("--dim", synth.d, "Feature dimension")->check(CLI::PositiveNumber);
    s->add_option("--components", synth.components, "Distinct feature rows per model")->check(CLI::PositiveNumber);
    s->add_option("--models", synth.models, "Model names")->delimiter(',');
    s->add_option("--iters", synth.iters, "Iterations written into train.json (both phases)");
    s->callback([&] { run = [&] { cmd_synth(synth); }; });

    std::string config;
    auto* r = app.add_subcommand("reduce", "Build memory banks from raw features");
    r->add_option("config", config, "Run config (JSON)")->required();
    r->callback([&] { run = [&] { cmd_reduce(config); }; });

    auto* f = app.add_subcommand("fit-rgb", "Fit colors and opacities to the views");
    f->add_option("config", config, "Run config (JSON)")->required();
    f->callback([&] { run = [&] { cmd_fit_rgb(config); }; });

    auto* t = app.add_subcommand("train", "Fit appearance, then queries and projections");
    t->add_option("config", config, "Run config (JSON)")->required();
    t->callback([&] { run = [&] { cmd_train(config); }; });

    bool pca = false;
    auto* rd = app.add_subcommand("render", "Render RGB views and per-model feature maps");
    rd->add_option("config", config, "Run config (JSON)")->required();
    rd->add_flag("--pca", pca, "Also write PCA visualizations of the feature maps");
    rd->callback([&] { run = [&] { cmd_render(config, pca); }; });

    auto* e = app.add_subcommand("eval", "Feature distances, image quality, grounding and retrieval");
    e->add_option("config", config, "Run config (JSON)")->required();
    e->callback([&] { run = [&] { cmd_eval(config); }; });

    QueryArgs query;
    auto* q = app.add_subcommand("query", "Similarity heatmap of one embedding over a view");
    q->add_option("config", query.config, "Run config (JSON)")->required();
    q->add_option("--embedding", query.embedding, "Embedding list (M3FT, n=1, h=1)")->required();
    q->add_option("--row", query.row, "Row of the embedding list");
    q->add_option("--model", query.model, "Model name (default: first in config)");
    q->add_option("--view", query.view, "View index");
    q->add_option("--out", query.out, "Heatmap PNG");
    q->callback([&] { run = [&] { cmd_query(query); }; });

    TraceArgs trace;
    auto* tr = app.add_subcommand("trace", "Top memory components behind one rendered pixel");
    tr->add_option("config", trace.config, "Run config (JSON)")->required();
    tr->add_option("--model", trace.model, "Model name (default: first in config)");
    tr->add_option("--view", trace.view, "View index");
    tr->add_option("--x", trace.x, "Pixel column")->required();
    tr->add_option("--y", trace.y, "Pixel row")->required();
    tr->add_option("-k", trace.k, "Number of components");
    tr->callback([&] { run = [&] { cmd_trace(trace); }; });

    std::string pca_in, pca_out = ".";
    std::optional<std::size_t> pca_view;
    auto* p = app.add_subcommand("pca", "PCA false-color images of a feature file");
    p->add_option("features", pca_in, "M3FT feature file")->required();
    p->add_option("--out", pca_out, "Output directory");
    p->add_option("--view", pca_view, "Only this view");
    p->callback([&] { run = [&] { cmd_pca(pca_in, pca_out, pca_view); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kConfig;
    }

    try {
        parallel::configure_from_env();
        run();
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kConfig;
    } catch (const std::invalid_argument& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kConfig;
    } catch (const NumericalError& err) {
        std::cerr << "numerical error: " << err.what() << '\n';
        return kNumerical;
    } catch (const FormatError& err) {
        std::cerr << "format error: " << err.what() << '\n';
        return kData;
    } catch (const DimensionError& err) {
        std::cerr << "dimension error: " << err.what() << '\n';
        return kData;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kData;
    }
    return kOk;
}
