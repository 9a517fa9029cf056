// SPDX-License-Identifier: Apache-2.0
#include "m3/config.hpp"

#include "m3/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace m3 {
namespace {

using Json = nlohmann::ordered_json;

void add_model(std::vector<std::string>& models, const std::string& m) {
    if (std::find(models.begin(), models.end(), m) == models.end()) models.push_back(m);
}

} // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.parent_path());
}

RunConfig RunConfig::parse(const std::string& text, const std::filesystem::path& base) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");

    auto resolve = [&](const Json& v) {
        std::filesystem::path p(v.get<std::string>());
        return p.is_relative() ? base / p : p;
    };
    auto suffix = [](const std::string& key, std::string_view prefix) -> std::optional<std::string> {
        if (key.size() > prefix.size() && key.compare(0, prefix.size(), prefix) == 0) return key.substr(prefix.size());
        return std::nullopt;
    };

    RunConfig c;
    auto& t = c.train;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "scene") c.scene = resolve(value);
            else if (key == "cameras") c.cameras = resolve(value);
            else if (key == "out") c.out = resolve(value);
            else if (key == "grounding") c.grounding = resolve(value);
            else if (key == "retrieval") c.retrieval = resolve(value);
            else if (key == "theta") t.theta = value.get<float>();
            else if (key == "chunk") t.chunk = value.get<std::size_t>();
            else if (key == "degrees") c.default_degree = value.get<std::uint32_t>();
            else if (key == "iters") t.iterations = value.get<std::uint32_t>();
            else if (key == "iters_rgb") t.appearance_iterations = value.get<std::uint32_t>();
            else if (key == "points") t.points_per_step = value.get<std::uint32_t>();
            else if (key == "seed") t.seed = value.get<std::uint64_t>();
            else if (key == "holdout") c.holdout = value.get<std::vector<std::size_t>>();
            else if (key == "temperature") t.attention.mode = attention::parse_temperature(value.get<std::string>());
            else if (key == "lambda_cos") t.lambda_cos = value.get<double>();
            else if (key == "lambda_l2") t.lambda_l2 = value.get<double>();
            else if (key == "lr.query") t.lr.query = value.get<double>();
            else if (key == "lr.w_m") t.lr.w_m = value.get<double>();
            else if (key == "lr.color") t.lr.color = value.get<double>();
            else if (key == "lr.opacity") t.lr.opacity = value.get<double>();
            else if (key == "lr.temperature") t.lr.temperature = value.get<double>();
            else if (key == "log_interval") t.log_interval = value.get<std::uint32_t>();
            else if (auto m = suffix(key, "features.")) {
                c.features[*m] = resolve(value);
                add_model(c.models, *m);
            } else if (auto m = suffix(key, "bank.")) {
                c.banks[*m] = resolve(value);
                add_model(c.models, *m);
            } else if (auto m = suffix(key, "pred.")) {
                c.preds[*m] = resolve(value);
            } else if (auto m = suffix(key, "degrees.")) {
                c.degrees[*m] = value.get<std::uint32_t>();
            } else if (auto m = suffix(key, "temperature_scale.")) {
                c.temperature_scales[*m] = value.get<double>();
            } else {
                throw ConfigError("unknown config key '" + key + "'");
            }
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    for (const auto& [m, _] : c.degrees) {
        if (std::find(c.models.begin(), c.models.end(), m) == c.models.end()) {
            throw ConfigError("degrees." + m + " names a model without features or bank");
        }
    }
    c.train_config().validate();
    return c;
}

void RunConfig::save(const std::filesystem::path& path) const {
    Json doc;
    auto put = [&](const char* key, const std::optional<std::filesystem::path>& p) {
        if (p) doc[key] = p->string();
    };
    put("scene", scene);
    put("cameras", cameras);
    put("out", out);
    put("grounding", grounding);
    put("retrieval", retrieval);
    for (const auto& m : models) {
        if (auto it = features.find(m); it != features.end()) doc["features." + m] = it->second.string();
        if (auto it = banks.find(m); it != banks.end()) doc["bank." + m] = it->second.string();
    }
    for (const auto& [m, p] : preds) doc["pred." + m] = p.string();
    doc["theta"] = train.theta;
    doc["chunk"] = train.chunk;
    doc["degrees"] = default_degree;
    for (const auto& [m, s] : degrees) doc["degrees." + m] = s;
    doc["iters"] = train.iterations;
    doc["iters_rgb"] = train.appearance_iterations;
    doc["points"] = train.points_per_step;
    doc["seed"] = train.seed;
    if (!holdout.empty()) doc["holdout"] = holdout;
    doc["temperature"] = attention::to_string(train.attention.mode);
    for (const auto& [m, v] : temperature_scales) doc["temperature_scale." + m] = v;
    doc["lambda_cos"] = train.lambda_cos;
    doc["lambda_l2"] = train.lambda_l2;
    doc["lr.query"] = train.lr.query;
    doc["lr.w_m"] = train.lr.w_m;
    doc["lr.color"] = train.lr.color;
    doc["lr.opacity"] = train.lr.opacity;
    doc["lr.temperature"] = train.lr.temperature;
    doc["log_interval"] = train.log_interval;
    std::ofstream out_file(path);
    if (!out_file) throw FormatError("cannot write config: " + path.string());
    out_file << doc.dump(2) << '\n';
}

std::uint32_t RunConfig::degree_for(const std::string& model) const {
    const auto it = degrees.find(model);
    return it == degrees.end() ? default_degree : it->second;
}

attention::AttentionConfig RunConfig::attention_for(const std::string& model) const {
    auto cfg = train.attention;
    if (cfg.mode == attention::TemperatureMode::Learned) {
        const auto it = temperature_scales.find(model);
        if (it == temperature_scales.end()) {
            throw ConfigError("temperature 'learned' needs temperature_scale." + model);
        }
        cfg.learned_scale = it->second;
    }
    return cfg;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t = train;
    t.degrees.clear();
    for (const auto& m : models) t.degrees.emplace_back(m, degree_for(m));
    return t;
}

void RunConfig::require(std::initializer_list<std::string_view> keys) const {
    auto need_path = [](const std::string& key, const std::optional<std::filesystem::path>& p) {
        if (!p) throw ConfigError("config key '" + key + "' is required");
        if (!std::filesystem::exists(*p)) throw ConfigError("'" + key + "' does not exist: " + p->string());
    };
    for (auto key : keys) {
        const std::string k(key);
        if (k == "scene") need_path(k, scene);
        else if (k == "cameras") need_path(k, cameras);
        else if (k == "grounding") need_path(k, grounding);
        else if (k == "retrieval") need_path(k, retrieval);
        else if (k == "out") {
            if (!out) throw ConfigError("config key 'out' is required");
        } else if (k == "features" || k == "bank" || k == "pred") {
            const auto& table = k == "features" ? features : k == "bank" ? banks : preds;
            if (table.empty()) throw ConfigError("config needs at least one " + k + ".<model> entry");
            for (const auto& [m, p] : table) {
                if (!std::filesystem::exists(p)) throw ConfigError(k + "." + m + " does not exist: " + p.string());
            }
        } else {
            throw ConfigError("internal: unknown required key '" + k + "'");
        }
    }
}

} // namespace m3
