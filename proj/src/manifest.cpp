// SPDX-License-Identifier: Apache-2.0
#include "m3/manifest.hpp"

#include "m3/errors.hpp"
#include "m3/feature_tensor.hpp"
#include "m3/image.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace m3 {
namespace {

using Json = nlohmann::json;

Json read_object(const std::filesystem::path& path, const std::set<std::string>& allowed) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest: " + path.string());
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("manifest must be a JSON object: " + path.string());
    for (const auto& [key, _] : doc.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown manifest key '" + key + "' in " + path.string());
    }
    return doc;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path out(p);
    return out.is_relative() ? base / out : out;
}

template <class T>
T get(const Json& doc, const char* key, const std::filesystem::path& path) {
    if (!doc.contains(key)) throw ConfigError("manifest " + path.string() + " lacks '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad manifest value for '") + key + "': " + e.what());
    }
}

} // namespace

EmbeddingList load_embedding_list(const std::filesystem::path& path) {
    const auto ft = load_features(path);
    if (ft.n_views != 1 || ft.h != 1) throw DimensionError("embedding list must have n = 1 and h = 1: " + path.string());
    EmbeddingList out{ft.model_name, ft.w, ft.d, std::vector<double>(ft.data.begin(), ft.data.end())};
    return out;
}

void save_embedding_list(const EmbeddingList& list, const std::filesystem::path& path) {
    if (list.rows.size() != list.m * list.d) throw DimensionError("embedding list is not m x d");
    FeatureTensor ft = make_features(list.model, 1, 1, std::uint32_t(list.m), std::uint32_t(list.d));
    for (std::size_t i = 0; i < list.rows.size(); ++i) ft.data[i] = float(list.rows[i]);
    save_features(ft, path);
}

GroundingManifest load_grounding_manifest(const std::filesystem::path& path) {
    const auto doc = read_object(path, {"model", "view", "embeddings", "masks"});
    const auto base = path.parent_path();
    GroundingManifest g;
    g.model = get<std::string>(doc, "model", path);
    g.view = doc.contains("view") ? get<std::size_t>(doc, "view", path) : 0;
    const auto emb = load_embedding_list(resolve(base, get<std::string>(doc, "embeddings", path)));
    const auto masks = get<std::vector<std::string>>(doc, "masks", path);
    if (masks.size() != emb.m) {
        throw DimensionError("grounding manifest has " + std::to_string(masks.size()) + " masks for " +
                             std::to_string(emb.m) + " embeddings");
    }
    g.set.d = emb.d;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        int w = 0, h = 0;
        metrics::GroundingQuery q;
        q.mask = read_mask(resolve(base, masks[i]), w, h);
        if (i == 0) {
            g.set.width = w;
            g.set.height = h;
        } else if (w != g.set.width || h != g.set.height) {
            throw DimensionError("grounding masks differ in size");
        }
        const auto r = emb.row(i);
        q.embedding.assign(r.begin(), r.end());
        g.set.queries.push_back(std::move(q));
    }
    g.set.validate();
    return g;
}

RetrievalManifest load_retrieval_manifest(const std::filesystem::path& path) {
    const auto doc = read_object(path, {"model", "texts", "views", "pooling", "images"});
    const auto base = path.parent_path();
    RetrievalManifest r;
    r.model = get<std::string>(doc, "model", path);
    r.texts = load_embedding_list(resolve(base, get<std::string>(doc, "texts", path)));
    if (doc.contains("views")) r.views = get<std::vector<std::size_t>>(doc, "views", path);
    if (doc.contains("pooling")) {
        try {
            r.pooling = metrics::parse_pooling(get<std::string>(doc, "pooling", path));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (doc.contains("images")) {
        r.images = load_embedding_list(resolve(base, get<std::string>(doc, "images", path)));
        if (r.images->m != r.texts.m || r.images->d != r.texts.d) {
            throw DimensionError("retrieval image and text lists differ in shape");
        }
    }
    return r;
}

} // namespace m3
