// SPDX-License-Identifier: Apache-2.0
#include "m3/camera.hpp"

#include "m3/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace m3 {

void CameraView::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera dimensions must be positive");
    const auto& m = world_to_camera;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += m[r * 4 + k] * m[c * 4 + k];
            if (std::abs(dot - (r == c ? 1.0 : 0.0)) > 1e-5) {
                throw ConfigError("camera rotation block is not orthonormal");
            }
        }
    }
}

std::array<double, 16> look_at(const std::array<double, 3>& eye, const std::array<double, 3>& target,
                               const std::array<double, 3>& up) {
    auto sub = [](auto a, auto b) { return std::array<double, 3>{a[0] - b[0], a[1] - b[1], a[2] - b[2]}; };
    auto cross = [](auto a, auto b) {
        return std::array<double, 3>{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                                     a[0] * b[1] - a[1] * b[0]};
    };
    auto norm = [](std::array<double, 3> a) {
        const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        return std::array<double, 3>{a[0] / n, a[1] / n, a[2] / n};
    };
    const auto z = norm(sub(target, eye));
    const auto x = norm(cross(z, up));
    const auto y = cross(z, x);
    std::array<double, 16> m{};
    const std::array<std::array<double, 3>, 3> rows{x, y, z};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m[r * 4 + c] = rows[r][c];
        m[r * 4 + 3] = -(rows[r][0] * eye[0] + rows[r][1] * eye[1] + rows[r][2] * eye[2]);
    }
    m[15] = 1.0;
    return m;
}

std::vector<CameraView> load_cameras(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open camera list: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (!doc.is_array() || doc.empty()) throw ConfigError(path.string() + ": expected a non-empty array");

    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return (fp.is_relative() ? base / fp : fp).string();
    };

    std::vector<CameraView> cameras;
    for (const auto& item : doc) {
        CameraView cam;
        try {
            for (const auto& [key, value] : item.items()) {
                if (key == "fx") cam.fx = value.get<double>();
                else if (key == "fy") cam.fy = value.get<double>();
                else if (key == "cx") cam.cx = value.get<double>();
                else if (key == "cy") cam.cy = value.get<double>();
                else if (key == "width") cam.width = value.get<int>();
                else if (key == "height") cam.height = value.get<int>();
                else if (key == "image") cam.image_path = resolve(value.get<std::string>());
                else if (key == "world_to_camera") {
                    const auto v = value.get<std::vector<double>>();
                    if (v.size() != 16) throw ConfigError("world_to_camera needs 16 values");
                    std::copy(v.begin(), v.end(), cam.world_to_camera.begin());
                } else if (key.rfind("features.", 0) == 0) {
                    cam.feature_paths[key.substr(9)] = resolve(value.get<std::string>());
                } else {
                    throw ConfigError("unknown camera key '" + key + "'");
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        cam.validate();
        cameras.push_back(std::move(cam));
    }
    return cameras;
}

void save_cameras(const std::vector<CameraView>& cameras, const std::filesystem::path& path) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& cam : cameras) {
        nlohmann::ordered_json item;
        item["fx"] = cam.fx;
        item["fy"] = cam.fy;
        item["cx"] = cam.cx;
        item["cy"] = cam.cy;
        item["width"] = cam.width;
        item["height"] = cam.height;
        item["world_to_camera"] = cam.world_to_camera;
        if (!cam.image_path.empty()) item["image"] = cam.image_path;
        for (const auto& [model, p] : cam.feature_paths) item["features." + model] = p;
        doc.push_back(std::move(item));
    }
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write camera list: " + path.string());
    out << doc.dump(2) << '\n';
}

} // namespace m3
