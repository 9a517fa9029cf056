// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace m3 {

/// Pinhole camera. `world_to_camera` is a row-major 4x4 rigid transform;
/// camera looks down +z, pixel (x, y) is sampled at (x + 0.5, y + 0.5).
struct CameraView {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    std::array<double, 16> world_to_camera{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    int width = 0;
    int height = 0;
    std::string image_path;
    std::map<std::string, std::string> feature_paths;

    std::size_t pixel_count() const { return std::size_t(width) * std::size_t(height); }
    void validate() const;
};

/// Rigid transform from a camera position looking at `target` (+y down in image).
std::array<double, 16> look_at(const std::array<double, 3>& eye, const std::array<double, 3>& target,
                               const std::array<double, 3>& up);

/// Camera list as a JSON array of objects with keys fx, fy, cx, cy, width,
/// height, world_to_camera (16 numbers, row-major), image, features.<model>.
/// Relative paths resolve against the file's directory.
std::vector<CameraView> load_cameras(const std::filesystem::path& path);
void save_cameras(const std::vector<CameraView>& cameras, const std::filesystem::path& path);

} // namespace m3
