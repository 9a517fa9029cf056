// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace m3 {

/// Interleaved float image, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    static Image zeros(int w, int h, int c = 3) {
        return {w, h, c, std::vector<double>(std::size_t(w) * h * c, 0.0)};
    }
    std::size_t pixel_count() const { return std::size_t(width) * height; }
};

/// 8-bit PNG via libpng; grayscale and alpha inputs are converted to RGB.
Image read_png(const std::filesystem::path& path);
/// Binary mask: true where the first channel is above mid-gray.
std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, int& width, int& height);
/// Values are clamped to [0, 1] and rounded to 8 bits. 1 or 3 channels.
void write_png(const Image& image, const std::filesystem::path& path);

} // namespace m3
