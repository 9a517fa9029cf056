// SPDX-License-Identifier: Apache-2.0
#include "m3/image.hpp"

#include "m3/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace m3 {
namespace {

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, png_uint_32 format, int& w, int& h) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw FormatError("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&img);
        throw FormatError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    w = static_cast<int>(img.width);
    h = static_cast<int>(img.height);
    return buffer;
}

} // namespace

Image read_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto raw = read_raw(path, PNG_FORMAT_RGB, w, h);
    Image out = Image::zeros(w, h, 3);
    for (std::size_t i = 0; i < raw.size(); ++i) out.data[i] = raw[i] / 255.0;
    return out;
}

std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, int& width, int& height) {
    auto raw = read_raw(path, PNG_FORMAT_GRAY, width, height);
    for (auto& v : raw) v = v > 127 ? 1 : 0;
    return raw;
}

void write_png(const Image& image, const std::filesystem::path& path) {
    if (image.channels != 1 && image.channels != 3) throw FormatError("write_png: need 1 or 3 channels");
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buffer(image.data.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        const double v = std::clamp(image.data[i], 0.0, 1.0);
        buffer[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw FormatError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

} // namespace m3
