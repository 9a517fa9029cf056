// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m3::io {

// Little-endian encoder into an in-memory buffer. Files are written in one shot
// so a failing save never leaves a half-written artifact behind.
class ByteWriter {
public:
    void magic(std::string_view tag);
    void u32(std::uint32_t v);
    void f32(float v);
    void f32s(std::span<const float> values);
    void u32s(std::span<const std::uint32_t> values);
    void str(std::string_view s); // u32 length prefix + UTF-8 bytes

    const std::vector<std::uint8_t>& bytes() const { return buffer_; }
    void write_file(const std::filesystem::path& path) const;

private:
    std::vector<std::uint8_t> buffer_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> data, std::string what = "file");
    static ByteReader from_file(const std::filesystem::path& path);

    void expect_magic(std::string_view tag);
    std::uint32_t u32();
    float f32();
    void f32s(std::span<float> out);
    void u32s(std::span<std::uint32_t> out);
    std::string str();

    bool at_end() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    const std::uint8_t* take(std::size_t n);

    std::vector<std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string what_;
};

} // namespace m3::io
