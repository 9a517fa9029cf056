// SPDX-License-Identifier: Apache-2.0
#include "m3/binary_io.hpp"

#include "m3/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace m3::io {

void ByteWriter::magic(std::string_view tag) {
    buffer_.insert(buffer_.end(), tag.begin(), tag.end());
}

void ByteWriter::u32(std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
        buffer_.push_back(static_cast<std::uint8_t>((v >> shift) & 0xffu));
    }
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f32s(std::span<const float> values) {
    buffer_.reserve(buffer_.size() + 4 * values.size());
    for (float v : values) f32(v);
}

void ByteWriter::u32s(std::span<const std::uint32_t> values) {
    buffer_.reserve(buffer_.size() + 4 * values.size());
    for (auto v : values) u32(v);
}

void ByteWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buffer_.insert(buffer_.end(), s.begin(), s.end());
}

void ByteWriter::write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buffer_.data()),
              static_cast<std::streamsize>(buffer_.size()));
    if (!out) throw FormatError("write failed: " + path.string());
}

ByteReader::ByteReader(std::vector<std::uint8_t> data, std::string what)
    : data_(std::move(data)), what_(std::move(what)) {}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path.string());
}

const std::uint8_t* ByteReader::take(std::size_t n) {
    if (remaining() < n) throw FormatError(what_ + ": truncated");
    const auto* p = data_.data() + pos_;
    pos_ += n;
    return p;
}

void ByteReader::expect_magic(std::string_view tag) {
    const auto* p = take(tag.size());
    if (std::memcmp(p, tag.data(), tag.size()) != 0) {
        throw FormatError(what_ + ": bad magic, expected " + std::string(tag));
    }
}

std::uint32_t ByteReader::u32() {
    const auto* p = take(4);
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

void ByteReader::f32s(std::span<float> out) {
    if (remaining() / 4 < out.size()) throw FormatError(what_ + ": truncated");
    for (auto& v : out) v = f32();
}

void ByteReader::u32s(std::span<std::uint32_t> out) {
    if (remaining() / 4 < out.size()) throw FormatError(what_ + ": truncated");
    for (auto& v : out) v = u32();
}

std::string ByteReader::str() {
    const auto len = u32();
    const auto* p = take(len);
    return std::string(reinterpret_cast<const char*>(p), len);
}

} // namespace m3::io
