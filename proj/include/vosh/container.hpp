#pragma once

// Binary container shared by assets, checkpoints and stage artifacts:
//
//   magic[4]  u32 version  u32 section_count
//   section*: tag[4]  u64 payload_length  payload  u32 crc32(payload)
//
// All integers and floats are little-endian.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vosh/error.hpp"

namespace vosh {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    return std::uint32_t(::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), uInt(bytes.size())));
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f32(float v) { raw(&v, 4); }
    void tag(std::string_view t) { raw(t.data(), 4); }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void floats(std::span<const float> f) { raw(f.data(), f.size() * 4); }
    void u32s(std::span<const std::uint32_t> v) { raw(v.data(), v.size() * 4); }

    const std::vector<std::uint8_t>& data() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }
    std::size_t size() const { return buf_.size(); }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, std::string section) : data_(data), section_(std::move(section)) {}

    std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
    std::int32_t i32() { std::int32_t v; raw(&v, 4); return v; }
    float f32() { float v; raw(&v, 4); return v; }
    std::string tag() { char t[4]; raw(t, 4); return std::string(t, 4); }
    void floats(std::span<float> out) { raw(out.data(), out.size() * 4); }
    void u32s(std::span<std::uint32_t> out) { raw(out.data(), out.size() * 4); }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }
    const std::string& section() const { return section_; }

    void need(std::size_t n) const {
        if (remaining() < n) {
            throw ParseError(ParseErrorKind::Truncated, section_,
                             "need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
        }
    }

private:
    void raw(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string section_;
};

struct Section {
    std::string tag;
    std::vector<std::uint8_t> payload;
};

struct Container {
    std::string magic;
    std::uint32_t version = 1;
    std::vector<Section> sections;

    const Section& find(std::string_view tag) const {
        for (const auto& s : sections) {
            if (s.tag == tag) return s;
        }
        throw ParseError(ParseErrorKind::Malformed, std::string(tag), "required section missing");
    }
    bool has(std::string_view tag) const {
        for (const auto& s : sections) {
            if (s.tag == tag) return true;
        }
        return false;
    }
};

inline std::vector<std::uint8_t> write_container(const Container& c) {
    ByteWriter w;
    w.tag(c.magic);
    w.u32(c.version);
    w.u32(std::uint32_t(c.sections.size()));
    for (const auto& s : c.sections) {
        w.tag(s.tag);
        w.u64(s.payload.size());
        w.bytes(s.payload);
        w.u32(crc32_of(s.payload));
    }
    return w.take();
}

inline Container read_container(std::span<const std::uint8_t> bytes, std::string_view magic, std::uint32_t version) {
    ByteReader header(bytes, "header");
    header.need(4);
    if (std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != magic) {
        throw ParseError(ParseErrorKind::BadMagic, "header", "magic check failed, expected '" + std::string(magic) + "'");
    }
    Container c;
    c.magic = header.tag();
    c.version = header.u32();
    if (c.version != version) {
        throw ParseError(ParseErrorKind::VersionMismatch, "header",
                         "version " + std::to_string(c.version) + ", expected " + std::to_string(version));
    }
    const std::uint32_t count = header.u32();
    std::size_t pos = header.position();
    for (std::uint32_t i = 0; i < count; ++i) {
        ByteReader r(bytes.subspan(pos), "section #" + std::to_string(i));
        Section s;
        s.tag = r.tag();
        ByteReader body(bytes.subspan(pos + 4), s.tag);
        const std::uint64_t len = body.u64();
        auto payload = body.bytes(std::size_t(len));
        const std::uint32_t crc = body.u32();
        if (crc != crc32_of(payload)) throw ParseError(ParseErrorKind::Checksum, s.tag, "CRC32 mismatch");
        s.payload.assign(payload.begin(), payload.end());
        pos += 4 + body.position();
        c.sections.push_back(std::move(s));
    }
    if (pos != bytes.size()) throw ParseError(ParseErrorKind::Malformed, "trailer", "unexpected bytes after last section");
    return c;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

}  // namespace vosh
