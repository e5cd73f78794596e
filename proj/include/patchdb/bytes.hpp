#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace patchdb {

// Big-endian byte packing used by every on-disk structure. Keeping the
// byte order explicit (instead of memcpy of host integers) is what makes
// stored files byte-identical across platforms.

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u16(uint16_t v) {
        buf_.push_back(static_cast<char>(v >> 8));
        buf_.push_back(static_cast<char>(v));
    }

    void u32(uint32_t v) {
        buf_.push_back(static_cast<char>(v >> 24));
        buf_.push_back(static_cast<char>(v >> 16));
        buf_.push_back(static_cast<char>(v >> 8));
        buf_.push_back(static_cast<char>(v));
    }

    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v >> 32));
        u32(static_cast<uint32_t>(v));
    }

    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }

    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

    void raw(const void* p, size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }

    // Length-prefixed short string (one length byte).
    void str8(std::string_view s) {
        if (s.size() > 255)
            throw std::length_error("string too long for u8 length prefix");
        u8(static_cast<uint8_t>(s.size()));
        raw(s.data(), s.size());
    }

    // Length-prefixed string (two length bytes).
    void str16(std::string_view s) {
        if (s.size() > 65535)
            throw std::length_error("string too long for u16 length prefix");
        u16(static_cast<uint16_t>(s.size()));
        raw(s.data(), s.size());
    }

    size_t size() const { return buf_.size(); }
    const std::string& bytes() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(const void* data, size_t size)
        : p_(static_cast<const unsigned char*>(data)), end_(p_ + size) {}

    explicit ByteReader(std::string_view s) : ByteReader(s.data(), s.size()) {}

    uint8_t u8() {
        need(1);
        return *p_++;
    }

    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>((p_[0] << 8) | p_[1]);
        p_ += 2;
        return v;
    }

    uint32_t u32() {
        need(4);
        uint32_t v = (static_cast<uint32_t>(p_[0]) << 24) |
                     (static_cast<uint32_t>(p_[1]) << 16) |
                     (static_cast<uint32_t>(p_[2]) << 8) |
                     static_cast<uint32_t>(p_[3]);
        p_ += 4;
        return v;
    }

    uint64_t u64() {
        uint64_t hi = u32();
        return (hi << 32) | u32();
    }

    int64_t i64() { return static_cast<int64_t>(u64()); }

    float f32() { return std::bit_cast<float>(u32()); }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str8() {
        size_t n = u8();
        need(n);
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }

    std::string str16() {
        size_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }

    void raw(void* out, size_t n) {
        need(n);
        std::memcpy(out, p_, n);
        p_ += n;
    }

    size_t remaining() const { return static_cast<size_t>(end_ - p_); }
    bool done() const { return p_ == end_; }

private:
    void need(size_t n) const {
        if (static_cast<size_t>(end_ - p_) < n)
            throw std::out_of_range("byte reader: truncated input");
    }

    const unsigned char* p_;
    const unsigned char* end_;
};

}  // namespace patchdb
