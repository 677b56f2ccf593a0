#pragma once

// Little-endian encoding helpers shared by the file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "marsim/error.hpp"

namespace marsim::detail {

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void zeros(std::size_t n) { out_.insert(out_.end(), n, 0); }
    void reserve(std::size_t n) { out_.reserve(n); }

    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    void need(std::size_t n, const char* what) const {
        if (data_.size() - pos_ < n)
            throw ParseError(ParseErrorCode::Truncated, std::string("file ends inside ") + what);
    }
    void expect_magic(const char (&magic)[7]) {
        need(6, "magic");
        if (std::memcmp(data_.data() + pos_, magic, 6) != 0)
            throw ParseError(ParseErrorCode::BadMagic, std::string("expected ") + std::string(magic, 5));
        pos_ += 6;
    }
    std::uint8_t u8() {
        need(1, "header");
        return data_[pos_++];
    }
    std::uint32_t u32() {
        need(4, "header");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "header");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void skip(std::size_t n) {
        need(n, "header");
        pos_ += n;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

/// Element count n_a * n_b * ... with overflow detection against a byte budget.
inline bool checked_count(std::initializer_list<std::uint64_t> dims, std::uint64_t max_elements,
                          std::uint64_t& out) {
    std::uint64_t total = 1;
    for (auto d : dims) {
        if (d != 0 && total > max_elements / d) return false;
        total *= d;
    }
    out = total;
    return total <= max_elements;
}

}  // namespace marsim::detail
