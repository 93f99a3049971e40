#pragma once

#include "ftmine/errors.hpp"

#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

namespace ftmine::wire {

// Little-endian fixed-width append buffer.
class Writer {
public:
    void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
    void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
    void i64(std::int64_t v) { raw(&v, sizeof(v)); }
    void f64(double v) { raw(&v, sizeof(v)); }
    void bytes(std::span<const std::uint8_t> b) { raw(b.data(), b.size()); }

    std::vector<std::uint8_t> take() { return std::move(buf_); }
    const std::vector<std::uint8_t>& data() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

// Bounds-checked reader; raises CorruptBuffer on truncation.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : buf_(b) {}

    std::uint32_t u32() { return fixed<std::uint32_t>(); }
    std::uint64_t u64() { return fixed<std::uint64_t>(); }
    std::int64_t i64() { return fixed<std::int64_t>(); }
    double f64() { return fixed<double>(); }

    std::vector<std::uint8_t> bytes(std::size_t n) {
        check(n);
        std::vector<std::uint8_t> out(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    std::size_t remaining() const { return buf_.size() - pos_; }
    bool done() const { return pos_ == buf_.size(); }

private:
    template <typename T>
    T fixed() {
        check(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void check(std::size_t n) const {
        if (buf_.size() - pos_ < n) {
            throw CorruptBufferError("buffer truncated");
        }
    }
    std::span<const std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

// FNV-1a, used for file/result checksums and order fingerprints.
inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ftmine::wire
