#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

namespace flsim {

/// Canonical byte encoding used for everything that gets hashed: fixed field
/// order, little-endian fixed-width integers, IEEE-754 bit patterns for reals.
class ByteWriter {
public:
    void put_u8(std::uint8_t v) { buf_.push_back(v); }

    void put_i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }

    void put_u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void put_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }

    void put_bytes(std::span<const std::uint8_t> b) {
        buf_.insert(buf_.end(), b.begin(), b.end());
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

}  // namespace flsim
