#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace offcbdc {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView view(const Bytes& b) { return ByteView(b.data(), b.size()); }

inline Bytes to_bytes(ByteView v) { return Bytes(v.begin(), v.end()); }

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline void append(Bytes& out, ByteView v) {
    if (!v.empty()) out.insert(out.end(), v.begin(), v.end());
}

inline void append_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

inline void append_u16_be(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

// Counters and amounts travel little-endian, fixed width.
inline void append_u64_le(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t read_u16_be(ByteView v, std::size_t off) {
    return static_cast<std::uint16_t>((v[off] << 8) | v[off + 1]);
}

inline std::uint64_t read_u64_le(ByteView v, std::size_t off) {
    std::uint64_t r = 0;
    for (int i = 7; i >= 0; --i) r = (r << 8) | v[off + static_cast<std::size_t>(i)];
    return r;
}

inline std::string to_hex(ByteView data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

}  // namespace offcbdc
