#pragma once

#include <cstdint>
#include <optional>

#include "offcbdc/bytes.hpp"
#include "offcbdc/errors.hpp"

namespace offcbdc {

// Length-prefixed TLV used by certificates, handshake messages, device
// commands and proof payloads: tag(u8) | len(u16 big-endian) | value.
class TlvWriter {
public:
    TlvWriter& add(std::uint8_t tag, ByteView value);
    TlvWriter& add_u8(std::uint8_t tag, std::uint8_t value);
    TlvWriter& add_u64(std::uint8_t tag, std::uint64_t value);  // 8 bytes little-endian

    const Bytes& bytes() const { return out_; }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class TlvReader {
public:
    explicit TlvReader(ByteView data);  // throws ParseError on malformed framing

    bool has(std::uint8_t tag) const;
    // first occurrence; throws ParseError if absent
    ByteView get(std::uint8_t tag) const;
    std::optional<ByteView> find(std::uint8_t tag) const;
    std::uint8_t get_u8(std::uint8_t tag) const;
    std::uint64_t get_u64(std::uint8_t tag) const;
    // all occurrences of tag, in order (for repeated list entries)
    std::vector<ByteView> all(std::uint8_t tag) const;

private:
    struct Field {
        std::uint8_t tag;
        ByteView value;
    };
    std::vector<Field> fields_;
};

}  // namespace offcbdc
