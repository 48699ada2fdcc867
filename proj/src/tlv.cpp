#include "offcbdc/tlv.hpp"

namespace offcbdc {

TlvWriter& TlvWriter::add(std::uint8_t tag, ByteView value) {
    if (value.size() > 0xffff) throw ParseError("tlv value too long");
    append_u8(out_, tag);
    append_u16_be(out_, static_cast<std::uint16_t>(value.size()));
    append(out_, value);
    return *this;
}

TlvWriter& TlvWriter::add_u8(std::uint8_t tag, std::uint8_t value) {
    std::uint8_t v[1] = {value};
    return add(tag, ByteView(v, 1));
}

TlvWriter& TlvWriter::add_u64(std::uint8_t tag, std::uint64_t value) {
    Bytes v;
    append_u64_le(v, value);
    return add(tag, view(v));
}

TlvReader::TlvReader(ByteView data) {
    std::size_t off = 0;
    while (off < data.size()) {
        if (off + 3 > data.size()) throw ParseError("truncated tlv header");
        std::uint8_t tag = data[off];
        std::uint16_t len = read_u16_be(data, off + 1);
        off += 3;
        if (off + len > data.size()) throw ParseError("truncated tlv value");
        fields_.push_back(Field{tag, data.subspan(off, len)});
        off += len;
    }
}

bool TlvReader::has(std::uint8_t tag) const {
    return find(tag).has_value();
}

std::optional<ByteView> TlvReader::find(std::uint8_t tag) const {
    for (const Field& f : fields_) {
        if (f.tag == tag) return f.value;
    }
    return std::nullopt;
}

ByteView TlvReader::get(std::uint8_t tag) const {
    auto v = find(tag);
    if (!v) throw ParseError("missing tlv tag " + std::to_string(tag));
    return *v;
}

std::uint8_t TlvReader::get_u8(std::uint8_t tag) const {
    ByteView v = get(tag);
    if (v.size() != 1) throw ParseError("bad u8 field length");
    return v[0];
}

std::uint64_t TlvReader::get_u64(std::uint8_t tag) const {
    ByteView v = get(tag);
    if (v.size() != 8) throw ParseError("bad u64 field length");
    return read_u64_le(v, 0);
}

std::vector<ByteView> TlvReader::all(std::uint8_t tag) const {
    std::vector<ByteView> out;
    for (const Field& f : fields_) {
        if (f.tag == tag) out.push_back(f.value);
    }
    return out;
}

}  // namespace offcbdc
