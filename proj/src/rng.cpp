#include "offcbdc/rng.hpp"

#include <cstring>

#include "offcbdc/crypto.hpp"

namespace offcbdc {

DeterministicRng::DeterministicRng(std::uint64_t seed) {
    Bytes material = to_bytes(std::string_view("offcbdc/rng/v1"));
    append_u64_le(material, seed);
    Bytes digest = crypto::sha256(view(material));
    std::memcpy(state_.data(), digest.data(), state_.size());
}

void DeterministicRng::fill(std::uint8_t* out, std::size_t len) {
    while (len > 0) {
        if (block_used_ == block_.size()) {
            Bytes material(state_.begin(), state_.end());
            append_u64_le(material, counter_++);
            Bytes digest = crypto::sha256(view(material));
            std::memcpy(block_.data(), digest.data(), block_.size());
            block_used_ = 0;
        }
        std::size_t take = std::min(len, block_.size() - block_used_);
        std::memcpy(out, block_.data() + block_used_, take);
        block_used_ += take;
        out += take;
        len -= take;
    }
}

Bytes DeterministicRng::bytes(std::size_t len) {
    Bytes out(len, 0);
    fill(out.data(), len);
    return out;
}

std::uint64_t DeterministicRng::next_u64() {
    std::uint8_t buf[8];
    fill(buf, sizeof buf);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}

std::uint64_t DeterministicRng::below(std::uint64_t bound) {
    // modulo bias is irrelevant for simulation scheduling
    return bound == 0 ? 0 : next_u64() % bound;
}

DeterministicRng DeterministicRng::fork(std::uint64_t label) {
    DeterministicRng child(0);
    Bytes material(state_.begin(), state_.end());
    append_u64_le(material, label);
    material.push_back(0x5c);
    Bytes digest = crypto::sha256(view(material));
    std::memcpy(child.state_.data(), digest.data(), child.state_.size());
    child.counter_ = 0;
    child.block_used_ = child.block_.size();
    return child;
}

}  // namespace offcbdc
