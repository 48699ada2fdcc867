#pragma once

#include <array>
#include <cstdint>

#include "offcbdc/bytes.hpp"

namespace offcbdc {

// Seedable deterministic randomness source. All randomness in the library
// (key generation, nonces, transaction ids, fuzz decisions) flows through
// one of these so that a (seed, scenario) pair fully determines a run.
//
// Internally a SHA-256 counter generator: block_i = SHA256(state || i).
// Not intended to back real deployments; the simulation needs streams that
// are reproducible and independent across derived instances.
class DeterministicRng {
public:
    explicit DeterministicRng(std::uint64_t seed);

    void fill(std::uint8_t* out, std::size_t len);
    Bytes bytes(std::size_t len);
    std::uint64_t next_u64();
    // uniform in [0, bound), bound > 0
    std::uint64_t below(std::uint64_t bound);

    // independent child stream; used to give each fuzz iteration its own rng
    DeterministicRng fork(std::uint64_t label);

private:
    std::array<std::uint8_t, 32> state_;
    std::uint64_t counter_ = 0;
    std::array<std::uint8_t, 32> block_{};
    std::size_t block_used_ = 32;  // force refill on first use
};

}  // namespace offcbdc
