#pragma once

#include <array>
#include <cstdint>

#include "offcbdc/bytes.hpp"
#include "offcbdc/rng.hpp"

namespace offcbdc::crypto {

// secp256r1 throughout; fixed encodings are normative for golden vectors:
// 65-byte uncompressed points, 32-byte scalars, 64-byte raw r||s signatures.
inline constexpr std::size_t kScalarBytes = 32;
inline constexpr std::size_t kPointBytes = 65;
inline constexpr std::size_t kSignatureBytes = 64;
inline constexpr std::size_t kSymmetricKeyBytes = 32;
inline constexpr std::size_t kMacBytes = 32;
inline constexpr std::size_t kNonceBytes = 16;

struct KeyPair {
    Bytes secret;      // big-endian scalar, 32 bytes
    Bytes public_key;  // uncompressed point, 65 bytes
};

struct SharedSecret {
    Bytes z_static;
    Bytes z_ephemeral;  // empty under the nonce/static handshake variant

    Bytes combined() const {
        Bytes z = z_static;
        append(z, view(z_ephemeral));
        return z;
    }
};

struct SessionKeys {
    std::array<std::uint8_t, kSymmetricKeyBytes> enc{};
    std::array<std::uint8_t, kSymmetricKeyBytes> mac{};
    std::array<std::uint8_t, kSymmetricKeyBytes> receipt{};

    bool operator==(const SessionKeys&) const = default;
};

struct Nonce {
    std::array<std::uint8_t, kNonceBytes> value{};

    static Nonce random(DeterministicRng& rng);
    bool operator==(const Nonce&) const = default;
};

// Counters for asymmetric-crypto work performed, used by the benchmark to
// compare handshake variants by operation count instead of wall clock.
struct OpCounters {
    std::uint64_t keygen = 0;
    std::uint64_t dh = 0;
    std::uint64_t sign = 0;
    std::uint64_t verify = 0;

    OpCounters operator-(const OpCounters& rhs) const {
        return {keygen - rhs.keygen, dh - rhs.dh, sign - rhs.sign, verify - rhs.verify};
    }
    std::uint64_t total() const { return keygen + dh + sign + verify; }
};
OpCounters op_counters();

KeyPair generate_keypair(DeterministicRng& rng);
Bytes derive_public(const Bytes& secret);

// X coordinate of secret * peer_point. Throws InvalidPoint for off-curve
// encodings and the identity.
Bytes dh(const Bytes& secret, const Bytes& peer_public);

// ANSI X9.63 style counter-mode expansion over SHA-256; context binds party
// identities, session role and (for the nonce variant) the session nonce.
// Throws EmptySecret when the combined secret is empty.
SessionKeys kdf(const SharedSecret& shared, ByteView context);

// ECDSA over secp256r1 with a derived (deterministic) per-message nonce so
// that identical inputs produce identical signatures across runs.
Bytes sign(const Bytes& secret, ByteView message);
// Malformed keys, points or signatures verify as false, never throw.
bool verify(const Bytes& public_key, ByteView message, ByteView signature);

Bytes sha256(ByteView data);
Bytes hmac_sha256(ByteView key, ByteView data);

// Per-direction framing for sealed channel traffic.
enum class Direction : std::uint8_t {
    ToResponder = 0x00,
    ToInitiator = 0x01,
};

// Encrypt-then-MAC: AES-256-CTR keyed by keys.enc with the (direction,
// counter) pair as IV, HMAC-SHA256 keyed by keys.mac over
// direction || counter_le || ciphertext. The counter itself is never
// transmitted; both ends track it per direction.
Bytes seal(const SessionKeys& keys, Direction dir, std::uint64_t counter, ByteView plaintext);

// Throws AuthFailure on tampering, CounterMismatch when the frame
// authenticates under a nearby counter (replay or reorder).
Bytes open(const SessionKeys& keys, Direction dir, std::uint64_t counter, ByteView sealed);

}  // namespace offcbdc::crypto
