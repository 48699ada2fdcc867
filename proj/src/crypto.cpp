#define OPENSSL_SUPPRESS_DEPRECATED

#include "offcbdc/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/obj_mac.h>
#include <openssl/sha.h>

#include <atomic>
#include <cstring>
#include <memory>
#include <mutex>

#include "offcbdc/errors.hpp"

namespace offcbdc::crypto {

namespace {

struct BnDeleter {
    void operator()(BIGNUM* p) const { BN_free(p); }
};
struct BnCtxDeleter {
    void operator()(BN_CTX* p) const { BN_CTX_free(p); }
};
struct PointDeleter {
    void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};
struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};

using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxDeleter>;
using PointPtr = std::unique_ptr<EC_POINT, PointDeleter>;

const EC_GROUP* group() {
    static EC_GROUP* g = EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1);
    return g;
}

const BIGNUM* group_order() {
    static BIGNUM* n = [] {
        BIGNUM* o = BN_new();
        BnCtxPtr ctx(BN_CTX_new());
        EC_GROUP_get_order(group(), o, ctx.get());
        return o;
    }();
    return n;
}

std::atomic<std::uint64_t> g_keygen{0}, g_dh{0}, g_sign{0}, g_verify{0};

BnPtr bn_from(ByteView bytes) {
    return BnPtr(BN_bin2bn(bytes.data(), static_cast<int>(bytes.size()), nullptr));
}

Bytes bn_to_fixed(const BIGNUM* bn, std::size_t len) {
    Bytes out(len, 0);
    BN_bn2binpad(bn, out.data(), static_cast<int>(len));
    return out;
}

// Parses a 65-byte uncompressed encoding; rejects off-curve and identity.
PointPtr parse_point(ByteView encoded) {
    if (encoded.size() != kPointBytes) throw InvalidPoint();
    BnCtxPtr ctx(BN_CTX_new());
    PointPtr p(EC_POINT_new(group()));
    if (EC_POINT_oct2point(group(), p.get(), encoded.data(), encoded.size(), ctx.get()) != 1)
        throw InvalidPoint();
    if (EC_POINT_is_at_infinity(group(), p.get())) throw InvalidPoint();
    if (EC_POINT_is_on_curve(group(), p.get(), ctx.get()) != 1) throw InvalidPoint();
    return p;
}

Bytes encode_point(const EC_POINT* p) {
    BnCtxPtr ctx(BN_CTX_new());
    Bytes out(kPointBytes, 0);
    std::size_t n = EC_POINT_point2oct(group(), p, POINT_CONVERSION_UNCOMPRESSED, out.data(),
                                       out.size(), ctx.get());
    out.resize(n);
    return out;
}

BnPtr scalar_from_secret(const Bytes& secret) {
    if (secret.size() != kScalarBytes) throw Error("bad secret scalar length");
    BnPtr d = bn_from(view(secret));
    if (BN_is_zero(d.get()) || BN_cmp(d.get(), group_order()) >= 0)
        throw Error("secret scalar out of range");
    return d;
}

// Deterministic per-message nonce: HMAC(secret, digest || retry) mod n.
// Keeps signatures, and therefore whole simulation transcripts, reproducible.
BnPtr derive_sign_nonce(const Bytes& secret, ByteView digest, std::uint8_t retry) {
    Bytes material = to_bytes(digest);
    material.push_back(retry);
    Bytes km = hmac_sha256(view(secret), view(material));
    BnPtr k = bn_from(view(km));
    BnCtxPtr ctx(BN_CTX_new());
    BN_mod(k.get(), k.get(), group_order(), ctx.get());
    return k;
}

void aes256_ctr(const std::array<std::uint8_t, kSymmetricKeyBytes>& key,
                const std::array<std::uint8_t, 16>& iv, ByteView in, std::uint8_t* out) {
    std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter> ctx(EVP_CIPHER_CTX_new());
    int len = 0;
    EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_ctr(), nullptr, key.data(), iv.data());
    EVP_EncryptUpdate(ctx.get(), out, &len, in.data(), static_cast<int>(in.size()));
    int fin = 0;
    EVP_EncryptFinal_ex(ctx.get(), out + len, &fin);
}

Bytes mac_input(Direction dir, std::uint64_t counter, ByteView ciphertext) {
    Bytes m;
    append_u8(m, static_cast<std::uint8_t>(dir));
    append_u64_le(m, counter);
    append(m, ciphertext);
    return m;
}

std::array<std::uint8_t, 16> frame_iv(Direction dir, std::uint64_t counter) {
    std::array<std::uint8_t, 16> iv{};
    iv[0] = static_cast<std::uint8_t>(dir);
    for (int i = 0; i < 8; ++i) iv[8 + i] = static_cast<std::uint8_t>((counter >> (8 * i)) & 0xff);
    return iv;
}

bool mac_equal(ByteView a, ByteView b) {
    if (a.size() != b.size()) return false;
    std::uint8_t acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc |= a[i] ^ b[i];
    return acc == 0;
}

}  // namespace

OpCounters op_counters() {
    return {g_keygen.load(), g_dh.load(), g_sign.load(), g_verify.load()};
}

Nonce Nonce::random(DeterministicRng& rng) {
    Nonce n;
    rng.fill(n.value.data(), n.value.size());
    return n;
}

Bytes derive_public(const Bytes& secret) {
    BnPtr d = scalar_from_secret(secret);
    BnCtxPtr ctx(BN_CTX_new());
    PointPtr q(EC_POINT_new(group()));
    EC_POINT_mul(group(), q.get(), d.get(), nullptr, nullptr, ctx.get());
    return encode_point(q.get());
}

KeyPair generate_keypair(DeterministicRng& rng) {
    ++g_keygen;
    // rejection-sample a scalar in [1, n-1]
    for (;;) {
        Bytes candidate = rng.bytes(kScalarBytes);
        BnPtr d = bn_from(view(candidate));
        if (BN_is_zero(d.get()) || BN_cmp(d.get(), group_order()) >= 0) continue;
        return KeyPair{candidate, derive_public(candidate)};
    }
}

Bytes dh(const Bytes& secret, const Bytes& peer_public) {
    ++g_dh;
    BnPtr d = scalar_from_secret(secret);
    PointPtr peer = parse_point(view(peer_public));
    BnCtxPtr ctx(BN_CTX_new());
    PointPtr shared(EC_POINT_new(group()));
    EC_POINT_mul(group(), shared.get(), nullptr, peer.get(), d.get(), ctx.get());
    if (EC_POINT_is_at_infinity(group(), shared.get())) throw InvalidPoint();
    BnPtr x(BN_new());
    EC_POINT_get_affine_coordinates(group(), shared.get(), x.get(), nullptr, ctx.get());
    return bn_to_fixed(x.get(), kScalarBytes);
}

SessionKeys kdf(const SharedSecret& shared, ByteView context) {
    Bytes z = shared.combined();
    if (z.empty()) throw EmptySecret();

    SessionKeys keys;
    std::uint8_t* slots[3] = {keys.enc.data(), keys.mac.data(), keys.receipt.data()};
    for (std::uint32_t i = 0; i < 3; ++i) {
        Bytes block = z;
        // X9.63: hash(Z || counter_be || SharedInfo), counter starts at 1
        std::uint32_t counter = i + 1;
        block.push_back(static_cast<std::uint8_t>(counter >> 24));
        block.push_back(static_cast<std::uint8_t>(counter >> 16));
        block.push_back(static_cast<std::uint8_t>(counter >> 8));
        block.push_back(static_cast<std::uint8_t>(counter));
        append(block, context);
        Bytes digest = sha256(view(block));
        std::memcpy(slots[i], digest.data(), kSymmetricKeyBytes);
    }
    return keys;
}

Bytes sha256(ByteView data) {
    Bytes out(SHA256_DIGEST_LENGTH, 0);
    SHA256(data.data(), data.size(), out.data());
    return out;
}

Bytes hmac_sha256(ByteView key, ByteView data) {
    Bytes out(32, 0);
    unsigned int len = 0;
    HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
         out.data(), &len);
    return out;
}

Bytes sign(const Bytes& secret, ByteView message) {
    ++g_sign;
    Bytes digest = sha256(message);
    BnPtr d = scalar_from_secret(secret);
    BnPtr z = bn_from(view(digest));
    BnCtxPtr ctx(BN_CTX_new());

    for (std::uint8_t retry = 0;; ++retry) {
        BnPtr k = derive_sign_nonce(secret, view(digest), retry);
        if (BN_is_zero(k.get())) continue;

        PointPtr rp(EC_POINT_new(group()));
        EC_POINT_mul(group(), rp.get(), k.get(), nullptr, nullptr, ctx.get());
        BnPtr r(BN_new());
        EC_POINT_get_affine_coordinates(group(), rp.get(), r.get(), nullptr, ctx.get());
        BN_mod(r.get(), r.get(), group_order(), ctx.get());
        if (BN_is_zero(r.get())) continue;

        // s = k^-1 (z + r d) mod n
        BnPtr s(BN_new());
        BnPtr kinv(BN_new());
        BN_mod_inverse(kinv.get(), k.get(), group_order(), ctx.get());
        BN_mod_mul(s.get(), r.get(), d.get(), group_order(), ctx.get());
        BN_mod_add(s.get(), s.get(), z.get(), group_order(), ctx.get());
        BN_mod_mul(s.get(), s.get(), kinv.get(), group_order(), ctx.get());
        if (BN_is_zero(s.get())) continue;

        Bytes sig = bn_to_fixed(r.get(), kScalarBytes);
        append(sig, view(bn_to_fixed(s.get(), kScalarBytes)));
        return sig;
    }
}

bool verify(const Bytes& public_key, ByteView message, ByteView signature) {
    ++g_verify;
    if (signature.size() != kSignatureBytes) return false;
    try {
        PointPtr q = parse_point(view(public_key));
        BnPtr r = bn_from(signature.subspan(0, kScalarBytes));
        BnPtr s = bn_from(signature.subspan(kScalarBytes, kScalarBytes));
        if (BN_is_zero(r.get()) || BN_cmp(r.get(), group_order()) >= 0) return false;
        if (BN_is_zero(s.get()) || BN_cmp(s.get(), group_order()) >= 0) return false;

        Bytes digest = sha256(message);
        BnPtr z = bn_from(view(digest));
        BnCtxPtr ctx(BN_CTX_new());
        BnPtr sinv(BN_new());
        BN_mod_inverse(sinv.get(), s.get(), group_order(), ctx.get());
        BnPtr u1(BN_new()), u2(BN_new());
        BN_mod_mul(u1.get(), z.get(), sinv.get(), group_order(), ctx.get());
        BN_mod_mul(u2.get(), r.get(), sinv.get(), group_order(), ctx.get());

        PointPtr point(EC_POINT_new(group()));
        // u1*G + u2*Q
        if (EC_POINT_mul(group(), point.get(), u1.get(), q.get(), u2.get(), ctx.get()) != 1)
            return false;
        if (EC_POINT_is_at_infinity(group(), point.get())) return false;
        BnPtr x(BN_new());
        EC_POINT_get_affine_coordinates(group(), point.get(), x.get(), nullptr, ctx.get());
        BN_mod(x.get(), x.get(), group_order(), ctx.get());
        return BN_cmp(x.get(), r.get()) == 0;
    } catch (const Error&) {
        return false;
    }
}

Bytes seal(const SessionKeys& keys, Direction dir, std::uint64_t counter, ByteView plaintext) {
    Bytes out(plaintext.size() + kMacBytes, 0);
    aes256_ctr(keys.enc, frame_iv(dir, counter), plaintext, out.data());
    ByteView ct(out.data(), plaintext.size());
    Bytes tag = hmac_sha256(ByteView(keys.mac.data(), keys.mac.size()),
                            view(mac_input(dir, counter, ct)));
    std::memcpy(out.data() + plaintext.size(), tag.data(), kMacBytes);
    return out;
}

Bytes open(const SessionKeys& keys, Direction dir, std::uint64_t counter, ByteView sealed) {
    if (sealed.size() < kMacBytes) throw AuthFailure();
    ByteView ct = sealed.subspan(0, sealed.size() - kMacBytes);
    ByteView tag = sealed.subspan(sealed.size() - kMacBytes);

    auto tag_for = [&](std::uint64_t c) {
        return hmac_sha256(ByteView(keys.mac.data(), keys.mac.size()), view(mac_input(dir, c, ct)));
    };

    if (!mac_equal(view(tag_for(counter)), tag)) {
        // Distinguish replays/reorders from tampering: a frame sealed under a
        // nearby counter authenticates there and is reported as a counter
        // mismatch rather than corruption.
        const std::uint64_t window = 64;
        std::uint64_t lo = counter > window ? counter - window : 1;
        for (std::uint64_t c = lo; c <= counter + window; ++c) {
            if (c != counter && mac_equal(view(tag_for(c)), tag)) throw CounterMismatch();
        }
        throw AuthFailure();
    }

    Bytes plain(ct.size(), 0);
    if (!ct.empty()) aes256_ctr(keys.enc, frame_iv(dir, counter), ct, plain.data());
    return plain;
}

}  // namespace offcbdc::crypto
