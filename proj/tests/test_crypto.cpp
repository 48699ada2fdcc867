#include "doctest.h"

#include "offcbdc/crypto.hpp"
#include "offcbdc/errors.hpp"

using namespace offcbdc;
using namespace offcbdc::crypto;

TEST_CASE("keypair generation is deterministic per seed") {
    DeterministicRng a(0), b(0), c(1);
    KeyPair ka = generate_keypair(a);
    KeyPair kb = generate_keypair(b);
    KeyPair kc = generate_keypair(c);

    CHECK(ka.secret == kb.secret);
    CHECK(ka.public_key == kb.public_key);
    CHECK(ka.public_key != kc.public_key);
    CHECK(ka.public_key.size() == kPointBytes);
    CHECK(ka.public_key[0] == 0x04);
    CHECK(derive_public(ka.secret) == ka.public_key);
}

TEST_CASE("dh commutativity over random pairs") {
    DeterministicRng rng(7);
    for (int i = 0; i < 32; ++i) {
        KeyPair a = generate_keypair(rng);
        KeyPair b = generate_keypair(rng);
        CHECK(dh(a.secret, b.public_key) == dh(b.secret, a.public_key));
    }
}

TEST_CASE("dh rejects degenerate points") {
    DeterministicRng rng(8);
    KeyPair a = generate_keypair(rng);

    // identity has the single-byte encoding 0x00; any 65-byte form is off-curve
    Bytes identity(kPointBytes, 0);
    CHECK_THROWS_AS(dh(a.secret, identity), InvalidPoint);

    Bytes off_curve = a.public_key;
    off_curve[10] ^= 0x01;
    CHECK_THROWS_AS(dh(a.secret, off_curve), InvalidPoint);

    Bytes short_encoding(10, 0x04);
    CHECK_THROWS_AS(dh(a.secret, short_encoding), InvalidPoint);
}

TEST_CASE("kdf determinism and context separation") {
    DeterministicRng rng(9);
    SharedSecret z{rng.bytes(32), rng.bytes(32)};

    Bytes ctx = to_bytes(std::string_view("context-a"));
    SessionKeys k1 = kdf(z, view(ctx));
    SessionKeys k2 = kdf(z, view(ctx));
    CHECK(k1 == k2);
    CHECK(k1.enc != k1.mac);
    CHECK(k1.mac != k1.receipt);
    CHECK(k1.enc != k1.receipt);

    // single byte of context difference flips all three keys
    Bytes ctx2 = ctx;
    ctx2[0] ^= 0x01;
    SessionKeys k3 = kdf(z, view(ctx2));
    CHECK(k1.enc != k3.enc);
    CHECK(k1.mac != k3.mac);
    CHECK(k1.receipt != k3.receipt);

    CHECK_THROWS_AS(kdf(SharedSecret{{}, {}}, view(ctx)), EmptySecret);
}

TEST_CASE("kdf separates 1000 random contexts") {
    DeterministicRng rng(10);
    SharedSecret z{rng.bytes(32), {}};
    SessionKeys base = kdf(z, view(to_bytes(std::string_view("base"))));
    for (int i = 0; i < 1000; ++i) {
        Bytes ctx = rng.bytes(24);
        SessionKeys k = kdf(z, view(ctx));
        CHECK(k.enc != base.enc);
        CHECK(k.enc != k.mac);
    }
}

TEST_CASE("nonce-bearing contexts with a shared static secret diverge") {
    DeterministicRng rng(11);
    SharedSecret z{rng.bytes(32), {}};
    Bytes ctx1 = to_bytes(std::string_view("hs|"));
    Bytes ctx2 = ctx1;
    append(ctx1, view(Bytes(Nonce::random(rng).value.begin(), Nonce::random(rng).value.end())));
    append(ctx2, view(Bytes(Nonce::random(rng).value.begin(), Nonce::random(rng).value.end())));
    CHECK(kdf(z, view(ctx1)).enc != kdf(z, view(ctx2)).enc);
}

TEST_CASE("sign/verify round trip and rejection") {
    DeterministicRng rng(12);
    KeyPair k = generate_keypair(rng);
    KeyPair other = generate_keypair(rng);

    Bytes empty;
    Bytes sig = sign(k.secret, view(empty));
    CHECK(sig.size() == kSignatureBytes);
    CHECK(verify(k.public_key, view(empty), view(sig)));

    Bytes msg = to_bytes(std::string_view("pay 500 to alice"));
    Bytes sig2 = sign(k.secret, view(msg));
    CHECK(verify(k.public_key, view(msg), view(sig2)));
    // identical inputs sign identically (reproducible transcripts)
    CHECK(sign(k.secret, view(msg)) == sig2);

    Bytes flipped = msg;
    flipped[3] ^= 0x20;
    CHECK_FALSE(verify(k.public_key, view(flipped), view(sig2)));

    Bytes bad_sig = sig2;
    bad_sig[17] ^= 0x01;
    CHECK_FALSE(verify(k.public_key, view(msg), view(bad_sig)));

    CHECK_FALSE(verify(other.public_key, view(msg), view(sig2)));

    // malformed encodings are a clean false
    Bytes junk_key(65, 0xab);
    CHECK_FALSE(verify(junk_key, view(msg), view(sig2)));
    Bytes short_sig(10, 1);
    CHECK_FALSE(verify(k.public_key, view(msg), view(short_sig)));
}

TEST_CASE("seal/open round trip, counter and tamper errors") {
    DeterministicRng rng(13);
    SharedSecret z{rng.bytes(32), {}};
    SessionKeys keys = kdf(z, view(to_bytes(std::string_view("seal-test"))));

    Bytes msg = to_bytes(std::string_view("hello"));
    Bytes sealed = seal(keys, Direction::ToResponder, 1, view(msg));
    CHECK(open(keys, Direction::ToResponder, 1, view(sealed)) == msg);

    // frame sealed at counter 1 opened at counter 2: replay/reorder signal
    CHECK_THROWS_AS(open(keys, Direction::ToResponder, 2, view(sealed)), CounterMismatch);

    Bytes tampered = sealed;
    tampered[2] ^= 0x80;
    CHECK_THROWS_AS(open(keys, Direction::ToResponder, 1, view(tampered)), AuthFailure);

    // direction byte is authenticated
    CHECK_THROWS_AS(open(keys, Direction::ToInitiator, 1, view(sealed)), AuthFailure);

    // wrong keys
    SessionKeys other = kdf(z, view(to_bytes(std::string_view("other"))));
    CHECK_THROWS_AS(open(other, Direction::ToResponder, 1, view(sealed)), AuthFailure);

    // empty payload still authenticates
    Bytes empty;
    Bytes sealed_empty = seal(keys, Direction::ToResponder, 2, view(empty));
    CHECK(open(keys, Direction::ToResponder, 2, view(sealed_empty)).empty());
}

TEST_CASE("any single ciphertext bit flip breaks authentication") {
    DeterministicRng rng(14);
    SharedSecret z{rng.bytes(32), {}};
    SessionKeys keys = kdf(z, view(to_bytes(std::string_view("aead"))));

    for (int i = 0; i < 1000; ++i) {
        Bytes msg = rng.bytes(1 + rng.below(64));
        std::uint64_t counter = 1 + rng.below(1000);
        Bytes sealed = seal(keys, Direction::ToInitiator, counter, view(msg));

        Bytes corrupted = sealed;
        std::size_t bit = rng.below(corrupted.size() * 8);
        corrupted[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        CHECK_THROWS_AS(open(keys, Direction::ToInitiator, counter, view(corrupted)),
                        AuthFailure);
    }
}
