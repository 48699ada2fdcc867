#include "doctest.h"

#include "offcbdc/channel.hpp"
#include "offcbdc/errors.hpp"

using namespace offcbdc;
using namespace offcbdc::channel;

namespace {

constexpr std::uint64_t kNow = 1'700'000'000;
constexpr std::uint64_t kLater = kNow + 10'000'000;

EndpointIdentity make_endpoint(pki::CertificateAuthority& ca, DeterministicRng& rng,
                               pki::Role role, std::uint64_t expiry = kLater) {
    crypto::KeyPair keys = crypto::generate_keypair(rng);
    EndpointIdentity id;
    id.certificate = ca.issue(keys.public_key, role, expiry, kNow);
    id.keys = std::move(keys);
    id.ca_public_key = ca.public_key();
    return id;
}

struct CompletedHandshake {
    SessionContext initiator;
    SessionContext responder;
    std::vector<Bytes> transcript;
};

// Runs the four-message exchange in process, optionally flipping one bit of
// one message in flight.
CompletedHandshake run_handshake(const EndpointIdentity& a, const EndpointIdentity& b,
                                 HandshakeVariant va, HandshakeVariant vb, DeterministicRng& rng,
                                 int tamper_index = -1, std::size_t tamper_offset = 0) {
    auto mutate = [&](Bytes m, int index) {
        if (index == tamper_index && tamper_offset < m.size()) m[tamper_offset] ^= 0x01;
        return m;
    };

    CompletedHandshake out;
    auto [init, msg1] = Handshake::initiate(a, va, rng, kNow);
    Handshake resp = Handshake::responder(b, vb, rng, kNow);
    out.transcript.push_back(msg1);

    auto step2 = resp.respond(view(mutate(msg1, 0)));
    out.transcript.push_back(*step2.reply);
    auto step3 = init.respond(view(mutate(*step2.reply, 1)));
    out.transcript.push_back(*step3.reply);
    auto step4 = resp.respond(view(mutate(*step3.reply, 2)));
    REQUIRE(step4.established);
    out.transcript.push_back(*step4.reply);
    auto done = init.respond(view(mutate(*step4.reply, 3)));
    REQUIRE(done.established);

    out.initiator = init.take_context();
    out.responder = resp.take_context();
    return out;
}

}  // namespace

TEST_CASE("v1 handshake: four messages, both ends derive identical keys") {
    DeterministicRng rng(31);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::SecureDevice);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    auto hs = run_handshake(a, b, HandshakeVariant::V1_Ephemeral, HandshakeVariant::V1_Ephemeral,
                            rng);
    CHECK(hs.transcript.size() == 4);
    CHECK(hs.initiator.keys == hs.responder.keys);
    CHECK(hs.initiator.peer_public_key == b.keys.public_key);
    CHECK(hs.responder.peer_public_key == a.keys.public_key);
    CHECK(hs.initiator.peer_role == pki::Role::SecureDevice);
}

TEST_CASE("key agreement holds across randomized handshakes, both variants") {
    DeterministicRng rng(32);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    for (auto variant : {HandshakeVariant::V1_Ephemeral, HandshakeVariant::V2_NonceStatic}) {
        for (int i = 0; i < 25; ++i) {
            EndpointIdentity a = make_endpoint(ca, rng, pki::Role::UserTerminal);
            EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);
            auto hs = run_handshake(a, b, variant, variant, rng);
            CHECK(hs.initiator.keys == hs.responder.keys);
        }
    }
}

TEST_CASE("sealed traffic round trips; replay and foreign keys are rejected") {
    DeterministicRng rng(33);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::UserTerminal);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    auto hs = run_handshake(a, b, HandshakeVariant::V1_Ephemeral, HandshakeVariant::V1_Ephemeral,
                            rng);
    Bytes payload = to_bytes(std::string_view("balance query"));
    Bytes frame = hs.initiator.send(view(payload));
    CHECK(hs.responder.receive(view(frame)) == payload);

    // same sealed bytes again: counter already consumed
    CHECK_THROWS_AS(hs.responder.receive(view(frame)), CounterMismatch);

    // counters advance by one per direction
    Bytes reply = hs.responder.send(view(payload));
    CHECK(hs.initiator.receive(view(reply)) == payload);
    CHECK(hs.initiator.send_counter == 1);
    CHECK(hs.initiator.recv_counter == 1);

    // a different session's keys cannot open the frame
    auto other = run_handshake(a, b, HandshakeVariant::V1_Ephemeral,
                               HandshakeVariant::V1_Ephemeral, rng);
    Bytes frame2 = hs.initiator.send(view(payload));
    CHECK_THROWS_AS(other.responder.receive(view(frame2)), AuthFailure);
}

TEST_CASE("expired initiator certificate aborts the handshake") {
    DeterministicRng rng(34);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::UserTerminal, kNow + 1);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    auto [init, msg1] = Handshake::initiate(a, HandshakeVariant::V1_Ephemeral, rng, kNow + 100);
    Handshake resp = Handshake::responder(b, HandshakeVariant::V1_Ephemeral, rng, kNow + 100);
    CHECK_THROWS_AS(resp.respond(view(msg1)), CertificateRejected);
    CHECK(resp.phase() == HandshakePhase::Failed);
}

TEST_CASE("mixed variants abort") {
    DeterministicRng rng(35);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::SecureDevice);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    auto [init, msg1] = Handshake::initiate(a, HandshakeVariant::V1_Ephemeral, rng, kNow);
    Handshake resp = Handshake::responder(b, HandshakeVariant::V2_NonceStatic, rng, kNow);
    CHECK_THROWS_AS(resp.respond(view(msg1)), VariantMismatch);

    auto [init2, msg1b] = Handshake::initiate(a, HandshakeVariant::V2_NonceStatic, rng, kNow);
    Handshake resp2 = Handshake::responder(b, HandshakeVariant::V1_Ephemeral, rng, kNow);
    CHECK_THROWS_AS(resp2.respond(view(msg1b)), VariantMismatch);
}

TEST_CASE("tampered v2 nonce is caught by receipt verification") {
    DeterministicRng rng(36);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::SecureDevice);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    // flip one nonce byte of message 3 in flight (offset past type byte + TLV header)
    CHECK_THROWS_AS(run_handshake(a, b, HandshakeVariant::V2_NonceStatic,
                                  HandshakeVariant::V2_NonceStatic, rng, 2, 6),
                    BadReceipt);
}

TEST_CASE("tampered v1 ephemeral aborts, as bad point or bad receipt") {
    DeterministicRng rng(37);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::SecureDevice);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    int aborts = 0;
    for (std::size_t off = 8; off < 24; ++off) {
        try {
            run_handshake(a, b, HandshakeVariant::V1_Ephemeral, HandshakeVariant::V1_Ephemeral,
                          rng, 2, off);
        } catch (const BadReceipt&) {
            ++aborts;  // flipped point still on curve, keys diverged
        } catch (const InvalidPoint&) {
            ++aborts;  // flipped point rejected outright
        }
    }
    CHECK(aborts == 16);
}

TEST_CASE("v1 sessions with fixed statics derive fresh keys every time") {
    DeterministicRng rng(38);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::SecureDevice);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    std::vector<crypto::SessionKeys> seen;
    for (int i = 0; i < 100; ++i) {
        auto hs = run_handshake(a, b, HandshakeVariant::V1_Ephemeral,
                                HandshakeVariant::V1_Ephemeral, rng);
        for (const auto& k : seen) CHECK(k.enc != hs.initiator.keys.enc);
        seen.push_back(hs.initiator.keys);
    }
}

TEST_CASE("v2 keys are a pure function of statics plus nonce") {
    DeterministicRng rng(39);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::SecureDevice);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    auto [init, msg1] = Handshake::initiate(a, HandshakeVariant::V2_NonceStatic, rng, kNow);
    Handshake resp = Handshake::responder(b, HandshakeVariant::V2_NonceStatic, rng, kNow);
    auto s2 = resp.respond(view(msg1));
    auto s3 = init.respond(view(*s2.reply));

    // pull the nonce out of message 3: type byte | tag | len(2) | 16 bytes
    ByteView m3 = view(*s3.reply);
    crypto::Nonce nonce;
    std::copy(m3.begin() + 4, m3.begin() + 20, nonce.value.begin());

    auto s4 = resp.respond(view(*s3.reply));
    init.respond(view(*s4.reply));
    SessionContext ctx = init.take_context();

    crypto::SessionKeys recomputed = recompute_v2_keys(
        a.keys.secret, b.keys.public_key, a.keys.public_key, b.keys.public_key, nonce);
    CHECK(recomputed == ctx.keys);

    crypto::SessionKeys from_responder_side = recompute_v2_keys(
        b.keys.secret, a.keys.public_key, a.keys.public_key, b.keys.public_key, nonce);
    CHECK(from_responder_side == ctx.keys);
}

TEST_CASE("out of order handshake messages are rejected") {
    DeterministicRng rng(40);
    pki::CertificateAuthority ca = pki::CertificateAuthority::create(rng);
    EndpointIdentity a = make_endpoint(ca, rng, pki::Role::SecureDevice);
    EndpointIdentity b = make_endpoint(ca, rng, pki::Role::SecureDevice);

    auto [init, msg1] = Handshake::initiate(a, HandshakeVariant::V1_Ephemeral, rng, kNow);
    Handshake resp = Handshake::responder(b, HandshakeVariant::V1_Ephemeral, rng, kNow);

    // responder fed its own message type
    Bytes bogus = msg1;
    bogus[0] = 0x13;
    CHECK_THROWS_AS(resp.respond(view(bogus)), OutOfOrderMessage);
}
