#pragma once

#include <optional>
#include <utility>

#include "offcbdc/crypto.hpp"
#include "offcbdc/pki.hpp"

namespace offcbdc::channel {

enum class HandshakeVariant : std::uint8_t {
    V1_Ephemeral = 1,    // ephemeral pairs on both sides, forward secrecy
    V2_NonceStatic = 2,  // static-only shared secret, initiator nonce into the KDF
};

enum class HandshakePhase {
    Idle,
    SentHello,      // initiator: waiting for responder certificate
    AwaitKeyShare,  // responder: certificate sent, waiting for epk/nonce
    SentKeyShare,   // initiator: waiting for receipt
    Established,
    Failed,
};

// Static identity material an endpoint brings to every handshake.
struct EndpointIdentity {
    pki::ParticipationCertificate certificate;
    crypto::KeyPair keys;
    Bytes ca_public_key;
};

// Established channel state. Counters advance by exactly one per sealed
// frame and are bound into each frame's MAC, so replays and reordering of
// in-session traffic surface as CounterMismatch.
struct SessionContext {
    crypto::SessionKeys keys;
    std::uint64_t send_counter = 0;
    std::uint64_t recv_counter = 0;
    pki::Role peer_role = pki::Role::SecureDevice;
    Bytes peer_public_key;
    bool initiator = false;

    Bytes send(ByteView payload);
    Bytes receive(ByteView sealed);
};

// Four-message mutual authentication:
//
//   1 hello      initiator certificate + certificate request
//   2 cert       responder certificate
//   3 key share  ephemeral public key (V1) or fresh nonce (V2)
//   4 finish     responder ephemeral (V1) + receipt over the transcript
//
// The initiator verifies the receipt locally after message 4. Handshake
// messages travel in the clear (certificates are public); confidentiality
// starts with the established session.
class Handshake {
public:
    static std::pair<Handshake, Bytes> initiate(const EndpointIdentity& self,
                                                HandshakeVariant variant, DeterministicRng& rng,
                                                std::uint64_t now);
    static Handshake responder(const EndpointIdentity& self, HandshakeVariant variant,
                               DeterministicRng& rng, std::uint64_t now);

    struct Step {
        std::optional<Bytes> reply;
        bool established = false;
    };

    // Advance on an incoming message. Throws CertificateRejected,
    // VariantMismatch, BadReceipt, OutOfOrderMessage or ParseError; any
    // throw leaves the handshake Failed.
    Step respond(ByteView incoming);

    HandshakePhase phase() const { return phase_; }
    bool established() const { return phase_ == HandshakePhase::Established; }
    pki::Role peer_role() const { return peer_role_; }

    // Moves the established context out; only valid once established.
    SessionContext take_context();

private:
    Handshake(const EndpointIdentity& self, HandshakeVariant variant, DeterministicRng& rng,
              std::uint64_t now, bool is_initiator);

    Bytes hello_message();
    Bytes certificate_message();
    Bytes key_share_message();
    Bytes finish_message();

    void ingest_peer_certificate(ByteView cert_bytes, std::uint8_t variant_byte);
    void derive_keys(const Bytes& z_ephemeral);
    Bytes expected_receipt(ByteView finish_prefix) const;

    const EndpointIdentity* self_;
    HandshakeVariant variant_;
    DeterministicRng* rng_;
    std::uint64_t now_;
    bool is_initiator_;

    HandshakePhase phase_ = HandshakePhase::Idle;
    Bytes transcript_;
    std::optional<crypto::KeyPair> ephemeral_;
    std::optional<crypto::Nonce> nonce_;
    Bytes peer_public_key_;
    pki::Role peer_role_ = pki::Role::SecureDevice;
    std::optional<crypto::SessionKeys> session_keys_;
    std::optional<SessionContext> context_;
};

// Recomputes V2 session keys from static key material and the session nonce
// alone; the executable statement that the V2 shared secret carries no
// per-session asymmetric contribution.
crypto::SessionKeys recompute_v2_keys(const Bytes& own_secret, const Bytes& peer_public,
                                      const Bytes& initiator_public, const Bytes& responder_public,
                                      const crypto::Nonce& nonce);

}  // namespace offcbdc::channel
