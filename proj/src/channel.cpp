#include "offcbdc/channel.hpp"

#include <algorithm>

#include "offcbdc/errors.hpp"
#include "offcbdc/tlv.hpp"

namespace offcbdc::channel {

namespace {

constexpr std::uint8_t kMsgHello = 0x11;
constexpr std::uint8_t kMsgCert = 0x12;
constexpr std::uint8_t kMsgKeyShare = 0x13;
constexpr std::uint8_t kMsgFinish = 0x14;

constexpr std::uint8_t kTagCertificate = 0xA1;
constexpr std::uint8_t kTagVariant = 0xA2;
constexpr std::uint8_t kTagEphemeral = 0xA3;
constexpr std::uint8_t kTagNonce = 0xA4;
constexpr std::uint8_t kTagReceipt = 0xA5;

constexpr std::string_view kContextLabel = "offcbdc/hs/v1";

Bytes message(std::uint8_t type, const Bytes& body) {
    Bytes out;
    append_u8(out, type);
    append(out, view(body));
    return out;
}

std::uint8_t message_type(ByteView m) {
    if (m.empty()) throw ParseError("empty handshake message");
    return m[0];
}

TlvReader message_body(ByteView m) {
    return TlvReader(m.subspan(1));
}

crypto::Direction send_direction(bool initiator) {
    return initiator ? crypto::Direction::ToResponder : crypto::Direction::ToInitiator;
}

}  // namespace

Bytes SessionContext::send(ByteView payload) {
    ++send_counter;
    return crypto::seal(keys, send_direction(initiator), send_counter, payload);
}

Bytes SessionContext::receive(ByteView sealed) {
    Bytes plain = crypto::open(keys, send_direction(!initiator), recv_counter + 1, sealed);
    ++recv_counter;
    return plain;
}

Handshake::Handshake(const EndpointIdentity& self, HandshakeVariant variant,
                     DeterministicRng& rng, std::uint64_t now, bool is_initiator)
    : self_(&self), variant_(variant), rng_(&rng), now_(now), is_initiator_(is_initiator) {}

std::pair<Handshake, Bytes> Handshake::initiate(const EndpointIdentity& self,
                                                HandshakeVariant variant, DeterministicRng& rng,
                                                std::uint64_t now) {
    Handshake hs(self, variant, rng, now, true);
    Bytes first = hs.hello_message();
    hs.transcript_ = first;
    hs.phase_ = HandshakePhase::SentHello;
    return {std::move(hs), std::move(first)};
}

Handshake Handshake::responder(const EndpointIdentity& self, HandshakeVariant variant,
                               DeterministicRng& rng, std::uint64_t now) {
    return Handshake(self, variant, rng, now, false);
}

Bytes Handshake::hello_message() {
    TlvWriter w;
    w.add(kTagCertificate, view(self_->certificate.encode()));
    w.add_u8(kTagVariant, static_cast<std::uint8_t>(variant_));
    return message(kMsgHello, w.bytes());
}

Bytes Handshake::certificate_message() {
    TlvWriter w;
    w.add(kTagCertificate, view(self_->certificate.encode()));
    w.add_u8(kTagVariant, static_cast<std::uint8_t>(variant_));
    return message(kMsgCert, w.bytes());
}

Bytes Handshake::key_share_message() {
    TlvWriter w;
    if (variant_ == HandshakeVariant::V1_Ephemeral) {
        ephemeral_ = crypto::generate_keypair(*rng_);
        w.add(kTagEphemeral, view(ephemeral_->public_key));
    } else {
        nonce_ = crypto::Nonce::random(*rng_);
        w.add(kTagNonce, ByteView(nonce_->value.data(), nonce_->value.size()));
    }
    return message(kMsgKeyShare, w.bytes());
}

void Handshake::ingest_peer_certificate(ByteView cert_bytes, std::uint8_t variant_byte) {
    if (variant_byte != static_cast<std::uint8_t>(variant_)) throw VariantMismatch();
    auto cert = pki::ParticipationCertificate::decode(cert_bytes);
    try {
        peer_role_ = pki::verify_certificate(self_->ca_public_key, cert, now_);
    } catch (const BadSignature&) {
        throw CertificateRejected("bad authority signature");
    } catch (const Expired&) {
        throw CertificateRejected("expired");
    }
    peer_public_key_ = cert.subject_public_key;
}

void Handshake::derive_keys(const Bytes& z_ephemeral) {
    crypto::SharedSecret shared;
    shared.z_static = crypto::dh(self_->keys.secret, peer_public_key_);
    shared.z_ephemeral = z_ephemeral;

    const Bytes& initiator_pk = is_initiator_ ? self_->keys.public_key : peer_public_key_;
    const Bytes& responder_pk = is_initiator_ ? peer_public_key_ : self_->keys.public_key;

    Bytes context = to_bytes(kContextLabel);
    append_u8(context, static_cast<std::uint8_t>(variant_));
    append(context, view(initiator_pk));
    append(context, view(responder_pk));
    if (variant_ == HandshakeVariant::V2_NonceStatic)
        append(context, ByteView(nonce_->value.data(), nonce_->value.size()));

    session_keys_ = crypto::kdf(shared, view(context));
}

Bytes Handshake::expected_receipt(ByteView finish_prefix) const {
    Bytes material = transcript_;
    append(material, finish_prefix);
    Bytes digest = crypto::sha256(view(material));
    return crypto::hmac_sha256(
        ByteView(session_keys_->receipt.data(), session_keys_->receipt.size()), view(digest));
}

Bytes Handshake::finish_message() {
    TlvWriter w;
    if (variant_ == HandshakeVariant::V1_Ephemeral) {
        w.add(kTagEphemeral, view(ephemeral_->public_key));
    }
    Bytes prefix = message(kMsgFinish, w.bytes());
    Bytes receipt = expected_receipt(view(prefix));
    TlvWriter tail;
    tail.add(kTagReceipt, view(receipt));
    Bytes out = prefix;
    append(out, view(tail.bytes()));
    return out;
}

Handshake::Step Handshake::respond(ByteView incoming) {
    try {
        std::uint8_t type = message_type(incoming);

        if (!is_initiator_ && phase_ == HandshakePhase::Idle) {
            if (type != kMsgHello) throw OutOfOrderMessage();
            TlvReader body = message_body(incoming);
            ingest_peer_certificate(body.get(kTagCertificate), body.get_u8(kTagVariant));
            append(transcript_, incoming);
            Bytes reply = certificate_message();
            append(transcript_, view(reply));
            phase_ = HandshakePhase::AwaitKeyShare;
            return Step{std::move(reply), false};
        }

        if (is_initiator_ && phase_ == HandshakePhase::SentHello) {
            if (type != kMsgCert) throw OutOfOrderMessage();
            TlvReader body = message_body(incoming);
            ingest_peer_certificate(body.get(kTagCertificate), body.get_u8(kTagVariant));
            append(transcript_, incoming);
            Bytes reply = key_share_message();
            append(transcript_, view(reply));
            phase_ = HandshakePhase::SentKeyShare;
            return Step{std::move(reply), false};
        }

        if (!is_initiator_ && phase_ == HandshakePhase::AwaitKeyShare) {
            if (type != kMsgKeyShare) throw OutOfOrderMessage();
            TlvReader body = message_body(incoming);
            Bytes z_eph;
            if (variant_ == HandshakeVariant::V1_Ephemeral) {
                auto epk = body.find(kTagEphemeral);
                if (!epk) throw VariantMismatch();
                ephemeral_ = crypto::generate_keypair(*rng_);
                z_eph = crypto::dh(ephemeral_->secret, to_bytes(*epk));
            } else {
                auto nonce_bytes = body.find(kTagNonce);
                if (!nonce_bytes || nonce_bytes->size() != crypto::kNonceBytes)
                    throw VariantMismatch();
                crypto::Nonce n;
                std::copy(nonce_bytes->begin(), nonce_bytes->end(), n.value.begin());
                nonce_ = n;
            }
            append(transcript_, incoming);
            derive_keys(z_eph);
            Bytes reply = finish_message();
            phase_ = HandshakePhase::Established;
            context_ = SessionContext{*session_keys_, 0, 0, peer_role_, peer_public_key_, false};
            return Step{std::move(reply), true};
        }

        if (is_initiator_ && phase_ == HandshakePhase::SentKeyShare) {
            if (type != kMsgFinish) throw OutOfOrderMessage();
            TlvReader body = message_body(incoming);
            ByteView receipt = body.get(kTagReceipt);

            Bytes z_eph;
            if (variant_ == HandshakeVariant::V1_Ephemeral) {
                auto epk = body.find(kTagEphemeral);
                if (!epk) throw VariantMismatch();
                z_eph = crypto::dh(ephemeral_->secret, to_bytes(*epk));
            }
            derive_keys(z_eph);

            // the receipt TLV (3 + 32 bytes) is the tail; it covers all bytes before it
            if (incoming.size() < 3 + crypto::kMacBytes) throw ParseError("short finish");
            ByteView prefix = incoming.subspan(0, incoming.size() - (3 + crypto::kMacBytes));
            Bytes expected = expected_receipt(prefix);
            if (receipt.size() != expected.size() ||
                !std::equal(receipt.begin(), receipt.end(), expected.begin()))
                throw BadReceipt();

            phase_ = HandshakePhase::Established;
            context_ = SessionContext{*session_keys_, 0, 0, peer_role_, peer_public_key_, true};
            return Step{std::nullopt, true};
        }

        throw OutOfOrderMessage();
    } catch (...) {
        phase_ = HandshakePhase::Failed;
        throw;
    }
}

SessionContext Handshake::take_context() {
    if (!context_) throw Error("handshake not established");
    SessionContext ctx = std::move(*context_);
    context_.reset();
    return ctx;
}

crypto::SessionKeys recompute_v2_keys(const Bytes& own_secret, const Bytes& peer_public,
                                      const Bytes& initiator_public, const Bytes& responder_public,
                                      const crypto::Nonce& nonce) {
    crypto::SharedSecret shared;
    shared.z_static = crypto::dh(own_secret, peer_public);

    Bytes context = to_bytes(kContextLabel);
    append_u8(context, static_cast<std::uint8_t>(HandshakeVariant::V2_NonceStatic));
    append(context, view(initiator_public));
    append(context, view(responder_public));
    append(context, ByteView(nonce.value.data(), nonce.value.size()));
    return crypto::kdf(shared, view(context));
}

}  // namespace offcbdc::channel
