#include "offcbdc/pki.hpp"

#include "offcbdc/errors.hpp"
#include "offcbdc/tlv.hpp"

namespace offcbdc::pki {

namespace {

// certificate TLV tags (normative)
constexpr std::uint8_t kTagPk = 0x01;
constexpr std::uint8_t kTagRole = 0x02;
constexpr std::uint8_t kTagSerial = 0x03;
constexpr std::uint8_t kTagExpiry = 0x04;
constexpr std::uint8_t kTagSignature = 0x05;

// registry entry tags
constexpr std::uint8_t kTagGovernmentId = 0x01;
constexpr std::uint8_t kTagEntryPk = 0x02;

Role role_from_byte(std::uint8_t b) {
    switch (b) {
        case 0x01: return Role::SecureDevice;
        case 0x02: return Role::UserTerminal;
        case 0x03: return Role::FITerminal;
        default: throw ParseError("unknown role value " + std::to_string(b));
    }
}

}  // namespace

const char* role_name(Role r) {
    switch (r) {
        case Role::SecureDevice: return "secure-device";
        case Role::UserTerminal: return "user-terminal";
        case Role::FITerminal: return "fi-terminal";
    }
    return "?";
}

const char* operation_name(OperationName op) {
    switch (op) {
        case OperationName::Withdraw: return "Withdraw";
        case OperationName::Request: return "Request";
        case OperationName::Accept: return "Accept";
        case OperationName::Transfer: return "Transfer";
        case OperationName::Receive: return "Receive";
        case OperationName::Retransmit: return "Retransmit";
        case OperationName::Synchronize: return "Synchronize";
        case OperationName::Deposit: return "Deposit";
    }
    return "?";
}

bool permitted(Role role, OperationName op) {
    switch (op) {
        case OperationName::Withdraw:
        case OperationName::Synchronize:
        case OperationName::Deposit:
            return role == Role::FITerminal;
        case OperationName::Request:
        case OperationName::Accept:
            return role == Role::UserTerminal;
        case OperationName::Transfer:
        case OperationName::Receive:
        case OperationName::Retransmit:
            return role == Role::SecureDevice;
    }
    return false;
}

Bytes ParticipationCertificate::payload_encoding() const {
    TlvWriter w;
    w.add(kTagPk, view(subject_public_key));
    w.add_u8(kTagRole, static_cast<std::uint8_t>(role));
    w.add_u64(kTagSerial, serial);
    w.add_u64(kTagExpiry, expiry);
    return w.take();
}

Bytes ParticipationCertificate::encode() const {
    Bytes out = payload_encoding();
    TlvWriter w;
    w.add(kTagSignature, view(ca_signature));
    append(out, view(w.bytes()));
    return out;
}

ParticipationCertificate ParticipationCertificate::decode(ByteView data) {
    TlvReader r(data);
    ParticipationCertificate cert;
    cert.subject_public_key = to_bytes(r.get(kTagPk));
    if (cert.subject_public_key.size() != crypto::kPointBytes)
        throw ParseError("bad certificate public key length");
    cert.role = role_from_byte(r.get_u8(kTagRole));
    cert.serial = r.get_u64(kTagSerial);
    cert.expiry = r.get_u64(kTagExpiry);
    cert.ca_signature = to_bytes(r.get(kTagSignature));
    return cert;
}

CertificateAuthority CertificateAuthority::create(DeterministicRng& rng) {
    return CertificateAuthority(crypto::generate_keypair(rng));
}

ParticipationCertificate CertificateAuthority::issue(const Bytes& subject_pk, Role role,
                                                     std::uint64_t expiry, std::uint64_t now) {
    if (expiry <= now) throw ExpiryInPast();
    ParticipationCertificate cert;
    cert.subject_public_key = subject_pk;
    cert.role = role;
    cert.serial = next_serial_++;
    cert.expiry = expiry;
    cert.ca_signature = crypto::sign(keys_.secret, view(cert.payload_encoding()));
    return cert;
}

Role verify_certificate(const Bytes& ca_pk, const ParticipationCertificate& cert,
                        std::uint64_t now) {
    if (!crypto::verify(ca_pk, view(cert.payload_encoding()), view(cert.ca_signature)))
        throw BadSignature();
    if (now >= cert.expiry) throw Expired();
    return cert.role;
}

Registry::Registry(DeterministicRng& rng) {
    crypto::SharedSecret seed{rng.bytes(32), {}};
    registry_keys_ = crypto::kdf(seed, view(to_bytes(std::string_view("offcbdc/registry"))));
}

void Registry::enroll(const RegistryEntry& entry) {
    if (enrolled(entry.public_key)) throw DuplicateEnrollment();
    TlvWriter w;
    w.add(kTagGovernmentId, view(to_bytes(entry.government_id)));
    w.add(kTagEntryPk, view(entry.public_key));
    std::uint64_t counter = sealed_entries_.size() + 1;
    sealed_entries_.push_back(
        crypto::seal(registry_keys_, crypto::Direction::ToResponder, counter, view(w.bytes())));
    enrolled_keys_.push_back(entry.public_key);
}

bool Registry::enrolled(const Bytes& public_key) const {
    for (const Bytes& k : enrolled_keys_) {
        if (k == public_key) return true;
    }
    return false;
}

std::vector<RegistryEntry> Registry::unseal_all() const {
    std::vector<RegistryEntry> out;
    for (std::size_t i = 0; i < sealed_entries_.size(); ++i) {
        Bytes plain = crypto::open(registry_keys_, crypto::Direction::ToResponder, i + 1,
                                   view(sealed_entries_[i]));
        TlvReader r(view(plain));
        ByteView id = r.get(kTagGovernmentId);
        out.push_back(RegistryEntry{std::string(id.begin(), id.end()), to_bytes(r.get(kTagEntryPk))});
    }
    return out;
}

}  // namespace offcbdc::pki
