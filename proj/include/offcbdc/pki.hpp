#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "offcbdc/crypto.hpp"

namespace offcbdc::pki {

enum class Role : std::uint8_t {
    SecureDevice = 0x01,
    UserTerminal = 0x02,
    FITerminal = 0x03,
};

const char* role_name(Role r);

// The eight secure-element operations; opcode values double as the wire
// opcodes of the device command framing.
enum class OperationName : std::uint8_t {
    Withdraw = 0x01,
    Request = 0x02,
    Accept = 0x03,
    Transfer = 0x04,
    Receive = 0x05,
    Retransmit = 0x06,
    Synchronize = 0x07,
    Deposit = 0x08,
};

inline constexpr OperationName kAllOperations[] = {
    OperationName::Withdraw,   OperationName::Request,     OperationName::Accept,
    OperationName::Transfer,   OperationName::Receive,     OperationName::Retransmit,
    OperationName::Synchronize, OperationName::Deposit,
};

const char* operation_name(OperationName op);

// Role -> operation invocation permissions. Withdraw/Synchronize/Deposit are
// FI-terminal only, Request/Accept user-terminal only, and
// Transfer/Receive/Retransmit may only be invoked by another secure device.
bool permitted(Role role, OperationName op);

struct ParticipationCertificate {
    Bytes subject_public_key;  // 65-byte point
    Role role = Role::SecureDevice;
    std::uint64_t serial = 0;
    std::uint64_t expiry = 0;  // unix seconds
    Bytes ca_signature;        // over the canonical payload encoding

    // signed portion: pk | role | serial | expiry as TLV in that order
    Bytes payload_encoding() const;
    // payload plus the signature field
    Bytes encode() const;
    static ParticipationCertificate decode(ByteView data);
};

class CertificateAuthority {
public:
    explicit CertificateAuthority(crypto::KeyPair keys) : keys_(std::move(keys)) {}
    static CertificateAuthority create(DeterministicRng& rng);

    const Bytes& public_key() const { return keys_.public_key; }

    // Throws ExpiryInPast when expiry <= now.
    ParticipationCertificate issue(const Bytes& subject_pk, Role role, std::uint64_t expiry,
                                   std::uint64_t now);

    // credential issuance shares the authority key
    Bytes sign_payload(ByteView payload) { return crypto::sign(keys_.secret, payload); }

private:
    crypto::KeyPair keys_;
    std::uint64_t next_serial_ = 1;
};

// Returns the embedded role iff the signature verifies under ca_pk and the
// certificate has not expired. Throws BadSignature / Expired.
Role verify_certificate(const Bytes& ca_pk, const ParticipationCertificate& cert,
                        std::uint64_t now);

struct RegistryEntry {
    std::string government_id;
    Bytes public_key;
};

// Enrollment registry kept by the designated institution. Entries are held
// sealed under a registry key; plaintext retrieval models the court-order
// path and is only exposed for audits.
class Registry {
public:
    explicit Registry(DeterministicRng& rng);

    // Throws DuplicateEnrollment when the key is already present.
    void enroll(const RegistryEntry& entry);
    bool enrolled(const Bytes& public_key) const;
    std::size_t size() const { return sealed_entries_.size(); }

    std::vector<RegistryEntry> unseal_all() const;

private:
    crypto::SessionKeys registry_keys_;
    std::vector<Bytes> sealed_entries_;
    std::vector<Bytes> enrolled_keys_;
};

}  // namespace offcbdc::pki
