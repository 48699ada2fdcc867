#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "offcbdc/crypto.hpp"
#include "offcbdc/pki.hpp"

namespace offcbdc::attest {

// Signed attribute document held by the wallet; the witness for condition
// proofs. Attribute values are integers (condition checks are orderings).
struct VerifiableCredential {
    std::map<std::string, std::int64_t> attributes;
    Bytes subject_public_key;
    std::uint64_t expiry = 0;
    Bytes ca_signature;

    Bytes payload_encoding() const;  // canonical: pk | expiry | sorted attributes
    Bytes encode() const;
    static VerifiableCredential decode(ByteView data);
};

VerifiableCredential issue_credential(pki::CertificateAuthority& ca,
                                      const Bytes& subject_public_key,
                                      std::map<std::string, std::int64_t> attributes,
                                      std::uint64_t expiry);

// Everything the verifier contributes. `binding` is the transaction id for
// payments or the ephemeral public key for withdrawals; never empty.
struct ConditionPublicInputs {
    std::int64_t threshold = 0;
    std::string attribute;
    Bytes ca_public_key;
    Bytes binding;
    std::uint64_t now = 0;
};

struct ConditionProof {
    std::string backend_id;
    Bytes payload;

    Bytes encode() const;
    static ConditionProof decode(ByteView data);
};

// Pluggable proof system. The reference backend is transparent: its payload
// discloses the credential and a binding signature so the verifier can
// recheck every condition directly. It exercises the protocol plumbing and
// the rejection matrix but adds no zero-knowledge property; a succinct
// backend can be slotted in behind the same two calls.
class ProofBackend {
public:
    virtual ~ProofBackend() = default;
    virtual std::string id() const = 0;
    // full condition statement (all five assertions)
    virtual Bytes prove(const VerifiableCredential& vc, const crypto::KeyPair& holder,
                        const ConditionPublicInputs& pub, bool with_threshold) const = 0;
    virtual bool verify(ByteView payload, const ConditionPublicInputs& pub,
                        bool with_threshold) const = 0;
};

// Registers a backend for the lifetime of the process (tests swap backends
// through this). The transparent backend is always present.
void register_backend(const ProofBackend* backend);
const ProofBackend& backend(const std::string& id);  // throws UnknownBackend
extern const char* const kTransparentBackend;

// Condition proof over the full statement: credential authentic, unexpired,
// holder controls the credential key, binding signed, attribute >= threshold.
// Throws ConditionUnsatisfied(line) when the witness fails an assertion.
ConditionProof prove_condition(const VerifiableCredential& vc, const crypto::KeyPair& holder,
                               const ConditionPublicInputs& pub,
                               const std::string& backend_id = kTransparentBackend);
bool verify_condition(const ConditionProof& proof, const ConditionPublicInputs& pub);

// Withdrawal variant: the first four assertions only, with the ephemeral
// public key as the binding.
ConditionProof prove_withdrawal(const VerifiableCredential& vc, const crypto::KeyPair& holder,
                                const Bytes& ca_public_key, const Bytes& ephemeral_public_key,
                                std::uint64_t now,
                                const std::string& backend_id = kTransparentBackend);
bool verify_withdrawal(const ConditionProof& proof, const Bytes& ca_public_key,
                       const Bytes& ephemeral_public_key, std::uint64_t now);

}  // namespace offcbdc::attest
