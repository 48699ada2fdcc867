#include "offcbdc/attest.hpp"

#include <vector>

#include "offcbdc/errors.hpp"
#include "offcbdc/tlv.hpp"

namespace offcbdc::attest {

namespace {

// credential tags
constexpr std::uint8_t kTagSubjectPk = 0x01;
constexpr std::uint8_t kTagExpiry = 0x02;
constexpr std::uint8_t kTagAttribute = 0x03;  // name_len u8 | name | value i64 le
constexpr std::uint8_t kTagSignature = 0x04;

// proof container tags
constexpr std::uint8_t kTagBackend = 0x01;
constexpr std::uint8_t kTagPayload = 0x02;

// transparent payload tags
constexpr std::uint8_t kTagCredential = 0x01;
constexpr std::uint8_t kTagBindingSig = 0x02;

Bytes encode_attribute(const std::string& name, std::int64_t value) {
    Bytes out;
    append_u8(out, static_cast<std::uint8_t>(name.size()));
    append(out, view(to_bytes(name)));
    append_u64_le(out, static_cast<std::uint64_t>(value));
    return out;
}

std::pair<std::string, std::int64_t> decode_attribute(ByteView v) {
    if (v.empty()) throw ParseError("empty attribute");
    std::uint8_t name_len = v[0];
    if (v.size() != 1u + name_len + 8u) throw ParseError("bad attribute length");
    std::string name(v.begin() + 1, v.begin() + 1 + name_len);
    auto value = static_cast<std::int64_t>(read_u64_le(v, 1 + name_len));
    return {std::move(name), value};
}

}  // namespace

Bytes VerifiableCredential::payload_encoding() const {
    TlvWriter w;
    w.add(kTagSubjectPk, view(subject_public_key));
    w.add_u64(kTagExpiry, expiry);
    for (const auto& [name, value] : attributes)  // std::map keeps names sorted
        w.add(kTagAttribute, view(encode_attribute(name, value)));
    return w.take();
}

Bytes VerifiableCredential::encode() const {
    Bytes out = payload_encoding();
    TlvWriter w;
    w.add(kTagSignature, view(ca_signature));
    append(out, view(w.bytes()));
    return out;
}

VerifiableCredential VerifiableCredential::decode(ByteView data) {
    TlvReader r(data);
    VerifiableCredential vc;
    vc.subject_public_key = to_bytes(r.get(kTagSubjectPk));
    vc.expiry = r.get_u64(kTagExpiry);
    for (ByteView raw : r.all(kTagAttribute)) {
        auto [name, value] = decode_attribute(raw);
        vc.attributes[name] = value;
    }
    vc.ca_signature = to_bytes(r.get(kTagSignature));
    return vc;
}

VerifiableCredential issue_credential(pki::CertificateAuthority& ca,
                                      const Bytes& subject_public_key,
                                      std::map<std::string, std::int64_t> attributes,
                                      std::uint64_t expiry) {
    VerifiableCredential vc;
    vc.subject_public_key = subject_public_key;
    vc.expiry = expiry;
    vc.attributes = std::move(attributes);
    vc.ca_signature = ca.sign_payload(view(vc.payload_encoding()));
    return vc;
}

Bytes ConditionProof::encode() const {
    TlvWriter w;
    w.add(kTagBackend, view(to_bytes(backend_id)));
    w.add(kTagPayload, view(payload));
    return w.take();
}

ConditionProof ConditionProof::decode(ByteView data) {
    TlvReader r(data);
    ConditionProof p;
    ByteView id = r.get(kTagBackend);
    p.backend_id = std::string(id.begin(), id.end());
    p.payload = to_bytes(r.get(kTagPayload));
    return p;
}

namespace {

// The five assertions of the condition statement, shared by the prover's
// witness check and the transparent verifier. Returns the first failing
// assertion number, or 0 when all hold.
int check_statement(const VerifiableCredential& vc, const Bytes& presented_pk,
                    ByteView binding_sig, const ConditionPublicInputs& pub,
                    bool with_threshold) {
    if (!crypto::verify(pub.ca_public_key, view(vc.payload_encoding()), view(vc.ca_signature)))
        return 1;
    if (vc.expiry <= pub.now) return 2;
    if (vc.subject_public_key != presented_pk) return 3;
    if (!crypto::verify(vc.subject_public_key, view(pub.binding), binding_sig)) return 4;
    if (with_threshold) {
        auto it = vc.attributes.find(pub.attribute);
        if (it == vc.attributes.end() || it->second < pub.threshold) return 5;
    }
    return 0;
}

class TransparentBackend final : public ProofBackend {
public:
    std::string id() const override { return kTransparentBackend; }

    Bytes prove(const VerifiableCredential& vc, const crypto::KeyPair& holder,
                const ConditionPublicInputs& pub, bool with_threshold) const override {
        Bytes sig = crypto::sign(holder.secret, view(pub.binding));
        if (int line = check_statement(vc, holder.public_key, view(sig), pub, with_threshold))
            throw ConditionUnsatisfied(line);
        TlvWriter w;
        w.add(kTagCredential, view(vc.encode()));
        w.add(kTagBindingSig, view(sig));
        return w.take();
    }

    bool verify(ByteView payload, const ConditionPublicInputs& pub,
                bool with_threshold) const override {
        try {
            TlvReader r(payload);
            VerifiableCredential vc = VerifiableCredential::decode(r.get(kTagCredential));
            ByteView sig = r.get(kTagBindingSig);
            return check_statement(vc, vc.subject_public_key, sig, pub, with_threshold) == 0;
        } catch (const Error&) {
            return false;
        }
    }
};

const TransparentBackend g_transparent;

std::vector<const ProofBackend*>& backend_registry() {
    static std::vector<const ProofBackend*> registry{&g_transparent};
    return registry;
}

}  // namespace

const char* const kTransparentBackend = "transparent-v1";

void register_backend(const ProofBackend* b) {
    backend_registry().push_back(b);
}

const ProofBackend& backend(const std::string& id) {
    for (const ProofBackend* b : backend_registry())
        if (b->id() == id) return *b;
    throw UnknownBackend(id);
}

ConditionProof prove_condition(const VerifiableCredential& vc, const crypto::KeyPair& holder,
                               const ConditionPublicInputs& pub, const std::string& backend_id) {
    if (pub.binding.empty()) throw Error("empty proof binding");
    return ConditionProof{backend_id, backend(backend_id).prove(vc, holder, pub, true)};
}

bool verify_condition(const ConditionProof& proof, const ConditionPublicInputs& pub) {
    if (pub.binding.empty()) return false;
    return backend(proof.backend_id).verify(view(proof.payload), pub, true);
}

namespace {
ConditionPublicInputs withdrawal_inputs(const Bytes& ca_pk, const Bytes& epk, std::uint64_t now) {
    ConditionPublicInputs pub;
    pub.ca_public_key = ca_pk;
    pub.binding = epk;
    pub.now = now;
    return pub;
}
}  // namespace

ConditionProof prove_withdrawal(const VerifiableCredential& vc, const crypto::KeyPair& holder,
                                const Bytes& ca_public_key, const Bytes& ephemeral_public_key,
                                std::uint64_t now, const std::string& backend_id) {
    ConditionPublicInputs pub = withdrawal_inputs(ca_public_key, ephemeral_public_key, now);
    return ConditionProof{backend_id, backend(backend_id).prove(vc, holder, pub, false)};
}

bool verify_withdrawal(const ConditionProof& proof, const Bytes& ca_public_key,
                       const Bytes& ephemeral_public_key, std::uint64_t now) {
    ConditionPublicInputs pub = withdrawal_inputs(ca_public_key, ephemeral_public_key, now);
    return backend(proof.backend_id).verify(view(proof.payload), pub, false);
}

}  // namespace offcbdc::attest
