#include "doctest.h"

#include "offcbdc/attest.hpp"
#include "offcbdc/errors.hpp"

using namespace offcbdc;
using namespace offcbdc::attest;

namespace {

constexpr std::uint64_t kNow = 1'700'000'000;

struct Fixture {
    DeterministicRng rng{61};
    pki::CertificateAuthority ca{pki::CertificateAuthority::create(rng)};
    crypto::KeyPair holder{crypto::generate_keypair(rng)};

    VerifiableCredential credential(std::int64_t age, std::uint64_t expiry = kNow + 1000) {
        return issue_credential(ca, holder.public_key, {{"age", age}}, expiry);
    }

    ConditionPublicInputs inputs(std::int64_t threshold, Bytes binding) {
        ConditionPublicInputs pub;
        pub.threshold = threshold;
        pub.attribute = "age";
        pub.ca_public_key = ca.public_key();
        pub.binding = std::move(binding);
        pub.now = kNow;
        return pub;
    }
};

}  // namespace

TEST_CASE("satisfied credential proves and verifies against the binding") {
    Fixture f;
    VerifiableCredential vc = f.credential(21);
    ConditionPublicInputs pub = f.inputs(18, f.rng.bytes(16));

    ConditionProof proof = prove_condition(vc, f.holder, pub);
    CHECK(verify_condition(proof, pub));

    // same proof under a different binding value must fail
    ConditionPublicInputs other = pub;
    other.binding = f.rng.bytes(16);
    CHECK_FALSE(verify_condition(proof, other));

    // payload corruption fails closed
    ConditionProof mangled = proof;
    mangled.payload[mangled.payload.size() / 2] ^= 0x40;
    CHECK_FALSE(verify_condition(mangled, pub));
}

TEST_CASE("each violated assertion is reported by line") {
    Fixture f;
    Bytes binding = f.rng.bytes(16);

    // 1: credential not signed by this authority
    DeterministicRng rng2(62);
    pki::CertificateAuthority other_ca = pki::CertificateAuthority::create(rng2);
    VerifiableCredential foreign =
        issue_credential(other_ca, f.holder.public_key, {{"age", 30}}, kNow + 1000);
    CHECK_THROWS_AS(prove_condition(foreign, f.holder, f.inputs(18, binding)),
                    ConditionUnsatisfied);
    try {
        prove_condition(foreign, f.holder, f.inputs(18, binding));
    } catch (const ConditionUnsatisfied& e) {
        CHECK(e.line() == 1);
    }

    // 2: expired
    try {
        prove_condition(f.credential(30, kNow), f.holder, f.inputs(18, binding));
        FAIL("expected throw");
    } catch (const ConditionUnsatisfied& e) {
        CHECK(e.line() == 2);
    }

    // 3: holder does not control the credential key
    crypto::KeyPair stranger = crypto::generate_keypair(f.rng);
    try {
        prove_condition(f.credential(30), stranger, f.inputs(18, binding));
        FAIL("expected throw");
    } catch (const ConditionUnsatisfied& e) {
        CHECK(e.line() == 3);
    }

    // 5: attribute below threshold, and missing attribute
    try {
        prove_condition(f.credential(17), f.holder, f.inputs(18, binding));
        FAIL("expected throw");
    } catch (const ConditionUnsatisfied& e) {
        CHECK(e.line() == 5);
    }
    ConditionPublicInputs missing = f.inputs(0, binding);
    missing.attribute = "height";
    try {
        prove_condition(f.credential(17), f.holder, missing);
        FAIL("expected throw");
    } catch (const ConditionUnsatisfied& e) {
        CHECK(e.line() == 5);
    }
}

TEST_CASE("verification rejects each individually forged component") {
    Fixture f;
    Bytes binding = f.rng.bytes(16);
    ConditionPublicInputs pub = f.inputs(18, binding);
    VerifiableCredential vc = f.credential(25);
    ConditionProof good = prove_condition(vc, f.holder, pub);
    REQUIRE(verify_condition(good, pub));

    // expired at verification time
    ConditionPublicInputs late = pub;
    late.now = kNow + 2000;
    CHECK_FALSE(verify_condition(good, late));

    // verifier bound to a different authority
    DeterministicRng rng2(63);
    pki::CertificateAuthority other_ca = pki::CertificateAuthority::create(rng2);
    ConditionPublicInputs wrong_ca = pub;
    wrong_ca.ca_public_key = other_ca.public_key();
    CHECK_FALSE(verify_condition(good, wrong_ca));

    // threshold raised above the attribute
    ConditionPublicInputs stricter = pub;
    stricter.threshold = 26;
    CHECK_FALSE(verify_condition(good, stricter));

    // different attribute requested
    ConditionPublicInputs other_attr = pub;
    other_attr.attribute = "income";
    CHECK_FALSE(verify_condition(good, other_attr));
}

TEST_CASE("completeness around the threshold boundary") {
    Fixture f;
    for (std::int64_t value : {0, 17, 18, 19, 100}) {
        VerifiableCredential vc = f.credential(value);
        for (std::int64_t tau : {std::int64_t(0), value - 1, value, value + 1}) {
            ConditionPublicInputs pub = f.inputs(tau, f.rng.bytes(16));
            if (value >= tau) {
                ConditionProof proof = prove_condition(vc, f.holder, pub);
                CHECK(verify_condition(proof, pub));
            } else {
                CHECK_THROWS_AS(prove_condition(vc, f.holder, pub), ConditionUnsatisfied);
            }
        }
    }
}

TEST_CASE("withdrawal proofs bind to the ephemeral key, no threshold clause") {
    Fixture f;
    VerifiableCredential vc = f.credential(0);  // attribute value irrelevant here
    crypto::KeyPair session_eph = crypto::generate_keypair(f.rng);

    ConditionProof proof =
        prove_withdrawal(vc, f.holder, f.ca.public_key(), session_eph.public_key, kNow);
    CHECK(verify_withdrawal(proof, f.ca.public_key(), session_eph.public_key, kNow));

    crypto::KeyPair other_eph = crypto::generate_keypair(f.rng);
    CHECK_FALSE(verify_withdrawal(proof, f.ca.public_key(), other_eph.public_key, kNow));

    DeterministicRng rng2(64);
    pki::CertificateAuthority other_ca = pki::CertificateAuthority::create(rng2);
    CHECK_FALSE(verify_withdrawal(proof, other_ca.public_key(), session_eph.public_key, kNow));
}

TEST_CASE("credential encoding round trips") {
    Fixture f;
    VerifiableCredential vc =
        issue_credential(f.ca, f.holder.public_key, {{"age", 44}, {"score", -3}}, kNow + 55);
    VerifiableCredential back = VerifiableCredential::decode(view(vc.encode()));
    CHECK(back.encode() == vc.encode());
    CHECK(back.attributes.at("score") == -3);

    ConditionProof p{"x", f.rng.bytes(10)};
    CHECK(ConditionProof::decode(view(p.encode())).payload == p.payload);
}

namespace {
// stand-in backend that accepts everything; used to show the protocol only
// touches the prove/verify interface
class YesBackend final : public ProofBackend {
public:
    std::string id() const override { return "test-yes"; }
    Bytes prove(const VerifiableCredential&, const crypto::KeyPair&,
                const ConditionPublicInputs&, bool) const override {
        return to_bytes(std::string_view("yes"));
    }
    bool verify(ByteView, const ConditionPublicInputs&, bool) const override { return true; }
};
const YesBackend g_yes;
}  // namespace

TEST_CASE("backends dispatch by id and unknown ids throw") {
    Fixture f;
    ConditionProof bogus{"no-such-backend", {}};
    CHECK_THROWS_AS(verify_condition(bogus, f.inputs(1, f.rng.bytes(4))), UnknownBackend);

    register_backend(&g_yes);
    VerifiableCredential vc = f.credential(99);
    ConditionPublicInputs pub = f.inputs(1, f.rng.bytes(4));
    ConditionProof proof = prove_condition(vc, f.holder, pub, "test-yes");
    CHECK(proof.backend_id == "test-yes");
    CHECK(verify_condition(proof, pub));
}
