#pragma once

#include <map>
#include <optional>
#include <string>

#include "offcbdc/channel.hpp"
#include "offcbdc/tlv.hpp"

namespace offcbdc::device {

// 2-byte status words; 0x9000 is success, each rejection has its own code.
enum class Sw : std::uint16_t {
    Ok = 0x9000,
    NotAuthenticated = 0x6901,
    DeviceBlocked = 0x6902,
    PermissionDenied = 0x6903,
    InsufficientBalance = 0x6904,
    PerTxLimitExceeded = 0x6905,
    CumulativeLimitExceeded = 0x6906,
    BalanceCapExceeded = 0x6907,
    NoMatchingPending = 0x6908,
    StaleTxId = 0x6909,
    NotMostRecent = 0x690A,
    LogFull = 0x690B,
    WrongPin = 0x690C,
    PinLocked = 0x690D,
    BadCommand = 0x690E,
    UnexpectedMessage = 0x690F,
    HandshakeFailed = 0x6910,
    ChannelError = 0x6911,
};

const char* sw_name(Sw sw);

// Random 16-byte identifier: payment TxIDs, bank operation ids, sync ids.
struct Token16 {
    std::array<std::uint8_t, 16> bytes{};

    static Token16 random(DeterministicRng& rng);
    bool operator==(const Token16&) const = default;
    std::string hex() const { return to_hex(ByteView(bytes.data(), bytes.size())); }
};
using TxId = Token16;

struct Limits {
    std::uint64_t max_balance = 0;
    std::uint64_t per_tx_max = 0;
    std::uint64_t cumulative_max = 0;
};

enum class EntryDirection : std::uint8_t { Incoming = 0, Outgoing = 1 };
enum class EntryStatus : std::uint8_t { Pending = 0, Completed = 1 };

struct LogEntry {
    TxId tx_id;
    std::optional<Bytes> counterparty_pk;  // absent while pending
    std::uint64_t amount = 0;
    EntryDirection direction = EntryDirection::Incoming;
    EntryStatus status = EntryStatus::Pending;
};

enum class ComplianceMode : std::uint8_t {
    ComplianceFree = 0,
    BalanceTracking = 1,
    TransactionTracking = 2,
};

struct DeviceState {
    std::uint64_t balance = 0;
    Limits limits;
    std::uint64_t cumulative_spent = 0;  // outgoing total since last sync
    std::vector<LogEntry> log;
    std::optional<TxId> current_tx_id;
    bool blocked = false;
    ComplianceMode mode = ComplianceMode::TransactionTracking;
    // balance as of the last synchronization, shifted by bank operations;
    // replaying completed log entries onto it must reproduce balance
    std::uint64_t synced_balance_anchor = 0;
};

// amount admission predicates, shared by the handlers and the test oracles
Sw evaluate_spend(const DeviceState& s, std::uint64_t amount);
Sw evaluate_receive_cap(const DeviceState& s, std::uint64_t amount);

// Internal consistency: at most one pending entry, balance within [0, cap],
// completed outgoing amounts within limits, anchor + completed deltas ==
// balance. Returns an explanation for the first violated condition.
std::optional<std::string> find_invariant_violation(const DeviceState& s);

inline constexpr std::size_t kLogCapacity = 64;
inline constexpr int kPinRetries = 3;

// auxiliary (non Table I) command opcodes
enum class AuxCommand : std::uint8_t {
    VerifyPin = 0x20,
    GetStatus = 0x21,
    PromptRetransmit = 0x22,
    SyncConfirm = 0x23,
    Block = 0x24,
    E2eInit = 0x27,
    E2eStep = 0x28,
    ValueExchangeStart = 0x29,
    ValueExchangeFinish = 0x2A,
    // anonymous withdrawal: the device shows only an ephemeral key; the
    // wallet supplies a credential proof in place of the certificate
    AnonInit = 0x2B,
    AnonFinish = 0x2C,
};

// command/reply construction shared by terminals, the harness and tests
namespace wire {

// command body tags
inline constexpr std::uint8_t kTagAmount = 0x01;
inline constexpr std::uint8_t kTagTxId = 0x02;
inline constexpr std::uint8_t kTagOpId = 0x03;
inline constexpr std::uint8_t kTagPin = 0x04;
inline constexpr std::uint8_t kTagMode = 0x05;
inline constexpr std::uint8_t kTagSyncId = 0x06;
inline constexpr std::uint8_t kTagMaxBalance = 0x07;
inline constexpr std::uint8_t kTagPerTxMax = 0x08;
inline constexpr std::uint8_t kTagCumulativeMax = 0x09;
inline constexpr std::uint8_t kTagBlob = 0x0A;

// reply body tags
inline constexpr std::uint8_t kTagBalance = 0x10;
inline constexpr std::uint8_t kTagAmountEntry = 0x11;  // direction byte + u64 amount
inline constexpr std::uint8_t kTagFullEntry = 0x12;
inline constexpr std::uint8_t kTagPendingCount = 0x13;
inline constexpr std::uint8_t kTagLogCount = 0x14;
inline constexpr std::uint8_t kTagCumulative = 0x15;
inline constexpr std::uint8_t kTagBlocked = 0x16;
inline constexpr std::uint8_t kTagModeEcho = 0x17;
inline constexpr std::uint8_t kTagEstablished = 0x18;
inline constexpr std::uint8_t kTagPeerOrigin = 0x19;
inline constexpr std::uint8_t kTagPendingEntry = 0x1A;
inline constexpr std::uint8_t kTagAuthenticated = 0x1B;
inline constexpr std::uint8_t kTagSession = 0x1C;
inline constexpr std::uint8_t kTagEphemeralPk = 0x1D;
inline constexpr std::uint8_t kTagCertBytes = 0x0B;
inline constexpr std::uint8_t kTagReceipt = 0x0C;

Bytes verify_pin(std::string_view pin);
Bytes get_status();
Bytes request(std::uint64_t amount);
Bytes accept(std::uint64_t amount, const TxId& tx);
Bytes transfer(std::uint64_t amount, const TxId& tx);
Bytes receive(std::uint64_t amount, const TxId& tx);
Bytes retransmit(std::uint64_t amount, const TxId& tx);
Bytes withdraw(const Token16& op_id, std::uint64_t amount);
Bytes deposit(const Token16& op_id, std::uint64_t amount);
Bytes synchronize(const Token16& sync_id);
Bytes sync_confirm(const Token16& sync_id, std::optional<Limits> new_limits,
                   std::optional<ComplianceMode> new_mode);
Bytes block();
Bytes prompt_retransmit(std::uint64_t amount, const TxId& tx);
Bytes e2e_init();
Bytes e2e_step(ByteView blob);
Bytes value_exchange_start();
Bytes value_exchange_finish(ByteView blob);
Bytes anon_init(ByteView fi_certificate_message);
Bytes anon_finish(ByteView receipt);

// full-entry encoding: tx(16) | dir(1) | status(1) | amount(8 le) |
// counterparty length (1) | counterparty
Bytes encode_entry(const LogEntry& e);
LogEntry decode_entry(ByteView v);

struct Reply {
    Sw sw = Sw::Ok;
    Bytes payload;

    bool ok() const { return sw == Sw::Ok; }
    TlvReader body() const;
    static Reply parse(ByteView plain);
    Bytes encode() const;
};

}  // namespace wire

struct DeviceConfig {
    channel::EndpointIdentity identity;
    channel::HandshakeVariant variant = channel::HandshakeVariant::V1_Ephemeral;
    Limits limits;
    ComplianceMode mode = ComplianceMode::TransactionTracking;
    std::string pin = "0000";
    std::uint64_t rng_seed = 0;
    std::uint64_t now = 0;
};

// The secure element applet: command router, security module (sessions,
// PIN), wallet and compliance state. Strictly one command at a time.
class SecureDevice {
public:
    explicit SecureDevice(DeviceConfig cfg);

    struct HandshakeReply {
        Bytes message;
        std::optional<std::uint32_t> session;  // set once established
    };

    // Cleartext handshake entry, responder side. A fresh hello restarts any
    // half-finished responder handshake.
    HandshakeReply handshake_message(ByteView msg);

    // Sealed command in, sealed reply out. Channel-level failures
    // (UnknownSession, AuthFailure, CounterMismatch) throw.
    Bytes process(std::uint32_t session, ByteView sealed);

    const DeviceState& state() const { return state_; }
    // direct state access for fault scenarios and test fixtures
    DeviceState& raw_state() { return state_; }

    const channel::EndpointIdentity& identity() const { return identity_; }
    channel::HandshakeVariant variant() const { return variant_; }

    bool has_session(std::uint32_t sid) const { return sessions_.count(sid) > 0; }
    pki::Role session_role(std::uint32_t sid) const;
    // live device-to-device session, if any (replay targeting in the harness)
    std::optional<std::uint32_t> current_peer_session() const { return e2e_session_; }

private:
    struct SessionRecord {
        channel::SessionContext ctx;
        bool authenticated = false;
        bool anonymous = false;  // certificate-less withdrawal session
    };

    wire::Reply dispatch(SessionRecord& session, ByteView command);

    wire::Reply op_request(SessionRecord& s, const TlvReader& body);
    wire::Reply op_accept(SessionRecord& s, const TlvReader& body);
    wire::Reply op_transfer(SessionRecord& s, const TlvReader& body);
    wire::Reply op_receive(SessionRecord& s, const TlvReader& body);
    wire::Reply op_retransmit(SessionRecord& s, const TlvReader& body);
    wire::Reply op_withdraw(SessionRecord& s, const TlvReader& body);
    wire::Reply op_deposit(const TlvReader& body);
    wire::Reply op_synchronize(const TlvReader& body);

    wire::Reply aux_verify_pin(SessionRecord& s, const TlvReader& body);
    wire::Reply aux_get_status(const SessionRecord& s);
    wire::Reply aux_prompt_retransmit(SessionRecord& s, const TlvReader& body);
    wire::Reply aux_sync_confirm(const TlvReader& body);
    wire::Reply aux_e2e_init();
    wire::Reply aux_e2e_step(const TlvReader& body);
    wire::Reply aux_value_exchange_start();
    wire::Reply aux_value_exchange_finish(SessionRecord& s, const TlvReader& body);
    wire::Reply aux_anon_init(const TlvReader& body);
    wire::Reply aux_anon_finish(const TlvReader& body);

    wire::Reply execute_receive(const channel::SessionContext& peer, std::uint64_t amount,
                                const TxId& tx);
    LogEntry* pending_entry();
    std::uint32_t new_session(channel::SessionContext ctx, bool anonymous = false);
    void drop_peer_sessions();

    struct AnonPending {
        crypto::KeyPair ephemeral;
        Bytes fi_public;
    };
    std::optional<AnonPending> anon_pending_;

    channel::EndpointIdentity identity_;
    channel::HandshakeVariant variant_;
    DeterministicRng rng_;
    std::uint64_t now_;
    std::string pin_;
    int pin_retries_left_ = kPinRetries;

    DeviceState state_;

    std::map<std::uint32_t, SessionRecord> sessions_;
    std::uint32_t next_session_id_ = 1;
    std::optional<channel::Handshake> responder_handshake_;
    std::optional<channel::Handshake> e2e_handshake_;
    std::optional<std::uint32_t> e2e_session_;  // single peer-session slot

    bool exchange_ready_ = false;    // receiver confirmed, may start value exchange
    bool retransmit_armed_ = false;  // prompt accepted, next exchange is a retransmit
    std::uint64_t retransmit_amount_ = 0;
    std::optional<TxId> retransmit_tx_;

    // single-slot idempotence caches for interrupted bank operations
    std::optional<Token16> last_bank_op_;
    wire::Reply last_bank_reply_;
    std::optional<Token16> last_sync_confirmed_;
};

// Key and receipt derivation for the certificate-less withdrawal session:
// Z is the single static/ephemeral agreement, the context binds both public
// values, and the receipt confirms key establishment to the device.
crypto::SessionKeys anon_session_keys(const Bytes& own_secret, const Bytes& peer_public,
                                      const Bytes& fi_public, const Bytes& ephemeral_public);
Bytes anon_receipt(const crypto::SessionKeys& keys, const Bytes& fi_public,
                   const Bytes& ephemeral_public);

}  // namespace offcbdc::device
