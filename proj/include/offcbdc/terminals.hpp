#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "offcbdc/attest.hpp"
#include "offcbdc/device.hpp"
#include "offcbdc/sim.hpp"

namespace offcbdc::terminals {

// A terminal's established sealed link to a secure device.
struct DeviceLink {
    channel::SessionContext ctx;
    std::uint32_t sid = 0;
    bool valid = false;
};

struct ConditionPolicy {
    std::string attribute;
    std::int64_t threshold = 0;
};

// User terminal: powers the card, forwards protocol messages, holds the
// user's credential material. Never holds funds of its own.
class Wallet {
public:
    Wallet(std::string name, channel::EndpointIdentity identity, device::SecureDevice* dev,
           std::string pin, std::uint64_t rng_seed, std::uint64_t now);

    const std::string& name() const { return name_; }
    device::SecureDevice& dev() { return *dev_; }
    const device::SecureDevice& dev() const { return *dev_; }
    const std::string& pin() const { return pin_; }
    const channel::EndpointIdentity& identity() const { return identity_; }

    // (re)establish the wallet-device session and authenticate the user;
    // runs as transport flow legs so faults can hit it
    void connect(sim::Transport& net);
    bool connected() const { return device_link_.valid; }
    void mark_link_dirty() { device_link_.valid = false; }

    // one sealed command exchange with the owned device over the transport
    device::wire::Reply command(sim::Transport& net, const Bytes& cmd, const char* kind);
    // direct exchange that does not traverse the simulated link (used for
    // pump steps whose payloads travel on device-to-device legs instead)
    device::wire::Reply local_command(const Bytes& cmd);

    // wallet-to-wallet channel, one session per payment encounter
    struct WwStep {
        Bytes reply;  // empty when there is nothing to send
        bool established = false;
    };
    Bytes ww_initiate();          // first handshake message
    WwStep ww_advance(ByteView);  // either side; a hello restarts the responder
    channel::SessionContext* ww_session() { return ww_session_ ? &*ww_session_ : nullptr; }
    void ww_reset();

    void hold_credential(attest::VerifiableCredential vc, crypto::KeyPair holder_keys);
    const std::optional<attest::VerifiableCredential>& credential() const { return credential_; }
    const std::optional<crypto::KeyPair>& credential_keys() const { return credential_keys_; }
    void require_condition(ConditionPolicy policy) { policy_ = std::move(policy); }
    void clear_condition() { policy_.reset(); }
    const std::optional<ConditionPolicy>& condition() const { return policy_; }

    // most recent payment attempt that died mid-flight, for recovery
    struct InterruptionRecord {
        std::uint64_t amount = 0;
        device::TxId tx;
        bool value_exchange_started = false;
    };
    std::optional<InterruptionRecord> interrupted;

    std::uint64_t now() const { return now_; }
    DeterministicRng& rng() { return rng_; }

private:
    std::string name_;
    channel::EndpointIdentity identity_;
    device::SecureDevice* dev_;
    std::string pin_;
    DeterministicRng rng_;
    std::uint64_t now_;

    DeviceLink device_link_;
    std::optional<channel::Handshake> ww_handshake_;
    std::optional<channel::SessionContext> ww_session_;

    std::optional<attest::VerifiableCredential> credential_;
    std::optional<crypto::KeyPair> credential_keys_;
    std::optional<ConditionPolicy> policy_;
};

struct PaymentOutcome {
    enum class Status {
        Completed,
        RejectedByUser,
        DeviceRejected,     // a compliance or state check said no
        ConditionRejected,  // condition proof missing or failed verification
        Interrupted,        // transport died; recovery decides restart vs retransmit
        RestartRequired,    // retransmission path refused; start a fresh payment
    };

    Status status = Status::Interrupted;
    device::Sw reject_code = device::Sw::Ok;
    std::optional<device::TxId> tx;
    std::uint64_t amount = 0;
    std::uint64_t receiver_balance = 0;  // device-reported, when completed
    std::uint64_t sender_balance = 0;
    // exact driver-side knowledge, for the conservation auditor
    bool transfer_executed = false;
    bool receive_applied = false;

    bool ok() const { return status == Status::Completed; }
};

using Approval = std::function<bool(std::uint64_t amount)>;

// Drives the whole offline payment: request, approval, admission checks on
// both devices, device-to-device session, value exchange. `receiver` asks,
// `sender` pays.
PaymentOutcome initiate_payment(sim::Transport& net, Wallet& receiver, Wallet& sender,
                                std::uint64_t amount, const Approval& approval);

// Recovery path after an interruption recorded on the receiver wallet.
PaymentOutcome drive_retransmission(sim::Transport& net, Wallet& receiver, Wallet& sender);

// Single-wallet sale: the POS terminal owns the receiving device and plays
// both user terminals; the customer brings only a card.
PaymentOutcome run_pos_payment(sim::Transport& net, Wallet& pos,
                               device::SecureDevice& customer_card,
                               const std::string& customer_pin, std::uint64_t amount);

struct OnlineAccount {
    std::string owner;
    std::uint64_t balance = 0;
};

struct OfflineLedgerEntry {
    std::string owner;
    Bytes device_pk;
    std::uint64_t last_synced_balance = 0;
    bool blocked = false;
};

struct SyncReport {
    Bytes device_pk;
    std::uint64_t reported_balance = 0;
    std::uint64_t replayed_balance = 0;
    std::uint64_t n = 0;  // transactions synchronized
    enum class Outcome { Consistent, MismatchBlocked, Interrupted } outcome = Outcome::Consistent;
    bool pending_for_review = false;
};

struct BankOpOutcome {
    bool ok = false;
    bool interrupted = false;
    device::Sw reject_code = device::Sw::Ok;
    std::uint64_t device_balance = 0;
    std::uint64_t online_balance = 0;
};

// A transfer seen during transaction-tracking synchronization; outgoing
// entries wait here until the counterparty's sync shows the matching credit.
struct TransferTrace {
    device::TxId tx;
    std::uint64_t amount = 0;
    Bytes from_pk;
    Bytes to_pk;
    bool matched = false;
};

// The financial institution: online accounts, the offline ledger, sync
// replay verification, card blocking, and an append-only journal of ledger
// mutations for crash recovery.
class Fi {
public:
    Fi(channel::EndpointIdentity identity, channel::HandshakeVariant variant,
       std::uint64_t rng_seed, std::uint64_t now, std::string journal_path = "");

    // issuance and enrollment
    void mint(const std::string& owner, std::uint64_t amount);
    void enroll(const std::string& owner, const Bytes& device_pk);
    bool enrolled(const Bytes& device_pk) const;

    std::uint64_t account_balance(const std::string& owner) const;
    const OfflineLedgerEntry* ledger_entry(const Bytes& device_pk) const;

    // bank visits; each establishes a session, authenticates, synchronizes,
    // then optionally runs the requested operation
    SyncReport synchronize(sim::Transport& net, Wallet& user);
    BankOpOutcome withdraw(sim::Transport& net, Wallet& user, std::uint64_t amount);
    BankOpOutcome deposit(sim::Transport& net, Wallet& user, std::uint64_t amount);

    // privacy-preserving cash-for-CBDC issuance: the device shows only an
    // ephemeral key plus a credential proof, never its certificate
    BankOpOutcome anonymous_withdraw(sim::Transport& net, Wallet& user, std::uint64_t amount);

    // retries any bank operation or sync left unresolved by an interruption
    void resolve_open_intents(sim::Transport& net, Wallet& user);

    // risk-parameter updates pushed at the next synchronization
    void schedule_limit_update(const Bytes& device_pk, device::Limits limits,
                               std::optional<device::ComplianceMode> mode);

    // money supply accounting
    std::uint64_t total_online() const;
    std::uint64_t total_ledger() const;
    std::uint64_t minted_total() const { return minted_; }
    std::uint64_t cash_in_total() const { return cash_in_; }
    std::uint64_t suspense_total() const;
    // issued money the institution can no longer locate from its records;
    // nonzero once a destroyed transfer has been synchronized
    std::uint64_t apparent_shortfall() const;

    // transfers reported under transaction tracking whose counterpart has
    // not appeared: the money-destruction detector
    std::vector<TransferTrace> unmatched_transfers() const;

    const std::string& journal_path() const { return journal_path_; }
    // rebuilds accounts, ledger and open intents from the journal
    static Fi recover(channel::EndpointIdentity identity, channel::HandshakeVariant variant,
                      std::uint64_t rng_seed, std::uint64_t now, const std::string& journal_path);

    struct Snapshot {
        std::map<std::string, std::uint64_t> accounts;
        std::map<std::string, std::uint64_t> ledger_balances;  // hex pk -> balance
        std::map<std::string, bool> ledger_blocked;
        std::uint64_t minted = 0;
        std::uint64_t cash_in = 0;
        std::size_t open_intents = 0;

        bool operator==(const Snapshot&) const = default;
    };
    Snapshot snapshot() const;

private:
    struct Visit {
        DeviceLink link;
        device::SecureDevice* dev = nullptr;
        std::string card_name;
    };

    struct SyncIntent {
        device::Token16 sync_id;
        std::uint64_t new_balance = 0;
    };

    struct OpIntent {
        device::Token16 op_id;
        bool is_withdraw = false;
        std::uint64_t amount = 0;
        std::string owner;
    };

    Visit open_visit(sim::Transport& net, Wallet& user);
    device::wire::Reply exchange(sim::Transport& net, Visit& v, const Bytes& cmd,
                                 const char* kind);
    SyncReport run_sync(sim::Transport& net, Visit& v);
    BankOpOutcome run_bank_op(sim::Transport& net, Wallet& user, bool is_withdraw,
                              std::uint64_t amount);

    // journal plumbing
    void journal_append(const Bytes& record);
    void apply_record(ByteView record, bool replaying);

    void record_mint(const std::string& owner, std::uint64_t amount);
    void record_enroll(const std::string& owner, const Bytes& device_pk);
    void record_sync_intent(const Bytes& pk, const SyncIntent& intent);
    void record_sync_done(const Bytes& pk, std::uint64_t new_balance);
    void record_block(const Bytes& pk);
    void record_op_intent(const Bytes& pk, const OpIntent& intent);
    void record_op_settled(const Bytes& pk, const device::Token16& op_id, bool applied);
    void record_cash_in(std::uint64_t amount);

    channel::EndpointIdentity identity_;
    channel::HandshakeVariant variant_;
    DeterministicRng rng_;
    std::uint64_t now_;

    std::map<std::string, OnlineAccount> accounts_;
    std::map<std::string, OfflineLedgerEntry> ledger_;  // key: hex of device pk
    std::map<std::string, SyncIntent> sync_intents_;
    std::map<std::string, OpIntent> op_intents_;
    std::map<std::string, std::pair<device::Limits, std::optional<device::ComplianceMode>>>
        limit_updates_;
    std::vector<TransferTrace> traces_;
    std::uint64_t minted_ = 0;
    std::uint64_t cash_in_ = 0;

    std::string journal_path_;
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> journal_;
};

}  // namespace offcbdc::terminals
