#include "offcbdc/device.hpp"

#include <algorithm>

#include "offcbdc/errors.hpp"

namespace offcbdc::device {

using pki::OperationName;
using pki::Role;

const char* sw_name(Sw sw) {
    switch (sw) {
        case Sw::Ok: return "ok";
        case Sw::NotAuthenticated: return "not-authenticated";
        case Sw::DeviceBlocked: return "device-blocked";
        case Sw::PermissionDenied: return "permission-denied";
        case Sw::InsufficientBalance: return "insufficient-balance";
        case Sw::PerTxLimitExceeded: return "per-tx-limit-exceeded";
        case Sw::CumulativeLimitExceeded: return "cumulative-limit-exceeded";
        case Sw::BalanceCapExceeded: return "balance-cap-exceeded";
        case Sw::NoMatchingPending: return "no-matching-pending";
        case Sw::StaleTxId: return "stale-tx-id";
        case Sw::NotMostRecent: return "not-most-recent";
        case Sw::LogFull: return "log-full";
        case Sw::WrongPin: return "wrong-pin";
        case Sw::PinLocked: return "pin-locked";
        case Sw::BadCommand: return "bad-command";
        case Sw::UnexpectedMessage: return "unexpected-message";
        case Sw::HandshakeFailed: return "handshake-failed";
        case Sw::ChannelError: return "channel-error";
    }
    return "?";
}

Token16 Token16::random(DeterministicRng& rng) {
    Token16 t;
    rng.fill(t.bytes.data(), t.bytes.size());
    return t;
}

Sw evaluate_spend(const DeviceState& s, std::uint64_t amount) {
    if (amount > s.balance) return Sw::InsufficientBalance;
    if (amount > s.limits.per_tx_max) return Sw::PerTxLimitExceeded;
    if (s.cumulative_spent + amount > s.limits.cumulative_max) return Sw::CumulativeLimitExceeded;
    return Sw::Ok;
}

Sw evaluate_receive_cap(const DeviceState& s, std::uint64_t amount) {
    if (s.balance + amount > s.limits.max_balance) return Sw::BalanceCapExceeded;
    return Sw::Ok;
}

std::optional<std::string> find_invariant_violation(const DeviceState& s) {
    if (s.balance > s.limits.max_balance) return "balance above cap";

    std::size_t pending = 0;
    std::int64_t completed_delta = 0;
    std::uint64_t outgoing_total = 0;
    for (const LogEntry& e : s.log) {
        if (e.status == EntryStatus::Pending) {
            ++pending;
            if (e.counterparty_pk) return "pending entry carries a counterparty";
        } else {
            if (!e.counterparty_pk) return "completed entry lacks a counterparty";
            if (e.direction == EntryDirection::Outgoing) {
                if (e.amount > s.limits.per_tx_max) return "completed entry above per-tx limit";
                outgoing_total += e.amount;
                completed_delta -= static_cast<std::int64_t>(e.amount);
            } else {
                completed_delta += static_cast<std::int64_t>(e.amount);
            }
        }
    }
    if (pending > 1) return "more than one pending entry";
    if (s.log.size() > kLogCapacity) return "log above capacity";
    if (outgoing_total != s.cumulative_spent) return "cumulative spent out of step with log";
    if (s.cumulative_spent > s.limits.cumulative_max) return "cumulative spent above limit";

    auto replayed = static_cast<std::int64_t>(s.synced_balance_anchor) + completed_delta;
    if (replayed < 0 || static_cast<std::uint64_t>(replayed) != s.balance)
        return "balance does not replay from anchor plus log";
    return std::nullopt;
}

namespace wire {

namespace {
Bytes command(std::uint8_t opcode, const Bytes& body) {
    Bytes out;
    append_u8(out, opcode);
    append(out, view(body));
    return out;
}

Bytes token_bytes(const Token16& t) {
    return Bytes(t.bytes.begin(), t.bytes.end());
}

Token16 parse_token(ByteView v) {
    if (v.size() != 16) throw ParseError("bad token length");
    Token16 t;
    std::copy(v.begin(), v.end(), t.bytes.begin());
    return t;
}
}  // namespace

Bytes verify_pin(std::string_view pin) {
    TlvWriter w;
    w.add(kTagPin, view(to_bytes(pin)));
    return command(static_cast<std::uint8_t>(AuxCommand::VerifyPin), w.bytes());
}

Bytes get_status() {
    return command(static_cast<std::uint8_t>(AuxCommand::GetStatus), {});
}

Bytes request(std::uint64_t amount) {
    TlvWriter w;
    w.add_u64(kTagAmount, amount);
    return command(static_cast<std::uint8_t>(OperationName::Request), w.bytes());
}

namespace {
Bytes amount_tx_command(std::uint8_t opcode, std::uint64_t amount, const TxId& tx) {
    TlvWriter w;
    w.add_u64(kTagAmount, amount);
    w.add(kTagTxId, view(token_bytes(tx)));
    return command(opcode, w.bytes());
}
}  // namespace

Bytes accept(std::uint64_t amount, const TxId& tx) {
    return amount_tx_command(static_cast<std::uint8_t>(OperationName::Accept), amount, tx);
}
Bytes transfer(std::uint64_t amount, const TxId& tx) {
    return amount_tx_command(static_cast<std::uint8_t>(OperationName::Transfer), amount, tx);
}
Bytes receive(std::uint64_t amount, const TxId& tx) {
    return amount_tx_command(static_cast<std::uint8_t>(OperationName::Receive), amount, tx);
}
Bytes retransmit(std::uint64_t amount, const TxId& tx) {
    return amount_tx_command(static_cast<std::uint8_t>(OperationName::Retransmit), amount, tx);
}
Bytes prompt_retransmit(std::uint64_t amount, const TxId& tx) {
    return amount_tx_command(static_cast<std::uint8_t>(AuxCommand::PromptRetransmit), amount, tx);
}

Bytes withdraw(const Token16& op_id, std::uint64_t amount) {
    TlvWriter w;
    w.add(kTagOpId, view(token_bytes(op_id)));
    w.add_u64(kTagAmount, amount);
    return command(static_cast<std::uint8_t>(OperationName::Withdraw), w.bytes());
}

Bytes deposit(const Token16& op_id, std::uint64_t amount) {
    TlvWriter w;
    w.add(kTagOpId, view(token_bytes(op_id)));
    w.add_u64(kTagAmount, amount);
    return command(static_cast<std::uint8_t>(OperationName::Deposit), w.bytes());
}

Bytes synchronize(const Token16& sync_id) {
    TlvWriter w;
    w.add(kTagSyncId, view(token_bytes(sync_id)));
    return command(static_cast<std::uint8_t>(OperationName::Synchronize), w.bytes());
}

Bytes sync_confirm(const Token16& sync_id, std::optional<Limits> new_limits,
                   std::optional<ComplianceMode> new_mode) {
    TlvWriter w;
    w.add(kTagSyncId, view(token_bytes(sync_id)));
    if (new_limits) {
        w.add_u64(kTagMaxBalance, new_limits->max_balance);
        w.add_u64(kTagPerTxMax, new_limits->per_tx_max);
        w.add_u64(kTagCumulativeMax, new_limits->cumulative_max);
    }
    if (new_mode) w.add_u8(kTagMode, static_cast<std::uint8_t>(*new_mode));
    return command(static_cast<std::uint8_t>(AuxCommand::SyncConfirm), w.bytes());
}

Bytes block() {
    return command(static_cast<std::uint8_t>(AuxCommand::Block), {});
}

Bytes e2e_init() {
    return command(static_cast<std::uint8_t>(AuxCommand::E2eInit), {});
}

Bytes e2e_step(ByteView blob) {
    TlvWriter w;
    w.add(kTagBlob, blob);
    return command(static_cast<std::uint8_t>(AuxCommand::E2eStep), w.bytes());
}

Bytes value_exchange_start() {
    return command(static_cast<std::uint8_t>(AuxCommand::ValueExchangeStart), {});
}

Bytes value_exchange_finish(ByteView blob) {
    TlvWriter w;
    w.add(kTagBlob, blob);
    return command(static_cast<std::uint8_t>(AuxCommand::ValueExchangeFinish), w.bytes());
}

Bytes anon_init(ByteView fi_certificate_message) {
    TlvWriter w;
    w.add(kTagCertBytes, fi_certificate_message);
    return command(static_cast<std::uint8_t>(AuxCommand::AnonInit), w.bytes());
}

Bytes anon_finish(ByteView receipt) {
    TlvWriter w;
    w.add(kTagReceipt, receipt);
    return command(static_cast<std::uint8_t>(AuxCommand::AnonFinish), w.bytes());
}

Bytes encode_entry(const LogEntry& e) {
    Bytes out(e.tx_id.bytes.begin(), e.tx_id.bytes.end());
    append_u8(out, static_cast<std::uint8_t>(e.direction));
    append_u8(out, static_cast<std::uint8_t>(e.status));
    append_u64_le(out, e.amount);
    if (e.counterparty_pk) {
        append_u8(out, static_cast<std::uint8_t>(e.counterparty_pk->size()));
        append(out, view(*e.counterparty_pk));
    } else {
        append_u8(out, 0);
    }
    return out;
}

LogEntry decode_entry(ByteView v) {
    if (v.size() < 27) throw ParseError("short log entry");
    LogEntry e;
    std::copy(v.begin(), v.begin() + 16, e.tx_id.bytes.begin());
    e.direction = static_cast<EntryDirection>(v[16]);
    e.status = static_cast<EntryStatus>(v[17]);
    e.amount = read_u64_le(v, 18);
    std::uint8_t cp_len = v[26];
    if (cp_len > 0) {
        if (v.size() != 27u + cp_len) throw ParseError("bad log entry length");
        e.counterparty_pk = to_bytes(v.subspan(27, cp_len));
    }
    return e;
}

TlvReader Reply::body() const {
    return TlvReader(view(payload));
}

wire::Reply Reply::parse(ByteView plain) {
    if (plain.size() < 2) throw ParseError("short reply");
    Reply r;
    r.sw = static_cast<Sw>(read_u16_be(plain, 0));
    r.payload = to_bytes(plain.subspan(2));
    return r;
}

Bytes Reply::encode() const {
    Bytes out;
    append_u16_be(out, static_cast<std::uint16_t>(sw));
    append(out, view(payload));
    return out;
}

}  // namespace wire

namespace {

wire::Reply make_reply(Sw sw) {
    return wire::Reply{sw, {}};
}

wire::Reply make_reply(Sw sw, TlvWriter&& body) {
    return wire::Reply{sw, body.take()};
}

bool aux_permitted(Role role, AuxCommand cmd) {
    switch (cmd) {
        case AuxCommand::VerifyPin:
        case AuxCommand::GetStatus:
            return role == Role::UserTerminal || role == Role::FITerminal;
        case AuxCommand::PromptRetransmit:
        case AuxCommand::E2eInit:
        case AuxCommand::E2eStep:
        case AuxCommand::ValueExchangeStart:
        case AuxCommand::ValueExchangeFinish:
        case AuxCommand::AnonInit:
        case AuxCommand::AnonFinish:
            return role == Role::UserTerminal;
        case AuxCommand::SyncConfirm:
        case AuxCommand::Block:
            return role == Role::FITerminal;
    }
    return false;
}

bool allowed_while_blocked(std::uint8_t opcode) {
    return opcode == static_cast<std::uint8_t>(OperationName::Synchronize) ||
           opcode == static_cast<std::uint8_t>(AuxCommand::SyncConfirm) ||
           opcode == static_cast<std::uint8_t>(AuxCommand::Block);
}

}  // namespace

SecureDevice::SecureDevice(DeviceConfig cfg)
    : identity_(std::move(cfg.identity)),
      variant_(cfg.variant),
      rng_(cfg.rng_seed),
      now_(cfg.now),
      pin_(std::move(cfg.pin)) {
    state_.limits = cfg.limits;
    state_.mode = cfg.mode;
}

SecureDevice::HandshakeReply SecureDevice::handshake_message(ByteView msg) {
    // a fresh hello replaces any half-finished responder handshake
    if (!msg.empty() && msg[0] == 0x11) {
        responder_handshake_ = channel::Handshake::responder(identity_, variant_, rng_, now_);
    }
    if (!responder_handshake_) throw OutOfOrderMessage();

    auto step = responder_handshake_->respond(msg);
    HandshakeReply out;
    if (step.reply) out.message = std::move(*step.reply);
    if (step.established) {
        channel::SessionContext ctx = responder_handshake_->take_context();
        out.session = new_session(std::move(ctx));
        responder_handshake_.reset();
    }
    return out;
}

std::uint32_t SecureDevice::new_session(channel::SessionContext ctx, bool anonymous) {
    if (ctx.peer_role == Role::SecureDevice) drop_peer_sessions();
    std::uint32_t sid = next_session_id_++;
    sessions_.emplace(sid, SessionRecord{std::move(ctx), false, anonymous});
    // card memory is tiny: shed old sessions, but never the provisioning
    // wallet link (the oldest user-terminal session) or the one just made
    while (sessions_.size() > 16) {
        auto victim = sessions_.end();
        bool skipped_wallet = false;
        for (auto it = sessions_.begin(); it != sessions_.end(); ++it) {
            if (it->first == sid) continue;
            if (!skipped_wallet && it->second.ctx.peer_role == Role::UserTerminal) {
                skipped_wallet = true;
                continue;
            }
            victim = it;
            break;
        }
        if (victim == sessions_.end()) break;
        if (e2e_session_ && *e2e_session_ == victim->first) e2e_session_.reset();
        sessions_.erase(victim);
    }
    return sid;
}

void SecureDevice::drop_peer_sessions() {
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (it->second.ctx.peer_role == Role::SecureDevice)
            it = sessions_.erase(it);
        else
            ++it;
    }
    e2e_session_.reset();
}

pki::Role SecureDevice::session_role(std::uint32_t sid) const {
    auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw UnknownSession();
    return it->second.ctx.peer_role;
}

Bytes SecureDevice::process(std::uint32_t session, ByteView sealed) {
    auto it = sessions_.find(session);
    if (it == sessions_.end()) throw UnknownSession();
    SessionRecord& rec = it->second;

    Bytes plain = rec.ctx.receive(sealed);
    wire::Reply reply = dispatch(rec, view(plain));
    return rec.ctx.send(view(reply.encode()));
}

wire::Reply SecureDevice::dispatch(SessionRecord& session, ByteView command) {
    if (command.empty()) return make_reply(Sw::BadCommand);
    std::uint8_t opcode = command[0];

    TlvReader body = [&] {
        try {
            return TlvReader(command.subspan(1));
        } catch (const ParseError&) {
            return TlvReader(ByteView{});
        }
    }();

    Role role = session.ctx.peer_role;

    // Table I gate for the eight operations, then the auxiliary command gate
    if (opcode >= 0x01 && opcode <= 0x08) {
        if (!pki::permitted(role, static_cast<OperationName>(opcode)))
            return make_reply(Sw::PermissionDenied);
        // a certificate-less session is scoped to the withdrawal it was made for
        if (session.anonymous && opcode != static_cast<std::uint8_t>(OperationName::Withdraw))
            return make_reply(Sw::PermissionDenied);
    } else {
        switch (opcode) {
            case 0x20: case 0x21: case 0x22: case 0x23: case 0x24:
            case 0x27: case 0x28: case 0x29: case 0x2A: case 0x2B: case 0x2C:
                if (!aux_permitted(role, static_cast<AuxCommand>(opcode)))
                    return make_reply(Sw::PermissionDenied);
                break;
            default:
                return make_reply(Sw::BadCommand);
        }
    }

    if (state_.blocked && !allowed_while_blocked(opcode)) return make_reply(Sw::DeviceBlocked);

    try {
        switch (opcode) {
            case static_cast<std::uint8_t>(OperationName::Withdraw):
                return op_withdraw(session, body);
            case static_cast<std::uint8_t>(OperationName::Request): return op_request(session, body);
            case static_cast<std::uint8_t>(OperationName::Accept): return op_accept(session, body);
            case static_cast<std::uint8_t>(OperationName::Transfer): return op_transfer(session, body);
            case static_cast<std::uint8_t>(OperationName::Receive): return op_receive(session, body);
            case static_cast<std::uint8_t>(OperationName::Retransmit): return op_retransmit(session, body);
            case static_cast<std::uint8_t>(OperationName::Synchronize): return op_synchronize(body);
            case static_cast<std::uint8_t>(OperationName::Deposit): return op_deposit(body);
            case static_cast<std::uint8_t>(AuxCommand::VerifyPin): return aux_verify_pin(session, body);
            case static_cast<std::uint8_t>(AuxCommand::GetStatus): return aux_get_status(session);
            case static_cast<std::uint8_t>(AuxCommand::PromptRetransmit):
                return aux_prompt_retransmit(session, body);
            case static_cast<std::uint8_t>(AuxCommand::SyncConfirm): return aux_sync_confirm(body);
            case static_cast<std::uint8_t>(AuxCommand::Block):
                state_.blocked = true;
                return make_reply(Sw::Ok);
            case static_cast<std::uint8_t>(AuxCommand::E2eInit): return aux_e2e_init();
            case static_cast<std::uint8_t>(AuxCommand::E2eStep): return aux_e2e_step(body);
            case static_cast<std::uint8_t>(AuxCommand::ValueExchangeStart):
                return aux_value_exchange_start();
            case static_cast<std::uint8_t>(AuxCommand::ValueExchangeFinish):
                return aux_value_exchange_finish(session, body);
            case static_cast<std::uint8_t>(AuxCommand::AnonInit): return aux_anon_init(body);
            case static_cast<std::uint8_t>(AuxCommand::AnonFinish): return aux_anon_finish(body);
        }
    } catch (const ParseError&) {
        return make_reply(Sw::BadCommand);
    }
    return make_reply(Sw::BadCommand);
}

LogEntry* SecureDevice::pending_entry() {
    for (LogEntry& e : state_.log) {
        if (e.status == EntryStatus::Pending) return &e;
    }
    return nullptr;
}

wire::Reply SecureDevice::op_request(SessionRecord& s, const TlvReader& body) {
    if (!s.authenticated) return make_reply(Sw::NotAuthenticated);
    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    if (amount == 0) return make_reply(Sw::BadCommand);
    if (Sw sw = evaluate_receive_cap(state_, amount); sw != Sw::Ok) return make_reply(sw);

    LogEntry* pending = pending_entry();
    if (!pending && state_.log.size() >= kLogCapacity) return make_reply(Sw::LogFull);

    TxId tx = TxId::random(rng_);
    LogEntry entry{tx, std::nullopt, amount, EntryDirection::Incoming, EntryStatus::Pending};
    if (pending)
        *pending = entry;  // only one pending transaction may exist
    else
        state_.log.push_back(entry);
    state_.current_tx_id = tx;
    exchange_ready_ = false;
    retransmit_armed_ = false;

    TlvWriter w;
    w.add(wire::kTagTxId, ByteView(tx.bytes.data(), tx.bytes.size()));
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::op_accept(SessionRecord& s, const TlvReader& body) {
    if (!s.authenticated) return make_reply(Sw::NotAuthenticated);
    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    TxId tx = wire::parse_token(body.get(wire::kTagTxId));
    if (amount == 0) return make_reply(Sw::BadCommand);

    if (state_.current_tx_id && *state_.current_tx_id == tx) {
        // receiver side: confirm the request this device created earlier
        LogEntry* pending = pending_entry();
        if (!pending || pending->direction != EntryDirection::Incoming ||
            !(pending->tx_id == tx) || pending->amount != amount)
            return make_reply(Sw::NoMatchingPending);
        if (Sw sw = evaluate_receive_cap(state_, amount); sw != Sw::Ok) return make_reply(sw);
        exchange_ready_ = true;
        return make_reply(Sw::Ok);
    }

    // sender side: admission checks, then commit to the pending transaction
    if (Sw sw = evaluate_spend(state_, amount); sw != Sw::Ok) return make_reply(sw);

    LogEntry* pending = pending_entry();
    if (!pending && state_.log.size() >= kLogCapacity) return make_reply(Sw::LogFull);
    LogEntry entry{tx, std::nullopt, amount, EntryDirection::Outgoing, EntryStatus::Pending};
    if (pending)
        *pending = entry;
    else
        state_.log.push_back(entry);
    state_.current_tx_id.reset();
    exchange_ready_ = false;
    return make_reply(Sw::Ok);
}

wire::Reply SecureDevice::op_transfer(SessionRecord& s, const TlvReader& body) {
    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    TxId tx = wire::parse_token(body.get(wire::kTagTxId));

    LogEntry* pending = pending_entry();
    if (!pending || pending->direction != EntryDirection::Outgoing ||
        !(pending->tx_id == tx) || pending->amount != amount)
        return make_reply(Sw::NoMatchingPending);

    // re-run admission in case balance moved since the accept
    if (Sw sw = evaluate_spend(state_, amount); sw != Sw::Ok) return make_reply(sw);

    // atomic commit: balance, cumulative total and log entry move together
    state_.balance -= amount;
    state_.cumulative_spent += amount;
    pending->status = EntryStatus::Completed;
    pending->counterparty_pk = s.ctx.peer_public_key;

    // the reply carries (amount, TxID): the <Receive> for the counterparty
    TlvWriter w;
    w.add_u64(wire::kTagAmount, amount);
    w.add(wire::kTagTxId, ByteView(tx.bytes.data(), tx.bytes.size()));
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::execute_receive(const channel::SessionContext& peer,
                                          std::uint64_t amount, const TxId& tx) {
    if (!state_.current_tx_id || !(*state_.current_tx_id == tx)) return make_reply(Sw::StaleTxId);

    LogEntry* pending = pending_entry();
    if (!pending || pending->direction != EntryDirection::Incoming ||
        !(pending->tx_id == tx) || pending->amount != amount)
        return make_reply(Sw::NoMatchingPending);
    if (Sw sw = evaluate_receive_cap(state_, amount); sw != Sw::Ok) return make_reply(sw);

    state_.balance += amount;
    pending->status = EntryStatus::Completed;
    pending->counterparty_pk = peer.peer_public_key;
    state_.current_tx_id.reset();
    exchange_ready_ = false;
    retransmit_armed_ = false;
    retransmit_tx_.reset();

    TlvWriter w;
    w.add_u64(wire::kTagBalance, state_.balance);
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::op_receive(SessionRecord& s, const TlvReader& body) {
    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    TxId tx = wire::parse_token(body.get(wire::kTagTxId));
    return execute_receive(s.ctx, amount, tx);
}

wire::Reply SecureDevice::op_retransmit(SessionRecord& s, const TlvReader& body) {
    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    TxId tx = wire::parse_token(body.get(wire::kTagTxId));

    // sender side answers a repeated exchange from its most recent entry
    if (state_.log.empty()) return make_reply(Sw::NoMatchingPending);
    const LogEntry& last = state_.log.back();
    if (!(last.tx_id == tx) || last.amount != amount ||
        last.direction != EntryDirection::Outgoing) {
        for (const LogEntry& e : state_.log) {
            if (e.tx_id == tx && e.amount == amount && e.direction == EntryDirection::Outgoing)
                return make_reply(Sw::NotMostRecent);
        }
        return make_reply(Sw::NoMatchingPending);
    }
    // a still-pending entry means the transfer never executed; restart instead
    if (last.status != EntryStatus::Completed) return make_reply(Sw::NoMatchingPending);
    // only the recorded counterparty may replay the exchange
    if (!last.counterparty_pk || *last.counterparty_pk != s.ctx.peer_public_key)
        return make_reply(Sw::NoMatchingPending);

    // repeat the <Receive> without touching the balance counter
    TlvWriter w;
    w.add_u64(wire::kTagAmount, amount);
    w.add(wire::kTagTxId, ByteView(tx.bytes.data(), tx.bytes.size()));
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::op_withdraw(SessionRecord& s, const TlvReader& body) {
    Token16 op_id = wire::parse_token(body.get(wire::kTagOpId));
    if (last_bank_op_ && *last_bank_op_ == op_id) return last_bank_reply_;

    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    wire::Reply reply = [&] {
        if (state_.balance + amount > state_.limits.max_balance)
            return make_reply(Sw::BalanceCapExceeded);
        if (s.anonymous) {
            // no offline-ledger entry exists for this issuance, so it must
            // appear in the transaction log for the next sync replay
            if (state_.log.size() >= kLogCapacity) return make_reply(Sw::LogFull);
            state_.balance += amount;
            state_.log.push_back(LogEntry{TxId::random(rng_), s.ctx.peer_public_key, amount,
                                          EntryDirection::Incoming, EntryStatus::Completed});
        } else {
            state_.balance += amount;
            state_.synced_balance_anchor += amount;
        }
        TlvWriter w;
        w.add_u64(wire::kTagBalance, state_.balance);
        return make_reply(Sw::Ok, std::move(w));
    }();
    last_bank_op_ = op_id;
    last_bank_reply_ = reply;
    return reply;
}

wire::Reply SecureDevice::op_deposit(const TlvReader& body) {
    Token16 op_id = wire::parse_token(body.get(wire::kTagOpId));
    if (last_bank_op_ && *last_bank_op_ == op_id) return last_bank_reply_;

    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    wire::Reply reply = [&] {
        if (amount > state_.balance) return make_reply(Sw::InsufficientBalance);
        state_.balance -= amount;
        state_.synced_balance_anchor -= amount;
        TlvWriter w;
        w.add_u64(wire::kTagBalance, state_.balance);
        return make_reply(Sw::Ok, std::move(w));
    }();
    last_bank_op_ = op_id;
    last_bank_reply_ = reply;
    return reply;
}

wire::Reply SecureDevice::op_synchronize(const TlvReader& body) {
    body.get(wire::kTagSyncId);  // presence check; the FI pairs request/response

    TlvWriter w;
    w.add_u64(wire::kTagBalance, state_.balance);
    w.add_u8(wire::kTagModeEcho, static_cast<std::uint8_t>(state_.mode));

    std::uint64_t pending_count = 0;
    std::uint64_t completed_count = 0;
    for (const LogEntry& e : state_.log)
        (e.status == EntryStatus::Pending ? pending_count : completed_count) += 1;

    if (state_.mode == ComplianceMode::BalanceTracking) {
        for (const LogEntry& e : state_.log) {
            if (e.status != EntryStatus::Completed) continue;
            Bytes v;
            append_u8(v, static_cast<std::uint8_t>(e.direction));
            append_u64_le(v, e.amount);
            w.add(wire::kTagAmountEntry, view(v));
        }
        w.add_u64(wire::kTagLogCount, completed_count);
        w.add_u64(wire::kTagPendingCount, pending_count);
    } else if (state_.mode == ComplianceMode::TransactionTracking) {
        for (const LogEntry& e : state_.log) w.add(wire::kTagFullEntry, view(wire::encode_entry(e)));
        w.add_u64(wire::kTagLogCount, completed_count);
        w.add_u64(wire::kTagPendingCount, pending_count);
    }
    // compliance-free reports the balance alone
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::aux_sync_confirm(const TlvReader& body) {
    Token16 sync_id = wire::parse_token(body.get(wire::kTagSyncId));
    if (last_sync_confirmed_ && *last_sync_confirmed_ == sync_id) {
        TlvWriter w;
        w.add_u64(wire::kTagBalance, state_.balance);
        return make_reply(Sw::Ok, std::move(w));  // duplicate confirm, already cleared
    }

    // completed entries are cleared; an in-flight pending entry survives so
    // an interrupted payment can still be recovered after the visit
    std::vector<LogEntry> kept;
    for (LogEntry& e : state_.log)
        if (e.status == EntryStatus::Pending) kept.push_back(std::move(e));
    state_.log = std::move(kept);
    state_.cumulative_spent = 0;
    state_.synced_balance_anchor = state_.balance;

    if (body.has(wire::kTagMaxBalance)) {
        state_.limits.max_balance = body.get_u64(wire::kTagMaxBalance);
        state_.limits.per_tx_max = body.get_u64(wire::kTagPerTxMax);
        state_.limits.cumulative_max = body.get_u64(wire::kTagCumulativeMax);
    }
    if (body.has(wire::kTagMode))
        state_.mode = static_cast<ComplianceMode>(body.get_u8(wire::kTagMode));

    last_sync_confirmed_ = sync_id;
    TlvWriter w;
    w.add_u64(wire::kTagBalance, state_.balance);
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::aux_verify_pin(SessionRecord& s, const TlvReader& body) {
    ByteView presented = body.get(wire::kTagPin);
    if (pin_retries_left_ <= 0) return make_reply(Sw::PinLocked);
    if (std::string(presented.begin(), presented.end()) != pin_) {
        if (--pin_retries_left_ <= 0) {
            state_.blocked = true;
            return make_reply(Sw::PinLocked);
        }
        return make_reply(Sw::WrongPin);
    }
    pin_retries_left_ = kPinRetries;
    s.authenticated = true;
    return make_reply(Sw::Ok);
}

wire::Reply SecureDevice::aux_get_status(const SessionRecord& s) {
    TlvWriter w;
    w.add_u64(wire::kTagBalance, state_.balance);
    w.add_u8(wire::kTagBlocked, state_.blocked ? 1 : 0);
    w.add_u64(wire::kTagCumulative, state_.cumulative_spent);
    w.add_u64(wire::kTagLogCount, state_.log.size());
    w.add_u8(wire::kTagAuthenticated, s.authenticated ? 1 : 0);
    if (!state_.log.empty()) w.add(wire::kTagFullEntry, view(wire::encode_entry(state_.log.back())));
    for (const LogEntry& e : state_.log)
        if (e.status == EntryStatus::Pending) w.add(wire::kTagPendingEntry, view(wire::encode_entry(e)));
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::aux_prompt_retransmit(SessionRecord& s, const TlvReader& body) {
    if (!s.authenticated) return make_reply(Sw::NotAuthenticated);
    std::uint64_t amount = body.get_u64(wire::kTagAmount);
    TxId tx = wire::parse_token(body.get(wire::kTagTxId));

    if (state_.log.empty()) return make_reply(Sw::NoMatchingPending);
    const LogEntry& last = state_.log.back();
    if (!(last.tx_id == tx) || last.amount != amount ||
        last.direction != EntryDirection::Incoming) {
        for (const LogEntry& e : state_.log) {
            if (e.tx_id == tx && e.amount == amount && e.direction == EntryDirection::Incoming &&
                e.status == EntryStatus::Pending)
                return make_reply(Sw::NotMostRecent);
        }
        return make_reply(Sw::NoMatchingPending);
    }
    if (last.status != EntryStatus::Pending) return make_reply(Sw::NoMatchingPending);
    if (!state_.current_tx_id || !(*state_.current_tx_id == tx))
        return make_reply(Sw::StaleTxId);

    retransmit_armed_ = true;
    retransmit_amount_ = amount;
    retransmit_tx_ = tx;
    return make_reply(Sw::Ok);
}

wire::Reply SecureDevice::aux_e2e_init() {
    if (!exchange_ready_ && !retransmit_armed_) return make_reply(Sw::UnexpectedMessage);
    auto [hs, first] = channel::Handshake::initiate(identity_, variant_, rng_, now_);
    e2e_handshake_ = std::move(hs);
    TlvWriter w;
    w.add(wire::kTagBlob, view(first));
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::aux_e2e_step(const TlvReader& body) {
    if (!e2e_handshake_) return make_reply(Sw::UnexpectedMessage);
    ByteView blob = body.get(wire::kTagBlob);
    try {
        auto step = e2e_handshake_->respond(blob);
        TlvWriter w;
        if (step.reply) w.add(wire::kTagBlob, view(*step.reply));
        if (step.established) {
            if (e2e_handshake_->peer_role() != Role::SecureDevice) {
                e2e_handshake_.reset();
                return make_reply(Sw::PermissionDenied);
            }
            channel::SessionContext ctx = e2e_handshake_->take_context();
            e2e_session_ = new_session(std::move(ctx));
            e2e_handshake_.reset();
            w.add_u8(wire::kTagEstablished, 1);
        }
        return make_reply(Sw::Ok, std::move(w));
    } catch (const Error&) {
        e2e_handshake_.reset();
        return make_reply(Sw::HandshakeFailed);
    }
}

wire::Reply SecureDevice::aux_value_exchange_start() {
    if (!e2e_session_ || !sessions_.count(*e2e_session_))
        return make_reply(Sw::UnexpectedMessage);

    Bytes frame;
    if (retransmit_armed_ && retransmit_tx_) {
        frame = wire::retransmit(retransmit_amount_, *retransmit_tx_);
    } else if (exchange_ready_) {
        LogEntry* pending = pending_entry();
        if (!pending || pending->direction != EntryDirection::Incoming)
            return make_reply(Sw::UnexpectedMessage);
        frame = wire::transfer(pending->amount, pending->tx_id);
    } else {
        return make_reply(Sw::UnexpectedMessage);
    }

    Bytes sealed = sessions_.at(*e2e_session_).ctx.send(view(frame));
    TlvWriter w;
    w.add(wire::kTagBlob, view(sealed));
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::aux_value_exchange_finish(SessionRecord&, const TlvReader& body) {
    if (!e2e_session_ || !sessions_.count(*e2e_session_))
        return make_reply(Sw::UnexpectedMessage);
    ByteView blob = body.get(wire::kTagBlob);

    SessionRecord& peer = sessions_.at(*e2e_session_);
    Bytes plain;
    try {
        plain = peer.ctx.receive(blob);
    } catch (const Error&) {
        return make_reply(Sw::ChannelError);
    }

    wire::Reply peer_reply = wire::Reply::parse(view(plain));
    if (!peer_reply.ok()) {
        // surface the counterparty's rejection to the wallet
        TlvWriter w;
        w.add_u8(wire::kTagPeerOrigin, 1);
        return wire::Reply{peer_reply.sw, w.take()};
    }

    TlvReader peer_body = peer_reply.body();
    std::uint64_t amount = peer_body.get_u64(wire::kTagAmount);
    TxId tx = wire::parse_token(peer_body.get(wire::kTagTxId));
    wire::Reply result = execute_receive(peer.ctx, amount, tx);
    if (result.ok()) {
        sessions_.erase(*e2e_session_);
        e2e_session_.reset();
    }
    return result;
}

wire::Reply SecureDevice::aux_anon_init(const TlvReader& body) {
    ByteView cert_msg = body.get(wire::kTagCertBytes);
    pki::ParticipationCertificate fi_cert;
    try {
        fi_cert = pki::ParticipationCertificate::decode(cert_msg);
        if (pki::verify_certificate(identity_.ca_public_key, fi_cert, now_) !=
            Role::FITerminal)
            return make_reply(Sw::PermissionDenied);
    } catch (const Error&) {
        return make_reply(Sw::HandshakeFailed);
    }

    anon_pending_ = AnonPending{crypto::generate_keypair(rng_), fi_cert.subject_public_key};
    TlvWriter w;
    w.add(wire::kTagEphemeralPk, view(anon_pending_->ephemeral.public_key));
    return make_reply(Sw::Ok, std::move(w));
}

wire::Reply SecureDevice::aux_anon_finish(const TlvReader& body) {
    if (!anon_pending_) return make_reply(Sw::UnexpectedMessage);
    ByteView receipt = body.get(wire::kTagReceipt);

    crypto::SessionKeys keys;
    try {
        keys = anon_session_keys(anon_pending_->ephemeral.secret, anon_pending_->fi_public,
                                 anon_pending_->fi_public, anon_pending_->ephemeral.public_key);
    } catch (const Error&) {
        anon_pending_.reset();
        return make_reply(Sw::HandshakeFailed);
    }
    Bytes expected =
        anon_receipt(keys, anon_pending_->fi_public, anon_pending_->ephemeral.public_key);
    if (receipt.size() != expected.size() ||
        !std::equal(receipt.begin(), receipt.end(), expected.begin())) {
        anon_pending_.reset();
        return make_reply(Sw::HandshakeFailed);
    }

    channel::SessionContext ctx{keys, 0, 0, Role::FITerminal, anon_pending_->fi_public, false};
    anon_pending_.reset();
    std::uint32_t sid = new_session(std::move(ctx), true);
    TlvWriter w;
    w.add_u64(wire::kTagSession, sid);
    return make_reply(Sw::Ok, std::move(w));
}

crypto::SessionKeys anon_session_keys(const Bytes& own_secret, const Bytes& peer_public,
                                      const Bytes& fi_public, const Bytes& ephemeral_public) {
    crypto::SharedSecret shared;
    shared.z_static = crypto::dh(own_secret, peer_public);

    Bytes context = to_bytes(std::string_view("offcbdc/hs/anon"));
    append(context, view(fi_public));
    append(context, view(ephemeral_public));
    return crypto::kdf(shared, view(context));
}

Bytes anon_receipt(const crypto::SessionKeys& keys, const Bytes& fi_public,
                   const Bytes& ephemeral_public) {
    Bytes material = to_bytes(std::string_view("anon-receipt"));
    append(material, view(fi_public));
    append(material, view(ephemeral_public));
    Bytes digest = crypto::sha256(view(material));
    return crypto::hmac_sha256(ByteView(keys.receipt.data(), keys.receipt.size()), view(digest));
}

}  // namespace offcbdc::device
