#include "offcbdc/terminals.hpp"

#include <algorithm>
#include <cstdio>

#include "offcbdc/errors.hpp"

namespace offcbdc::terminals {

using device::Sw;
using device::TxId;
namespace wire = device::wire;

namespace {

// message types and tags for wallet-to-wallet traffic
constexpr std::uint8_t kWwRequest = 0x01;
constexpr std::uint8_t kWwAccept = 0x02;
constexpr std::uint8_t kWwReject = 0x03;
constexpr std::uint8_t kWwComplete = 0x04;

constexpr std::uint8_t kTagWwType = 0x01;
constexpr std::uint8_t kTagWwAmount = 0x02;
constexpr std::uint8_t kTagWwTxId = 0x03;
constexpr std::uint8_t kTagWwAttr = 0x04;
constexpr std::uint8_t kTagWwThreshold = 0x05;
constexpr std::uint8_t kTagWwProof = 0x06;
constexpr std::uint8_t kTagWwReason = 0x07;
constexpr std::uint8_t kTagWwNow = 0x08;

TxId tx_from(ByteView v) {
    TxId tx;
    if (v.size() != tx.bytes.size()) throw ParseError("bad tx id length");
    std::copy(v.begin(), v.end(), tx.bytes.begin());
    return tx;
}

Bytes tx_bytes(const TxId& tx) {
    return Bytes(tx.bytes.begin(), tx.bytes.end());
}

// four-message mutual authentication against a device, every leg simulated
DeviceLink establish_device_session(sim::Transport& net, const channel::EndpointIdentity& self,
                                    channel::HandshakeVariant variant, DeterministicRng& rng,
                                    std::uint64_t now, device::SecureDevice& dev,
                                    const std::string& src, const std::string& dst) {
    auto [hs, m1] = channel::Handshake::initiate(self, variant, rng, now);
    Bytes d1 = net.transmit({"hs1", src, dst, dst, std::nullopt}, view(m1));
    auto r1 = dev.handshake_message(view(d1));
    Bytes d2 = net.transmit({"hs2", dst, src, "", std::nullopt}, view(r1.message));
    auto step = hs.respond(view(d2));
    Bytes d3 = net.transmit({"hs3", src, dst, dst, std::nullopt}, view(*step.reply));
    auto r2 = dev.handshake_message(view(d3));
    if (!r2.session) throw HandshakeError("responder did not establish");
    Bytes d4 = net.transmit({"hs4", dst, src, "", std::nullopt}, view(r2.message));
    auto done = hs.respond(view(d4));
    if (!done.established) throw HandshakeError("initiator did not establish");
    return DeviceLink{hs.take_context(), *r2.session, true};
}

wire::Reply link_exchange(sim::Transport& net, DeviceLink& link, device::SecureDevice& dev,
                          const std::string& src, const std::string& dev_name, const Bytes& cmd,
                          const char* kind) {
    Bytes sealed = link.ctx.send(view(cmd));
    Bytes delivered =
        net.transmit({std::string(kind), src, dev_name, dev_name, link.sid}, view(sealed));
    Bytes resp = dev.process(link.sid, view(delivered));
    Bytes back = net.transmit({std::string(kind) + "-reply", dev_name, src, "", std::nullopt},
                              view(resp));
    return wire::Reply::parse(view(link.ctx.receive(view(back))));
}

}  // namespace

Wallet::Wallet(std::string name, channel::EndpointIdentity identity, device::SecureDevice* dev,
               std::string pin, std::uint64_t rng_seed, std::uint64_t now)
    : name_(std::move(name)),
      identity_(std::move(identity)),
      dev_(dev),
      pin_(std::move(pin)),
      rng_(rng_seed),
      now_(now) {}

void Wallet::connect(sim::Transport& net) {
    net.begin_flow("connect");
    try {
        device_link_ = establish_device_session(net, identity_, dev_->variant(), rng_, now_,
                                                *dev_, name_, name_ + ".card");
        wire::Reply r = link_exchange(net, device_link_, *dev_, name_, name_ + ".card",
                                      wire::verify_pin(pin_), "pin");
        if (!r.ok()) {
            device_link_.valid = false;
            net.end_flow();
            throw Error("pin rejected: " + std::string(device::sw_name(r.sw)));
        }
        net.end_flow();
    } catch (...) {
        device_link_.valid = false;
        net.end_flow();
        throw;
    }
}

device::wire::Reply Wallet::command(sim::Transport& net, const Bytes& cmd, const char* kind) {
    if (!device_link_.valid) throw Error("wallet link down");
    try {
        return link_exchange(net, device_link_, *dev_, name_, name_ + ".card", cmd, kind);
    } catch (...) {
        device_link_.valid = false;
        throw;
    }
}

device::wire::Reply Wallet::local_command(const Bytes& cmd) {
    if (!device_link_.valid) throw Error("wallet link down");
    try {
        Bytes sealed = device_link_.ctx.send(view(cmd));
        Bytes resp = dev_->process(device_link_.sid, view(sealed));
        return wire::Reply::parse(view(device_link_.ctx.receive(view(resp))));
    } catch (...) {
        device_link_.valid = false;
        throw;
    }
}

Bytes Wallet::ww_initiate() {
    auto [hs, m1] = channel::Handshake::initiate(identity_, dev_->variant(), rng_, now_);
    ww_handshake_ = std::move(hs);
    ww_session_.reset();
    return m1;
}

Wallet::WwStep Wallet::ww_advance(ByteView msg) {
    if (!msg.empty() && msg[0] == 0x11) {  // fresh hello: become the responder
        ww_handshake_ = channel::Handshake::responder(identity_, dev_->variant(), rng_, now_);
        ww_session_.reset();
    }
    if (!ww_handshake_) throw OutOfOrderMessage();
    auto step = ww_handshake_->respond(msg);
    WwStep out;
    if (step.reply) out.reply = std::move(*step.reply);
    if (step.established) {
        ww_session_ = ww_handshake_->take_context();
        ww_handshake_.reset();
        out.established = true;
    }
    return out;
}

void Wallet::ww_reset() {
    ww_handshake_.reset();
    ww_session_.reset();
}

void Wallet::hold_credential(attest::VerifiableCredential vc, crypto::KeyPair holder_keys) {
    credential_ = std::move(vc);
    credential_keys_ = std::move(holder_keys);
}

// --- payment driver ---------------------------------------------------------

namespace {

struct WwMessage {
    std::uint8_t type = 0;
    std::uint64_t amount = 0;
    std::optional<TxId> tx;
    std::optional<ConditionPolicy> conditions;
    std::uint64_t condition_now = 0;
    std::optional<attest::ConditionProof> proof;
    Sw reason = Sw::Ok;
};

Bytes encode_ww(const WwMessage& m) {
    TlvWriter w;
    w.add_u8(kTagWwType, m.type);
    w.add_u64(kTagWwAmount, m.amount);
    if (m.tx) w.add(kTagWwTxId, view(tx_bytes(*m.tx)));
    if (m.conditions) {
        w.add(kTagWwAttr, view(to_bytes(m.conditions->attribute)));
        w.add_u64(kTagWwThreshold, static_cast<std::uint64_t>(m.conditions->threshold));
        w.add_u64(kTagWwNow, m.condition_now);
    }
    if (m.proof) w.add(kTagWwProof, view(m.proof->encode()));
    if (m.reason != Sw::Ok) w.add_u64(kTagWwReason, static_cast<std::uint64_t>(m.reason));
    return w.take();
}

WwMessage decode_ww(ByteView v) {
    TlvReader r(v);
    WwMessage m;
    m.type = r.get_u8(kTagWwType);
    m.amount = r.get_u64(kTagWwAmount);
    if (r.has(kTagWwTxId)) m.tx = tx_from(r.get(kTagWwTxId));
    if (r.has(kTagWwAttr)) {
        ByteView attr = r.get(kTagWwAttr);
        m.conditions = ConditionPolicy{std::string(attr.begin(), attr.end()),
                                       static_cast<std::int64_t>(r.get_u64(kTagWwThreshold))};
        m.condition_now = r.get_u64(kTagWwNow);
    }
    if (r.has(kTagWwProof)) m.proof = attest::ConditionProof::decode(r.get(kTagWwProof));
    if (r.has(kTagWwReason)) m.reason = static_cast<Sw>(r.get_u64(kTagWwReason));
    return m;
}

// one sealed wallet-to-wallet leg
WwMessage ww_leg(sim::Transport& net, Wallet& from, Wallet& to, const WwMessage& msg,
                 const char* kind) {
    Bytes sealed = from.ww_session()->send(view(encode_ww(msg)));
    Bytes delivered =
        net.transmit({kind, from.name(), to.name(), "", std::nullopt}, view(sealed));
    return decode_ww(view(to.ww_session()->receive(view(delivered))));
}

void establish_ww(sim::Transport& net, Wallet& a, Wallet& b) {
    Bytes m1 = a.ww_initiate();
    Bytes d1 = net.transmit({"ww-hs1", a.name(), b.name(), "", std::nullopt}, view(m1));
    auto s1 = b.ww_advance(view(d1));
    Bytes d2 = net.transmit({"ww-hs2", b.name(), a.name(), "", std::nullopt}, view(s1.reply));
    auto s2 = a.ww_advance(view(d2));
    Bytes d3 = net.transmit({"ww-hs3", a.name(), b.name(), "", std::nullopt}, view(s2.reply));
    auto s3 = b.ww_advance(view(d3));
    Bytes d4 = net.transmit({"ww-hs4", b.name(), a.name(), "", std::nullopt}, view(s3.reply));
    auto s4 = a.ww_advance(view(d4));
    if (!s3.established || !s4.established) throw HandshakeError("wallet pairing failed");
}

// device-to-device handshake plus value exchange: the receiver wallet pumps
// its card locally while the resulting blobs ride the simulated peer link.
// On entry the receiver card must be ready to start (confirmed or armed).
void pump_exchange(sim::Transport& net, Wallet& receiver, device::SecureDevice& sender_dev,
                   const std::string& sender_name, PaymentOutcome& out) {
    wire::Reply init = receiver.local_command(wire::e2e_init());
    if (!init.ok()) throw Error("exchange init refused");

    Bytes blob = to_bytes(init.body().get(wire::kTagBlob));
    std::uint32_t sender_sid = 0;
    for (int leg = 0; leg < 4; ++leg) {
        Bytes delivered = net.transmit(
            {"e2e-hs", receiver.name() + ".card", sender_name, sender_name, std::nullopt},
            view(blob));
        auto hr = sender_dev.handshake_message(view(delivered));
        if (hr.session) sender_sid = *hr.session;
        Bytes back = net.transmit(
            {"e2e-hs", sender_name, receiver.name() + ".card", "", std::nullopt},
            view(hr.message));
        wire::Reply step = receiver.local_command(wire::e2e_step(view(back)));
        if (!step.ok()) throw Error("peer session failed");
        if (step.body().has(wire::kTagEstablished)) break;
        blob = to_bytes(step.body().get(wire::kTagBlob));
    }

    wire::Reply start = receiver.local_command(wire::value_exchange_start());
    if (!start.ok()) throw Error("value exchange refused");
    Bytes transfer_frame = to_bytes(start.body().get(wire::kTagBlob));
    Bytes delivered = net.transmit(
        {"transfer", receiver.name() + ".card", sender_name, sender_name, sender_sid},
        view(transfer_frame));
    Bytes reply = sender_dev.process(sender_sid, view(delivered));
    // a sealed reply proves the sender's card processed the command; on the
    // happy path the prior accept guarantees it executed the debit
    out.transfer_executed = true;

    Bytes receive_frame =
        net.transmit({"receive", sender_name, receiver.name() + ".card",
                      receiver.name() + ".card", receiver.dev().current_peer_session()},
                     view(reply));
    wire::Reply fin = receiver.local_command(wire::value_exchange_finish(view(receive_frame)));
    if (!fin.ok()) {
        if (fin.body().has(wire::kTagPeerOrigin)) {
            // the sender's card rejected the transfer; nothing was debited
            out.transfer_executed = false;
        }
        out.status = PaymentOutcome::Status::DeviceRejected;
        out.reject_code = fin.sw;
        return;
    }
    out.receive_applied = true;
    out.receiver_balance = fin.body().get_u64(wire::kTagBalance);
    out.status = PaymentOutcome::Status::Completed;
}

PaymentOutcome device_rejected(PaymentOutcome out, Sw sw) {
    out.status = PaymentOutcome::Status::DeviceRejected;
    out.reject_code = sw;
    return out;
}

}  // namespace

PaymentOutcome initiate_payment(sim::Transport& net, Wallet& receiver, Wallet& sender,
                                std::uint64_t amount, const Approval& approval) {
    // session upkeep happens outside the payment message sequence
    if (!receiver.connected()) receiver.connect(net);
    if (!sender.connected()) sender.connect(net);
    receiver.ww_reset();
    sender.ww_reset();

    PaymentOutcome out;
    out.amount = amount;

    net.begin_flow("pay");
    try {
        establish_ww(net, receiver, sender);  // messages 0-3

        // 4,5: the receiver's card creates the transaction identifier
        wire::Reply req = receiver.command(net, wire::request(amount), "request");
        if (!req.ok()) {
            net.end_flow();
            return device_rejected(out, req.sw);
        }
        TxId tx = tx_from(req.body().get(wire::kTagTxId));
        out.tx = tx;

        // 6: payment request travels to the sender's wallet
        WwMessage request;
        request.type = kWwRequest;
        request.amount = amount;
        request.tx = tx;
        if (receiver.condition()) {
            request.conditions = receiver.condition();
            request.condition_now = receiver.now();
        }
        WwMessage seen = ww_leg(net, receiver, sender, request, "request-ww");

        // sender-side approval; a rejection message flows back and ends it
        if (!approval(seen.amount)) {
            WwMessage reject;
            reject.type = kWwReject;
            reject.amount = amount;
            reject.tx = tx;
            ww_leg(net, sender, receiver, reject, "reject-ww");
            out.status = PaymentOutcome::Status::RejectedByUser;
            net.end_flow();
            return out;
        }

        // condition proof, produced by the paying wallet when asked
        std::optional<attest::ConditionProof> proof;
        if (seen.conditions) {
            bool can_prove = sender.credential().has_value();
            if (can_prove) {
                attest::ConditionPublicInputs pub;
                pub.threshold = seen.conditions->threshold;
                pub.attribute = seen.conditions->attribute;
                pub.ca_public_key = sender.identity().ca_public_key;
                pub.binding = tx_bytes(*seen.tx);
                pub.now = seen.condition_now;
                try {
                    proof = attest::prove_condition(*sender.credential(),
                                                    *sender.credential_keys(), pub);
                } catch (const ConditionUnsatisfied&) {
                    can_prove = false;
                }
            }
            if (!can_prove) {
                WwMessage reject;
                reject.type = kWwReject;
                reject.amount = amount;
                reject.tx = tx;
                ww_leg(net, sender, receiver, reject, "reject-ww");
                out.status = PaymentOutcome::Status::ConditionRejected;
                net.end_flow();
                return out;
            }
        }

        // 7,8: the sender's card runs its admission checks and commits
        wire::Reply acc = sender.command(net, wire::accept(amount, *seen.tx), "accept");
        if (!acc.ok()) {
            WwMessage reject;
            reject.type = kWwReject;
            reject.amount = amount;
            reject.tx = tx;
            reject.reason = acc.sw;
            ww_leg(net, sender, receiver, reject, "reject-ww");
            net.end_flow();
            return device_rejected(out, acc.sw);
        }

        // 9: acceptance (with any proof) returns to the receiver's wallet
        WwMessage accept_msg;
        accept_msg.type = kWwAccept;
        accept_msg.amount = amount;
        accept_msg.tx = tx;
        accept_msg.proof = proof;
        WwMessage acc_seen = ww_leg(net, sender, receiver, accept_msg, "accept-ww");

        // the receiving wallet, not the card, verifies the condition proof
        if (receiver.condition()) {
            attest::ConditionPublicInputs pub;
            pub.threshold = receiver.condition()->threshold;
            pub.attribute = receiver.condition()->attribute;
            pub.ca_public_key = receiver.identity().ca_public_key;
            pub.binding = tx_bytes(tx);
            pub.now = receiver.now();
            bool proof_ok = false;
            try {
                proof_ok = acc_seen.proof && attest::verify_condition(*acc_seen.proof, pub);
            } catch (const UnknownBackend&) {
                proof_ok = false;
            }
            if (!proof_ok) {
                out.status = PaymentOutcome::Status::ConditionRejected;
                net.end_flow();
                return out;
            }
        }

        // 10,11: the receiver's card re-checks and opens the value exchange
        wire::Reply conf = receiver.command(net, wire::accept(amount, tx), "confirm");
        if (!conf.ok()) {
            net.end_flow();
            return device_rejected(out, conf.sw);
        }

        // 12-17: device session and value exchange
        pump_exchange(net, receiver, sender.dev(), sender.name() + ".card", out);
        if (out.status != PaymentOutcome::Status::Completed) {
            net.end_flow();
            return out;
        }

        // 18: completion notice; 19,20: the sender wallet reads its balance
        WwMessage complete;
        complete.type = kWwComplete;
        complete.amount = amount;
        complete.tx = tx;
        ww_leg(net, receiver, sender, complete, "complete-ww");
        wire::Reply st = sender.command(net, wire::get_status(), "status");
        out.sender_balance = st.body().get_u64(wire::kTagBalance);

        net.end_flow();
        return out;
    } catch (const Error&) {
        // transport interruption or protocol violation: record what is known
        out.status = PaymentOutcome::Status::Interrupted;
        if (out.tx) {
            receiver.interrupted = Wallet::InterruptionRecord{
                out.amount, *out.tx, out.transfer_executed && !out.receive_applied};
        }
        receiver.mark_link_dirty();
        sender.mark_link_dirty();
        receiver.ww_reset();
        sender.ww_reset();
        net.end_flow();
        return out;
    }
}

PaymentOutcome drive_retransmission(sim::Transport& net, Wallet& receiver, Wallet& sender) {
    PaymentOutcome out;
    if (!receiver.interrupted) {
        out.status = PaymentOutcome::Status::RestartRequired;
        return out;
    }
    std::uint64_t amount = receiver.interrupted->amount;
    TxId tx = receiver.interrupted->tx;
    out.amount = amount;
    out.tx = tx;

    if (!receiver.connected()) receiver.connect(net);
    if (!sender.connected()) sender.connect(net);

    net.begin_flow("retransmit");
    try {
        // 0,1: the wallet asks its card to verify the interrupted entry
        wire::Reply prompt =
            receiver.command(net, wire::prompt_retransmit(amount, tx), "prompt");
        if (!prompt.ok()) {
            // the entry may have completed after all (late receive) or be gone
            wire::Reply st = receiver.command(net, wire::get_status(), "probe");
            if (st.ok() && st.body().has(wire::kTagFullEntry)) {
                device::LogEntry last = wire::decode_entry(st.body().get(wire::kTagFullEntry));
                if (last.tx_id == tx && last.status == device::EntryStatus::Completed) {
                    out.status = PaymentOutcome::Status::Completed;
                    out.receive_applied = true;
                    out.transfer_executed = true;
                    out.receiver_balance = st.body().get_u64(wire::kTagBalance);
                    receiver.interrupted.reset();
                    net.end_flow();
                    return out;
                }
            }
            receiver.interrupted.reset();
            out.status = PaymentOutcome::Status::RestartRequired;
            out.reject_code = prompt.sw;
            net.end_flow();
            return out;
        }

        // 2-7: fresh device session, then the repeated exchange
        pump_exchange(net, receiver, sender.dev(), sender.name() + ".card", out);
        if (out.status == PaymentOutcome::Status::Completed) {
            receiver.interrupted.reset();
        } else if (out.status == PaymentOutcome::Status::DeviceRejected &&
                   out.reject_code == Sw::NoMatchingPending) {
            // the transfer never executed at the sender; start over
            receiver.interrupted.reset();
            out.status = PaymentOutcome::Status::RestartRequired;
        }
        net.end_flow();
        return out;
    } catch (const Error&) {
        out.status = PaymentOutcome::Status::Interrupted;
        receiver.mark_link_dirty();
        sender.mark_link_dirty();
        net.end_flow();
        return out;
    }
}

PaymentOutcome run_pos_payment(sim::Transport& net, Wallet& pos,
                               device::SecureDevice& customer_card,
                               const std::string& customer_pin, std::uint64_t amount) {
    if (!pos.connected()) pos.connect(net);

    PaymentOutcome out;
    out.amount = amount;

    net.begin_flow("pos-pay");
    try {
        // 0-3: the POS terminal opens a session with the inserted card,
        // 4,5: the customer authenticates on the POS pad
        DeviceLink card = establish_device_session(net, pos.identity(), customer_card.variant(),
                                                   pos.rng(), pos.now(), customer_card,
                                                   pos.name(), "customer.card");
        wire::Reply pin = link_exchange(net, card, customer_card, pos.name(), "customer.card",
                                        wire::verify_pin(customer_pin), "pin");
        if (!pin.ok()) {
            net.end_flow();
            return device_rejected(out, pin.sw);
        }

        // the POS plays both wallets: request on its own card is local
        wire::Reply req = pos.local_command(wire::request(amount));
        if (!req.ok()) {
            net.end_flow();
            return device_rejected(out, req.sw);
        }
        TxId tx = tx_from(req.body().get(wire::kTagTxId));
        out.tx = tx;

        // 6,7: the customer's card checks and commits
        wire::Reply acc =
            link_exchange(net, card, customer_card, pos.name(), "customer.card",
                          wire::accept(amount, tx), "accept");
        if (!acc.ok()) {
            net.end_flow();
            return device_rejected(out, acc.sw);
        }
        wire::Reply conf = pos.local_command(wire::accept(amount, tx));
        if (!conf.ok()) {
            net.end_flow();
            return device_rejected(out, conf.sw);
        }

        // 8-13: card-to-card session and value exchange
        pump_exchange(net, pos, customer_card, "customer.card", out);
        net.end_flow();
        return out;
    } catch (const Error&) {
        out.status = PaymentOutcome::Status::Interrupted;
        if (out.tx) {
            pos.interrupted = Wallet::InterruptionRecord{
                out.amount, *out.tx, out.transfer_executed && !out.receive_applied};
        }
        pos.mark_link_dirty();
        net.end_flow();
        return out;
    }
}

// --- financial institution ---------------------------------------------------

namespace {

// journal record types
constexpr std::uint8_t kRecMint = 1;
constexpr std::uint8_t kRecEnroll = 2;
constexpr std::uint8_t kRecSyncIntent = 3;
constexpr std::uint8_t kRecSyncDone = 4;
constexpr std::uint8_t kRecBlock = 5;
constexpr std::uint8_t kRecOpIntent = 6;
constexpr std::uint8_t kRecOpSettled = 7;
constexpr std::uint8_t kRecCashIn = 8;

constexpr std::uint8_t kRTagType = 0x01;
constexpr std::uint8_t kRTagOwner = 0x02;
constexpr std::uint8_t kRTagPk = 0x03;
constexpr std::uint8_t kRTagAmount = 0x04;
constexpr std::uint8_t kRTagToken = 0x05;
constexpr std::uint8_t kRTagBalance = 0x06;
constexpr std::uint8_t kRTagApplied = 0x07;
constexpr std::uint8_t kRTagIsWithdraw = 0x08;

device::Token16 token_from(ByteView v) {
    device::Token16 t;
    if (v.size() != t.bytes.size()) throw ParseError("bad token");
    std::copy(v.begin(), v.end(), t.bytes.begin());
    return t;
}

}  // namespace

Fi::Fi(channel::EndpointIdentity identity, channel::HandshakeVariant variant,
       std::uint64_t rng_seed, std::uint64_t now, std::string journal_path)
    : identity_(std::move(identity)),
      variant_(variant),
      rng_(rng_seed),
      now_(now),
      journal_path_(std::move(journal_path)),
      journal_(nullptr, &std::fclose) {
    if (!journal_path_.empty()) {
        journal_.reset(std::fopen(journal_path_.c_str(), "ab"));
        if (!journal_) throw Error("cannot open journal: " + journal_path_);
    }
}

void Fi::journal_append(const Bytes& record) {
    if (!journal_) return;
    Bytes framed;
    framed.push_back(static_cast<std::uint8_t>(record.size() & 0xff));
    framed.push_back(static_cast<std::uint8_t>((record.size() >> 8) & 0xff));
    framed.push_back(static_cast<std::uint8_t>((record.size() >> 16) & 0xff));
    framed.push_back(static_cast<std::uint8_t>((record.size() >> 24) & 0xff));
    append(framed, view(record));
    std::fwrite(framed.data(), 1, framed.size(), journal_.get());
    std::fflush(journal_.get());
}

void Fi::apply_record(ByteView record, bool replaying) {
    TlvReader r(record);
    std::uint8_t type = r.get_u8(kRTagType);
    switch (type) {
        case kRecMint: {
            ByteView owner_v = r.get(kRTagOwner);
            std::string owner(owner_v.begin(), owner_v.end());
            std::uint64_t amount = r.get_u64(kRTagAmount);
            accounts_[owner].owner = owner;
            accounts_[owner].balance += amount;
            minted_ += amount;
            break;
        }
        case kRecEnroll: {
            ByteView owner_v = r.get(kRTagOwner);
            Bytes pk = to_bytes(r.get(kRTagPk));
            std::string key = to_hex(view(pk));
            ledger_[key] = OfflineLedgerEntry{std::string(owner_v.begin(), owner_v.end()), pk, 0,
                                              false};
            break;
        }
        case kRecSyncIntent: {
            std::string key = to_hex(r.get(kRTagPk));
            sync_intents_[key] =
                SyncIntent{token_from(r.get(kRTagToken)), r.get_u64(kRTagBalance)};
            break;
        }
        case kRecSyncDone: {
            std::string key = to_hex(r.get(kRTagPk));
            auto it = ledger_.find(key);
            if (it != ledger_.end()) it->second.last_synced_balance = r.get_u64(kRTagBalance);
            sync_intents_.erase(key);
            break;
        }
        case kRecBlock: {
            std::string key = to_hex(r.get(kRTagPk));
            auto it = ledger_.find(key);
            if (it != ledger_.end()) it->second.blocked = true;
            break;
        }
        case kRecOpIntent: {
            std::string key = to_hex(r.get(kRTagPk));
            OpIntent intent;
            intent.op_id = token_from(r.get(kRTagToken));
            intent.is_withdraw = r.get_u8(kRTagIsWithdraw) != 0;
            intent.amount = r.get_u64(kRTagAmount);
            ByteView owner_v = r.get(kRTagOwner);
            intent.owner = std::string(owner_v.begin(), owner_v.end());
            if (intent.is_withdraw) accounts_[intent.owner].balance -= intent.amount;
            op_intents_[key] = intent;
            break;
        }
        case kRecOpSettled: {
            std::string key = to_hex(r.get(kRTagPk));
            bool applied = r.get_u8(kRTagApplied) != 0;
            auto it = op_intents_.find(key);
            if (it == op_intents_.end()) break;
            OpIntent intent = it->second;
            op_intents_.erase(it);
            auto led = ledger_.find(key);
            if (intent.is_withdraw) {
                if (applied) {
                    if (led != ledger_.end()) led->second.last_synced_balance += intent.amount;
                } else {
                    accounts_[intent.owner].balance += intent.amount;  // revert
                }
            } else {
                if (applied) {
                    accounts_[intent.owner].balance += intent.amount;
                    if (led != ledger_.end()) led->second.last_synced_balance -= intent.amount;
                }
            }
            break;
        }
        case kRecCashIn: {
            cash_in_ += r.get_u64(kRTagAmount);
            break;
        }
        default:
            if (!replaying) throw Error("unknown journal record");
    }
}

void Fi::record_mint(const std::string& owner, std::uint64_t amount) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecMint);
    w.add(kRTagOwner, view(to_bytes(owner)));
    w.add_u64(kRTagAmount, amount);
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

void Fi::record_enroll(const std::string& owner, const Bytes& device_pk) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecEnroll);
    w.add(kRTagOwner, view(to_bytes(owner)));
    w.add(kRTagPk, view(device_pk));
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

void Fi::record_sync_intent(const Bytes& pk, const SyncIntent& intent) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecSyncIntent);
    w.add(kRTagPk, view(pk));
    w.add(kRTagToken, ByteView(intent.sync_id.bytes.data(), intent.sync_id.bytes.size()));
    w.add_u64(kRTagBalance, intent.new_balance);
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

void Fi::record_sync_done(const Bytes& pk, std::uint64_t new_balance) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecSyncDone);
    w.add(kRTagPk, view(pk));
    w.add_u64(kRTagBalance, new_balance);
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

void Fi::record_block(const Bytes& pk) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecBlock);
    w.add(kRTagPk, view(pk));
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

void Fi::record_op_intent(const Bytes& pk, const OpIntent& intent) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecOpIntent);
    w.add(kRTagPk, view(pk));
    w.add(kRTagToken, ByteView(intent.op_id.bytes.data(), intent.op_id.bytes.size()));
    w.add_u8(kRTagIsWithdraw, intent.is_withdraw ? 1 : 0);
    w.add_u64(kRTagAmount, intent.amount);
    w.add(kRTagOwner, view(to_bytes(intent.owner)));
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

void Fi::record_op_settled(const Bytes& pk, const device::Token16&, bool applied) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecOpSettled);
    w.add(kRTagPk, view(pk));
    w.add_u8(kRTagApplied, applied ? 1 : 0);
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

void Fi::record_cash_in(std::uint64_t amount) {
    TlvWriter w;
    w.add_u8(kRTagType, kRecCashIn);
    w.add_u64(kRTagAmount, amount);
    Bytes rec = w.take();
    apply_record(view(rec), false);
    journal_append(rec);
}

Fi Fi::recover(channel::EndpointIdentity identity, channel::HandshakeVariant variant,
               std::uint64_t rng_seed, std::uint64_t now, const std::string& journal_path) {
    // replay first, then reopen for appending
    std::FILE* in = std::fopen(journal_path.c_str(), "rb");
    if (!in) throw Error("cannot read journal: " + journal_path);
    std::vector<Bytes> records;
    for (;;) {
        std::uint8_t len_bytes[4];
        if (std::fread(len_bytes, 1, 4, in) != 4) break;
        std::size_t len = len_bytes[0] | (len_bytes[1] << 8) | (len_bytes[2] << 16) |
                          (static_cast<std::size_t>(len_bytes[3]) << 24);
        Bytes rec(len, 0);
        if (std::fread(rec.data(), 1, len, in) != len) break;  // torn tail record
        records.push_back(std::move(rec));
    }
    std::fclose(in);

    Fi fi(std::move(identity), variant, rng_seed, now, "");
    for (const Bytes& rec : records) fi.apply_record(view(rec), true);
    fi.journal_path_ = journal_path;
    fi.journal_.reset(std::fopen(journal_path.c_str(), "ab"));
    return fi;
}

void Fi::mint(const std::string& owner, std::uint64_t amount) {
    record_mint(owner, amount);
}

void Fi::enroll(const std::string& owner, const Bytes& device_pk) {
    if (enrolled(device_pk)) throw DuplicateEnrollment();
    record_enroll(owner, device_pk);
}

bool Fi::enrolled(const Bytes& device_pk) const {
    return ledger_.count(to_hex(view(device_pk))) > 0;
}

std::uint64_t Fi::account_balance(const std::string& owner) const {
    auto it = accounts_.find(owner);
    return it == accounts_.end() ? 0 : it->second.balance;
}

const OfflineLedgerEntry* Fi::ledger_entry(const Bytes& device_pk) const {
    auto it = ledger_.find(to_hex(view(device_pk)));
    return it == ledger_.end() ? nullptr : &it->second;
}

std::uint64_t Fi::total_online() const {
    std::uint64_t sum = 0;
    for (const auto& [_, acct] : accounts_) sum += acct.balance;
    return sum;
}

std::uint64_t Fi::total_ledger() const {
    std::uint64_t sum = 0;
    for (const auto& [_, entry] : ledger_) sum += entry.last_synced_balance;
    return sum;
}

std::uint64_t Fi::suspense_total() const {
    std::uint64_t sum = 0;
    for (const auto& [_, intent] : op_intents_) sum += intent.amount;
    return sum;
}

std::uint64_t Fi::apparent_shortfall() const {
    std::uint64_t known = total_online() + total_ledger() + suspense_total();
    std::uint64_t issued = minted_ + cash_in_;
    return issued > known ? issued - known : 0;
}

std::vector<TransferTrace> Fi::unmatched_transfers() const {
    std::vector<TransferTrace> out;
    for (const TransferTrace& t : traces_)
        if (!t.matched) out.push_back(t);
    return out;
}

void Fi::schedule_limit_update(const Bytes& device_pk, device::Limits limits,
                               std::optional<device::ComplianceMode> mode) {
    limit_updates_[to_hex(view(device_pk))] = {limits, mode};
}

Fi::Snapshot Fi::snapshot() const {
    Snapshot s;
    for (const auto& [owner, acct] : accounts_) s.accounts[owner] = acct.balance;
    for (const auto& [key, entry] : ledger_) {
        s.ledger_balances[key] = entry.last_synced_balance;
        s.ledger_blocked[key] = entry.blocked;
    }
    s.minted = minted_;
    s.cash_in = cash_in_;
    s.open_intents = sync_intents_.size() + op_intents_.size();
    return s;
}

Fi::Visit Fi::open_visit(sim::Transport& net, Wallet& user) {
    Visit v;
    v.dev = &user.dev();
    v.card_name = user.name() + ".card";
    v.link = establish_device_session(net, identity_, variant_, rng_, now_, *v.dev, "fi",
                                      v.card_name);
    wire::Reply pin = link_exchange(net, v.link, *v.dev, "fi", v.card_name,
                                    wire::verify_pin(user.pin()), "pin");
    if (!pin.ok()) throw Error("authentication at the terminal failed");
    return v;
}

device::wire::Reply Fi::exchange(sim::Transport& net, Visit& v, const Bytes& cmd,
                                 const char* kind) {
    return link_exchange(net, v.link, *v.dev, "fi", v.card_name, cmd, kind);
}

SyncReport Fi::run_sync(sim::Transport& net, Visit& v) {
    const Bytes& pk = v.dev->identity().keys.public_key;
    std::string key = to_hex(view(pk));
    auto led = ledger_.find(key);
    if (led == ledger_.end()) throw Error("device not enrolled");

    SyncReport report;
    report.device_pk = pk;

    device::Token16 sync_id = device::Token16::random(rng_);
    wire::Reply reply = exchange(net, v, wire::synchronize(sync_id), "synchronize");
    if (!reply.ok()) throw Error("synchronize refused");

    auto body = reply.body();
    report.reported_balance = body.get_u64(wire::kTagBalance);
    auto mode = static_cast<device::ComplianceMode>(body.get_u8(wire::kTagModeEcho));

    // fold the reported transactions onto the last recorded balance; an open
    // intent from an interrupted confirmation is the alternative base
    std::int64_t delta = 0;
    std::uint64_t n = 0;
    if (mode == device::ComplianceMode::BalanceTracking) {
        for (ByteView e : body.all(wire::kTagAmountEntry)) {
            if (e.size() != 9) throw ParseError("bad amount entry");
            auto amount = static_cast<std::int64_t>(read_u64_le(e, 1));
            delta += e[0] == static_cast<std::uint8_t>(device::EntryDirection::Incoming)
                         ? amount
                         : -amount;
            ++n;
        }
        report.pending_for_review = body.get_u64(wire::kTagPendingCount) > 0;
    } else if (mode == device::ComplianceMode::TransactionTracking) {
        for (ByteView raw : body.all(wire::kTagFullEntry)) {
            device::LogEntry e = wire::decode_entry(raw);
            if (e.status == device::EntryStatus::Pending) {
                report.pending_for_review = true;
                continue;
            }
            bool incoming = e.direction == device::EntryDirection::Incoming;
            delta += incoming ? static_cast<std::int64_t>(e.amount)
                              : -static_cast<std::int64_t>(e.amount);
            ++n;

            // issuances by this institution (anonymous withdrawals) have no
            // counterparty sync to wait for
            if (*e.counterparty_pk == identity_.keys.public_key) continue;

            // cross-match transfers for the money-destruction detector
            TransferTrace trace;
            trace.tx = e.tx_id;
            trace.amount = e.amount;
            trace.from_pk = incoming ? *e.counterparty_pk : pk;
            trace.to_pk = incoming ? pk : *e.counterparty_pk;
            bool found = false;
            for (TransferTrace& seen : traces_) {
                if (seen.tx == trace.tx && seen.amount == trace.amount &&
                    seen.from_pk == trace.from_pk && seen.to_pk == trace.to_pk) {
                    seen.matched = true;
                    found = true;
                    break;
                }
            }
            if (!found) traces_.push_back(trace);
        }
    }
    report.n = n;

    bool consistent = false;
    if (mode == device::ComplianceMode::ComplianceFree) {
        consistent = true;  // nothing to replay against
    } else {
        auto base = static_cast<std::int64_t>(led->second.last_synced_balance);
        consistent = base + delta == static_cast<std::int64_t>(report.reported_balance);
        auto intent = sync_intents_.find(key);
        if (!consistent && intent != sync_intents_.end()) {
            // the previous confirmation may have landed without its ack
            auto alt = static_cast<std::int64_t>(intent->second.new_balance);
            consistent = alt + delta == static_cast<std::int64_t>(report.reported_balance);
        }
    }
    report.replayed_balance = report.reported_balance;
    if (!consistent) {
        auto base = static_cast<std::int64_t>(led->second.last_synced_balance);
        report.replayed_balance = static_cast<std::uint64_t>(base + delta);
        report.outcome = SyncReport::Outcome::MismatchBlocked;
        exchange(net, v, wire::block(), "block");
        record_block(pk);
        return report;
    }

    // consistent: instruct the card to clear and reset, then move the ledger
    record_sync_intent(pk, SyncIntent{sync_id, report.reported_balance});
    std::optional<device::Limits> push_limits;
    std::optional<device::ComplianceMode> push_mode;
    auto update = limit_updates_.find(key);
    if (update != limit_updates_.end()) {
        push_limits = update->second.first;
        push_mode = update->second.second;
    }
    wire::Reply conf =
        exchange(net, v, wire::sync_confirm(sync_id, push_limits, push_mode), "sync-confirm");
    if (!conf.ok()) throw Error("sync confirm refused");
    if (update != limit_updates_.end()) limit_updates_.erase(update);
    record_sync_done(pk, report.reported_balance);
    report.outcome = SyncReport::Outcome::Consistent;
    return report;
}

SyncReport Fi::synchronize(sim::Transport& net, Wallet& user) {
    net.begin_flow("sync");
    try {
        Visit v = open_visit(net, user);
        SyncReport report = run_sync(net, v);
        net.end_flow();
        return report;
    } catch (const Error&) {
        net.end_flow();
        SyncReport report;
        report.device_pk = user.dev().identity().keys.public_key;
        report.outcome = SyncReport::Outcome::Interrupted;
        return report;
    }
}

BankOpOutcome Fi::run_bank_op(sim::Transport& net, Wallet& user, bool is_withdraw,
                              std::uint64_t amount) {
    BankOpOutcome out;
    const Bytes& pk = user.dev().identity().keys.public_key;
    std::string key = to_hex(view(pk));
    auto led = ledger_.find(key);
    if (led == ledger_.end()) throw Error("device not enrolled");

    std::string owner = led->second.owner;
    if (is_withdraw && account_balance(owner) < amount) {
        out.reject_code = Sw::InsufficientBalance;  // insufficient online funds
        out.online_balance = account_balance(owner);
        return out;
    }

    // the operation id makes retries after interruptions idempotent
    OpIntent intent{device::Token16::random(rng_), is_withdraw, amount, owner};
    record_op_intent(pk, intent);

    const char* kind = is_withdraw ? "withdraw" : "deposit";
    for (int attempt = 0; attempt < 3; ++attempt) {
        try {
            Visit v = open_visit(net, user);
            SyncReport sync = run_sync(net, v);
            if (sync.outcome == SyncReport::Outcome::MismatchBlocked) {
                record_op_settled(pk, intent.op_id, false);
                out.reject_code = Sw::DeviceBlocked;
                out.online_balance = account_balance(owner);
                return out;
            }
            Bytes cmd = is_withdraw ? wire::withdraw(intent.op_id, amount)
                                    : wire::deposit(intent.op_id, amount);
            wire::Reply reply = exchange(net, v, cmd, kind);
            if (reply.ok()) {
                record_op_settled(pk, intent.op_id, true);
                out.ok = true;
                out.device_balance = reply.body().get_u64(wire::kTagBalance);
            } else {
                record_op_settled(pk, intent.op_id, false);
                out.reject_code = reply.sw;
            }
            out.online_balance = account_balance(owner);
            return out;
        } catch (const Error&) {
            continue;  // new visit, same operation id
        }
    }
    // unresolved: the amount stays in suspense until the next contact
    out.interrupted = true;
    out.online_balance = account_balance(owner);
    return out;
}

BankOpOutcome Fi::withdraw(sim::Transport& net, Wallet& user, std::uint64_t amount) {
    net.begin_flow("withdraw");
    BankOpOutcome out = run_bank_op(net, user, true, amount);
    net.end_flow();
    return out;
}

BankOpOutcome Fi::deposit(sim::Transport& net, Wallet& user, std::uint64_t amount) {
    net.begin_flow("deposit");
    BankOpOutcome out = run_bank_op(net, user, false, amount);
    net.end_flow();
    return out;
}

void Fi::resolve_open_intents(sim::Transport& net, Wallet& user) {
    const Bytes& pk = user.dev().identity().keys.public_key;
    std::string key = to_hex(view(pk));
    auto it = op_intents_.find(key);
    if (it == op_intents_.end()) return;
    OpIntent intent = it->second;

    net.begin_flow("resolve");
    try {
        Visit v = open_visit(net, user);
        // the card caches its last bank operation: same id, same answer
        Bytes cmd = intent.is_withdraw ? wire::withdraw(intent.op_id, intent.amount)
                                       : wire::deposit(intent.op_id, intent.amount);
        wire::Reply reply = exchange(net, v, cmd, "resolve-op");
        record_op_settled(pk, intent.op_id, reply.ok());
    } catch (const Error&) {
        // still unresolved; a later contact will retry
    }
    net.end_flow();
}

BankOpOutcome Fi::anonymous_withdraw(sim::Transport& net, Wallet& user, std::uint64_t amount) {
    BankOpOutcome out;
    net.begin_flow("anon-withdraw");
    try {
        if (!user.connected()) throw Error("wallet not connected");
        if (!user.credential() || !user.credential_keys())
            throw Error("no credential for anonymous withdrawal");

        // leg 0: terminal certificate; the device answers with a fresh
        // ephemeral key and the wallet attaches its credential proof
        Bytes cert_msg = identity_.certificate.encode();
        Bytes d0 = net.transmit({"anon-cert", "fi", user.name(), "", std::nullopt},
                                view(cert_msg));

        wire::Reply init = user.local_command(wire::anon_init(view(d0)));
        if (!init.ok()) throw Error("anonymous session refused");
        Bytes epk = to_bytes(init.body().get(wire::kTagEphemeralPk));

        attest::ConditionProof proof = attest::prove_withdrawal(
            *user.credential(), *user.credential_keys(), identity_.ca_public_key, epk, now_);

        TlvWriter a2;
        a2.add(wire::kTagEphemeralPk, view(epk));
        a2.add(wire::kTagBlob, view(proof.encode()));
        Bytes d1 = net.transmit({"anon-share", user.name(), "fi", "", std::nullopt},
                                view(a2.bytes()));

        // terminal side: check the proof, derive keys, confirm with a receipt
        TlvReader a2r(view(d1));
        Bytes peer_epk = to_bytes(a2r.get(wire::kTagEphemeralPk));
        attest::ConditionProof seen = attest::ConditionProof::decode(a2r.get(wire::kTagBlob));
        if (!attest::verify_withdrawal(seen, identity_.ca_public_key, peer_epk, now_)) {
            out.reject_code = Sw::PermissionDenied;
            net.end_flow();
            return out;
        }
        crypto::SessionKeys keys = device::anon_session_keys(
            identity_.keys.secret, peer_epk, identity_.keys.public_key, peer_epk);
        Bytes receipt = device::anon_receipt(keys, identity_.keys.public_key, peer_epk);
        Bytes d2 = net.transmit({"anon-receipt", "fi", user.name(), "", std::nullopt},
                                view(receipt));

        wire::Reply fin = user.local_command(wire::anon_finish(view(d2)));
        if (!fin.ok()) throw Error("anonymous session failed");
        auto sid = static_cast<std::uint32_t>(fin.body().get_u64(wire::kTagSession));

        // sealed withdraw over the anonymous session; cash backs the issuance
        channel::SessionContext ctx{keys, 0, 0, pki::Role::SecureDevice, peer_epk, true};
        device::Token16 op_id = device::Token16::random(rng_);
        Bytes sealed = ctx.send(view(wire::withdraw(op_id, amount)));
        Bytes d3 = net.transmit({"anon-withdraw", "fi", user.name(), user.name() + ".card", sid},
                                view(sealed));
        Bytes resp = user.dev().process(sid, view(d3));
        Bytes d4 = net.transmit({"anon-withdraw-reply", user.name(), "fi", "", std::nullopt},
                                view(resp));
        wire::Reply reply = wire::Reply::parse(view(ctx.receive(view(d4))));
        if (reply.ok()) {
            record_cash_in(amount);
            out.ok = true;
            out.device_balance = reply.body().get_u64(wire::kTagBalance);
        } else {
            out.reject_code = reply.sw;
        }
        net.end_flow();
        return out;
    } catch (const Error&) {
        out.interrupted = true;
        net.end_flow();
        return out;
    }
}

}  // namespace offcbdc::terminals
