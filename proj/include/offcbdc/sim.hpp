#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "offcbdc/bytes.hpp"
#include "offcbdc/errors.hpp"

namespace offcbdc::sim {

enum class FaultKind : std::uint8_t {
    Drop,
    Delay,           // held for delay_steps; at or past the timeout this is an interruption
    Tamper,          // xor one byte in flight
    ReplayCaptured,  // re-deliver a captured frame to its original destination
    InjectSession,   // adversary opens its own session with a participant
};

// One adversarial intervention, bound to a message index of the next flow.
struct FaultAction {
    std::size_t step = 0;
    FaultKind kind = FaultKind::Drop;
    std::uint64_t delay_steps = 0;            // Delay
    std::size_t offset = 0;                   // Tamper: byte offset (wrapped)
    std::uint8_t xor_mask = 0x01;             // Tamper
    std::size_t capture_index = 0;            // ReplayCaptured
    std::string actor;                        // InjectSession
};

struct MsgMeta {
    std::string kind;  // "hs1", "request", "transfer", ...
    std::string src;
    std::string dst;
    // delivery coordinates for replaying captured frames later
    std::string dst_device;
    std::optional<std::uint32_t> dst_session;
};

struct CaptureRecord {
    std::uint64_t step = 0;  // global logical step of transmission
    std::string flow;
    std::size_t index = 0;   // message index within its flow
    MsgMeta meta;
    Bytes bytes;             // as delivered (post-tamper); original if dropped
    bool delivered = true;
    bool tampered = false;
};

struct FlowStats {
    std::string flow;
    std::size_t messages = 0;
    std::size_t bytes = 0;
    bool interrupted = false;
};

// Thrown by transmit when a frame is lost or held past the timeout. The
// driving terminal sees only that the exchange died, exactly like a torn
// NFC link; which recovery applies is the protocol's decision tree.
class TransportInterruption : public Error {
public:
    TransportInterruption(std::string flow, std::size_t index)
        : Error("transport interruption in '" + flow + "' at message " + std::to_string(index)),
          flow_(std::move(flow)),
          index_(index) {}
    const std::string& flow() const { return flow_; }
    std::size_t index() const { return index_; }

private:
    std::string flow_;
    std::size_t index_;
};

// Deterministic single-link transport: a global logical clock, a capture
// log of every frame, and a fault schedule armed per flow. Delivery is
// synchronous; (seed, scenario, schedule) fully determine a run.
class Transport {
public:
    explicit Transport(std::uint64_t timeout_steps = 8) : timeout_steps_(timeout_steps) {}

    void arm_fault(FaultAction f) { armed_.push_back(std::move(f)); }
    bool has_armed_faults() const { return !armed_.empty(); }
    void clear_faults() { armed_.clear(); }

    void begin_flow(const std::string& flow);
    void end_flow();
    const std::string& current_flow() const { return flow_; }
    std::size_t flow_index() const { return flow_index_; }

    // Applies any fault scheduled for this flow index, records the frame,
    // advances the clock. Returns the (possibly tampered) frame, or throws
    // TransportInterruption on drop / over-timeout delay.
    Bytes transmit(MsgMeta meta, ByteView frame);

    std::uint64_t clock() const { return clock_; }
    std::uint64_t timeout_steps() const { return timeout_steps_; }

    const std::vector<CaptureRecord>& capture_log() const { return capture_; }
    const std::vector<FlowStats>& flow_stats() const { return stats_; }

    // frames held past the timeout, waiting to be shoved at their original
    // destination by the harness
    std::vector<CaptureRecord> take_stale_frames();

    // faults of the current flow that the transport cannot apply by itself
    std::vector<FaultAction> take_intrusions_at(std::size_t index);

private:
    std::uint64_t timeout_steps_;
    std::uint64_t clock_ = 0;
    std::string flow_ = "idle";
    std::size_t flow_index_ = 0;
    std::vector<FaultAction> armed_;
    std::vector<CaptureRecord> capture_;
    std::vector<CaptureRecord> stale_;
    std::vector<FlowStats> stats_;
};

}  // namespace offcbdc::sim
