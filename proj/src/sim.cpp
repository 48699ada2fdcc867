#include "offcbdc/sim.hpp"

#include <algorithm>

namespace offcbdc::sim {

void Transport::begin_flow(const std::string& flow) {
    flow_ = flow;
    flow_index_ = 0;
    stats_.push_back(FlowStats{flow, 0, 0, false});
}

void Transport::end_flow() {
    flow_ = "idle";
    flow_index_ = 0;
    armed_.clear();  // unconsumed faults do not leak into the next flow
}

Bytes Transport::transmit(MsgMeta meta, ByteView frame) {
    std::size_t index = flow_index_++;
    ++clock_;

    CaptureRecord rec;
    rec.step = clock_;
    rec.flow = flow_;
    rec.index = index;
    rec.meta = std::move(meta);
    rec.bytes = to_bytes(frame);

    FlowStats& stats = stats_.back();
    ++stats.messages;
    stats.bytes += frame.size();

    // apply at most one transport fault per scheduled step
    auto it = std::find_if(armed_.begin(), armed_.end(), [&](const FaultAction& f) {
        return f.step == index &&
               (f.kind == FaultKind::Drop || f.kind == FaultKind::Delay ||
                f.kind == FaultKind::Tamper);
    });

    if (it != armed_.end()) {
        FaultAction fault = *it;
        armed_.erase(it);
        switch (fault.kind) {
            case FaultKind::Drop: {
                rec.delivered = false;
                capture_.push_back(rec);
                stats.interrupted = true;
                throw TransportInterruption(flow_, index);
            }
            case FaultKind::Delay: {
                clock_ += fault.delay_steps;
                if (fault.delay_steps >= timeout_steps_) {
                    // the waiting side gives up; the frame surfaces later
                    rec.delivered = false;
                    capture_.push_back(rec);
                    stale_.push_back(rec);
                    stats.interrupted = true;
                    throw TransportInterruption(flow_, index);
                }
                break;  // late but within the window: delivered as-is
            }
            case FaultKind::Tamper: {
                if (!rec.bytes.empty()) {
                    rec.bytes[fault.offset % rec.bytes.size()] ^=
                        (fault.xor_mask == 0 ? 0x01 : fault.xor_mask);
                    rec.tampered = true;
                }
                break;
            }
            default: break;
        }
    }

    capture_.push_back(rec);
    return rec.bytes;
}

std::vector<CaptureRecord> Transport::take_stale_frames() {
    std::vector<CaptureRecord> out;
    out.swap(stale_);
    return out;
}

std::vector<FaultAction> Transport::take_intrusions_at(std::size_t index) {
    std::vector<FaultAction> out;
    for (auto it = armed_.begin(); it != armed_.end();) {
        bool intrusion =
            it->kind == FaultKind::ReplayCaptured || it->kind == FaultKind::InjectSession;
        if (intrusion && it->step == index) {
            out.push_back(*it);
            it = armed_.erase(it);
        } else {
            ++it;
        }
    }
    return out;
}

}  // namespace offcbdc::sim
