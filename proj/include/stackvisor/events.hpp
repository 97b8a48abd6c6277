// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stackvisor/machine.hpp"
#include "stackvisor/stage2.hpp"

namespace stackvisor {

using Json = nlohmann::ordered_json;

enum class EventKind {
    Hypercall,
    HypercallDone,
    HypercallError,
    ContextSwitch,
    Fault,
    Interrupt,
    Zeroize,
    Channel,
    Note,
};

std::string_view to_string(EventKind kind) noexcept;

struct TraceEvent {
    std::uint64_t step = 0;
    EventKind kind = EventKind::Note;
    std::optional<PcpuId> pcpu;
    std::optional<VcpuId> vcpu;
    Json detail;
    CostLedger ledger;
};

struct MemAccessRecord {
    VmId vm = 0;
    Access access = Access::Read;
    Ipa ipa = 0;
    std::size_t len = 0;
    ByteView data;                    // write payload; valid only during the callback
    std::vector<AccessSlice> slices;  // pages actually touched
    std::optional<AccessFault> fault;
};

// Receives everything the hypervisor does. Callbacks run synchronously after
// the state change they describe has been applied.
class Observer {
public:
    virtual ~Observer() = default;
    virtual void on_event(const TraceEvent&) {}
    virtual void on_mem_access(const MemAccessRecord&) {}
    virtual void on_zeroize(FrameNumber) {}
};

}  // namespace stackvisor
