// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "stackvisor/machine.hpp"

namespace stackvisor {

/// Architectural state a vCPU carries across context switches.
struct GuestRegisters {
    std::uint64_t pc = 0;
    std::array<std::uint64_t, 8> x{};

    friend bool operator==(const GuestRegisters&, const GuestRegisters&) = default;
};

struct Vcpu {
    VcpuId id = 0;
    VmId vm = 0;
    PcpuId pcpu = 0;
    std::optional<VcpuId> tree_parent;  // configured stacking parent; none for a root
    std::optional<VcpuId> head;         // child currently stacked on top of this vCPU
    std::optional<VcpuId> tail;         // vCPU that scheduled this one
    GuestRegisters saved_context;
    std::uint32_t pending_irqs = 0;
    bool live = true;
};

enum class SwitchReason { Push, Pop, Unwind };

struct InterruptOutcome {
    bool switched = false;
    std::vector<VcpuId> popped;  // top first
};

// Per-pCPU LIFO of vCPUs. Each pCPU has one root vCPU; a running vCPU may
// schedule one of its configured children (push) or yield to whoever
// scheduled it (pop). Interrupts aimed at an ancestor unwind the stack.
class StackingScheduler {
public:
    using SwitchListener =
        std::function<void(PcpuId, VcpuId from, VcpuId to, SwitchReason, const InterruptOutcome*)>;

    explicit StackingScheduler(PhysicalMachine& machine);

    VcpuId add_root(VmId vm, PcpuId pcpu, GuestRegisters initial = {});
    VcpuId add_child(VmId vm, VcpuId parent, GuestRegisters initial = {});
    /// Drops an off-stack leaf vCPU from the tree.
    void remove(VcpuId id);

    void schedule_child(VcpuId caller, VcpuId child);
    /// Pops `caller`; returns the vCPU now running.
    VcpuId yield(VcpuId caller);
    InterruptOutcome deliver_interrupt(PcpuId pcpu, VcpuId target);

    VcpuId current(PcpuId pcpu) const;
    VcpuId root(PcpuId pcpu) const;
    /// Root first, running vCPU last.
    std::vector<VcpuId> stack(PcpuId pcpu) const;
    bool on_stack(VcpuId id) const;
    bool is_ancestor(VcpuId ancestor, VcpuId of) const;

    const Vcpu& vcpu(VcpuId id) const;
    const std::vector<Vcpu>& vcpus() const noexcept { return vcpus_; }
    std::uint32_t take_pending(VcpuId id);

    /// Register file of whatever vCPU is currently running on `pcpu`.
    GuestRegisters& live_registers(PcpuId pcpu);

    /// HEAD/TAIL agree pairwise and every tail chain ends at a root.
    bool consistent() const;

    void set_switch_listener(SwitchListener listener) { listener_ = std::move(listener); }

private:
    Vcpu& at(VcpuId id);
    void switch_to(PcpuId pcpu, VcpuId from, VcpuId to, SwitchReason reason,
                   const InterruptOutcome* outcome);

    PhysicalMachine& machine_;
    std::vector<Vcpu> vcpus_;
    std::vector<std::optional<VcpuId>> roots_;
    std::vector<GuestRegisters> live_;
    SwitchListener listener_;
};

}  // namespace stackvisor
