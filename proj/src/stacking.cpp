// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/stacking.hpp"

#include <string>
#include <utility>

#include "stackvisor/error.hpp"

namespace stackvisor {

StackingScheduler::StackingScheduler(PhysicalMachine& machine)
    : machine_(machine), roots_(machine.pcpu_count()), live_(machine.pcpu_count())
{}

Vcpu& StackingScheduler::at(VcpuId id)
{
    if (id >= vcpus_.size() || !vcpus_[id].live) {
        throw Error(Errc::InvalidArgument, "no vcpu " + std::to_string(id));
    }
    return vcpus_[id];
}

const Vcpu& StackingScheduler::vcpu(VcpuId id) const
{
    if (id >= vcpus_.size() || !vcpus_[id].live) {
        throw Error(Errc::InvalidArgument, "no vcpu " + std::to_string(id));
    }
    return vcpus_[id];
}

VcpuId StackingScheduler::add_root(VmId vm, PcpuId pcpu, GuestRegisters initial)
{
    if (pcpu >= roots_.size()) {
        throw Error(Errc::WrongPcpu, "pcpu " + std::to_string(pcpu));
    }
    if (roots_[pcpu]) {
        throw Error(Errc::InvalidArgument, "pcpu " + std::to_string(pcpu) + " already has a root");
    }
    auto id = static_cast<VcpuId>(vcpus_.size());
    Vcpu v;
    v.id = id;
    v.vm = vm;
    v.pcpu = pcpu;
    vcpus_.push_back(v);
    roots_[pcpu] = id;
    live_[pcpu] = initial;
    machine_.pcpu(pcpu).current_vcpu = id;
    return id;
}

VcpuId StackingScheduler::add_child(VmId vm, VcpuId parent, GuestRegisters initial)
{
    PcpuId pcpu = at(parent).pcpu;
    auto id = static_cast<VcpuId>(vcpus_.size());
    Vcpu v;
    v.id = id;
    v.vm = vm;
    v.pcpu = pcpu;
    v.tree_parent = parent;
    v.saved_context = initial;
    vcpus_.push_back(v);
    return id;
}

void StackingScheduler::remove(VcpuId id)
{
    Vcpu& v = at(id);
    if (on_stack(id)) {
        throw Error(Errc::EnclaveActive, "vcpu " + std::to_string(id) + " is stacked");
    }
    if (!v.tree_parent) {
        throw Error(Errc::InvalidArgument, "cannot remove a root vcpu");
    }
    for (const auto& other : vcpus_) {
        if (other.live && other.tree_parent == id) {
            throw Error(Errc::InvalidArgument, "vcpu " + std::to_string(id) + " has children");
        }
    }
    v.live = false;
    v.saved_context = {};
}

VcpuId StackingScheduler::root(PcpuId pcpu) const
{
    if (pcpu >= roots_.size() || !roots_[pcpu]) {
        throw Error(Errc::WrongPcpu, "pcpu " + std::to_string(pcpu) + " has no root");
    }
    return *roots_[pcpu];
}

VcpuId StackingScheduler::current(PcpuId pcpu) const
{
    VcpuId v = root(pcpu);
    while (vcpus_[v].head) {
        v = *vcpus_[v].head;
    }
    return v;
}

std::vector<VcpuId> StackingScheduler::stack(PcpuId pcpu) const
{
    std::vector<VcpuId> out{root(pcpu)};
    while (vcpus_[out.back()].head) {
        out.push_back(*vcpus_[out.back()].head);
    }
    return out;
}

bool StackingScheduler::on_stack(VcpuId id) const
{
    const Vcpu& v = vcpu(id);
    if (v.head || v.tail) {
        return true;
    }
    return roots_[v.pcpu] == id;
}

bool StackingScheduler::is_ancestor(VcpuId ancestor, VcpuId of) const
{
    std::optional<VcpuId> cur = vcpu(of).tail;
    while (cur) {
        if (*cur == ancestor) {
            return true;
        }
        cur = vcpus_[*cur].tail;
    }
    return false;
}

GuestRegisters& StackingScheduler::live_registers(PcpuId pcpu)
{
    if (pcpu >= live_.size()) {
        throw Error(Errc::WrongPcpu, "pcpu " + std::to_string(pcpu));
    }
    return live_[pcpu];
}

std::uint32_t StackingScheduler::take_pending(VcpuId id)
{
    Vcpu& v = at(id);
    return std::exchange(v.pending_irqs, 0);
}

void StackingScheduler::switch_to(PcpuId pcpu, VcpuId from, VcpuId to, SwitchReason reason,
                                  const InterruptOutcome* outcome)
{
    vcpus_[from].saved_context = live_[pcpu];
    live_[pcpu] = vcpus_[to].saved_context;
    machine_.pcpu(pcpu).current_vcpu = to;
    machine_.ledger().ctx_switches += 1;
    if (listener_) {
        listener_(pcpu, from, to, reason, outcome);
    }
}

void StackingScheduler::schedule_child(VcpuId caller, VcpuId child)
{
    Vcpu& parent = at(caller);
    Vcpu& c = at(child);
    if (current(parent.pcpu) != caller) {
        throw Error(Errc::NotRunning, "vcpu " + std::to_string(caller) + " is not running");
    }
    if (c.tree_parent != caller) {
        throw Error(c.pcpu == parent.pcpu ? Errc::NotParent : Errc::WrongPcpu,
                    "vcpu " + std::to_string(child) + " is not a child of " +
                        std::to_string(caller));
    }
    if (on_stack(child)) {
        throw Error(Errc::EnclaveActive, "vcpu " + std::to_string(child) + " already stacked");
    }
    parent.head = child;
    c.tail = caller;
    switch_to(parent.pcpu, caller, child, SwitchReason::Push, nullptr);
}

VcpuId StackingScheduler::yield(VcpuId caller)
{
    Vcpu& v = at(caller);
    if (current(v.pcpu) != caller) {
        throw Error(Errc::NotRunning, "vcpu " + std::to_string(caller) + " is not running");
    }
    if (!v.tail) {
        throw Error(Errc::NoParent, "vcpu " + std::to_string(caller) + " has no tail");
    }
    VcpuId parent = *v.tail;
    vcpus_[parent].head.reset();
    v.tail.reset();
    switch_to(v.pcpu, caller, parent, SwitchReason::Pop, nullptr);
    return parent;
}

InterruptOutcome StackingScheduler::deliver_interrupt(PcpuId pcpu, VcpuId target)
{
    Vcpu& t = at(target);
    if (t.pcpu != pcpu) {
        throw Error(Errc::WrongPcpu, "vcpu " + std::to_string(target) + " is pinned to pcpu " +
                                         std::to_string(t.pcpu));
    }
    InterruptOutcome outcome;
    VcpuId running = current(pcpu);
    if (running == target || !is_ancestor(target, running)) {
        t.pending_irqs += 1;
        return outcome;
    }
    VcpuId v = running;
    while (v != target) {
        VcpuId parent = *vcpus_[v].tail;
        vcpus_[parent].head.reset();
        vcpus_[v].tail.reset();
        outcome.popped.push_back(v);
        v = parent;
    }
    outcome.switched = true;
    t.pending_irqs += 1;
    switch_to(pcpu, running, target, SwitchReason::Unwind, &outcome);
    return outcome;
}

bool StackingScheduler::consistent() const
{
    for (const auto& v : vcpus_) {
        if (!v.live) {
            if (v.head || v.tail) {
                return false;
            }
            continue;
        }
        if (v.head) {
            const Vcpu& h = vcpus_[*v.head];
            if (!h.live || h.tail != v.id || h.pcpu != v.pcpu) {
                return false;
            }
        }
        if (v.tail) {
            const Vcpu& p = vcpus_[*v.tail];
            if (!p.live || p.head != v.id) {
                return false;
            }
        }
        // Tail chain must reach the pCPU root within |vcpus| hops.
        std::optional<VcpuId> cur = v.id;
        std::size_t hops = 0;
        while (vcpus_[*cur].tail) {
            cur = vcpus_[*cur].tail;
            if (++hops > vcpus_.size()) {
                return false;
            }
        }
        if ((v.head || v.tail) && roots_[v.pcpu] != *cur) {
            return false;
        }
    }
    for (std::size_t p = 0; p < roots_.size(); ++p) {
        if (roots_[p] && machine_.pcpu(static_cast<PcpuId>(p)).current_vcpu !=
                             current(static_cast<PcpuId>(p))) {
            return false;
        }
    }
    return true;
}

}  // namespace stackvisor
