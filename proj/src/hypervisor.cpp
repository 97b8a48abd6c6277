// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/hypervisor.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "stackvisor/error.hpp"

namespace stackvisor {

std::string_view to_string(VmKind kind) noexcept
{
    return kind == VmKind::Primary ? "Primary" : "Enclave";
}

std::string_view to_string(VmState state) noexcept
{
    switch (state) {
    case VmState::Running: return "Running";
    case VmState::Ready: return "Ready";
    case VmState::Created: return "Created";
    case VmState::Destroyed: return "Destroyed";
    }
    return "?";
}

std::string_view to_string(Resumption r) noexcept
{
    switch (r) {
    case Resumption::Exited: return "Exited";
    case Resumption::Preempted: return "Preempted";
    case Resumption::Faulted: return "Faulted";
    }
    return "?";
}

std::string_view hypercall_name(const Hypercall& call) noexcept
{
    constexpr std::string_view names[] = {"CreateEnclave", "DestroyEnclave", "InvokeEnclave",
                                          "EnclaveExit"};
    return names[call.index()];
}

namespace {

std::string_view to_string(SwitchReason reason)
{
    switch (reason) {
    case SwitchReason::Push: return "push";
    case SwitchReason::Pop: return "pop";
    case SwitchReason::Unwind: return "unwind";
    }
    return "?";
}

Json describe(const Hypercall& call)
{
    Json d;
    d["call"] = hypercall_name(call);
    std::visit(
        [&d](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, hc::CreateEnclave>) {
                d["pages"] = c.donated_ipa_pages.size();
                d["mem_pages"] = c.meta.mem_pages;
                d["channel_pages"] = c.meta.channel_pages;
            } else if constexpr (std::is_same_v<T, hc::DestroyEnclave> ||
                                 std::is_same_v<T, hc::InvokeEnclave>) {
                d["handle"] = c.handle;
            }
        },
        call);
    return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// GuestContext

GuestContext::GuestContext(Hypervisor& hv, VcpuId vcpu)
    : hv_(hv), vcpu_(vcpu), vm_(hv.sched_.vcpu(vcpu).vm)
{}

bool GuestContext::running() const
{
    const Vcpu& v = hv_.sched_.vcpu(vcpu_);
    return hv_.sched_.current(v.pcpu) == vcpu_;
}

void GuestContext::require_running() const
{
    if (!running()) {
        throw Error(Errc::NotRunning, "guest vcpu " + std::to_string(vcpu_) + " was switched out");
    }
}

GuestRegisters& GuestContext::regs()
{
    require_running();
    return hv_.sched_.live_registers(hv_.sched_.vcpu(vcpu_).pcpu);
}

MemResult GuestContext::read(Ipa ipa, std::size_t len)
{
    require_running();
    return hv_.mem_access(vm_, ipa, Access::Read, len);
}

MemResult GuestContext::write(Ipa ipa, ByteView data)
{
    require_running();
    return hv_.mem_access(vm_, ipa, Access::Write, data.size(), data);
}

MemResult GuestContext::fetch(Ipa ipa, std::size_t len)
{
    require_running();
    return hv_.mem_access(vm_, ipa, Access::Execute, len);
}

HypercallResult GuestContext::hypercall(const Hypercall& call)
{
    return hv_.dispatch(vcpu_, call);
}

void GuestContext::exit()
{
    hypercall(hc::EnclaveExit{});
}

bool GuestContext::tick()
{
    if (!running()) {
        return false;
    }
    return hv_.tick(vcpu_);
}

void GuestContext::charge_compute(std::uint64_t units)
{
    hv_.machine_.ledger().compute_units += units;
}

void GuestContext::trace(Json detail)
{
    hv_.emit(EventKind::Channel, hv_.sched_.vcpu(vcpu_).pcpu, vcpu_, std::move(detail));
}

// ---------------------------------------------------------------------------
// Hypervisor

Hypervisor::Hypervisor(PhysicalMachine& machine, HypervisorConfig config)
    : machine_(machine), config_(config), sched_(machine), timers_(machine.pcpu_count())
{
    sched_.set_switch_listener([this](PcpuId pcpu, VcpuId from, VcpuId to, SwitchReason reason,
                                      const InterruptOutcome* outcome) {
        on_switch(pcpu, from, to, reason, outcome);
    });

    const VmId id = primary();
    Vm boot{id, VmKind::Primary, VmState::Running, Stage2Table(id, machine_), {}, {}, {}, {}};
    // Identity map: primary IPA page n is frame n.
    for (FrameNumber f = 0; f < machine_.frame_count(); ++f) {
        boot.stage2.map(f, f, kPermsRWX);
    }
    for (PcpuId p = 0; p < machine_.pcpu_count(); ++p) {
        boot.vcpus.push_back(sched_.add_root(id, p));
    }
    vms_.push_back(std::move(boot));
}

VcpuId Hypervisor::primary_vcpu(PcpuId pcpu) const
{
    const auto& vcpus = vms_.front().vcpus;
    if (pcpu >= vcpus.size()) {
        throw Error(Errc::WrongPcpu, "pcpu " + std::to_string(pcpu));
    }
    return vcpus[pcpu];
}

const Vm& Hypervisor::vm(VmId id) const
{
    if (id >= vms_.size()) {
        throw Error(Errc::InvalidArgument, "no vm " + std::to_string(id));
    }
    return vms_[id];
}

Vm& Hypervisor::vm_mut(VmId id)
{
    if (id >= vms_.size()) {
        throw Error(Errc::InvalidArgument, "no vm " + std::to_string(id));
    }
    return vms_[id];
}

std::optional<VmId> Hypervisor::enclave_of(HandleId handle) const
{
    auto it = handles_.find(handle);
    if (it == handles_.end()) {
        return std::nullopt;
    }
    return it->second;
}

Vm& Hypervisor::enclave_for(HandleId handle, bool allow_destroyed)
{
    auto it = handles_.find(handle);
    if (it == handles_.end()) {
        throw Error(Errc::BadHandle, "handle " + std::to_string(handle));
    }
    Vm& e = vms_[it->second];
    if (e.state == VmState::Destroyed) {
        if (allow_destroyed) {
            throw Error(Errc::Destroyed, "handle " + std::to_string(handle));
        }
        throw Error(Errc::BadHandle, "handle " + std::to_string(handle) + " was destroyed");
    }
    return e;
}

std::size_t Hypervisor::live_enclaves() const
{
    return static_cast<std::size_t>(std::count_if(vms_.begin(), vms_.end(), [](const Vm& v) {
        return v.kind == VmKind::Enclave && v.state != VmState::Destroyed;
    }));
}

std::map<VmId, Stage2Snapshot> Hypervisor::snapshot_tables() const
{
    std::map<VmId, Stage2Snapshot> out;
    for (const auto& v : vms_) {
        out.emplace(v.id, v.stage2.entries());
    }
    return out;
}

void Hypervisor::add_observer(Observer* observer)
{
    observers_.push_back(observer);
}

void Hypervisor::remove_observer(Observer* observer)
{
    std::erase(observers_, observer);
}

void Hypervisor::emit(EventKind kind, std::optional<PcpuId> pcpu, std::optional<VcpuId> vcpu,
                      Json detail)
{
    TraceEvent ev{++step_, kind, pcpu, vcpu, std::move(detail), machine_.ledger()};
    for (auto* o : observers_) {
        o->on_event(ev);
    }
}

void Hypervisor::require_running(VcpuId caller) const
{
    const Vcpu& v = sched_.vcpu(caller);
    if (sched_.current(v.pcpu) != caller) {
        throw Error(Errc::NotRunning, "vcpu " + std::to_string(caller) + " is not running");
    }
}

HypercallResult Hypervisor::dispatch(VcpuId caller, const Hypercall& call)
{
    const Vcpu& v = sched_.vcpu(caller);
    const PcpuId pcpu = v.pcpu;
    const bool from_primary = vm(v.vm).kind == VmKind::Primary;

    machine_.ledger().hypercalls += 1;
    emit(EventKind::Hypercall, pcpu, caller, describe(call));

    try {
        require_running(caller);
        const bool is_exit = std::holds_alternative<hc::EnclaveExit>(call);
        if (is_exit == from_primary) {
            throw Error(Errc::PrivilegeViolation,
                        std::string(hypercall_name(call)) + " not permitted from " +
                            std::string(to_string(vm(v.vm).kind)) + " vcpu");
        }
        return std::visit(
            [&](const auto& c) -> HypercallResult {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, hc::CreateEnclave>) {
                    return create_enclave(caller, c.donated_ipa_pages, c.meta);
                } else if constexpr (std::is_same_v<T, hc::DestroyEnclave>) {
                    destroy_enclave(caller, c.handle);
                    return std::monostate{};
                } else if constexpr (std::is_same_v<T, hc::InvokeEnclave>) {
                    return invoke_enclave(caller, c.handle);
                } else {
                    enclave_exit(caller);
                    return std::monostate{};
                }
            },
            call);
    } catch (const Error& e) {
        Json d{{"call", hypercall_name(call)}, {"error", to_string(e.code())}};
        emit(EventKind::HypercallError, pcpu, caller, std::move(d));
        throw;
    }
}

EnclaveHandle Hypervisor::create_enclave(VcpuId caller, std::vector<IpaPage> donated,
                                         ImageMeta meta)
{
    if (vm(sched_.vcpu(caller).vm).kind != VmKind::Primary) {
        throw Error(Errc::NotPrimary, "only the primary VM creates enclaves");
    }
    if (meta.mem_pages == 0 || meta.channel_pages == 0) {
        throw Error(Errc::InvalidArgument, "image needs at least one private and one channel page");
    }
    const std::size_t required = std::size_t{meta.mem_pages} + meta.channel_pages;
    if (donated.size() < required) {
        throw Error(Errc::TooSmall, std::to_string(donated.size()) + " pages donated, " +
                                        std::to_string(required) + " required");
    }
    if (live_enclaves() >= config_.max_enclaves) {
        throw Error(Errc::Exhausted, "enclave table full");
    }

    Stage2Table& primary_table = vms_.front().stage2;
    // Channel pages stay mapped in the primary but already belong to an enclave.
    std::set<IpaPage> shared;
    for (const Vm& v : vms_) {
        if (v.kind == VmKind::Enclave && v.state != VmState::Destroyed) {
            for (const Donation& d : v.donated) {
                if (d.channel) {
                    shared.insert(d.primary_ipa);
                }
            }
        }
    }
    std::set<IpaPage> seen;
    for (IpaPage page : donated) {
        if (!seen.insert(page).second) {
            throw Error(Errc::InvalidArgument, "page " + std::to_string(page) + " donated twice");
        }
        if (shared.contains(page)) {
            throw Error(Errc::AlreadyMapped, "ipa page " + std::to_string(page) + " is a live channel page");
        }
        auto entry = primary_table.lookup(page);
        if (!entry) {
            throw Error(Errc::PageNotMapped, "ipa page " + std::to_string(page));
        }
        if (!entry->perms.write) {
            throw Error(Errc::PageNotWritable, "ipa page " + std::to_string(page));
        }
    }

    const auto id = static_cast<VmId>(vms_.size());
    const std::size_t total = donated.size();
    const std::size_t private_count = total - meta.channel_pages;
    Stage2Table table(id, machine_);
    std::vector<Donation> donations;
    donations.reserve(total);
    const std::uint64_t pt_start = machine_.ledger().pt_ops;

    try {
        for (std::size_t i = 0; i < total; ++i) {
            const IpaPage page = donated[i];
            const Stage2Entry original = *primary_table.lookup(page);
            const bool channel = i >= private_count;
            if (channel) {
                primary_table.protect(page, kPermsRW);
            } else {
                primary_table.unmap(page);
            }
            donations.push_back(Donation{page, original, channel});
            table.map(i, original.frame, channel ? kPermsRW : kPermsRWX);
            if (config_.fail_create_after_pt_ops &&
                machine_.ledger().pt_ops - pt_start >= *config_.fail_create_after_pt_ops) {
                throw Error(Errc::Exhausted, "injected failure after " +
                                                 std::to_string(machine_.ledger().pt_ops - pt_start) +
                                                 " pt_ops");
            }
        }
    } catch (...) {
        for (std::size_t i = donations.size(); i-- > 0;) {
            const Donation& d = donations[i];
            if (table.lookup(i)) {
                table.unmap(i);
            }
            if (d.channel) {
                primary_table.protect(d.primary_ipa, d.original.perms);
            } else {
                primary_table.map(d.primary_ipa, d.original.frame, d.original.perms);
            }
        }
        throw;
    }

    GuestRegisters boot;
    boot.x[kRegChannelIpa] = static_cast<std::uint64_t>(private_count) << kPageShift;
    boot.x[kRegChannelBytes] = std::uint64_t{meta.channel_pages} * kPageSize;
    boot.x[kRegCodeLen] = meta.code_len;
    boot.x[kRegPrivatePages] = private_count;
    const VcpuId vcpu = sched_.add_child(id, caller, boot);
    const HandleId handle = next_handle_++;

    EnclaveHandle result{handle, id, {}, {}};
    for (const auto& d : donations) {
        (d.channel ? result.channel_pages : result.private_pages).push_back(d.primary_ipa);
    }

    vms_.push_back(Vm{id, VmKind::Enclave, VmState::Created, std::move(table), {vcpu},
                      std::move(donations), handle, meta});
    handles_.emplace(handle, id);

    const Vcpu& cv = sched_.vcpu(caller);
    emit(EventKind::HypercallDone, cv.pcpu, caller,
         Json{{"call", "CreateEnclave"},
              {"handle", handle},
              {"vm", id},
              {"enclave_vcpu", vcpu},
              {"private_pages", result.private_pages.size()},
              {"channel_pages", result.channel_pages.size()}});
    return result;
}

void Hypervisor::destroy_enclave(VcpuId caller, HandleId handle)
{
    if (vm(sched_.vcpu(caller).vm).kind != VmKind::Primary) {
        throw Error(Errc::NotPrimary, "only the primary VM destroys enclaves");
    }
    Vm& e = enclave_for(handle, false);
    const VcpuId ev = e.vcpus.front();
    if (sched_.on_stack(ev)) {
        throw Error(Errc::EnclaveActive, "enclave vcpu " + std::to_string(ev) + " is stacked");
    }

    // Scrub every frame first; nothing goes back to the primary until all are clean.
    std::size_t scrubbed = 0;
    for (const auto& [ipa_page, entry] : e.stage2.entries()) {
        if (!config_.skip_zeroize) {
            machine_.zero_frame(entry.frame);
            for (auto* o : observers_) {
                o->on_zeroize(entry.frame);
            }
            ++scrubbed;
        }
    }
    const Vcpu& cv = sched_.vcpu(caller);
    emit(EventKind::Zeroize, cv.pcpu, caller,
         Json{{"vm", e.id}, {"frames", scrubbed}, {"bytes", scrubbed * kPageSize}});

    Stage2Table& primary_table = vms_.front().stage2;
    for (std::size_t i = 0; i < e.donated.size(); ++i) {
        const Donation& d = e.donated[i];
        const FrameNumber frame = e.stage2.unmap(i);
        if (d.channel) {
            primary_table.protect(d.primary_ipa, d.original.perms);
        } else {
            primary_table.map(d.primary_ipa, frame, d.original.perms);
        }
    }

    sched_.remove(ev);
    e.state = VmState::Destroyed;
    programs_.erase(e.id);
    last_resumption_.erase(ev);
    for (auto& t : timers_) {
        if (t && t->target == ev) {
            t.reset();
        }
    }
    emit(EventKind::HypercallDone, cv.pcpu, caller,
         Json{{"call", "DestroyEnclave"}, {"handle", handle}, {"vm", e.id}});
}

Resumption Hypervisor::invoke_enclave(VcpuId caller, HandleId handle)
{
    if (vm(sched_.vcpu(caller).vm).kind != VmKind::Primary) {
        throw Error(Errc::NotPrimary, "only the primary VM invokes enclaves");
    }
    Vm& e = enclave_for(handle, true);
    const VmId id = e.id;
    const VcpuId ev = e.vcpus.front();
    sched_.schedule_child(caller, ev);
    vms_[id].state = VmState::Running;

    const Resumption r = run_guest(ev);

    if (vms_[id].state != VmState::Destroyed) {
        vms_[id].state = VmState::Ready;
    }
    const Vcpu& cv = sched_.vcpu(caller);
    emit(EventKind::HypercallDone, cv.pcpu, caller,
         Json{{"call", "InvokeEnclave"}, {"handle", handle}, {"resumption", to_string(r)}});
    return r;
}

void Hypervisor::enclave_exit(VcpuId caller)
{
    sched_.yield(caller);
    last_resumption_[caller] = Resumption::Exited;
}

Resumption Hypervisor::run_guest(VcpuId vcpu)
{
    const VmId id = sched_.vcpu(vcpu).vm;
    const PcpuId pcpu = sched_.vcpu(vcpu).pcpu;
    last_resumption_.erase(vcpu);

    GuestContext ctx(*this, vcpu);
    try {
        auto& program = programs_[id];
        if (!program && loader_) {
            program = loader_(ctx);
        }
        if (program) {
            program->run(ctx);
        }
    } catch (const std::exception& e) {
        // Anything the guest throws is its own crash, never the hypervisor's.
        emit(EventKind::Note, pcpu, vcpu, Json{{"guest_abort", e.what()}});
    }

    if (sched_.current(pcpu) == vcpu) {
        // The guest stopped without yielding: forward to the parent.
        emit(EventKind::Note, pcpu, vcpu, Json{{"guest_abort", "returned without EnclaveExit"}});
        sched_.yield(vcpu);
        last_resumption_[vcpu] = Resumption::Faulted;
    }
    auto it = last_resumption_.find(vcpu);
    return it == last_resumption_.end() ? Resumption::Faulted : it->second;
}

bool Hypervisor::tick(VcpuId vcpu)
{
    const PcpuId pcpu = sched_.vcpu(vcpu).pcpu;
    auto& timer = timers_.at(pcpu);
    if (timer && --timer->remaining == 0) {
        const VcpuId target = timer->target;
        timer.reset();
        deliver_interrupt(pcpu, target);
    }
    return sched_.current(pcpu) == vcpu;
}

void Hypervisor::arm_interrupt(PcpuId pcpu, VcpuId target, std::uint64_t ticks)
{
    if (pcpu >= timers_.size()) {
        throw Error(Errc::WrongPcpu, "pcpu " + std::to_string(pcpu));
    }
    if (sched_.vcpu(target).pcpu != pcpu) {
        throw Error(Errc::WrongPcpu, "vcpu " + std::to_string(target) + " is not on pcpu " +
                                         std::to_string(pcpu));
    }
    timers_[pcpu] = Timer{target, std::max<std::uint64_t>(ticks, 1)};
}

void Hypervisor::disarm_interrupt(PcpuId pcpu)
{
    timers_.at(pcpu).reset();
}

void Hypervisor::deliver_interrupt(PcpuId pcpu, VcpuId target)
{
    const InterruptOutcome outcome = sched_.deliver_interrupt(pcpu, target);
    emit(EventKind::Interrupt, pcpu, target,
         Json{{"target", target},
              {"outcome", outcome.switched ? "unwound" : "pending"},
              {"popped", outcome.popped}});
}

void Hypervisor::on_switch(PcpuId pcpu, VcpuId from, VcpuId to, SwitchReason reason,
                           const InterruptOutcome* outcome)
{
    if (reason == SwitchReason::Unwind && outcome != nullptr) {
        for (VcpuId v : outcome->popped) {
            last_resumption_[v] = Resumption::Preempted;
            Vm& owner = vms_[sched_.vcpu(v).vm];
            if (owner.kind == VmKind::Enclave) {
                owner.state = VmState::Ready;
            }
        }
    }
    emit(EventKind::ContextSwitch, pcpu, to,
         Json{{"from", from}, {"to", to}, {"reason", to_string(reason)}});
}

MemResult Hypervisor::mem_access(VmId id, Ipa ipa, Access access, std::size_t len, ByteView data)
{
    const Vm& v = vm(id);
    MemAccessRecord rec{id, access, ipa, len, data, {}, std::nullopt};
    MemResult result = vm_mem_access(machine_, v.stage2, ipa, access, len, data, &rec.slices);
    rec.fault = result.fault();
    for (auto* o : observers_) {
        o->on_mem_access(rec);
    }
    if (!result) {
        const AccessFault& f = *result.fault();
        std::optional<PcpuId> pcpu;
        std::optional<VcpuId> vcpu;
        if (v.kind == VmKind::Enclave && !v.vcpus.empty() && sched_.vcpus()[v.vcpus.front()].live) {
            vcpu = v.vcpus.front();
            pcpu = sched_.vcpu(*vcpu).pcpu;
        }
        emit(EventKind::Fault, pcpu, vcpu,
             Json{{"vm", f.vm}, {"ipa", f.ipa}, {"access", to_string(f.access)},
                  {"kind", to_string(f.kind)}});
    }
    return result;
}

}  // namespace stackvisor
