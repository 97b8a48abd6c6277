// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "stackvisor/events.hpp"
#include "stackvisor/machine.hpp"
#include "stackvisor/stacking.hpp"
#include "stackvisor/stage2.hpp"

namespace stackvisor {

enum class VmKind { Primary, Enclave };
enum class VmState { Running, Ready, Created, Destroyed };

std::string_view to_string(VmKind kind) noexcept;
std::string_view to_string(VmState state) noexcept;

using HandleId = std::uint64_t;

/// What the hypervisor needs to know about the enclave image being hosted.
struct ImageMeta {
    std::uint32_t mem_pages = 1;
    std::uint32_t channel_pages = 1;
    std::uint32_t entry_table_len = 0;
    std::uint32_t code_len = 0;
};

/// A page the primary gave away, with the mapping it had before.
struct Donation {
    IpaPage primary_ipa = 0;
    Stage2Entry original{};
    bool channel = false;
};

struct Vm {
    VmId id = 0;
    VmKind kind = VmKind::Primary;
    VmState state = VmState::Running;
    Stage2Table stage2;
    std::vector<VcpuId> vcpus;
    std::vector<Donation> donated;  // enclave IPA page i came from donated[i]
    std::optional<HandleId> handle;
    ImageMeta meta{};
};

struct EnclaveHandle {
    HandleId handle = 0;
    VmId vm = 0;
    std::vector<IpaPage> channel_pages;  // primary view, still mapped rw
    std::vector<IpaPage> private_pages;  // primary view, unmapped while the enclave lives
};

namespace hc {
struct CreateEnclave {
    std::vector<IpaPage> donated_ipa_pages;
    ImageMeta meta;
};
struct DestroyEnclave {
    HandleId handle = 0;
};
struct InvokeEnclave {
    HandleId handle = 0;
};
struct EnclaveExit {};
}  // namespace hc

using Hypercall = std::variant<hc::CreateEnclave, hc::DestroyEnclave, hc::InvokeEnclave, hc::EnclaveExit>;

std::string_view hypercall_name(const Hypercall& call) noexcept;

/// How control came back to the vCPU that invoked an enclave.
enum class Resumption { Exited, Preempted, Faulted };

std::string_view to_string(Resumption r) noexcept;

using HypercallResult = std::variant<std::monostate, EnclaveHandle, Resumption>;

struct HypervisorConfig {
    std::size_t max_enclaves = 32;
    // Mutation knobs for negative testing of the oracles. Never set in normal runs.
    bool skip_zeroize = false;
    std::optional<std::uint64_t> fail_create_after_pt_ops;
};

class Hypervisor;

// The view a running guest gets of its own vCPU. Every method requires that
// vCPU to still be the one executing on its pCPU.
class GuestContext {
public:
    GuestContext(Hypervisor& hv, VcpuId vcpu);

    VcpuId vcpu() const noexcept { return vcpu_; }
    VmId vm() const noexcept { return vm_; }
    bool running() const;

    GuestRegisters& regs();

    MemResult read(Ipa ipa, std::size_t len);
    MemResult write(Ipa ipa, ByteView data);
    MemResult fetch(Ipa ipa, std::size_t len);

    HypercallResult hypercall(const Hypercall& call);
    void exit();

    /// Preemption point. Returns false once this vCPU has been switched out;
    /// the guest must then return without touching anything else.
    bool tick();
    void charge_compute(std::uint64_t units = 1);
    /// Records a guest-level trace event against this vCPU.
    void trace(Json detail);

private:
    void require_running() const;

    Hypervisor& hv_;
    VcpuId vcpu_;
    VmId vm_;
};

class GuestProgram {
public:
    virtual ~GuestProgram() = default;
    /// Runs until the guest yields (EnclaveExit) or is preempted.
    virtual void run(GuestContext& ctx) = 0;
};

using ProgramLoader = std::function<std::unique_ptr<GuestProgram>(GuestContext&)>;

// Initial enclave register contents (the enclave boot protocol).
inline constexpr std::size_t kRegChannelIpa = 0;
inline constexpr std::size_t kRegChannelBytes = 1;
inline constexpr std::size_t kRegCodeLen = 2;
inline constexpr std::size_t kRegPrivatePages = 3;

class Hypervisor {
public:
    explicit Hypervisor(PhysicalMachine& machine, HypervisorConfig config = {});

    Hypervisor(const Hypervisor&) = delete;
    Hypervisor& operator=(const Hypervisor&) = delete;

    PhysicalMachine& machine() noexcept { return machine_; }
    const PhysicalMachine& machine() const noexcept { return machine_; }
    const StackingScheduler& scheduler() const noexcept { return sched_; }
    const HypervisorConfig& config() const noexcept { return config_; }

    VmId primary() const noexcept { return 0; }
    VcpuId primary_vcpu(PcpuId pcpu) const;

    /// Single hypercall entry point; charges one hypercall on the ledger.
    HypercallResult dispatch(VcpuId caller, const Hypercall& call);

    EnclaveHandle create_enclave(VcpuId caller, std::vector<IpaPage> donated, ImageMeta meta);
    void destroy_enclave(VcpuId caller, HandleId handle);
    Resumption invoke_enclave(VcpuId caller, HandleId handle);
    void enclave_exit(VcpuId caller);

    void deliver_interrupt(PcpuId pcpu, VcpuId target);
    /// Fires deliver_interrupt(pcpu, target) after `ticks` guest preemption points on `pcpu`.
    void arm_interrupt(PcpuId pcpu, VcpuId target, std::uint64_t ticks);
    void disarm_interrupt(PcpuId pcpu);

    /// Guest memory access by `vm` through its stage-2 table.
    MemResult mem_access(VmId vm, Ipa ipa, Access access, std::size_t len, ByteView data = {});
    MemResult read(VmId vm, Ipa ipa, std::size_t len) { return mem_access(vm, ipa, Access::Read, len); }
    MemResult write(VmId vm, Ipa ipa, ByteView data)
    {
        return mem_access(vm, ipa, Access::Write, data.size(), data);
    }

    const Vm& vm(VmId id) const;
    const std::vector<Vm>& vms() const noexcept { return vms_; }
    std::optional<VmId> enclave_of(HandleId handle) const;
    std::size_t live_enclaves() const;
    std::map<VmId, Stage2Snapshot> snapshot_tables() const;

    void add_observer(Observer* observer);
    void remove_observer(Observer* observer);
    void set_program_loader(ProgramLoader loader) { loader_ = std::move(loader); }

    /// Appends a trace event stamped with the next step and the ledger.
    void emit(EventKind kind, std::optional<PcpuId> pcpu, std::optional<VcpuId> vcpu, Json detail);
    std::uint64_t steps() const noexcept { return step_; }

private:
    friend class GuestContext;

    struct Timer {
        VcpuId target = 0;
        std::uint64_t remaining = 0;
    };

    Vm& vm_mut(VmId id);
    Vm& enclave_for(HandleId handle, bool allow_destroyed);
    void require_running(VcpuId caller) const;
    Resumption run_guest(VcpuId vcpu);
    bool tick(VcpuId vcpu);
    void on_switch(PcpuId pcpu, VcpuId from, VcpuId to, SwitchReason reason,
                   const InterruptOutcome* outcome);

    PhysicalMachine& machine_;
    HypervisorConfig config_;
    StackingScheduler sched_;
    std::vector<Vm> vms_;
    std::map<HandleId, VmId> handles_;
    HandleId next_handle_ = 1;
    std::map<VmId, std::unique_ptr<GuestProgram>> programs_;
    std::map<VcpuId, Resumption> last_resumption_;
    std::vector<std::optional<Timer>> timers_;
    std::vector<Observer*> observers_;
    ProgramLoader loader_;
    std::uint64_t step_ = 0;
};

}  // namespace stackvisor
