// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "stackvisor/events.hpp"
#include "stackvisor/guest_os.hpp"
#include "stackvisor/hypervisor.hpp"

namespace stackvisor {

struct Violation {
    std::uint64_t step = 0;
    std::string check;
    std::string detail;
};

// Re-checks every system invariant after each hypervisor event, using its own
// models rather than the hypervisor's bookkeeping:
//   - frame ownership: each frame in at most one table, channel frames in
//     exactly the primary's and one enclave's
//   - per-access ownership: every touched frame re-derived from the table
//   - reference LIFO model per pCPU, plus HEAD/TAIL consistency
//   - taint tracking for enclave-private writes (zeroize-before-remap)
//   - shadow copy of every frame guests have written
//   - allocator conservation, ledger monotonicity, channel status legality
class Monitor final : public Observer {
public:
    explicit Monitor(Hypervisor& hv, const PrimaryOs* os = nullptr);
    ~Monitor() override;

    Monitor(const Monitor&) = delete;
    Monitor& operator=(const Monitor&) = delete;

    void on_event(const TraceEvent& ev) override;
    void on_mem_access(const MemAccessRecord& rec) override;
    void on_zeroize(FrameNumber frame) override;

    /// Runs every state check now (most are also run after each event), plus
    /// the fd-table checks that only hold between driver calls. The memory
    /// shadow is compared separately by check_shadow().
    void check_now();
    /// Compares every shadowed frame against physical memory.
    void check_shadow();

    bool ok() const noexcept { return violations_.empty(); }
    const std::vector<Violation>& violations() const noexcept { return violations_; }
    std::uint64_t checks() const noexcept { return checks_; }
    std::uint64_t faults_seen() const noexcept { return faults_; }

    /// Frames written by an enclave into its private memory and not yet scrubbed.
    const std::set<FrameNumber>& tainted() const noexcept { return taint_; }

private:
    struct Owner {
        VmId vm = 0;
        bool channel = false;
    };

    void fail(std::string check, std::string detail);
    void rebuild_owners();
    void check_state();
    void check_driver();
    void apply_switch(PcpuId pcpu, const Json& detail);

    Hypervisor& hv_;
    const PrimaryOs* os_;
    std::vector<Violation> violations_;
    std::uint64_t step_ = 0;
    std::uint64_t last_step_ = 0;
    std::uint64_t checks_ = 0;
    std::uint64_t faults_ = 0;
    CostLedger last_ledger_{};

    std::vector<std::vector<VcpuId>> stacks_;
    // Per frame: how many tables map it and the first two owners.
    std::vector<std::uint8_t> owner_count_;
    std::vector<std::array<Owner, 2>> owners_;
    std::set<FrameNumber> taint_;
    std::unordered_map<FrameNumber, std::array<std::uint8_t, kPageSize>> shadow_;
    std::size_t alloc_total_ = 0;
};

}  // namespace stackvisor
