// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace stackvisor {

inline constexpr std::size_t kPageSize = 4096;
inline constexpr unsigned kPageShift = 12;
inline constexpr std::uint64_t kPageMask = kPageSize - 1;

using FrameNumber = std::uint64_t;
using PcpuId = std::uint32_t;
using VcpuId = std::uint32_t;
using VmId = std::uint32_t;

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Relative price of each ledger counter when folded into simulated time.
struct CostWeights {
    double pt_op = 1.0;
    double zero_page = 1.0;  // per PAGE_SIZE bytes zero-filled
    double ctx_switch = 1.0;
    double hypercall = 1.0;
    double compute = 1.0;
};

struct CostLedger {
    std::uint64_t pt_ops = 0;
    std::uint64_t zero_bytes = 0;
    std::uint64_t ctx_switches = 0;
    std::uint64_t hypercalls = 0;
    std::uint64_t compute_units = 0;

    double units(const CostWeights& w) const noexcept;

    friend CostLedger operator-(const CostLedger& a, const CostLedger& b) noexcept;
    friend bool operator==(const CostLedger&, const CostLedger&) = default;
};

/// Every counter of `later` is at least the matching counter of `earlier`.
bool ledger_monotonic(const CostLedger& earlier, const CostLedger& later) noexcept;

struct MachineConfig {
    std::size_t frames = 8192;
    std::size_t pcpus = 1;
    CostWeights weights{};
};

struct Pcpu {
    PcpuId id = 0;
    std::optional<VcpuId> current_vcpu;
};

// Physical memory and processors. Frames start out zero-filled and are only
// ever touched through the bounds-checked accessors below.
class PhysicalMachine {
public:
    explicit PhysicalMachine(const MachineConfig& config = {});

    std::size_t frame_count() const noexcept { return frames_; }
    std::size_t pcpu_count() const noexcept { return pcpus_.size(); }
    const MachineConfig& config() const noexcept { return config_; }

    Bytes read_frame(FrameNumber frame, std::size_t offset, std::size_t len) const;
    void write_frame(FrameNumber frame, std::size_t offset, ByteView data);
    void zero_frame(FrameNumber frame);

    /// Read-only view of one frame, for scanners that must not copy 32 MiB.
    ByteView frame_view(FrameNumber frame) const;
    /// Read-only view of all of physical memory.
    ByteView memory_view() const noexcept { return memory_; }

    Pcpu& pcpu(PcpuId id);
    const Pcpu& pcpu(PcpuId id) const;

    CostLedger& ledger() noexcept { return ledger_; }
    const CostLedger& ledger() const noexcept { return ledger_; }
    double elapsed_units() const noexcept { return ledger_.units(config_.weights); }

private:
    void check(FrameNumber frame, std::size_t offset, std::size_t len) const;

    MachineConfig config_;
    std::size_t frames_;
    std::vector<std::uint8_t> memory_;
    std::vector<Pcpu> pcpus_;
    CostLedger ledger_;
};

}  // namespace stackvisor
