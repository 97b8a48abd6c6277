// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/machine.hpp"

#include <algorithm>
#include <string>

#include "stackvisor/error.hpp"

namespace stackvisor {

double CostLedger::units(const CostWeights& w) const noexcept
{
    return static_cast<double>(pt_ops) * w.pt_op +
           static_cast<double>(zero_bytes) / static_cast<double>(kPageSize) * w.zero_page +
           static_cast<double>(ctx_switches) * w.ctx_switch +
           static_cast<double>(hypercalls) * w.hypercall +
           static_cast<double>(compute_units) * w.compute;
}

CostLedger operator-(const CostLedger& a, const CostLedger& b) noexcept
{
    return CostLedger{a.pt_ops - b.pt_ops, a.zero_bytes - b.zero_bytes,
                      a.ctx_switches - b.ctx_switches, a.hypercalls - b.hypercalls,
                      a.compute_units - b.compute_units};
}

bool ledger_monotonic(const CostLedger& earlier, const CostLedger& later) noexcept
{
    return later.pt_ops >= earlier.pt_ops && later.zero_bytes >= earlier.zero_bytes &&
           later.ctx_switches >= earlier.ctx_switches && later.hypercalls >= earlier.hypercalls &&
           later.compute_units >= earlier.compute_units;
}

PhysicalMachine::PhysicalMachine(const MachineConfig& config)
    : config_(config), frames_(config.frames), memory_(config.frames * kPageSize, 0)
{
    if (config.frames == 0 || config.pcpus == 0) {
        throw Error(Errc::InvalidArgument, "machine needs at least one frame and one pCPU");
    }
    pcpus_.resize(config.pcpus);
    for (std::size_t i = 0; i < pcpus_.size(); ++i) {
        pcpus_[i].id = static_cast<PcpuId>(i);
    }
}

void PhysicalMachine::check(FrameNumber frame, std::size_t offset, std::size_t len) const
{
    if (frame >= frames_) {
        throw Error(Errc::OutOfRange, "frame " + std::to_string(frame));
    }
    if (offset > kPageSize || len > kPageSize - offset) {
        throw Error(Errc::OutOfRange, "offset " + std::to_string(offset) + " + len " +
                                          std::to_string(len) + " crosses the page");
    }
}

Bytes PhysicalMachine::read_frame(FrameNumber frame, std::size_t offset, std::size_t len) const
{
    check(frame, offset, len);
    auto first = memory_.begin() + static_cast<std::ptrdiff_t>(frame * kPageSize + offset);
    return Bytes(first, first + static_cast<std::ptrdiff_t>(len));
}

void PhysicalMachine::write_frame(FrameNumber frame, std::size_t offset, ByteView data)
{
    check(frame, offset, data.size());
    std::copy(data.begin(), data.end(),
              memory_.begin() + static_cast<std::ptrdiff_t>(frame * kPageSize + offset));
}

void PhysicalMachine::zero_frame(FrameNumber frame)
{
    check(frame, 0, kPageSize);
    auto first = memory_.begin() + static_cast<std::ptrdiff_t>(frame * kPageSize);
    std::fill(first, first + static_cast<std::ptrdiff_t>(kPageSize), std::uint8_t{0});
    ledger_.zero_bytes += kPageSize;
}

ByteView PhysicalMachine::frame_view(FrameNumber frame) const
{
    check(frame, 0, kPageSize);
    return ByteView(memory_).subspan(frame * kPageSize, kPageSize);
}

Pcpu& PhysicalMachine::pcpu(PcpuId id)
{
    if (id >= pcpus_.size()) {
        throw Error(Errc::OutOfRange, "pcpu " + std::to_string(id));
    }
    return pcpus_[id];
}

const Pcpu& PhysicalMachine::pcpu(PcpuId id) const
{
    if (id >= pcpus_.size()) {
        throw Error(Errc::OutOfRange, "pcpu " + std::to_string(id));
    }
    return pcpus_[id];
}

}  // namespace stackvisor
