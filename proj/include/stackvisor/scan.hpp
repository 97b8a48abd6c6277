// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "stackvisor/events.hpp"
#include "stackvisor/hypervisor.hpp"

namespace stackvisor {

/// Byte offsets of every occurrence of `needle` in `haystack`.
std::vector<std::size_t> find_all(ByteView haystack, ByteView needle);

/// Occurrences of `pattern` in physical memory that touch a frame mapped in
/// the primary's stage-2 table.
std::size_t count_in_primary(const Hypervisor& hv, ByteView pattern);

/// Occurrences of `pattern` anywhere in physical memory.
std::size_t count_in_memory(const PhysicalMachine& machine, ByteView pattern);

/// Nonzero bytes across the given frames.
std::size_t nonzero_bytes(const PhysicalMachine& machine, const std::vector<FrameNumber>& frames);

// Re-scans primary-visible memory for a secret after every hypervisor event.
class SecretScanner final : public Observer {
public:
    SecretScanner(Hypervisor& hv, Bytes pattern);
    ~SecretScanner() override;

    SecretScanner(const SecretScanner&) = delete;
    SecretScanner& operator=(const SecretScanner&) = delete;

    void on_event(const TraceEvent& ev) override;

    std::uint64_t scans() const noexcept { return scans_; }
    std::uint64_t hits() const noexcept { return hits_; }
    std::uint64_t first_hit_step() const noexcept { return first_hit_step_; }

private:
    Hypervisor& hv_;
    Bytes pattern_;
    std::uint64_t scans_ = 0;
    std::uint64_t hits_ = 0;
    std::uint64_t first_hit_step_ = 0;
};

}  // namespace stackvisor
