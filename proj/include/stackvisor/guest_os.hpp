// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "stackvisor/channel.hpp"
#include "stackvisor/hypervisor.hpp"
#include "stackvisor/image.hpp"

namespace stackvisor {

using AllocId = std::uint64_t;

// Toy page allocator over the primary's donation-eligible IPA pages. Always
// hands out the lowest free pages, so layouts are reproducible.
class OsAllocator {
public:
    OsAllocator(IpaPage first, IpaPage end);

    std::optional<AllocId> allocate(std::size_t pages);
    void free(AllocId id);
    const std::vector<IpaPage>& pages(AllocId id) const;

    std::size_t free_count() const noexcept { return free_.size(); }
    std::size_t region_size() const noexcept { return static_cast<std::size_t>(end_ - first_); }
    const std::set<IpaPage>& free_pages() const noexcept { return free_; }
    const std::map<AllocId, std::vector<IpaPage>>& allocations() const noexcept { return allocs_; }

    /// Free and allocated sets are disjoint and together cover the region.
    bool conserved() const;

    friend bool operator==(const OsAllocator&, const OsAllocator&) = default;

private:
    IpaPage first_;
    IpaPage end_;
    std::set<IpaPage> free_;
    std::map<AllocId, std::vector<IpaPage>> allocs_;
    AllocId next_ = 1;
};

struct EnclaveFd {
    int fd = -1;
    EnclaveHandle handle;
    AllocId alloc = 0;
    PcpuId pcpu = 0;
    std::vector<Ipa> channel_ipa;  // page bases, primary view
};

struct InvokeResult {
    ChannelStatus status = ChannelStatus::Idle;
    Bytes payload;
};

// The primary VM's kernel: page allocator plus the enclave driver. The driver
// only ever touches pages the primary still owns.
class PrimaryOs {
public:
    static constexpr int kFirstFd = 3;
    static constexpr int kMaxFds = 16;
    static constexpr IpaPage kDefaultReserved = 16;

    explicit PrimaryOs(Hypervisor& hv, IpaPage reserved_pages = kDefaultReserved);

    int driver_create(const EnclaveImage& image, PcpuId pcpu = 0);
    InvokeResult driver_invoke(int fd, std::uint32_t cmd_id, ByteView args);
    /// Re-invokes an enclave whose last command was preempted.
    InvokeResult driver_resume(int fd);
    void driver_destroy(int fd);

    const EnclaveFd& fd(int fd) const;
    std::vector<int> open_fds() const;
    const std::map<int, EnclaveFd>& fd_table() const noexcept { return fds_; }
    const OsAllocator& allocator() const noexcept { return alloc_; }
    Hypervisor& hypervisor() noexcept { return hv_; }

private:
    EnclaveFd& lookup(int fd);
    InvokeResult finish_invoke(Channel& channel, Resumption r);

    Hypervisor& hv_;
    OsAllocator alloc_;
    std::map<int, EnclaveFd> fds_;
};

}  // namespace stackvisor
