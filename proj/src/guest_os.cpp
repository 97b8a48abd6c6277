// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/guest_os.hpp"

#include <algorithm>
#include <string>

#include "stackvisor/error.hpp"

namespace stackvisor {

OsAllocator::OsAllocator(IpaPage first, IpaPage end) : first_(first), end_(end)
{
    for (IpaPage p = first; p < end; ++p) {
        free_.insert(free_.end(), p);
    }
}

std::optional<AllocId> OsAllocator::allocate(std::size_t pages)
{
    if (pages == 0 || pages > free_.size()) {
        return std::nullopt;
    }
    std::vector<IpaPage> out;
    out.reserve(pages);
    auto it = free_.begin();
    for (std::size_t i = 0; i < pages; ++i) {
        out.push_back(*it);
        it = free_.erase(it);
    }
    AllocId id = next_++;
    allocs_.emplace(id, std::move(out));
    return id;
}

void OsAllocator::free(AllocId id)
{
    auto it = allocs_.find(id);
    if (it == allocs_.end()) {
        throw Error(Errc::InvalidArgument, "no allocation " + std::to_string(id));
    }
    free_.insert(it->second.begin(), it->second.end());
    allocs_.erase(it);
}

const std::vector<IpaPage>& OsAllocator::pages(AllocId id) const
{
    auto it = allocs_.find(id);
    if (it == allocs_.end()) {
        throw Error(Errc::InvalidArgument, "no allocation " + std::to_string(id));
    }
    return it->second;
}

bool OsAllocator::conserved() const
{
    std::vector<bool> seen(region_size(), false);
    std::size_t total = 0;
    auto mark = [&](IpaPage page) {
        if (page < first_ || page >= end_ || seen[page - first_]) {
            return false;
        }
        seen[page - first_] = true;
        ++total;
        return true;
    };
    for (IpaPage page : free_) {
        if (!mark(page)) {
            return false;
        }
    }
    for (const auto& [id, pages] : allocs_) {
        for (IpaPage page : pages) {
            if (!mark(page)) {
                return false;
            }
        }
    }
    return total == region_size();
}

// ---------------------------------------------------------------------------

PrimaryOs::PrimaryOs(Hypervisor& hv, IpaPage reserved_pages)
    : hv_(hv),
      alloc_(std::min<IpaPage>(reserved_pages, hv.machine().frame_count()),
             hv.machine().frame_count())
{}

EnclaveFd& PrimaryOs::lookup(int fd)
{
    auto it = fds_.find(fd);
    if (it == fds_.end()) {
        throw Error(Errc::BadFd, "fd " + std::to_string(fd));
    }
    return it->second;
}

const EnclaveFd& PrimaryOs::fd(int fd) const
{
    auto it = fds_.find(fd);
    if (it == fds_.end()) {
        throw Error(Errc::BadFd, "fd " + std::to_string(fd));
    }
    return it->second;
}

std::vector<int> PrimaryOs::open_fds() const
{
    std::vector<int> out;
    for (const auto& [fd, e] : fds_) {
        out.push_back(fd);
    }
    return out;
}

int PrimaryOs::driver_create(const EnclaveImage& image, PcpuId pcpu)
{
    int fd = kFirstFd;
    while (fds_.contains(fd)) {
        ++fd;
    }
    if (fd >= kFirstFd + kMaxFds) {
        throw Error(Errc::FdExhausted, "driver fd table full");
    }
    const VcpuId vcpu = hv_.primary_vcpu(pcpu);

    // Restored wholesale on failure so a refused create leaves no trace,
    // not even a consumed allocation id.
    const OsAllocator saved = alloc_;
    auto alloc = alloc_.allocate(image.total_pages());
    if (!alloc) {
        throw Error(Errc::NoMemory, std::to_string(image.total_pages()) + " pages requested, " +
                                        std::to_string(alloc_.free_count()) + " free");
    }
    const std::vector<IpaPage> pages = alloc_.pages(*alloc);

    try {
        // Copy the TA image into the donated pages.
        const VmId primary = hv_.primary();
        for (std::size_t off = 0; off < image.code_blob.size(); off += kPageSize) {
            const std::size_t len = std::min(kPageSize, image.code_blob.size() - off);
            auto r = hv_.write(primary, pages[off / kPageSize] << kPageShift,
                               ByteView(image.code_blob).subspan(off, len));
            if (!r) {
                throw Error(Errc::PageNotMapped, "driver copy faulted");
            }
        }
        std::vector<Ipa> channel_ipa;
        for (std::size_t i = image.mem_size_pages; i < pages.size(); ++i) {
            channel_ipa.push_back(pages[i] << kPageShift);
        }
        VmPort port(hv_, primary);
        Channel(port, channel_ipa).init();

        auto result = hv_.dispatch(vcpu, hc::CreateEnclave{pages, image.meta()});
        fds_.emplace(fd, EnclaveFd{fd, std::get<EnclaveHandle>(std::move(result)), *alloc, pcpu,
                                   std::move(channel_ipa)});
    } catch (...) {
        alloc_ = saved;
        throw;
    }
    return fd;
}

InvokeResult PrimaryOs::finish_invoke(Channel& channel, Resumption r)
{
    const ChannelHeader hdr = channel.header();
    if (hdr.status == ChannelStatus::Request || hdr.status == ChannelStatus::Preempted) {
        if (r == Resumption::Faulted) {
            channel.set_status(ChannelStatus::Error);
            return {ChannelStatus::Error, {}};
        }
        if (hdr.status == ChannelStatus::Request) {
            channel.set_status(ChannelStatus::Preempted);
        }
        return {ChannelStatus::Preempted, {}};
    }
    auto [status, payload] = channel.read_response();
    return {status, std::move(payload)};
}

InvokeResult PrimaryOs::driver_invoke(int fd, std::uint32_t cmd_id, ByteView args)
{
    EnclaveFd& e = lookup(fd);
    VmPort port(hv_, hv_.primary());
    Channel channel(port, e.channel_ipa);
    channel.write_request(cmd_id, args);
    auto r = hv_.dispatch(hv_.primary_vcpu(e.pcpu), hc::InvokeEnclave{e.handle.handle});
    return finish_invoke(channel, std::get<Resumption>(r));
}

InvokeResult PrimaryOs::driver_resume(int fd)
{
    EnclaveFd& e = lookup(fd);
    VmPort port(hv_, hv_.primary());
    Channel channel(port, e.channel_ipa);
    if (channel.header().status != ChannelStatus::Preempted) {
        throw Error(Errc::NoRequest, "no preempted command on fd " + std::to_string(fd));
    }
    auto r = hv_.dispatch(hv_.primary_vcpu(e.pcpu), hc::InvokeEnclave{e.handle.handle});
    return finish_invoke(channel, std::get<Resumption>(r));
}

void PrimaryOs::driver_destroy(int fd)
{
    EnclaveFd& e = lookup(fd);
    hv_.dispatch(hv_.primary_vcpu(e.pcpu), hc::DestroyEnclave{e.handle.handle});
    alloc_.free(e.alloc);
    fds_.erase(fd);
}

}  // namespace stackvisor
