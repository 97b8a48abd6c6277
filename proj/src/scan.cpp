// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/scan.hpp"

#include <algorithm>
#include <functional>

namespace stackvisor {

std::vector<std::size_t> find_all(ByteView haystack, ByteView needle)
{
    std::vector<std::size_t> out;
    if (needle.empty() || needle.size() > haystack.size()) {
        return out;
    }
    const std::boyer_moore_horspool_searcher searcher(needle.begin(), needle.end());
    auto it = haystack.begin();
    while (true) {
        it = std::search(it, haystack.end(), searcher);
        if (it == haystack.end()) {
            break;
        }
        out.push_back(static_cast<std::size_t>(it - haystack.begin()));
        ++it;
    }
    return out;
}

std::size_t count_in_primary(const Hypervisor& hv, ByteView pattern)
{
    const auto hits = find_all(hv.machine().memory_view(), pattern);
    if (hits.empty()) {
        return 0;
    }
    std::vector<bool> mapped(hv.machine().frame_count(), false);
    for (const auto& [ipa, entry] : hv.vm(hv.primary()).stage2.entries()) {
        mapped[entry.frame] = true;
    }
    std::size_t n = 0;
    for (std::size_t off : hits) {
        const FrameNumber first = off / kPageSize;
        const FrameNumber last = (off + pattern.size() - 1) / kPageSize;
        if (mapped[first] || mapped[last]) {
            ++n;
        }
    }
    return n;
}

std::size_t count_in_memory(const PhysicalMachine& machine, ByteView pattern)
{
    return find_all(machine.memory_view(), pattern).size();
}

std::size_t nonzero_bytes(const PhysicalMachine& machine, const std::vector<FrameNumber>& frames)
{
    std::size_t n = 0;
    for (FrameNumber f : frames) {
        auto v = machine.frame_view(f);
        n += static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](auto b) { return b != 0; }));
    }
    return n;
}

SecretScanner::SecretScanner(Hypervisor& hv, Bytes pattern) : hv_(hv), pattern_(std::move(pattern))
{
    hv_.add_observer(this);
}

SecretScanner::~SecretScanner()
{
    hv_.remove_observer(this);
}

void SecretScanner::on_event(const TraceEvent& ev)
{
    ++scans_;
    const auto n = count_in_primary(hv_, pattern_);
    if (n > 0 && hits_ == 0) {
        first_hit_step_ = ev.step;
    }
    hits_ += n;
}

}  // namespace stackvisor
