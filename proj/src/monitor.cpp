// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/monitor.hpp"

#include <algorithm>
#include <cstring>

#include "stackvisor/channel.hpp"

namespace stackvisor {

Monitor::Monitor(Hypervisor& hv, const PrimaryOs* os)
    : hv_(hv),
      os_(os),
      last_ledger_(hv.machine().ledger()),
      owner_count_(hv.machine().frame_count(), 0),
      owners_(hv.machine().frame_count())
{
    for (PcpuId p = 0; p < hv.machine().pcpu_count(); ++p) {
        stacks_.push_back(hv.scheduler().stack(p));
    }
    if (os_ != nullptr) {
        alloc_total_ = os_->allocator().region_size();
    }
    last_step_ = hv.steps();
    hv_.add_observer(this);
    check_state();
}

Monitor::~Monitor()
{
    hv_.remove_observer(this);
}

void Monitor::fail(std::string check, std::string detail)
{
    violations_.push_back(Violation{step_, std::move(check), std::move(detail)});
}

void Monitor::rebuild_owners()
{
    std::fill(owner_count_.begin(), owner_count_.end(), std::uint8_t{0});
    for (const Vm& vm : hv_.vms()) {
        for (const auto& [ipa_page, entry] : vm.stage2.entries()) {
            if (entry.frame >= owners_.size()) {
                fail("frame-range", "vm " + std::to_string(vm.id) + " maps frame " +
                                        std::to_string(entry.frame));
                continue;
            }
            Owner o{vm.id, false};
            if (vm.kind == VmKind::Enclave) {
                o.channel = ipa_page < vm.donated.size() && vm.donated[ipa_page].channel;
            }
            auto& n = owner_count_[entry.frame];
            if (n < 2) {
                owners_[entry.frame][n] = o;
            }
            if (n < 255) {
                ++n;
            }
        }
    }
}

void Monitor::check_state()
{
    ++checks_;
    rebuild_owners();

    // Frame exclusivity.
    const VmId primary = hv_.primary();
    for (FrameNumber f = 0; f < owner_count_.size(); ++f) {
        const auto n = owner_count_[f];
        if (n <= 1) {
            continue;
        }
        const auto& o = owners_[f];
        const bool shared_channel = n == 2 && ((o[0].vm == primary && o[1].vm != primary && o[1].channel) ||
                                               (o[1].vm == primary && o[0].vm != primary && o[0].channel));
        if (!shared_channel) {
            fail("frame-exclusivity", "frame " + std::to_string(f) + " mapped " +
                                          std::to_string(n) + " times");
        }
    }

    // Zeroize-before-remap: nothing an enclave wrote privately may be visible to the primary.
    const auto& mem = hv_.machine();
    for (FrameNumber f : taint_) {
        const auto n = owner_count_[f];
        bool primary_maps = false;
        for (std::uint8_t i = 0; i < std::min<std::uint8_t>(n, 2); ++i) {
            primary_maps = primary_maps || owners_[f][i].vm == primary;
        }
        if (!primary_maps) {
            continue;
        }
        auto view = mem.frame_view(f);
        if (std::any_of(view.begin(), view.end(), [](auto b) { return b != 0; })) {
            fail("zeroize-before-remap", "frame " + std::to_string(f) +
                                             " is back in the primary with enclave data");
        }
    }

    // LIFO model and HEAD/TAIL.
    const auto& sched = hv_.scheduler();
    if (!sched.consistent()) {
        fail("head-tail", "HEAD/TAIL links inconsistent");
    }
    for (PcpuId p = 0; p < stacks_.size(); ++p) {
        if (sched.stack(p) != stacks_[p]) {
            fail("lifo-model", "pcpu " + std::to_string(p) + " stack differs from reference model");
            stacks_[p] = sched.stack(p);
        }
    }

    if (os_ != nullptr) {
        const auto& a = os_->allocator();
        std::size_t total = a.free_count();
        for (const auto& [id, pages] : a.allocations()) {
            total += pages.size();
        }
        if (!a.conserved() || total != alloc_total_) {
            fail("allocator-conservation", "free + allocated != region");
        }
    }
}

void Monitor::check_driver()
{
    // Only meaningful between driver calls: mid-destroy the fd is still open.
    if (os_ == nullptr) {
        return;
    }
    for (const auto& [fd, e] : os_->fd_table()) {
        if (hv_.vm(e.handle.vm).state == VmState::Destroyed) {
            fail("fd-table", "fd " + std::to_string(fd) + " refers to a destroyed enclave");
        }
        if (!os_->allocator().allocations().contains(e.alloc)) {
            fail("fd-table", "fd " + std::to_string(fd) + " holds no allocation");
        }
    }
    if (os_->fd_table().size() != hv_.live_enclaves()) {
        fail("fd-table", std::to_string(os_->fd_table().size()) + " fds for " +
                             std::to_string(hv_.live_enclaves()) + " live enclaves");
    }
}

void Monitor::check_now()
{
    check_state();
    check_driver();
}

void Monitor::check_shadow()
{
    const auto& mem = hv_.machine();
    for (const auto& [frame, bytes] : shadow_) {
        auto view = mem.frame_view(frame);
        if (!std::equal(view.begin(), view.end(), bytes.begin())) {
            fail("flat-memory", "frame " + std::to_string(frame) + " differs from shadow");
        }
    }
}

void Monitor::apply_switch(PcpuId pcpu, const Json& d)
{
    if (pcpu >= stacks_.size()) {
        fail("lifo-model", "switch on unknown pcpu");
        return;
    }
    auto& st = stacks_[pcpu];
    const auto from = d.at("from").get<VcpuId>();
    const auto to = d.at("to").get<VcpuId>();
    const auto reason = d.at("reason").get<std::string>();
    if (st.empty() || st.back() != from) {
        fail("lifo-model", "switch away from a vcpu that is not on top");
    }
    if (reason == "push") {
        st.push_back(to);
    } else if (reason == "pop") {
        if (st.size() < 2) {
            fail("lifo-model", "pop of a root vcpu");
            return;
        }
        st.pop_back();
        if (st.back() != to) {
            fail("lifo-model", "pop did not return to the parent");
        }
    } else if (reason == "unwind") {
        if (std::find(st.begin(), st.end(), to) == st.end() || st.back() == to) {
            fail("lifo-model", "unwind target is not an ancestor");
            return;
        }
        while (st.back() != to) {
            st.pop_back();
        }
    } else {
        fail("lifo-model", "unknown switch reason " + reason);
    }
}

void Monitor::on_event(const TraceEvent& ev)
{
    step_ = ev.step;
    if (ev.step <= last_step_) {
        fail("trace-steps", "step did not increase");
    }
    last_step_ = ev.step;
    if (!ledger_monotonic(last_ledger_, ev.ledger)) {
        fail("ledger-monotonic", "a cost counter decreased");
    }
    last_ledger_ = ev.ledger;

    switch (ev.kind) {
    case EventKind::ContextSwitch:
        apply_switch(ev.pcpu.value_or(0), ev.detail);
        break;
    case EventKind::Interrupt:
        if (ev.detail.at("outcome") == "pending" && ev.pcpu && *ev.pcpu < stacks_.size()) {
            const auto& st = stacks_[*ev.pcpu];
            const auto target = ev.detail.at("target").get<VcpuId>();
            auto it = std::find(st.begin(), st.end(), target);
            if (it != st.end() && target != st.back()) {
                fail("lifo-model", "interrupt to a stacked ancestor did not unwind");
            }
        }
        break;
    case EventKind::Channel: {
        const auto& from = ev.detail.at("from");
        if (!from.is_null()) {
            auto parse = [](const std::string& s) {
                for (std::uint32_t i = 0; i <= 4; ++i) {
                    if (to_string(static_cast<ChannelStatus>(i)) == s) {
                        return static_cast<ChannelStatus>(i);
                    }
                }
                return ChannelStatus::Idle;
            };
            const auto a = parse(from.get<std::string>());
            const auto b = parse(ev.detail.at("to").get<std::string>());
            if (a != b && !channel_transition_allowed(a, b)) {
                fail("channel-status", from.get<std::string>() + " -> " +
                                           ev.detail.at("to").get<std::string>());
            }
        }
        break;
    }
    case EventKind::Fault:
        ++faults_;
        break;
    default:
        break;
    }
    check_state();
}

void Monitor::on_mem_access(const MemAccessRecord& rec)
{
    const Vm& vm = hv_.vm(rec.vm);
    auto& mem = hv_.machine();
    std::size_t consumed = 0;
    for (const auto& s : rec.slices) {
        const IpaPage page = s.ipa >> kPageShift;
        auto entry = vm.stage2.lookup(page);
        if (!entry || entry->frame != s.frame || !entry->perms.allows(rec.access)) {
            fail("access-ownership", "vm " + std::to_string(rec.vm) + " touched frame " +
                                         std::to_string(s.frame) + " it does not map");
        }
        if (rec.vm == hv_.primary()) {
            if (taint_.contains(s.frame)) {
                fail("isolation", "primary touched enclave-private frame " + std::to_string(s.frame));
            }
            const auto n = owner_count_[s.frame];
            for (std::uint8_t i = 0; i < std::min<std::uint8_t>(n, 2); ++i) {
                const Owner& o = owners_[s.frame][i];
                if (o.vm != hv_.primary() && !o.channel) {
                    fail("isolation", "primary touched private frame " + std::to_string(s.frame) +
                                          " of vm " + std::to_string(o.vm));
                }
            }
        }
        if (rec.access == Access::Write) {
            if (vm.kind == VmKind::Enclave && page < vm.donated.size() && !vm.donated[page].channel) {
                taint_.insert(s.frame);
            }
            auto it = shadow_.find(s.frame);
            if (it == shadow_.end()) {
                auto view = mem.frame_view(s.frame);
                std::array<std::uint8_t, kPageSize> copy{};
                std::copy(view.begin(), view.end(), copy.begin());
                it = shadow_.emplace(s.frame, copy).first;
            } else {
                std::copy_n(rec.data.begin() + static_cast<std::ptrdiff_t>(consumed), s.len,
                            it->second.begin() + static_cast<std::ptrdiff_t>(s.offset));
            }
            auto view = mem.frame_view(s.frame);
            if (!std::equal(view.begin(), view.end(), it->second.begin())) {
                fail("flat-memory", "write to frame " + std::to_string(s.frame) +
                                        " disagrees with shadow");
            }
        }
        consumed += s.len;
    }
}

void Monitor::on_zeroize(FrameNumber frame)
{
    taint_.erase(frame);
    auto it = shadow_.find(frame);
    if (it != shadow_.end()) {
        it->second.fill(0);
    }
}

}  // namespace stackvisor
