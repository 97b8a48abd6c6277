// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <random>

#include "stackvisor/error.hpp"
#include "stackvisor/stacking.hpp"
#include "support/oracles.hpp"

namespace sv = stackvisor;

namespace {

sv::Errc code_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const sv::Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return sv::Errc::InvalidArgument;
}

struct Tree {
    sv::PhysicalMachine machine;
    sv::StackingScheduler sched{machine};
    std::vector<sv::VcpuId> roots;
    std::map<sv::VcpuId, std::vector<sv::VcpuId>> children;

    explicit Tree(std::size_t pcpus) : machine(config(pcpus)) {}

    static sv::MachineConfig config(std::size_t pcpus)
    {
        sv::MachineConfig c;
        c.frames = 1;
        c.pcpus = pcpus;
        return c;
    }

    sv::VcpuId child(sv::VcpuId parent)
    {
        auto id = sched.add_child(static_cast<sv::VmId>(sched.vcpus().size()), parent);
        children[parent].push_back(id);
        return id;
    }
};

}  // namespace

TEST(Stacking, PushPopRestoresRegisters)
{
    Tree t(1);
    const auto root = t.sched.add_root(0, 0);
    sv::GuestRegisters child_init;
    child_init.pc = 0x1000;
    const auto c = t.sched.add_child(1, root, child_init);

    t.sched.live_registers(0).x[0] = 42;
    t.sched.schedule_child(root, c);
    EXPECT_EQ(t.sched.current(0), c);
    EXPECT_EQ(t.sched.live_registers(0), child_init);
    EXPECT_EQ(t.sched.vcpu(root).head, c);
    EXPECT_EQ(t.sched.vcpu(c).tail, root);

    t.sched.live_registers(0).x[1] = 7;
    EXPECT_EQ(t.sched.yield(c), root);
    EXPECT_EQ(t.sched.live_registers(0).x[0], 42u);
    EXPECT_EQ(t.sched.vcpu(c).saved_context.x[1], 7u);
    EXPECT_FALSE(t.sched.vcpu(root).head);
    EXPECT_EQ(t.machine.ledger().ctx_switches, 2u);
    EXPECT_TRUE(t.sched.consistent());
}

// Primary -> enclave -> nested enclave on one pCPU, then an interrupt for the
// primary unwinds both in one step.
TEST(Stacking, DepthThreeUnwind)
{
    Tree t(1);
    const auto primary = t.sched.add_root(0, 0);
    const auto enclave = t.child(primary);
    const auto nested = t.child(enclave);
    std::vector<std::tuple<sv::VcpuId, sv::VcpuId, sv::SwitchReason>> switches;
    t.sched.set_switch_listener([&](sv::PcpuId, sv::VcpuId from, sv::VcpuId to, sv::SwitchReason why,
                                    const sv::InterruptOutcome*) { switches.emplace_back(from, to, why); });

    t.sched.schedule_child(primary, enclave);
    t.sched.schedule_child(enclave, nested);
    EXPECT_EQ(t.sched.stack(0), (std::vector<sv::VcpuId>{primary, enclave, nested}));

    // An interrupt for the running vCPU only pends.
    auto o = t.sched.deliver_interrupt(0, nested);
    EXPECT_FALSE(o.switched);
    EXPECT_EQ(t.sched.take_pending(nested), 1u);

    o = t.sched.deliver_interrupt(0, primary);
    EXPECT_TRUE(o.switched);
    EXPECT_EQ(o.popped, (std::vector<sv::VcpuId>{nested, enclave}));
    EXPECT_EQ(t.sched.stack(0), (std::vector<sv::VcpuId>{primary}));
    EXPECT_EQ(t.sched.take_pending(primary), 1u);
    ASSERT_EQ(switches.size(), 3u);
    EXPECT_EQ(switches[2], std::make_tuple(nested, primary, sv::SwitchReason::Unwind));
    EXPECT_TRUE(t.sched.consistent());
}

TEST(Stacking, Errors)
{
    Tree t(2);
    const auto r0 = t.sched.add_root(0, 0);
    const auto r1 = t.sched.add_root(1, 1);
    const auto a = t.child(r0);
    const auto b = t.child(a);
    const auto other = t.child(r1);

    EXPECT_EQ(code_of([&] { t.sched.schedule_child(a, b); }), sv::Errc::NotRunning);
    EXPECT_EQ(code_of([&] { t.sched.schedule_child(r0, b); }), sv::Errc::NotParent);
    EXPECT_EQ(code_of([&] { t.sched.schedule_child(r0, other); }), sv::Errc::WrongPcpu);
    EXPECT_EQ(code_of([&] { t.sched.yield(r0); }), sv::Errc::NoParent);
    EXPECT_EQ(code_of([&] { t.sched.deliver_interrupt(0, other); }), sv::Errc::WrongPcpu);
    t.sched.schedule_child(r0, a);
    EXPECT_EQ(code_of([&] { t.sched.yield(r0); }), sv::Errc::NotRunning);
    EXPECT_EQ(t.machine.ledger().ctx_switches, 1u);
}

// Random push/pop/interrupt streams against the vector-per-pCPU model; the
// stack, HEAD/TAIL links, pending counts and register files must all agree
// after every operation.
TEST(Stacking, RandomSequencesMatchReferenceModel)
{
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        std::mt19937_64 rng(seed);
        auto pick = [&](std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng); };
        const std::size_t pcpus = 1 + pick(3);
        Tree t(pcpus);
        std::vector<sv::VcpuId> all;
        for (std::size_t p = 0; p < pcpus; ++p) {
            t.roots.push_back(t.sched.add_root(static_cast<sv::VmId>(p), static_cast<sv::PcpuId>(p)));
            all.push_back(t.roots.back());
        }
        for (int i = 0; i < 12; ++i) {
            all.push_back(t.child(all[pick(all.size())]));
        }
        oracle::StackModel model(pcpus, t.roots);
        std::map<sv::VcpuId, sv::GuestRegisters> regs;
        std::map<sv::VcpuId, std::uint32_t> pending;

        for (int op = 0; op < 200; ++op) {
            const auto pcpu = static_cast<sv::PcpuId>(pick(pcpus));
            const auto top = model.top(pcpu);
            switch (pick(3)) {
            case 0: {
                const auto& kids = t.children[top];
                if (kids.empty()) {
                    break;
                }
                const auto c = kids[pick(kids.size())];
                t.sched.schedule_child(top, c);
                model.push(pcpu, c);
                break;
            }
            case 1:
                if (top == t.roots[pcpu]) {
                    EXPECT_EQ(code_of([&] { t.sched.yield(top); }), sv::Errc::NoParent);
                } else {
                    t.sched.yield(top);
                    model.pop(pcpu);
                }
                break;
            default: {
                // Target anything on this pCPU.
                std::vector<sv::VcpuId> here;
                for (auto v : all) {
                    if (t.sched.vcpu(v).pcpu == pcpu) {
                        here.push_back(v);
                    }
                }
                const auto target = here[pick(here.size())];
                const bool switched = model.interrupt(pcpu, target);
                auto o = t.sched.deliver_interrupt(pcpu, target);
                ASSERT_EQ(o.switched, switched);
                pending[target] += 1;
                break;
            }
            }
            // Registers: whoever now runs must see what it last left behind.
            for (std::size_t p = 0; p < pcpus; ++p) {
                const auto now = model.top(static_cast<sv::PcpuId>(p));
                ASSERT_EQ(t.sched.current(static_cast<sv::PcpuId>(p)), now);
                ASSERT_EQ(t.sched.live_registers(static_cast<sv::PcpuId>(p)), regs[now])
                    << "seed " << seed << " op " << op;
                ASSERT_EQ(t.sched.stack(static_cast<sv::PcpuId>(p)), model.stack(static_cast<sv::PcpuId>(p)))
                    << "seed " << seed << " op " << op;
            }
            const auto now = model.top(pcpu);
            t.sched.live_registers(pcpu).x[pick(8)] = rng();
            t.sched.live_registers(pcpu).pc = rng();
            regs[now] = t.sched.live_registers(pcpu);
            ASSERT_TRUE(t.sched.consistent());
        }
        for (auto v : all) {
            EXPECT_EQ(t.sched.vcpu(v).pending_irqs, pending[v]);
        }
    }
}
