// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "stackvisor/error.hpp"
#include "stackvisor/guest_os.hpp"
#include "stackvisor/sim.hpp"
#include "stackvisor/ta_runtime.hpp"
#include "support/oracles.hpp"

namespace sv = stackvisor;

namespace {

sv::SimConfig config(std::size_t frames, std::size_t pcpus = 1)
{
    sv::SimConfig c;
    c.machine.frames = frames;
    c.machine.pcpus = pcpus;
    return c;
}

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

}  // namespace

TEST(OsAllocator, LowestFirstAndConserved)
{
    sv::OsAllocator a(16, 64);
    const auto x = a.allocate(3);
    const auto y = a.allocate(2);
    ASSERT_TRUE(x && y);
    EXPECT_EQ(a.pages(*x), (std::vector<sv::IpaPage>{16, 17, 18}));
    EXPECT_EQ(a.pages(*y), (std::vector<sv::IpaPage>{19, 20}));
    a.free(*x);
    const auto z = a.allocate(4);
    EXPECT_EQ(a.pages(*z), (std::vector<sv::IpaPage>{16, 17, 18, 21}));
    EXPECT_TRUE(a.conserved());
    EXPECT_EQ(a.free_count(), 48u - 6u);
    EXPECT_FALSE(a.allocate(0));
    EXPECT_FALSE(a.allocate(1000));
    EXPECT_THROW(a.free(999), sv::Error);
}

TEST(OsAllocator, RandomAllocFreeKeepsConservation)
{
    std::mt19937_64 rng(3);
    sv::OsAllocator a(10, 300);
    std::vector<sv::AllocId> live;
    std::set<sv::IpaPage> used;  // independent bookkeeping
    for (int i = 0; i < 2000; ++i) {
        if (live.empty() || rng() % 2) {
            if (auto id = a.allocate(1 + rng() % 20)) {
                for (auto p : a.pages(*id)) {
                    ASSERT_TRUE(used.insert(p).second) << "page handed out twice";
                    ASSERT_GE(p, 10u);
                    ASSERT_LT(p, 300u);
                }
                live.push_back(*id);
            }
        } else {
            const auto k = rng() % live.size();
            for (auto p : a.pages(live[k])) {
                used.erase(p);
            }
            a.free(live[k]);
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
        }
        ASSERT_TRUE(a.conserved());
        ASSERT_EQ(a.free_count() + used.size(), 290u);
    }
}

TEST(Driver, CreateInvokeDestroy)
{
    sv::Simulation sim(config(256));
    const int fd = sim.os.driver_create(sv::builtin_image("echo"));
    EXPECT_EQ(fd, sv::PrimaryOs::kFirstFd);
    const auto& e = sim.os.fd(fd);
    EXPECT_EQ(e.handle.private_pages, (std::vector<sv::IpaPage>{16, 17, 18}));
    EXPECT_EQ(e.handle.channel_pages, (std::vector<sv::IpaPage>{19}));

    auto r = sim.os.driver_invoke(fd, sv::ta::kEchoCmd, oracle::str("hello"));
    EXPECT_EQ(r.status, sv::ChannelStatus::Done);
    EXPECT_EQ(r.payload, oracle::str("hello"));
    r = sim.os.driver_invoke(fd, sv::ta::kEchoFaultCmd, {});
    EXPECT_EQ(r.status, sv::ChannelStatus::Error);
    r = sim.os.driver_invoke(fd, 77, {});
    EXPECT_EQ(r.status, sv::ChannelStatus::Error);
    r = sim.os.driver_invoke(fd, sv::ta::kEchoCmd, oracle::str("still alive"));
    EXPECT_EQ(r.payload, oracle::str("still alive"));

    sim.os.driver_destroy(fd);
    EXPECT_TRUE(sim.os.open_fds().empty());
    EXPECT_EQ(sim.os.allocator().free_count(), 240u);
    EXPECT_EQ(code_of([&] { sim.os.driver_invoke(fd, 0, {}); }), sv::Errc::BadFd);
}

TEST(Driver, CounterKeepsStateAcrossInvokes)
{
    sv::Simulation sim(config(256));
    const int fd = sim.os.driver_create(sv::builtin_image("counter"));
    for (std::uint64_t i = 1; i <= 5; ++i) {
        auto r = sim.os.driver_invoke(fd, sv::ta::kCounterIncrement, {});
        ASSERT_EQ(r.status, sv::ChannelStatus::Done);
        ASSERT_EQ(r.payload.size(), 8u);
        EXPECT_EQ(r.payload[0], i);
    }
}

TEST(Driver, UndersizedImageAnswersEveryCommandWithError)
{
    sv::Simulation sim(config(256));
    auto img = sv::builtin_image("echo");
    img.mem_size_pages = 1;  // no room for state and scratch
    const int fd = sim.os.driver_create(img);
    EXPECT_EQ(sim.os.driver_invoke(fd, sv::ta::kEchoCmd, oracle::str("x")).status, sv::ChannelStatus::Error);
}

TEST(Driver, PreemptedCommandResumes)
{
    sv::Simulation sim(config(256));
    const int fd = sim.os.driver_create(sv::builtin_image("echo"));
    EXPECT_EQ(code_of([&] { sim.os.driver_resume(fd); }), sv::Errc::NoRequest);
    sim.hv.arm_interrupt(0, sim.hv.primary_vcpu(0), 1);
    auto r = sim.os.driver_invoke(fd, sv::ta::kEchoCmd, oracle::str("patience"));
    EXPECT_EQ(r.status, sv::ChannelStatus::Preempted);
    EXPECT_EQ(code_of([&] { sim.os.driver_invoke(fd, 0, {}); }), sv::Errc::Busy);
    // Overwriting the shared argument now cannot change the result: the TA
    // copied it into private memory before starting.
    const auto& e = sim.os.fd(fd);
    ASSERT_TRUE(sim.hv.write(sim.hv.primary(), e.channel_ipa[0] + sv::kChannelHeaderSize, oracle::str("XXXXXXXX")));
    r = sim.os.driver_resume(fd);
    EXPECT_EQ(r.status, sv::ChannelStatus::Done);
    EXPECT_EQ(r.payload, oracle::str("patience"));
}

TEST(Driver, FailuresRollBackAllocator)
{
    sv::Simulation sim(config(64));
    const auto before = sim.os.allocator();
    EXPECT_EQ(code_of([&] { sim.os.driver_create(sv::builtin_image("echo", 100)); }), sv::Errc::NoMemory);
    EXPECT_TRUE(sim.os.allocator() == before);

    sv::SimConfig c = config(64);
    c.hypervisor.fail_create_after_pt_ops = 3;
    sv::Simulation failing(c);
    const auto tables = failing.hv.snapshot_tables();
    const auto alloc = failing.os.allocator();
    EXPECT_EQ(code_of([&] { failing.os.driver_create(sv::builtin_image("echo")); }), sv::Errc::Exhausted);
    EXPECT_TRUE(failing.os.allocator() == alloc);
    EXPECT_EQ(failing.hv.snapshot_tables(), tables);
    EXPECT_TRUE(failing.os.open_fds().empty());
}

TEST(Driver, FdTableLimit)
{
    sv::Simulation sim(config(512));
    for (int i = 0; i < sv::PrimaryOs::kMaxFds; ++i) {
        EXPECT_EQ(sim.os.driver_create(sv::builtin_image("echo")), sv::PrimaryOs::kFirstFd + i);
    }
    EXPECT_EQ(code_of([&] { sim.os.driver_create(sv::builtin_image("echo")); }), sv::Errc::FdExhausted);
    sim.os.driver_destroy(5);
    EXPECT_EQ(sim.os.driver_create(sv::builtin_image("echo")), 5);
}

TEST(Driver, EnclavesOnDifferentPcpus)
{
    sv::Simulation sim(config(256, 2));
    const int a = sim.os.driver_create(sv::builtin_image("echo"), 0);
    const int b = sim.os.driver_create(sv::builtin_image("echo"), 1);
    EXPECT_EQ(sim.os.driver_invoke(a, 0, oracle::str("a")).payload, oracle::str("a"));
    EXPECT_EQ(sim.os.driver_invoke(b, 0, oracle::str("b")).payload, oracle::str("b"));
    const auto& vb = sim.hv.vm(sim.os.fd(b).handle.vm);
    EXPECT_EQ(sim.hv.scheduler().vcpu(vb.vcpus.front()).pcpu, 1u);
}
