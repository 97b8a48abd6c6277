// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "stackvisor/image.hpp"
#include "stackvisor/monitor.hpp"
#include "stackvisor/sim.hpp"
#include "stackvisor/ta_runtime.hpp"
#include "support/oracles.hpp"

namespace sv = stackvisor;
namespace ta = stackvisor::ta;

namespace {

sv::SimConfig small(std::size_t pcpus = 1)
{
    sv::SimConfig c;
    c.machine.frames = 256;
    c.machine.pcpus = pcpus;
    return c;
}

oracle::Bytes u64le(std::uint64_t v)
{
    oracle::Bytes out(8);
    for (int i = 0; i < 8; ++i) {
        out[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    return out;
}

}  // namespace

TEST(TaRuntime, CodeBlobNames)
{
    const auto blob = ta::make_code_blob("wallet", 100);
    EXPECT_EQ(blob.size(), 100u);
    EXPECT_EQ(ta::program_name(blob), "wallet");
    EXPECT_EQ(ta::program_name(oracle::Bytes(3, 'x')), std::nullopt);
    EXPECT_EQ(ta::required_mem_pages(1, 1), 3u);
    EXPECT_EQ(ta::required_mem_pages(4097, 2), 5u);
}

TEST(TaRuntime, EchoRandomPayloads)
{
    sv::Simulation sim(small());
    sv::Monitor mon(sim.hv, &sim.os);
    const int fd = sim.os.driver_create(sv::builtin_image("echo", 0, 2));
    std::mt19937_64 rng(17);
    for (int i = 0; i < 50; ++i) {
        oracle::Bytes arg(rng() % (2 * sv::kPageSize - sv::kChannelHeaderSize));
        for (auto& b : arg) {
            b = static_cast<std::uint8_t>(rng());
        }
        const auto r = sim.os.driver_invoke(fd, ta::kEchoCmd, arg);
        ASSERT_EQ(r.status, sv::ChannelStatus::Done);
        ASSERT_EQ(r.payload, arg);
        mon.check_now();
    }
    mon.check_shadow();
    EXPECT_TRUE(mon.ok()) << mon.violations().front().check;
}

TEST(TaRuntime, InterruptsAtEveryWorkStepStillFinish)
{
    for (std::uint64_t after = 1; after <= ta::kDefaultWorkSteps + 2; ++after) {
        sv::Simulation sim(small());
        sv::Monitor mon(sim.hv, &sim.os);
        const int fd = sim.os.driver_create(sv::builtin_image("counter"));
        sim.hv.arm_interrupt(0, sim.hv.primary_vcpu(0), after);
        // An interrupt that outlives the first command lands in the second.
        auto run = [&](std::uint32_t cmd) {
            auto r = sim.os.driver_invoke(fd, cmd, {});
            for (int resumes = 0; r.status == sv::ChannelStatus::Preempted && resumes < 10; ++resumes) {
                r = sim.os.driver_resume(fd);
            }
            EXPECT_EQ(r.status, sv::ChannelStatus::Done) << "after " << after;
            return r.payload;
        };
        // Exactly one increment, however often it was interrupted.
        EXPECT_EQ(run(ta::kCounterIncrement), u64le(1));
        EXPECT_EQ(run(ta::kCounterGet), u64le(1));
        mon.check_now();
        EXPECT_TRUE(mon.ok()) << mon.violations().front().check;
    }
}

TEST(TaRuntime, UnknownProgramAnswersError)
{
    sv::Simulation sim(small());
    auto img = sv::builtin_image("echo");
    img.code_blob = ta::make_code_blob("nonesuch");
    const int fd = sim.os.driver_create(img);
    EXPECT_EQ(sim.os.driver_invoke(fd, 0, {}).status, sv::ChannelStatus::Error);
}

TEST(TaRuntime, RogueHypercallsAreRefused)
{
    sv::Simulation sim(small());
    const int victim = sim.os.driver_create(sv::builtin_image("echo"));
    const int fd = sim.os.driver_create(sv::builtin_image("rogue"));
    const auto handle = sim.os.fd(victim).handle.handle;
    for (auto cmd : {ta::kRogueCreate, ta::kRogueInvoke, ta::kRogueDestroy}) {
        const auto r = sim.os.driver_invoke(fd, cmd, u64le(handle));
        ASSERT_EQ(r.status, sv::ChannelStatus::Done);
        EXPECT_EQ(r.payload, oracle::str("PrivilegeViolation"));
    }
    // The victim is untouched.
    EXPECT_EQ(sim.os.driver_invoke(victim, 0, oracle::str("ok")).payload, oracle::str("ok"));
}

TEST(TaRuntime, RogueProbeOutsideDonationIsContained)
{
    sv::Simulation sim(small());
    const int fd = sim.os.driver_create(sv::builtin_image("rogue"));
    const auto donated = sim.hv.vm(sim.os.fd(fd).handle.vm).donated.size();
    oracle::Bytes args;
    for (std::uint64_t page : {donated, donated + 1, std::uint64_t{200}, std::uint64_t{1} << 30}) {
        const auto a = u64le(page << sv::kPageShift);
        args.insert(args.end(), a.begin(), a.end());
    }
    const auto r = sim.os.driver_invoke(fd, ta::kRogueProbe, args);
    ASSERT_EQ(r.status, sv::ChannelStatus::Done);
    EXPECT_EQ(r.payload, oracle::Bytes(4, ta::kProbeContained));
}
