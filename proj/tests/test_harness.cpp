// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "stackvisor/attack.hpp"
#include "stackvisor/bench.hpp"
#include "stackvisor/fuzz.hpp"
#include "stackvisor/trace.hpp"

namespace sv = stackvisor;

TEST(Harness, LinearFitExactAndNoisy)
{
    auto f = sv::linear_fit({1, 2, 3, 4}, {3, 5, 7, 9});
    EXPECT_DOUBLE_EQ(f.slope, 2.0);
    EXPECT_DOUBLE_EQ(f.intercept, 1.0);
    EXPECT_DOUBLE_EQ(f.r_squared, 1.0);
    f = sv::linear_fit({1, 2, 3, 4}, {1, 3, 2, 4});
    // Hand-computed: slope 0.8, intercept 0.5, R^2 = 0.64.
    EXPECT_NEAR(f.slope, 0.8, 1e-12);
    EXPECT_NEAR(f.intercept, 0.5, 1e-12);
    EXPECT_NEAR(f.r_squared, 0.64, 1e-12);
}

TEST(Harness, TraceLineFieldOrder)
{
    std::ostringstream out;
    sv::TraceWriter w(&out);
    sv::TraceEvent ev;
    ev.step = 3;
    ev.kind = sv::EventKind::Note;
    ev.pcpu = 1;
    ev.detail = sv::Json{{"z", 1}, {"a", 2}};
    w.on_event(ev);
    const std::string line = out.str();
    EXPECT_EQ(line.find("{\"step\":3,\"pcpu\":1,\"vcpu\":null,\"event\":"), 0u) << line;
    EXPECT_LT(line.find("\"detail\""), line.find("\"ledger\""));
    EXPECT_EQ(line.back(), '\n');
    EXPECT_EQ(w.events(), 1u);
}

TEST(Harness, BenchCostModel)
{
    const auto r = sv::bench({4, 8, 16}, 3);
    ASSERT_TRUE(r.pass);
    ASSERT_EQ(r.rows.size(), 3u);
    for (const auto& row : r.rows) {
        EXPECT_TRUE(row.ordered);
        EXPECT_DOUBLE_EQ(row.invoke.mean, r.rows[0].invoke.mean);
        EXPECT_DOUBLE_EQ(row.create.mean, 1.0 + 2.0 * row.pages);
        EXPECT_DOUBLE_EQ(row.destroy.mean, 1.0 + 3.0 * row.pages);
    }
    EXPECT_NEAR(r.r_squared, 1.0, 1e-12);
}

TEST(Harness, AttackSuiteContainsEverything)
{
    sv::AttackConfig c;
    c.frames = 512;
    c.private_pages = 32;
    const auto r = sv::attack_suite(c);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.attacks.size(), 5u);
    for (const auto& a : r.attacks) {
        EXPECT_TRUE(a.contained) << a.id << " " << a.detail;
    }
    EXPECT_TRUE(r.violations.empty());
}

TEST(Harness, FuzzPassesAndReplays)
{
    sv::FuzzConfig c;
    c.ops = 1500;
    c.seed = 9;
    const auto a = sv::fuzz(c);
    EXPECT_TRUE(a.pass) << (a.violation ? a.violation->check : "");
    EXPECT_EQ(a.ops_run, 1500u);
    EXPECT_GT(a.lifecycles, 50u);
    const auto b = sv::fuzz(c);
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Harness, FuzzCatchesSkippedZeroize)
{
    sv::FuzzConfig c;
    c.ops = 2000;
    c.skip_zeroize = true;
    const auto r = sv::fuzz(c);
    ASSERT_FALSE(r.pass);
    ASSERT_TRUE(r.violation);
    EXPECT_EQ(r.violation->check, "zeroize-before-remap");
    EXPECT_NE(r.reproducer.find("--mutate skip-zeroize"), std::string::npos);
}
