// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "stackvisor/guest_os.hpp"
#include "stackvisor/monitor.hpp"
#include "stackvisor/sim.hpp"

namespace stackvisor {

struct ScenarioStep {
    std::size_t line = 0;
    std::string op;
    std::vector<std::string> args;
};

// Line-oriented script, one whitespace-separated step per line, '#' comments.
//
//   name <text...>
//   machine frames <n> [pcpus <n>] [reserved <n>]
//   seed <u64>
//   image <label> <program> [mem <pages>] [channel <pages>] [code <bytes>]
//   image <label> file <path>
//   create <enclave> <image> [pcpu <n>] [expect ok|<error>]
//   invoke <enclave> <cmd> <arg> [expect done|error|preempted] [payload <arg>]
//   resume <enclave> [expect done|error|preempted] [payload <arg>]
//   destroy <enclave> [expect ok|<error>]
//   irq <pcpu> [target primary|<enclave>]
//   irq-after <pcpu> <ticks> [target primary|<enclave>]
//   probe-private <enclave>       every private page must fault for the primary
//   probe-reclaimed <enclave>     every formerly donated page must read zero
//   scan-secret <enclave> [all]   wallet master key absent from primary (or all) memory
//
// <arg> is '-' or '+'-joined parts: hex:<hex> text:<chars> u32:<n> u64:<n>
// rand:<len> last last~ (previous payload, first byte flipped) handle:<enclave>.
struct Scenario {
    std::string name;
    SimConfig config{};
    std::uint64_t seed = 0;
    std::vector<ScenarioStep> steps;
    std::filesystem::path base_dir;

    /// Throws Error(ScenarioParseError) with the offending line number.
    static Scenario parse(std::string_view text, std::string name = {});
    static Scenario load(const std::filesystem::path& path);
};

struct ScenarioResult {
    bool pass = false;
    std::vector<std::string> failures;
    std::vector<Violation> violations;
    std::vector<InvokeResult> responses;
    std::uint64_t faults = 0;
    std::uint64_t events = 0;
    CostLedger ledger{};
};

ScenarioResult run_scenario(const Scenario& scenario, std::ostream* trace = nullptr,
                            std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace stackvisor
