// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "stackvisor/events.hpp"
#include "stackvisor/monitor.hpp"

namespace stackvisor {

struct FuzzConfig {
    std::uint64_t ops = 10000;
    std::uint64_t seed = 42;
    std::size_t frames = 1024;
    std::size_t pcpus = 2;
    bool skip_zeroize = false;  // mutation: the run is expected to fail
};

struct FuzzReport {
    bool pass = false;
    std::uint64_t seed = 0;
    std::uint64_t ops_run = 0;
    std::uint64_t lifecycles = 0;  // enclaves created, used and destroyed
    std::uint64_t rejected = 0;    // operations the system refused with an error
    std::uint64_t monitor_checks = 0;
    std::map<std::string, std::uint64_t> op_counts;
    std::optional<std::uint64_t> failing_step;  // 0-based op index
    std::optional<Violation> violation;
    std::string reproducer;  // command line that replays up to the failure

    Json to_json() const;
};

/// Random valid and invalid driver, hypercall and adversary operations with
/// every invariant re-checked after each one. Stops at the first violation.
FuzzReport fuzz(const FuzzConfig& config);

}  // namespace stackvisor
