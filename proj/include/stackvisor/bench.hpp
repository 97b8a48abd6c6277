// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "stackvisor/events.hpp"
#include "stackvisor/machine.hpp"

namespace stackvisor {

struct BenchStat {
    double mean = 0.0;
    double stddev = 0.0;  // always 0: the simulator has no jitter
    CostLedger ledger{};  // counters of one repetition
};

struct BenchRow {
    std::uint32_t pages = 0;  // donated pages, channel included
    BenchStat create;
    BenchStat invoke;
    BenchStat destroy;
    bool ordered = false;  // invoke < create < destroy
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::uint32_t reps = 0;
    bool ordering = false;
    bool invoke_constant = false;
    // Least-squares fit of destroy - create against pages * PAGE_SIZE.
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    bool pass = false;

    Json to_json() const;
};

/// Runs `reps` driver-level create/invoke/destroy cycles per size and reports
/// ledger units.
BenchReport bench(const std::vector<std::uint32_t>& pages, std::uint32_t reps = 30);

/// Coefficient of determination of the least-squares line through (x, y).
/// Returns 1 when every y is equal and the fit is exact.
struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace stackvisor
