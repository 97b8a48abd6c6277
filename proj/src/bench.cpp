// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stackvisor/error.hpp"
#include "stackvisor/image.hpp"
#include "stackvisor/sim.hpp"
#include "stackvisor/ta_runtime.hpp"

namespace stackvisor {

namespace {

Json ledger_json(const CostLedger& l)
{
    return Json{{"pt_ops", l.pt_ops},
                {"zero_bytes", l.zero_bytes},
                {"ctx_switches", l.ctx_switches},
                {"hypercalls", l.hypercalls},
                {"compute_units", l.compute_units}};
}

Json stat_json(const BenchStat& s)
{
    return Json{{"mean_units", s.mean}, {"stddev", s.stddev}, {"ledger", ledger_json(s.ledger)}};
}

BenchStat summarize(const std::vector<double>& samples, const CostLedger& one)
{
    BenchStat s;
    s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    double var = 0.0;
    for (double v : samples) {
        var += (v - s.mean) * (v - s.mean);
    }
    s.stddev = samples.size() > 1 ? std::sqrt(var / static_cast<double>(samples.size() - 1)) : 0.0;
    s.ledger = one;
    return s;
}

}  // namespace

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y)
{
    LinearFit fit;
    const auto n = static_cast<double>(x.size());
    if (x.size() < 2 || x.size() != y.size()) {
        return fit;
    }
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) {
        return fit;
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

BenchReport bench(const std::vector<std::uint32_t>& pages, std::uint32_t reps)
{
    if (reps == 0) {
        throw Error(Errc::InvalidArgument, "bench needs at least one repetition");
    }
    BenchReport report;
    report.reps = reps;
    for (std::uint32_t size : pages) {
        if (size < 3) {
            throw Error(Errc::InvalidArgument, "bench sizes must be at least 3 pages");
        }
        SimConfig sc;
        sc.machine.frames = std::max<std::size_t>(sc.machine.frames, size + PrimaryOs::kDefaultReserved + 64);
        Simulation sim(sc);
        const CostWeights& w = sim.machine.config().weights;
        // One channel page; the rest is private memory for the echo TA.
        const EnclaveImage image = builtin_image("echo", size - 1, 1);
        if (image.total_pages() != size) {
            throw Error(Errc::InvalidArgument, "size too small for the echo TA");
        }
        const Bytes arg{'p', 'i', 'n', 'g'};

        std::vector<double> create_u, invoke_u, destroy_u;
        CostLedger create_l, invoke_l, destroy_l;
        for (std::uint32_t r = 0; r < reps; ++r) {
            auto before = sim.machine.ledger();
            const int fd = sim.os.driver_create(image);
            create_l = sim.machine.ledger() - before;
            before = sim.machine.ledger();
            sim.os.driver_invoke(fd, ta::kEchoCmd, arg);
            invoke_l = sim.machine.ledger() - before;
            before = sim.machine.ledger();
            sim.os.driver_destroy(fd);
            destroy_l = sim.machine.ledger() - before;
            create_u.push_back(create_l.units(w));
            invoke_u.push_back(invoke_l.units(w));
            destroy_u.push_back(destroy_l.units(w));
        }
        BenchRow row;
        row.pages = size;
        row.create = summarize(create_u, create_l);
        row.invoke = summarize(invoke_u, invoke_l);
        row.destroy = summarize(destroy_u, destroy_l);
        row.ordered = row.invoke.mean < row.create.mean && row.create.mean < row.destroy.mean;
        report.rows.push_back(row);
    }

    std::vector<double> x, y;
    for (const auto& row : report.rows) {
        x.push_back(static_cast<double>(row.pages) * kPageSize);
        y.push_back(row.destroy.mean - row.create.mean);
    }
    const LinearFit fit = linear_fit(x, y);
    report.slope = fit.slope;
    report.intercept = fit.intercept;
    report.r_squared = fit.r_squared;
    report.ordering = std::all_of(report.rows.begin(), report.rows.end(), [](const auto& r) { return r.ordered; });
    report.invoke_constant = std::all_of(report.rows.begin(), report.rows.end(), [&](const auto& r) {
        return r.invoke.mean == report.rows.front().invoke.mean && r.invoke.stddev == 0.0;
    });
    report.pass = !report.rows.empty() && report.ordering && report.invoke_constant &&
                  (report.rows.size() < 2 || report.r_squared > 0.999);
    return report;
}

Json BenchReport::to_json() const
{
    Json rows_json = Json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"pages", r.pages},
                             {"create", stat_json(r.create)},
                             {"invoke", stat_json(r.invoke)},
                             {"destroy", stat_json(r.destroy)},
                             {"ordered", r.ordered}});
    }
    return Json{{"reps", reps},
                {"rows", rows_json},
                {"ordering", ordering},
                {"invoke_constant", invoke_constant},
                {"fit", {{"slope", slope}, {"intercept", intercept}, {"r_squared", r_squared}}},
                {"pass", pass}};
}

}  // namespace stackvisor
