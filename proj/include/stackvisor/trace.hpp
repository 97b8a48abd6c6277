// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <ostream>
#include <string>

#include "stackvisor/events.hpp"

namespace stackvisor {

/// One trace line: {"step","pcpu","vcpu","event","detail","ledger"}.
Json to_json(const TraceEvent& ev);

// Writes every event as a JSON line. Field order is fixed so identical runs
// give byte-identical files.
class TraceWriter final : public Observer {
public:
    explicit TraceWriter(std::ostream* out) : out_(out) {}

    void on_event(const TraceEvent& ev) override;

    std::uint64_t events() const noexcept { return events_; }
    const std::map<std::string, std::uint64_t>& counts() const noexcept { return counts_; }

private:
    std::ostream* out_;
    std::uint64_t events_ = 0;
    std::map<std::string, std::uint64_t> counts_;
};

}  // namespace stackvisor
