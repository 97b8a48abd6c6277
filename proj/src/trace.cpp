// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/trace.hpp"

namespace stackvisor {

Json to_json(const TraceEvent& ev)
{
    Json j;
    j["step"] = ev.step;
    j["pcpu"] = ev.pcpu ? Json(*ev.pcpu) : Json(nullptr);
    j["vcpu"] = ev.vcpu ? Json(*ev.vcpu) : Json(nullptr);
    j["event"] = to_string(ev.kind);
    j["detail"] = ev.detail;
    j["ledger"] = Json{{"pt_ops", ev.ledger.pt_ops},
                       {"zero_bytes", ev.ledger.zero_bytes},
                       {"ctx_switches", ev.ledger.ctx_switches},
                       {"hypercalls", ev.ledger.hypercalls},
                       {"compute", ev.ledger.compute_units}};
    return j;
}

void TraceWriter::on_event(const TraceEvent& ev)
{
    ++events_;
    ++counts_[std::string(to_string(ev.kind))];
    if (out_ != nullptr) {
        *out_ << to_json(ev).dump() << '\n';
    }
}

}  // namespace stackvisor
