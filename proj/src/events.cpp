// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/events.hpp"

namespace stackvisor {

std::string_view to_string(EventKind kind) noexcept
{
    switch (kind) {
    case EventKind::Hypercall: return "hypercall";
    case EventKind::HypercallDone: return "hypercall_done";
    case EventKind::HypercallError: return "hypercall_error";
    case EventKind::ContextSwitch: return "ctx_switch";
    case EventKind::Fault: return "fault";
    case EventKind::Interrupt: return "interrupt";
    case EventKind::Zeroize: return "zeroize";
    case EventKind::Channel: return "channel";
    case EventKind::Note: return "note";
    }
    return "?";
}

}  // namespace stackvisor
