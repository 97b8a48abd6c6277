// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/error.hpp"

namespace stackvisor {

std::string_view to_string(Errc code) noexcept
{
    switch (code) {
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::AlreadyMapped: return "AlreadyMapped";
    case Errc::NotMapped: return "NotMapped";
    case Errc::BadFrame: return "BadFrame";
    case Errc::NotPrimary: return "NotPrimary";
    case Errc::NotRunning: return "NotRunning";
    case Errc::PageNotMapped: return "PageNotMapped";
    case Errc::PageNotWritable: return "PageNotWritable";
    case Errc::TooSmall: return "TooSmall";
    case Errc::Exhausted: return "Exhausted";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::BadHandle: return "BadHandle";
    case Errc::Destroyed: return "Destroyed";
    case Errc::EnclaveActive: return "EnclaveActive";
    case Errc::NotParent: return "NotParent";
    case Errc::NoParent: return "NoParent";
    case Errc::WrongPcpu: return "WrongPcpu";
    case Errc::PrivilegeViolation: return "PrivilegeViolation";
    case Errc::Busy: return "Busy";
    case Errc::TooLarge: return "TooLarge";
    case Errc::NoRequest: return "NoRequest";
    case Errc::BadChannel: return "BadChannel";
    case Errc::NoMemory: return "NoMemory";
    case Errc::BadFd: return "BadFd";
    case Errc::FdExhausted: return "FdExhausted";
    case Errc::BadImage: return "BadImage";
    case Errc::ScenarioParseError: return "ScenarioParseError";
    }
    return "Unknown";
}

}  // namespace stackvisor
