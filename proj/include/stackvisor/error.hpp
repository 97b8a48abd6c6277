// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stackvisor {

enum class Errc {
    OutOfRange,
    // stage-2
    AlreadyMapped,
    NotMapped,
    BadFrame,
    // hypercalls
    NotPrimary,
    NotRunning,
    PageNotMapped,
    PageNotWritable,
    TooSmall,
    Exhausted,
    InvalidArgument,
    BadHandle,
    Destroyed,
    EnclaveActive,
    NotParent,
    NoParent,
    WrongPcpu,
    PrivilegeViolation,
    // channel
    Busy,
    TooLarge,
    NoRequest,
    BadChannel,
    // guest os
    NoMemory,
    BadFd,
    FdExhausted,
    // image / scenario
    BadImage,
    ScenarioParseError,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {}

    explicit Error(Errc code) : std::runtime_error(std::string(to_string(code))), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace stackvisor
