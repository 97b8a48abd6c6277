// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "stackvisor/channel.hpp"
#include "stackvisor/hypervisor.hpp"

namespace stackvisor::ta {

// A code blob opens with the NUL-padded name of the built-in program it runs.
inline constexpr std::size_t kProgramNameLen = 16;
inline constexpr std::uint32_t kDefaultWorkSteps = 4;

Bytes make_code_blob(std::string_view program, std::size_t total_len = kProgramNameLen);
std::optional<std::string> program_name(ByteView code);

/// Private pages an image needs: code, one state page, and a scratch copy of the channel.
std::uint32_t required_mem_pages(std::size_t code_len, std::uint32_t channel_pages);

/// Thrown by handlers to turn the current command into an Error response.
class TaFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// What a handler sees: its one page of persistent state, living in
// enclave-private memory, and the vCPU it runs on.
class TaEnv {
public:
    TaEnv(GuestContext& ctx, Ipa state_base) : ctx_(ctx), state_base_(state_base) {}

    Bytes load(std::size_t offset, std::size_t len);
    void store(std::size_t offset, ByteView data);
    std::uint32_t load_u32(std::size_t offset);
    void store_u32(std::size_t offset, std::uint32_t value);

    GuestContext& ctx() noexcept { return ctx_; }

private:
    GuestContext& ctx_;
    Ipa state_base_;
};

using Handler = std::function<Bytes(TaEnv&, ByteView args)>;

struct TaProgram {
    std::string name;
    std::map<std::uint32_t, Handler> handlers;
    std::uint32_t work_steps = kDefaultWorkSteps;
};

// The enclave-side serve loop. All loop state lives in the vCPU registers,
// so the loop picks up mid-command after being unwound by an interrupt.
class TaRuntime final : public GuestProgram {
public:
    explicit TaRuntime(TaProgram program) : program_(std::move(program)) {}
    void run(GuestContext& ctx) override;
    const TaProgram& program() const noexcept { return program_; }

private:
    TaProgram program_;
};

// Register use beyond the boot protocol.
inline constexpr std::uint64_t kPcBoot = 0;
inline constexpr std::uint64_t kPcServe = 1;
inline constexpr std::uint64_t kPcExecute = 2;
inline constexpr std::uint64_t kPcBroken = 3;
inline constexpr std::size_t kRegCmd = 4;
inline constexpr std::size_t kRegProgress = 5;
inline constexpr std::size_t kRegArgLen = 6;

TaProgram echo_program();
TaProgram counter_program();
TaProgram wallet_program();
TaProgram rogue_program();

/// Built-in program by name; unknown names get an empty handler table.
TaProgram builtin_program(std::string_view name);

/// Loader for the hypervisor: fetches the program name from enclave IPA 0.
ProgramLoader make_loader();

// Echo: cmd 0 returns its argument, cmd 1 touches an unmapped IPA.
inline constexpr std::uint32_t kEchoCmd = 0;
inline constexpr std::uint32_t kEchoFaultCmd = 1;

// Counter: cmd 1 increments and returns the u64 count, cmd 2 reads it.
inline constexpr std::uint32_t kCounterIncrement = 1;
inline constexpr std::uint32_t kCounterGet = 2;

// Rogue: adversarial probes issued from inside an enclave.
inline constexpr std::uint32_t kRogueCreate = 1;
inline constexpr std::uint32_t kRogueInvoke = 2;
inline constexpr std::uint32_t kRogueDestroy = 3;
inline constexpr std::uint32_t kRogueProbe = 4;

// Per-IPA result byte of a rogue probe.
inline constexpr std::uint8_t kProbeContained = 0;
inline constexpr std::uint8_t kProbeReadLeak = 1;
inline constexpr std::uint8_t kProbeWriteLeak = 2;

}  // namespace stackvisor::ta
