// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/ta_runtime.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "stackvisor/error.hpp"

namespace stackvisor::ta {

namespace {

std::uint32_t get_u32(ByteView b, std::size_t off)
{
    if (b.size() < off + 4) {
        throw TaFailure("argument too short");
    }
    return std::uint32_t{b[off]} | std::uint32_t{b[off + 1]} << 8 |
           std::uint32_t{b[off + 2]} << 16 | std::uint32_t{b[off + 3]} << 24;
}

std::uint64_t get_u64(ByteView b, std::size_t off)
{
    return std::uint64_t{get_u32(b, off)} | std::uint64_t{get_u32(b, off + 4)} << 32;
}

Bytes u64_bytes(std::uint64_t v)
{
    Bytes out(8);
    for (int i = 0; i < 8; ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    return out;
}

Bytes text(std::string_view s)
{
    return Bytes(s.begin(), s.end());
}

std::size_t pages_for(std::size_t bytes)
{
    return (bytes + kPageSize - 1) / kPageSize;
}

}  // namespace

Bytes make_code_blob(std::string_view program, std::size_t total_len)
{
    Bytes blob(std::max(total_len, kProgramNameLen), 0);
    std::copy_n(program.begin(), std::min(program.size(), kProgramNameLen), blob.begin());
    // Filler stands in for the rest of the image.
    for (std::size_t i = kProgramNameLen; i < blob.size(); ++i) {
        blob[i] = static_cast<std::uint8_t>(0xA5 ^ (i * 31));
    }
    return blob;
}

std::optional<std::string> program_name(ByteView code)
{
    if (code.size() < kProgramNameLen) {
        return std::nullopt;
    }
    auto name = code.first(kProgramNameLen);
    auto end = std::find(name.begin(), name.end(), std::uint8_t{0});
    return std::string(name.begin(), end);
}

std::uint32_t required_mem_pages(std::size_t code_len, std::uint32_t channel_pages)
{
    return static_cast<std::uint32_t>(pages_for(code_len)) + 1 + channel_pages;
}

// ---------------------------------------------------------------------------

Bytes TaEnv::load(std::size_t offset, std::size_t len)
{
    if (offset > kPageSize || len > kPageSize - offset) {
        throw TaFailure("state access outside the state page");
    }
    auto r = ctx_.read(state_base_ + offset, len);
    if (!r) {
        throw TaFailure("state page faulted");
    }
    return std::move(r.data());
}

void TaEnv::store(std::size_t offset, ByteView data)
{
    if (offset > kPageSize || data.size() > kPageSize - offset) {
        throw TaFailure("state access outside the state page");
    }
    if (!ctx_.write(state_base_ + offset, data)) {
        throw TaFailure("state page faulted");
    }
}

std::uint32_t TaEnv::load_u32(std::size_t offset)
{
    return get_u32(load(offset, 4), 0);
}

void TaEnv::store_u32(std::size_t offset, std::uint32_t value)
{
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(value), static_cast<std::uint8_t>(value >> 8),
                               static_cast<std::uint8_t>(value >> 16),
                               static_cast<std::uint8_t>(value >> 24)};
    store(offset, b);
}

// ---------------------------------------------------------------------------

void TaRuntime::run(GuestContext& ctx)
{
    GuestPort port(ctx);
    GuestRegisters& r = ctx.regs();
    Channel channel = Channel::contiguous(port, r.x[kRegChannelIpa], r.x[kRegChannelBytes]);

    const std::size_t code_pages = pages_for(r.x[kRegCodeLen]);
    const Ipa state_base = code_pages * kPageSize;
    const Ipa scratch_base = state_base + kPageSize;

    for (;;) {
        switch (r.pc) {
        case kPcBoot: {
            const std::size_t needed = code_pages + 1 + pages_for(r.x[kRegChannelBytes]);
            r.pc = r.x[kRegPrivatePages] >= needed ? kPcServe : kPcBroken;
            break;
        }
        case kPcServe:
        case kPcBroken: {
            ServedRequest req;
            try {
                req = channel.serve();
            } catch (const Error& e) {
                if (e.code() != Errc::NoRequest) {
                    channel.complete(ChannelStatus::Error, {});
                }
                ctx.exit();
                return;
            }
            if (r.pc == kPcBroken) {
                channel.complete(ChannelStatus::Error, {});
                ctx.exit();
                return;
            }
            // Arguments are copied out of shared memory before use.
            if (!ctx.write(scratch_base, req.args)) {
                channel.complete(ChannelStatus::Error, {});
                ctx.exit();
                return;
            }
            r.x[kRegCmd] = req.cmd_id;
            r.x[kRegArgLen] = req.args.size();
            r.x[kRegProgress] = 0;
            r.pc = kPcExecute;
            break;
        }
        case kPcExecute: {
            while (r.x[kRegProgress] < program_.work_steps) {
                r.x[kRegProgress] += 1;
                if (!ctx.tick()) {
                    return;
                }
            }
            ChannelStatus status = ChannelStatus::Done;
            Bytes result;
            auto handler = program_.handlers.find(static_cast<std::uint32_t>(r.x[kRegCmd]));
            if (handler == program_.handlers.end()) {
                status = ChannelStatus::Error;
            } else {
                try {
                    auto args = ctx.read(scratch_base, r.x[kRegArgLen]);
                    if (!args) {
                        throw TaFailure("scratch faulted");
                    }
                    TaEnv env(ctx, state_base);
                    result = handler->second(env, args.data());
                } catch (const TaFailure&) {
                    status = ChannelStatus::Error;
                    result.clear();
                }
                ctx.charge_compute(1);
            }
            if (result.size() > channel.payload_capacity()) {
                status = ChannelStatus::Error;
                result.clear();
            }
            channel.complete(status, result);
            r.pc = kPcServe;
            ctx.exit();
            return;
        }
        default:
            throw TaFailure("corrupt program counter");
        }
    }
}

// ---------------------------------------------------------------------------

TaProgram echo_program()
{
    TaProgram p{"echo", {}, kDefaultWorkSteps};
    p.handlers[kEchoCmd] = [](TaEnv&, ByteView args) { return Bytes(args.begin(), args.end()); };
    p.handlers[kEchoFaultCmd] = [](TaEnv& env, ByteView) -> Bytes {
        if (!env.ctx().read(Ipa{1} << 40, 1)) {
            throw TaFailure("wild read");
        }
        return {};
    };
    return p;
}

TaProgram counter_program()
{
    TaProgram p{"counter", {}, kDefaultWorkSteps};
    p.handlers[kCounterIncrement] = [](TaEnv& env, ByteView) {
        std::uint64_t n = get_u64(env.load(0, 8), 0) + 1;
        auto bytes = u64_bytes(n);
        env.store(0, bytes);
        return bytes;
    };
    p.handlers[kCounterGet] = [](TaEnv& env, ByteView) { return env.load(0, 8); };
    return p;
}

TaProgram rogue_program()
{
    auto attempt = [](GuestContext& ctx, const Hypercall& call) -> Bytes {
        try {
            ctx.hypercall(call);
            return text("OK");
        } catch (const Error& e) {
            return text(to_string(e.code()));
        }
    };
    TaProgram p{"rogue", {}, 1};
    p.handlers[kRogueCreate] = [attempt](TaEnv& env, ByteView) {
        ImageMeta meta{1, 1, 0, 0};
        return attempt(env.ctx(), hc::CreateEnclave{{0, 1}, meta});
    };
    p.handlers[kRogueInvoke] = [attempt](TaEnv& env, ByteView args) {
        return attempt(env.ctx(), hc::InvokeEnclave{get_u64(args, 0)});
    };
    p.handlers[kRogueDestroy] = [attempt](TaEnv& env, ByteView args) {
        return attempt(env.ctx(), hc::DestroyEnclave{get_u64(args, 0)});
    };
    p.handlers[kRogueProbe] = [](TaEnv& env, ByteView args) {
        Bytes out;
        for (std::size_t off = 0; off + 8 <= args.size(); off += 8) {
            const Ipa ipa = get_u64(args, off);
            std::uint8_t verdict = kProbeContained;
            if (env.ctx().read(ipa, 1)) {
                verdict |= kProbeReadLeak;
            }
            const std::uint8_t poke = 0x5A;
            if (env.ctx().write(ipa, ByteView(&poke, 1))) {
                verdict |= kProbeWriteLeak;
            }
            out.push_back(verdict);
        }
        return out;
    };
    return p;
}

TaProgram builtin_program(std::string_view name)
{
    if (name == "echo") {
        return echo_program();
    }
    if (name == "counter") {
        return counter_program();
    }
    if (name == "wallet") {
        return wallet_program();
    }
    if (name == "rogue") {
        return rogue_program();
    }
    return TaProgram{std::string(name), {}, kDefaultWorkSteps};
}

ProgramLoader make_loader()
{
    return [](GuestContext& ctx) -> std::unique_ptr<GuestProgram> {
        auto head = ctx.fetch(0, kProgramNameLen);
        if (!head) {
            return nullptr;
        }
        auto name = program_name(head.data());
        return std::make_unique<TaRuntime>(builtin_program(name.value_or("")));
    };
}

}  // namespace stackvisor::ta
