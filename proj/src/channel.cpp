// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/channel.hpp"

#include <algorithm>
#include <cstdio>
#include <string>

#include "stackvisor/error.hpp"

namespace stackvisor {

namespace {

void put_u32(std::uint8_t* p, std::uint32_t v) noexcept
{
    for (int i = 0; i < 4; ++i) {
        p[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

std::uint32_t get_u32(const std::uint8_t* p) noexcept
{
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
           std::uint32_t{p[3]} << 24;
}

std::string hex(ByteView bytes)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

}  // namespace

std::string_view to_string(ChannelStatus status) noexcept
{
    switch (status) {
    case ChannelStatus::Idle: return "Idle";
    case ChannelStatus::Request: return "Request";
    case ChannelStatus::Done: return "Done";
    case ChannelStatus::Error: return "Error";
    case ChannelStatus::Preempted: return "Preempted";
    }
    return "?";
}

std::optional<ChannelStatus> channel_status_from(std::uint32_t raw) noexcept
{
    if (raw > static_cast<std::uint32_t>(ChannelStatus::Preempted)) {
        return std::nullopt;
    }
    return static_cast<ChannelStatus>(raw);
}

bool channel_transition_allowed(ChannelStatus from, ChannelStatus to) noexcept
{
    using S = ChannelStatus;
    switch (from) {
    case S::Idle:
    case S::Done:
    case S::Error: return to == S::Request;
    case S::Request: return to == S::Done || to == S::Error || to == S::Preempted;
    // A preempted command finishes on re-invocation.
    case S::Preempted: return to == S::Done || to == S::Error;
    }
    return false;
}

std::array<std::uint8_t, kChannelHeaderSize> ChannelHeader::encode() const noexcept
{
    std::array<std::uint8_t, kChannelHeaderSize> out{};
    std::copy(kChannelMagic.begin(), kChannelMagic.end(), out.begin());
    put_u32(out.data() + 4, static_cast<std::uint32_t>(status));
    put_u32(out.data() + 8, cmd_id);
    put_u32(out.data() + 12, arg_len);
    put_u32(out.data() + 16, ret_len);
    return out;
}

std::optional<ChannelHeader> ChannelHeader::decode(ByteView bytes) noexcept
{
    if (bytes.size() < kChannelHeaderSize ||
        !std::equal(kChannelMagic.begin(), kChannelMagic.end(), bytes.begin())) {
        return std::nullopt;
    }
    auto status = channel_status_from(get_u32(bytes.data() + 4));
    if (!status) {
        return std::nullopt;
    }
    return ChannelHeader{*status, get_u32(bytes.data() + 8), get_u32(bytes.data() + 12),
                         get_u32(bytes.data() + 16)};
}

void VmPort::trace(Json detail)
{
    hv_.emit(EventKind::Channel, std::nullopt, std::nullopt, std::move(detail));
}

void GuestPort::trace(Json detail)
{
    // Emitted on behalf of the running vCPU.
    ctx_.trace(std::move(detail));
}

Channel::Channel(MemoryPort& port, std::vector<Ipa> page_bases)
    : port_(port), pages_(std::move(page_bases))
{
    if (pages_.empty()) {
        throw Error(Errc::BadChannel, "channel without pages");
    }
    for (Ipa base : pages_) {
        if ((base & kPageMask) != 0) {
            throw Error(Errc::BadChannel, "channel page not aligned");
        }
    }
}

Channel Channel::contiguous(MemoryPort& port, Ipa base, std::size_t bytes)
{
    std::vector<Ipa> pages;
    for (std::size_t off = 0; off < bytes; off += kPageSize) {
        pages.push_back(base + off);
    }
    return Channel(port, std::move(pages));
}

Bytes Channel::read_bytes(std::size_t offset, std::size_t len)
{
    if (offset > capacity() || len > capacity() - offset) {
        throw Error(Errc::BadChannel, "channel read out of bounds");
    }
    Bytes out;
    out.reserve(len);
    while (len > 0) {
        std::size_t page_off = offset % kPageSize;
        std::size_t chunk = std::min(len, kPageSize - page_off);
        auto r = port_.read(pages_[offset / kPageSize] + page_off, chunk);
        if (!r) {
            throw Error(Errc::BadChannel, "channel page faulted");
        }
        out.insert(out.end(), r.data().begin(), r.data().end());
        offset += chunk;
        len -= chunk;
    }
    return out;
}

void Channel::write_bytes(std::size_t offset, ByteView data)
{
    if (offset > capacity() || data.size() > capacity() - offset) {
        throw Error(Errc::BadChannel, "channel write out of bounds");
    }
    std::size_t done = 0;
    while (done < data.size()) {
        std::size_t page_off = (offset + done) % kPageSize;
        std::size_t chunk = std::min(data.size() - done, kPageSize - page_off);
        auto r = port_.write(pages_[(offset + done) / kPageSize] + page_off, data.subspan(done, chunk));
        if (!r) {
            throw Error(Errc::BadChannel, "channel page faulted");
        }
        done += chunk;
    }
}

ChannelHeader Channel::header()
{
    auto raw = read_bytes(0, kChannelHeaderSize);
    auto hdr = ChannelHeader::decode(raw);
    if (!hdr) {
        throw Error(Errc::BadChannel, "bad channel header");
    }
    return *hdr;
}

void Channel::write_status(ChannelHeader& hdr, ChannelStatus to)
{
    const ChannelStatus from = hdr.status;
    hdr.status = to;
    std::array<std::uint8_t, 4> word{};
    put_u32(word.data(), static_cast<std::uint32_t>(to));
    write_bytes(4, word);

    std::size_t payload = 0;
    if (to == ChannelStatus::Request) {
        payload = hdr.arg_len;
    } else if (to == ChannelStatus::Done) {
        payload = hdr.ret_len;
    }
    auto dump = read_bytes(0, kChannelHeaderSize + std::min(payload, payload_capacity()));
    port_.trace(Json{{"side", port_.side()},
                     {"from", to_string(from)},
                     {"to", to_string(to)},
                     {"bytes", hex(dump)}});
}

void Channel::init()
{
    ChannelHeader hdr;
    auto raw = hdr.encode();
    write_bytes(0, raw);
    port_.trace(Json{{"side", port_.side()}, {"from", nullptr}, {"to", "Idle"}, {"bytes", hex(raw)}});
}

void Channel::write_request(std::uint32_t cmd_id, ByteView args)
{
    ChannelHeader hdr = header();
    if (hdr.status == ChannelStatus::Request || hdr.status == ChannelStatus::Preempted) {
        throw Error(Errc::Busy, "channel has an outstanding request");
    }
    if (args.size() > payload_capacity()) {
        throw Error(Errc::TooLarge, std::to_string(args.size()) + " argument bytes, capacity " +
                                        std::to_string(payload_capacity()));
    }
    hdr.cmd_id = cmd_id;
    hdr.arg_len = static_cast<std::uint32_t>(args.size());
    hdr.ret_len = 0;
    auto raw = hdr.encode();
    // Status word stays as-is until the payload is in place.
    write_bytes(8, ByteView(raw).subspan(8));
    write_bytes(kChannelHeaderSize, args);
    write_status(hdr, ChannelStatus::Request);
}

std::pair<ChannelStatus, Bytes> Channel::read_response()
{
    ChannelHeader hdr = header();
    if (hdr.status != ChannelStatus::Done || hdr.ret_len > payload_capacity()) {
        return {hdr.status, {}};
    }
    return {hdr.status, read_bytes(kChannelHeaderSize, hdr.ret_len)};
}

void Channel::set_status(ChannelStatus status)
{
    ChannelHeader hdr = header();
    write_status(hdr, status);
}

ServedRequest Channel::serve()
{
    ChannelHeader hdr = header();
    if (hdr.status != ChannelStatus::Request) {
        throw Error(Errc::NoRequest, std::string("channel status ") + std::string(to_string(hdr.status)));
    }
    if (hdr.arg_len > payload_capacity()) {
        throw Error(Errc::TooLarge, "request arg_len exceeds channel");
    }
    return ServedRequest{hdr.cmd_id, read_bytes(kChannelHeaderSize, hdr.arg_len)};
}

void Channel::complete(ChannelStatus status, ByteView result)
{
    if (result.size() > payload_capacity()) {
        throw Error(Errc::TooLarge, "result exceeds channel");
    }
    ChannelHeader hdr = header();
    hdr.ret_len = static_cast<std::uint32_t>(result.size());
    std::array<std::uint8_t, 4> word{};
    put_u32(word.data(), hdr.ret_len);
    write_bytes(kChannelHeaderSize, result);
    write_bytes(16, word);
    write_status(hdr, status);
}

}  // namespace stackvisor
