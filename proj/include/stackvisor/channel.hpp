// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "stackvisor/hypervisor.hpp"

namespace stackvisor {

// Wire layout, little-endian throughout:
//   0  magic   "BECH"
//   4  status  u32
//   8  cmd_id  u32
//  12  arg_len u32
//  16  ret_len u32
//  20  payload
inline constexpr std::size_t kChannelHeaderSize = 20;
inline constexpr std::array<std::uint8_t, 4> kChannelMagic{'B', 'E', 'C', 'H'};

enum class ChannelStatus : std::uint32_t {
    Idle = 0,
    Request = 1,
    Done = 2,
    Error = 3,
    Preempted = 4,
};

std::string_view to_string(ChannelStatus status) noexcept;
std::optional<ChannelStatus> channel_status_from(std::uint32_t raw) noexcept;
/// Whether `from -> to` is a legal status transition.
bool channel_transition_allowed(ChannelStatus from, ChannelStatus to) noexcept;

struct ChannelHeader {
    ChannelStatus status = ChannelStatus::Idle;
    std::uint32_t cmd_id = 0;
    std::uint32_t arg_len = 0;
    std::uint32_t ret_len = 0;

    std::array<std::uint8_t, kChannelHeaderSize> encode() const noexcept;
    /// Fails on short input, wrong magic or an unknown status value.
    static std::optional<ChannelHeader> decode(ByteView bytes) noexcept;

    friend bool operator==(const ChannelHeader&, const ChannelHeader&) = default;
};

/// Guest-memory accessor a channel endpoint talks through.
class MemoryPort {
public:
    virtual ~MemoryPort() = default;
    virtual MemResult read(Ipa ipa, std::size_t len) = 0;
    virtual MemResult write(Ipa ipa, ByteView data) = 0;
    virtual void trace(Json detail) = 0;
    virtual std::string_view side() const = 0;
};

/// Accesses made by a VM from outside guest execution (the primary's driver).
class VmPort final : public MemoryPort {
public:
    VmPort(Hypervisor& hv, VmId vm) : hv_(hv), vm_(vm) {}
    MemResult read(Ipa ipa, std::size_t len) override { return hv_.read(vm_, ipa, len); }
    MemResult write(Ipa ipa, ByteView data) override { return hv_.write(vm_, ipa, data); }
    void trace(Json detail) override;
    std::string_view side() const override { return "primary"; }

private:
    Hypervisor& hv_;
    VmId vm_;
};

/// Accesses made by running guest code.
class GuestPort final : public MemoryPort {
public:
    explicit GuestPort(GuestContext& ctx) : ctx_(ctx) {}
    MemResult read(Ipa ipa, std::size_t len) override { return ctx_.read(ipa, len); }
    MemResult write(Ipa ipa, ByteView data) override { return ctx_.write(ipa, data); }
    void trace(Json detail) override;
    std::string_view side() const override { return "enclave"; }

private:
    GuestContext& ctx_;
};

struct ServedRequest {
    std::uint32_t cmd_id = 0;
    Bytes args;
};

// One endpoint of the shared command channel. The region is a list of
// page-aligned IPAs in the endpoint's own address space; they need not be
// contiguous.
class Channel {
public:
    Channel(MemoryPort& port, std::vector<Ipa> page_bases);
    /// Contiguous region of `bytes` starting at `base`.
    static Channel contiguous(MemoryPort& port, Ipa base, std::size_t bytes);

    std::size_t capacity() const noexcept { return pages_.size() * kPageSize; }
    std::size_t payload_capacity() const noexcept { return capacity() - kChannelHeaderSize; }

    /// Writes an Idle header over the region.
    void init();
    ChannelHeader header();

    // application side
    void write_request(std::uint32_t cmd_id, ByteView args);
    std::pair<ChannelStatus, Bytes> read_response();
    /// Overwrites only the status word.
    void set_status(ChannelStatus status);

    // TA side
    ServedRequest serve();
    void complete(ChannelStatus status, ByteView result);

private:
    Bytes read_bytes(std::size_t offset, std::size_t len);
    void write_bytes(std::size_t offset, ByteView data);
    void write_status(ChannelHeader& hdr, ChannelStatus to);

    MemoryPort& port_;
    std::vector<Ipa> pages_;
};

}  // namespace stackvisor
