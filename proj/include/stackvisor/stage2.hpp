// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <variant>

#include "stackvisor/machine.hpp"

namespace stackvisor {

using IpaPage = std::uint64_t;
using Ipa = std::uint64_t;
using PhysAddr = std::uint64_t;

enum class Access { Read, Write, Execute };

std::string_view to_string(Access access) noexcept;

struct Perms {
    bool read = false;
    bool write = false;
    bool execute = false;

    bool any() const noexcept { return read || write || execute; }
    bool allows(Access access) const noexcept;

    friend bool operator==(const Perms&, const Perms&) = default;
};

inline constexpr Perms kPermsRW{true, true, false};
inline constexpr Perms kPermsRWX{true, true, true};
inline constexpr Perms kPermsRO{true, false, false};

struct Stage2Entry {
    FrameNumber frame = 0;
    Perms perms{};

    friend bool operator==(const Stage2Entry&, const Stage2Entry&) = default;
};

enum class FaultKind { Unmapped, PermissionDenied };

std::string_view to_string(FaultKind kind) noexcept;

struct AccessFault {
    VmId vm = 0;
    Ipa ipa = 0;
    Access access = Access::Read;
    FaultKind kind = FaultKind::Unmapped;

    friend bool operator==(const AccessFault&, const AccessFault&) = default;
};

using Stage2Snapshot = std::map<IpaPage, Stage2Entry>;
using Translation = std::variant<PhysAddr, AccessFault>;

// Single-level stage-2 map from guest IPA pages to machine frames. Every entry
// update is charged one pt_op on the owning machine's ledger.
class Stage2Table {
public:
    Stage2Table(VmId owner, PhysicalMachine& machine) : owner_(owner), machine_(&machine) {}

    VmId owner() const noexcept { return owner_; }

    void map(IpaPage ipa_page, FrameNumber frame, Perms perms);
    FrameNumber unmap(IpaPage ipa_page);
    /// Rewrites the permissions of an existing entry; returns the old ones.
    Perms protect(IpaPage ipa_page, Perms perms);

    Translation translate(Ipa ipa, Access access) const;
    std::optional<Stage2Entry> lookup(IpaPage ipa_page) const;

    const Stage2Snapshot& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

private:
    VmId owner_;
    PhysicalMachine* machine_;
    Stage2Snapshot entries_;
};

/// Outcome of a guest memory access: the bytes read (empty for writes), or the
/// fault that stopped it.
class MemResult {
public:
    MemResult() = default;
    explicit MemResult(Bytes data) : data_(std::move(data)) {}
    explicit MemResult(AccessFault fault) : fault_(fault) {}

    bool ok() const noexcept { return !fault_.has_value(); }
    explicit operator bool() const noexcept { return ok(); }
    const std::optional<AccessFault>& fault() const noexcept { return fault_; }
    const Bytes& data() const noexcept { return data_; }
    Bytes& data() noexcept { return data_; }

private:
    Bytes data_;
    std::optional<AccessFault> fault_;
};

/// One page-sized slice of a guest access, as resolved by stage-2.
struct AccessSlice {
    Ipa ipa = 0;
    FrameNumber frame = 0;
    std::size_t offset = 0;
    std::size_t len = 0;
};

/// Guest read (len bytes) or write (data) through `table`. Accesses crossing
/// page boundaries are translated page by page; the first faulting page stops
/// the access and nothing from that page onward is written. Optional `slices`
/// receives every page slice that was performed.
MemResult vm_mem_access(PhysicalMachine& machine, const Stage2Table& table, Ipa ipa,
                        Access access, std::size_t len, ByteView data = {},
                        std::vector<AccessSlice>* slices = nullptr);

inline MemResult vm_read(PhysicalMachine& machine, const Stage2Table& table, Ipa ipa,
                         std::size_t len)
{
    return vm_mem_access(machine, table, ipa, Access::Read, len);
}

inline MemResult vm_write(PhysicalMachine& machine, const Stage2Table& table, Ipa ipa,
                          ByteView data)
{
    return vm_mem_access(machine, table, ipa, Access::Write, data.size(), data);
}

}  // namespace stackvisor
