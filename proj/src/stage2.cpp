// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/stage2.hpp"

#include <algorithm>
#include <string>

#include "stackvisor/error.hpp"

namespace stackvisor {

std::string_view to_string(Access access) noexcept
{
    switch (access) {
    case Access::Read: return "read";
    case Access::Write: return "write";
    case Access::Execute: return "execute";
    }
    return "?";
}

std::string_view to_string(FaultKind kind) noexcept
{
    return kind == FaultKind::Unmapped ? "Unmapped" : "PermissionDenied";
}

bool Perms::allows(Access access) const noexcept
{
    switch (access) {
    case Access::Read: return read;
    case Access::Write: return write;
    case Access::Execute: return execute;
    }
    return false;
}

void Stage2Table::map(IpaPage ipa_page, FrameNumber frame, Perms perms)
{
    if (entries_.contains(ipa_page)) {
        throw Error(Errc::AlreadyMapped, "ipa page " + std::to_string(ipa_page));
    }
    if (frame >= machine_->frame_count()) {
        throw Error(Errc::BadFrame, "frame " + std::to_string(frame));
    }
    if (!perms.any()) {
        throw Error(Errc::InvalidArgument, "mapping without permissions");
    }
    entries_.emplace(ipa_page, Stage2Entry{frame, perms});
    machine_->ledger().pt_ops += 1;
}

FrameNumber Stage2Table::unmap(IpaPage ipa_page)
{
    auto it = entries_.find(ipa_page);
    if (it == entries_.end()) {
        throw Error(Errc::NotMapped, "ipa page " + std::to_string(ipa_page));
    }
    FrameNumber frame = it->second.frame;
    entries_.erase(it);
    machine_->ledger().pt_ops += 1;
    return frame;
}

Perms Stage2Table::protect(IpaPage ipa_page, Perms perms)
{
    auto it = entries_.find(ipa_page);
    if (it == entries_.end()) {
        throw Error(Errc::NotMapped, "ipa page " + std::to_string(ipa_page));
    }
    if (!perms.any()) {
        throw Error(Errc::InvalidArgument, "mapping without permissions");
    }
    Perms old = it->second.perms;
    it->second.perms = perms;
    machine_->ledger().pt_ops += 1;
    return old;
}

Translation Stage2Table::translate(Ipa ipa, Access access) const
{
    auto it = entries_.find(ipa >> kPageShift);
    if (it == entries_.end()) {
        return AccessFault{owner_, ipa, access, FaultKind::Unmapped};
    }
    if (!it->second.perms.allows(access)) {
        return AccessFault{owner_, ipa, access, FaultKind::PermissionDenied};
    }
    return PhysAddr{(it->second.frame << kPageShift) | (ipa & kPageMask)};
}

std::optional<Stage2Entry> Stage2Table::lookup(IpaPage ipa_page) const
{
    auto it = entries_.find(ipa_page);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    return it->second;
}

MemResult vm_mem_access(PhysicalMachine& machine, const Stage2Table& table, Ipa ipa,
                        Access access, std::size_t len, ByteView data,
                        std::vector<AccessSlice>* slices)
{
    if (access == Access::Write && data.size() != len) {
        throw Error(Errc::InvalidArgument, "write length mismatch");
    }
    Bytes out;
    if (access != Access::Write) {
        out.reserve(len);
    }
    std::size_t done = 0;
    while (done < len) {
        Ipa cur = ipa + done;
        std::size_t offset = cur & kPageMask;
        std::size_t chunk = std::min(len - done, kPageSize - offset);
        auto tr = table.translate(cur, access);
        if (const auto* fault = std::get_if<AccessFault>(&tr)) {
            return MemResult(*fault);
        }
        FrameNumber frame = std::get<PhysAddr>(tr) >> kPageShift;
        if (access == Access::Write) {
            machine.write_frame(frame, offset, data.subspan(done, chunk));
        } else {
            auto bytes = machine.read_frame(frame, offset, chunk);
            out.insert(out.end(), bytes.begin(), bytes.end());
        }
        if (slices != nullptr) {
            slices->push_back(AccessSlice{cur, frame, offset, chunk});
        }
        done += chunk;
    }
    return MemResult(std::move(out));
}

}  // namespace stackvisor
