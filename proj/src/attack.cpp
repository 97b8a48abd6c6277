// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/attack.hpp"

#include <algorithm>
#include <chrono>

#include "stackvisor/scan.hpp"
#include "stackvisor/sim.hpp"
#include "stackvisor/ta_runtime.hpp"
#include "stackvisor/wallet.hpp"

namespace stackvisor {

namespace {

Bytes u64_arg(std::uint64_t v)
{
    Bytes out(8);
    for (int i = 0; i < 8; ++i) {
        out[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    return out;
}

AttackOutcome outcome(std::string id, std::string name)
{
    AttackOutcome o;
    o.id = std::move(id);
    o.name = std::move(name);
    return o;
}

std::string text_of(const Bytes& b) { return std::string(b.begin(), b.end()); }

std::vector<FrameNumber> frames_of(const Hypervisor& hv, VmId vm)
{
    std::vector<FrameNumber> out;
    for (const auto& [ipa, entry] : hv.vm(vm).stage2.entries()) {
        out.push_back(entry.frame);
    }
    return out;
}

}  // namespace

Json AttackReport::to_json() const
{
    Json attacks_json = Json::array();
    for (const auto& a : attacks) {
        attacks_json.push_back({{"id", a.id},
                                {"name", a.name},
                                {"attempts", a.attempts},
                                {"contained", a.contained},
                                {"detail", a.detail},
                                {"pass", a.pass}});
    }
    Json viol = Json::array();
    for (const auto& v : violations) {
        viol.push_back({{"step", v.step}, {"check", v.check}, {"detail", v.detail}});
    }
    return Json{{"attacks", attacks_json}, {"violations", viol}, {"seconds", seconds}, {"pass", pass}};
}

AttackReport attack_suite(const AttackConfig& config)
{
    const auto started = std::chrono::steady_clock::now();
    AttackReport report;

    SimConfig sc;
    sc.machine.frames = config.frames;
    Simulation sim(sc);
    Monitor monitor(sim.hv, &sim.os);
    const VmId primary = sim.hv.primary();

    const int wallet_fd = sim.os.driver_create(builtin_image("wallet", config.private_pages, 1));
    const EnclaveHandle wallet = sim.os.fd(wallet_fd).handle;
    const std::vector<FrameNumber> wallet_frames = frames_of(sim.hv, wallet.vm);

    // (c) wallet session under a scanner that runs after every event.
    {
        const auto master = wallet::master_from_seed(config.wallet_seed);
        AttackOutcome c = outcome("c", "primary scans its memory for the master key mid-session");
        std::size_t in_enclave = 0;
        {
            SecretScanner scanner(sim.hv, Bytes(master.begin(), master.end()));
            const Bytes msg{'p', 'a', 'y', ' ', '1', '0'};
            std::size_t done = 0;
            auto step = [&](std::uint32_t cmd, const Bytes& args) {
                done += sim.os.driver_invoke(wallet_fd, cmd, args).status == ChannelStatus::Done ? 1 : 0;
            };
            step(wallet::kCreateMasterKey, config.wallet_seed);
            in_enclave = count_in_memory(sim.machine, master);
            step(wallet::kDeriveKey, {});
            step(wallet::kGetAddress, wallet::key_id_arg(0));
            step(wallet::kGetPubkey, wallet::key_id_arg(0));
            auto sig = sim.os.driver_invoke(wallet_fd, wallet::kSign, wallet::sign_args(0, msg));
            done += sig.status == ChannelStatus::Done ? 1 : 0;
            step(wallet::kVerify, wallet::verify_args(0, sig.payload, msg));
            c.attempts = scanner.scans();
            c.contained = scanner.scans() - std::min<std::uint64_t>(scanner.scans(), scanner.hits());
            c.pass = scanner.hits() == 0 && in_enclave > 0 && done == 6;
            c.detail = std::to_string(scanner.hits()) + " hits in primary-mapped frames over " +
                       std::to_string(scanner.scans()) + " scans; key present in enclave memory " +
                       std::to_string(in_enclave) + "x; " + std::to_string(done) + "/6 commands done";
        }
        report.attacks.push_back(std::move(c));
    }

    // (a) every private page, read and write.
    {
        AttackOutcome a = outcome("a", "primary reads/writes every donated private page");
        const Bytes poke{0xEE};
        std::uint64_t read_faults = 0;
        std::uint64_t write_faults = 0;
        for (IpaPage page : wallet.private_pages) {
            read_faults += sim.hv.read(primary, page << kPageShift, kPageSize) ? 0 : 1;
            write_faults += sim.hv.write(primary, page << kPageShift, poke) ? 0 : 1;
        }
        const std::uint64_t n = wallet.private_pages.size();
        a.attempts = 2 * n;
        a.contained = read_faults + write_faults;
        a.pass = n >= config.private_pages && a.contained == a.attempts;
        a.detail = std::to_string(read_faults) + "/" + std::to_string(n) + " read faults, " +
                   std::to_string(write_faults) + "/" + std::to_string(n) + " write faults, 0 successful reads" +
                   (a.pass ? "" : " (LEAK)");
        report.attacks.push_back(std::move(a));
    }

    // (d) and (e) from a malicious TA.
    {
        const int rogue_fd = sim.os.driver_create(builtin_image("rogue"));
        const EnclaveHandle rogue = sim.os.fd(rogue_fd).handle;
        AttackOutcome d = outcome("d", "enclave issues privileged hypercalls");
        const std::vector<std::pair<std::uint32_t, Bytes>> calls{
            {ta::kRogueCreate, {}},
            {ta::kRogueInvoke, u64_arg(wallet.handle)},
            {ta::kRogueDestroy, u64_arg(wallet.handle)},
        };
        for (const auto& [cmd, args] : calls) {
            auto r = sim.os.driver_invoke(rogue_fd, cmd, args);
            ++d.attempts;
            const std::string got = text_of(r.payload);
            d.contained += (r.status == ChannelStatus::Done && got == "PrivilegeViolation") ? 1 : 0;
            d.detail += (d.detail.empty() ? "" : ", ") + got;
        }
        d.pass = d.contained == d.attempts;
        report.attacks.push_back(std::move(d));

        // IPAs past the rogue's donation: its next pages, the wallet's and the
        // primary's IPAs of the wallet's private pages, and the top of memory.
        AttackOutcome e = outcome("e", "enclave touches IPAs outside its donation");
        const std::size_t own = sim.hv.vm(rogue.vm).stage2.size();
        Bytes probe;
        std::vector<Ipa> targets;
        for (std::size_t i = 0; i < 8; ++i) {
            targets.push_back((own + i) << kPageShift);
        }
        for (std::size_t i = 0; i < wallet.private_pages.size(); i += 32) {
            targets.push_back(wallet.private_pages[i] << kPageShift);
        }
        targets.push_back(wallet.channel_pages.front() << kPageShift);
        targets.push_back((config.frames - 1) << kPageShift);
        targets.push_back(Ipa{1} << 40);
        // Keep the argument within the channel payload.
        const std::size_t max_targets =
            (sim.hv.vm(rogue.vm).meta.channel_pages * kPageSize - kChannelHeaderSize) / 8;
        if (targets.size() > max_targets) {
            targets.resize(max_targets);
        }
        for (Ipa t : targets) {
            const Bytes b = u64_arg(t);
            probe.insert(probe.end(), b.begin(), b.end());
        }
        auto r = sim.os.driver_invoke(rogue_fd, ta::kRogueProbe, probe);
        e.attempts = targets.size();
        if (r.status == ChannelStatus::Done && r.payload.size() == targets.size()) {
            e.contained = static_cast<std::uint64_t>(
                std::count(r.payload.begin(), r.payload.end(), ta::kProbeContained));
        }
        e.pass = e.contained == e.attempts;
        e.detail = std::to_string(e.contained) + "/" + std::to_string(e.attempts) +
                   " out-of-donation IPAs faulted for both read and write";
        report.attacks.push_back(std::move(e));
        sim.os.driver_destroy(rogue_fd);
    }

    // (b) after destroy: reclaimed pages hold nothing.
    {
        AttackOutcome b = outcome("b", "primary inspects reclaimed pages after destroy");
        const auto master = wallet::master_from_seed(config.wallet_seed);
        sim.os.driver_destroy(wallet_fd);
        std::size_t nonzero = 0;
        std::size_t unreadable = 0;
        std::vector<IpaPage> pages = wallet.private_pages;
        pages.insert(pages.end(), wallet.channel_pages.begin(), wallet.channel_pages.end());
        for (IpaPage page : pages) {
            auto r = sim.hv.read(primary, page << kPageShift, kPageSize);
            if (!r) {
                ++unreadable;
                continue;
            }
            nonzero += static_cast<std::size_t>(
                std::count_if(r.data().begin(), r.data().end(), [](auto v) { return v != 0; }));
        }
        const std::size_t key_hits = count_in_memory(sim.machine, master);
        b.attempts = pages.size();
        b.contained = pages.size() - unreadable;
        b.pass = nonzero == 0 && unreadable == 0 && key_hits == 0 &&
                 nonzero_bytes(sim.machine, wallet_frames) == 0;
        b.detail = std::to_string(nonzero) + " nonzero bytes in " + std::to_string(pages.size()) +
                   " reclaimed pages; master key occurrences anywhere in memory: " + std::to_string(key_hits);
        report.attacks.push_back(std::move(b));
    }

    monitor.check_shadow();
    report.violations = monitor.violations();
    std::sort(report.attacks.begin(), report.attacks.end(),
              [](const auto& x, const auto& y) { return x.id < y.id; });
    report.pass = report.violations.empty() &&
                  std::all_of(report.attacks.begin(), report.attacks.end(), [](const auto& a) { return a.pass; });
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace stackvisor
