// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/fuzz.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include "stackvisor/error.hpp"
#include "stackvisor/image.hpp"
#include "stackvisor/sim.hpp"
#include "stackvisor/ta_runtime.hpp"
#include "stackvisor/wallet.hpp"

namespace stackvisor {

namespace {

// Full memory-shadow comparisons are costly; run them every this many ops.
constexpr std::uint64_t kShadowInterval = 64;

constexpr const char* kPrograms[] = {"echo", "counter", "wallet", "rogue"};

class Fuzzer {
public:
    explicit Fuzzer(const FuzzConfig& config)
        : config_(config), sim_(make_config(config)), monitor_(sim_.hv, &sim_.os), rng_(config.seed)
    {
    }

    FuzzReport run()
    {
        report_.seed = config_.seed;
        for (std::uint64_t i = 0; i < config_.ops; ++i) {
            step_ = i;
            try {
                one_op();
            } catch (const Error&) {
                ++report_.rejected;
            } catch (const std::exception& e) {
                internal_failure("unexpected exception", e.what());
            }
            monitor_.check_now();
            if (i % kShadowInterval == kShadowInterval - 1) {
                monitor_.check_shadow();
            }
            report_.ops_run = i + 1;
            if (!monitor_.ok() || own_failure_) {
                break;
            }
        }
        if (monitor_.ok() && !own_failure_) {
            monitor_.check_shadow();
        }
        report_.monitor_checks = monitor_.checks();
        if (!monitor_.ok() || own_failure_) {
            report_.failing_step = step_;
            report_.violation = own_failure_ ? *own_failure_ : monitor_.violations().front();
            report_.reproducer = "stackvisor fuzz --seed " + std::to_string(config_.seed) + " --ops " +
                                 std::to_string(step_ + 1) + (config_.skip_zeroize ? " --mutate skip-zeroize" : "");
        }
        report_.pass = !report_.failing_step.has_value();
        return std::move(report_);
    }

private:
    static SimConfig make_config(const FuzzConfig& c)
    {
        SimConfig sc;
        sc.machine.frames = c.frames;
        sc.machine.pcpus = c.pcpus;
        sc.hypervisor.skip_zeroize = c.skip_zeroize;
        return sc;
    }

    std::uint64_t pick(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng_); }
    bool chance(unsigned percent) { return pick(100) < percent; }

    Bytes random_bytes(std::size_t n)
    {
        Bytes b(n);
        for (auto& v : b) {
            v = static_cast<std::uint8_t>(pick(256));
        }
        return b;
    }

    void count(const char* op) { ++report_.op_counts[op]; }

    void internal_failure(std::string check, std::string detail)
    {
        if (!own_failure_) {
            own_failure_ = Violation{sim_.hv.steps(), std::move(check), std::move(detail)};
        }
    }

    /// Some open fd, or an invalid one now and then.
    int some_fd()
    {
        const auto fds = sim_.os.open_fds();
        if (fds.empty() || chance(3)) {
            return static_cast<int>(pick(PrimaryOs::kFirstFd + PrimaryOs::kMaxFds + 2));
        }
        return fds[pick(fds.size())];
    }

    void one_op()
    {
        const auto roll = pick(100);
        if (roll < 18) {
            op_create();
        } else if (roll < 50) {
            op_invoke();
        } else if (roll < 56) {
            op_resume();
        } else if (roll < 70) {
            op_destroy();
        } else if (roll < 80) {
            op_bad_hypercall();
        } else if (roll < 93) {
            op_adversary();
        } else {
            op_interrupt();
        }
    }

    void op_create()
    {
        count("create");
        const std::string program = kPrograms[pick(std::size(kPrograms))];
        const auto mem = static_cast<std::uint32_t>(pick(24));
        const auto channel = static_cast<std::uint32_t>(1 + pick(3));
        const std::size_t code = pick(3) == 0 ? pick(6000) : 0;
        const EnclaveImage image = builtin_image(program, mem, channel, code);
        const auto pcpu = static_cast<PcpuId>(pick(sim_.machine.pcpu_count()));
        const int fd = sim_.os.driver_create(image, pcpu);
        programs_[fd] = program;
        used_[fd] = false;
    }

    std::pair<std::uint32_t, Bytes> random_command(const std::string& program, std::size_t capacity)
    {
        if (chance(5)) {
            return {static_cast<std::uint32_t>(pick(10)), random_bytes(chance(30) ? capacity + 1 : pick(40))};
        }
        if (program == "echo") {
            return {chance(85) ? ta::kEchoCmd : ta::kEchoFaultCmd, random_bytes(pick(std::min<std::size_t>(capacity, 600)))};
        }
        if (program == "counter") {
            return {chance(70) ? ta::kCounterIncrement : ta::kCounterGet, {}};
        }
        if (program == "wallet") {
            const auto key = static_cast<std::uint32_t>(pick(4));
            switch (pick(6)) {
            case 0: return {wallet::kCreateMasterKey, random_bytes(1 + pick(32))};
            case 1: return {wallet::kDeriveKey, {}};
            case 2: return {wallet::kGetAddress, wallet::key_id_arg(key)};
            case 3: return {wallet::kGetPubkey, wallet::key_id_arg(key)};
            case 4: return {wallet::kSign, wallet::sign_args(key, random_bytes(pick(64)))};
            default: return {wallet::kVerify, wallet::verify_args(key, random_bytes(wallet::kTagLen), random_bytes(pick(64)))};
            }
        }
        // rogue: escalation attempts against random handles, or probes.
        switch (pick(4)) {
        case 0: return {ta::kRogueCreate, {}};
        case 1:
        case 2: {
            Bytes h(8);
            const std::uint64_t handle = pick(8);
            for (int i = 0; i < 8; ++i) {
                h[i] = static_cast<std::uint8_t>(handle >> (8 * i));
            }
            return {pick(2) == 0 ? ta::kRogueInvoke : ta::kRogueDestroy, h};
        }
        default: {
            Bytes ipas;
            for (int n = 0; n < 4; ++n) {
                const std::uint64_t ipa = pick(sim_.machine.frame_count() + 64) << kPageShift;
                for (int i = 0; i < 8; ++i) {
                    ipas.push_back(static_cast<std::uint8_t>(ipa >> (8 * i)));
                }
            }
            return {ta::kRogueProbe, ipas};
        }
        }
    }

    void check_rogue(const std::string& program, std::uint32_t cmd, const InvokeResult& r)
    {
        if (program != "rogue" || r.status != ChannelStatus::Done) {
            return;
        }
        if (cmd == ta::kRogueCreate || cmd == ta::kRogueInvoke || cmd == ta::kRogueDestroy) {
            const std::string got(r.payload.begin(), r.payload.end());
            if (got != "PrivilegeViolation") {
                internal_failure("privilege", "enclave hypercall returned " + got);
            }
        }
    }

    void op_invoke()
    {
        count("invoke");
        const int fd = some_fd();
        const auto it = programs_.find(fd);
        const std::string program = it == programs_.end() ? "echo" : it->second;
        std::size_t capacity = kPageSize - kChannelHeaderSize;
        if (sim_.os.fd_table().contains(fd)) {
            const auto& e = sim_.os.fd(fd);
            capacity = e.channel_ipa.size() * kPageSize - kChannelHeaderSize;
            if (chance(15)) {
                sim_.hv.arm_interrupt(e.pcpu, sim_.hv.primary_vcpu(e.pcpu), pick(6));
            }
        }
        auto [cmd, args] = random_command(program, capacity);
        const auto r = sim_.os.driver_invoke(fd, cmd, args);
        used_[fd] = true;
        check_rogue(program, cmd, r);
        if (program == "echo" && cmd == ta::kEchoCmd && r.status == ChannelStatus::Done && r.payload != args) {
            internal_failure("echo", "echo returned different bytes");
        }
    }

    void op_resume()
    {
        count("resume");
        sim_.os.driver_resume(some_fd());
    }

    void op_destroy()
    {
        count("destroy");
        const int fd = some_fd();
        sim_.os.driver_destroy(fd);
        if (used_[fd]) {
            ++report_.lifecycles;
        }
        programs_.erase(fd);
        used_.erase(fd);
    }

    std::vector<IpaPage> free_pages(std::size_t n)
    {
        const auto& free = sim_.os.allocator().free_pages();
        std::vector<IpaPage> out(free.begin(), free.end());
        std::shuffle(out.begin(), out.end(), rng_);
        out.resize(std::min(n, out.size()));
        return out;
    }

    // Hypercalls the driver would never issue. Each must be refused and leave
    // every table and the allocator untouched.
    void op_bad_hypercall()
    {
        count("bad_hypercall");
        const auto pcpu = static_cast<PcpuId>(pick(sim_.machine.pcpu_count()));
        const VcpuId caller = sim_.hv.primary_vcpu(pcpu);
        Hypercall call = hc::EnclaveExit{};
        const ImageMeta meta{2, 1, 0, 0};
        std::vector<IpaPage> pages = free_pages(3);
        const auto fds = sim_.os.open_fds();
        auto variant = pick(7);
        if ((variant == 0 && fds.empty()) || (variant <= 2 && pages.size() < 3)) {
            variant = 6;
        }
        switch (variant) {
        case 0: {  // a page owned by a live enclave
            const auto& h = sim_.os.fd(fds[pick(fds.size())]).handle;
            pages[pick(3)] = pick(2) == 0 ? h.private_pages.front() : h.channel_pages.front();
            call = hc::CreateEnclave{pages, meta};
            break;
        }
        case 1:  // duplicate page
            pages[2] = pages[0];
            call = hc::CreateEnclave{pages, meta};
            break;
        case 2:  // beyond memory
            pages.back() = sim_.machine.frame_count() + pick(100);
            call = hc::CreateEnclave{pages, meta};
            break;
        case 3:  // too small
            pages.resize(std::min<std::size_t>(pages.size(), 2));
            call = hc::CreateEnclave{pages, meta};
            break;
        case 4:
            call = hc::DestroyEnclave{1000 + pick(1000)};
            break;
        case 5:
            call = hc::InvokeEnclave{1000 + pick(1000)};
            break;
        default:
            call = hc::EnclaveExit{};
            break;
        }
        const auto tables = sim_.hv.snapshot_tables();
        const OsAllocator alloc = sim_.os.allocator();
        const std::size_t live = sim_.hv.live_enclaves();
        try {
            sim_.hv.dispatch(caller, call);
        } catch (const Error&) {
            ++report_.rejected;
            if (sim_.hv.snapshot_tables() != tables || !(sim_.os.allocator() == alloc) ||
                sim_.hv.live_enclaves() != live) {
                internal_failure("atomicity", std::string("refused ") + std::string(hypercall_name(call)) +
                                                  " changed state");
            }
            return;
        }
        internal_failure("bad-hypercall", std::string(hypercall_name(call)) + " was accepted");
    }

    // A compromised primary pokes at memory it may or may not own.
    void op_adversary()
    {
        count("adversary");
        const VmId primary = sim_.hv.primary();
        const auto fds = sim_.os.open_fds();
        if (!fds.empty() && chance(70)) {
            const auto& h = sim_.os.fd(fds[pick(fds.size())]).handle;
            const IpaPage page = h.private_pages[pick(h.private_pages.size())];
            const Ipa ipa = (page << kPageShift) + pick(kPageSize);
            const bool leaked = chance(50) ? sim_.hv.read(primary, ipa, 1 + pick(64)).ok()
                                           : sim_.hv.write(primary, ipa, random_bytes(1 + pick(16))).ok();
            if (leaked) {
                internal_failure("isolation", "primary reached private ipa page " + std::to_string(page));
            }
            return;
        }
        // Otherwise read or scribble on free memory the primary still owns.
        const auto pages = free_pages(1);
        if (pages.empty()) {
            return;
        }
        const Ipa ipa = (pages.front() << kPageShift) + pick(kPageSize - 64);
        if (chance(50)) {
            sim_.hv.read(primary, ipa, 64);
        } else {
            sim_.hv.write(primary, ipa, random_bytes(1 + pick(63)));
        }
    }

    void op_interrupt()
    {
        count("interrupt");
        const auto pcpu = static_cast<PcpuId>(pick(sim_.machine.pcpu_count()));
        sim_.hv.deliver_interrupt(pcpu, sim_.hv.primary_vcpu(pcpu));
    }

    FuzzConfig config_;
    Simulation sim_;
    Monitor monitor_;
    std::mt19937_64 rng_;
    FuzzReport report_;
    std::uint64_t step_ = 0;
    std::optional<Violation> own_failure_;
    std::map<int, std::string> programs_;
    std::map<int, bool> used_;
};

}  // namespace

FuzzReport fuzz(const FuzzConfig& config)
{
    Fuzzer f(config);
    return f.run();
}

Json FuzzReport::to_json() const
{
    Json j{{"pass", pass},
           {"seed", seed},
           {"ops_run", ops_run},
           {"lifecycles", lifecycles},
           {"rejected", rejected},
           {"monitor_checks", monitor_checks},
           {"op_counts", op_counts}};
    if (failing_step) {
        j["failing_step"] = *failing_step;
        j["violation"] = {{"step", violation->step}, {"check", violation->check}, {"detail", violation->detail}};
        j["reproducer"] = reproducer;
    }
    return j;
}

}  // namespace stackvisor
