// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/scenario.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "stackvisor/error.hpp"
#include "stackvisor/image.hpp"
#include "stackvisor/scan.hpp"
#include "stackvisor/trace.hpp"
#include "stackvisor/wallet.hpp"

namespace stackvisor {

namespace {

struct OpShape {
    std::size_t positional;
    std::set<std::string> keywords;  // each takes one value
    std::set<std::string> flags;
};

const std::map<std::string, OpShape>& op_shapes()
{
    static const std::map<std::string, OpShape> shapes{
        {"image", {3, {"mem", "channel", "code"}, {}}},
        {"create", {2, {"pcpu", "expect"}, {}}},
        {"invoke", {3, {"expect", "payload"}, {}}},
        {"resume", {1, {"expect", "payload"}, {}}},
        {"destroy", {1, {"expect"}, {}}},
        {"irq", {1, {"target"}, {}}},
        {"irq-after", {2, {"target"}, {}}},
        {"probe-private", {1, {}, {}}},
        {"probe-reclaimed", {1, {}, {}}},
        {"scan-secret", {1, {}, {"all"}}},
    };
    return shapes;
}

[[noreturn]] void parse_error(std::size_t line, const std::string& what)
{
    throw Error(Errc::ScenarioParseError, "line " + std::to_string(line) + ": " + what);
}

std::optional<std::uint64_t> to_u64(std::string_view s)
{
    std::uint64_t v = 0;
    int base = 10;
    if (s.starts_with("0x")) {
        s.remove_prefix(2);
        base = 16;
    }
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
        return std::nullopt;
    }
    return v;
}

std::uint64_t need_u64(std::size_t line, const std::string& s)
{
    auto v = to_u64(s);
    if (!v) {
        parse_error(line, "expected a number, got '" + s + "'");
    }
    return *v;
}

std::optional<std::string> keyword(const ScenarioStep& step, std::string_view key, std::size_t positional)
{
    for (std::size_t i = positional; i + 1 < step.args.size(); ++i) {
        if (step.args[i] == key) {
            return step.args[i + 1];
        }
    }
    return std::nullopt;
}

bool has_flag(const ScenarioStep& step, std::string_view flag, std::size_t positional)
{
    for (std::size_t i = positional; i < step.args.size(); ++i) {
        if (step.args[i] == flag) {
            return true;
        }
    }
    return false;
}

void validate(const ScenarioStep& step)
{
    auto it = op_shapes().find(step.op);
    if (it == op_shapes().end()) {
        parse_error(step.line, "unknown step '" + step.op + "'");
    }
    const OpShape& shape = it->second;
    std::size_t positional = shape.positional;
    if (step.op == "image" && step.args.size() >= 2 && step.args[1] == "file") {
        positional = 3;
    } else if (step.op == "image") {
        positional = 2;
    }
    if (step.args.size() < positional) {
        parse_error(step.line, step.op + " needs " + std::to_string(positional) + " arguments");
    }
    for (std::size_t i = positional; i < step.args.size();) {
        const auto& k = step.args[i];
        if (shape.flags.contains(k)) {
            ++i;
        } else if (shape.keywords.contains(k) && i + 1 < step.args.size()) {
            i += 2;
        } else {
            parse_error(step.line, "unexpected '" + k + "' in " + step.op);
        }
    }
    auto numeric = [&](std::size_t idx) { need_u64(step.line, step.args[idx]); };
    if (step.op == "invoke") {
        numeric(1);
    } else if (step.op == "irq") {
        numeric(0);
    } else if (step.op == "irq-after") {
        numeric(0);
        numeric(1);
    }
    for (const char* k : {"mem", "channel", "code", "pcpu"}) {
        if (auto v = keyword(step, k, positional)) {
            need_u64(step.line, *v);
        }
    }
}

std::size_t positional_count(const ScenarioStep& step)
{
    if (step.op == "image") {
        return step.args.size() >= 2 && step.args[1] == "file" ? 3 : 2;
    }
    return op_shapes().at(step.op).positional;
}

Bytes from_hex(std::string_view s)
{
    if (s.size() % 2 != 0) {
        throw Error(Errc::ScenarioParseError, "odd-length hex");
    }
    Bytes out;
    for (std::size_t i = 0; i < s.size(); i += 2) {
        std::uint8_t b = 0;
        auto [p, ec] = std::from_chars(s.data() + i, s.data() + i + 2, b, 16);
        if (ec != std::errc() || p != s.data() + i + 2) {
            throw Error(Errc::ScenarioParseError, "bad hex '" + std::string(s) + "'");
        }
        out.push_back(b);
    }
    return out;
}

std::vector<std::string> split(std::string_view s, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

std::optional<ChannelStatus> status_named(std::string_view s)
{
    if (s == "done") return ChannelStatus::Done;
    if (s == "error") return ChannelStatus::Error;
    if (s == "preempted") return ChannelStatus::Preempted;
    if (s == "idle") return ChannelStatus::Idle;
    return std::nullopt;
}

// Run-time state of one scripted enclave.
struct ScriptEnclave {
    int fd = -1;
    EnclaveHandle handle;
    std::vector<FrameNumber> frames;  // frames donated, recorded at create
    std::optional<Bytes> wallet_seed;
    bool destroyed = false;
};

class Runner {
public:
    Runner(const Scenario& sc, std::ostream* trace, std::uint64_t seed)
        : sc_(sc), sim_(sc.config), writer_(trace), rng_(seed)
    {
        sim_.hv.add_observer(&writer_);
        monitor_.emplace(sim_.hv, &sim_.os);
    }

    ScenarioResult run()
    {
        for (const auto& step : sc_.steps) {
            try {
                execute(step);
            } catch (const Error& e) {
                result_.failures.push_back("line " + std::to_string(step.line) + ": " + e.what());
            }
        }
        monitor_->check_shadow();
        result_.violations = monitor_->violations();
        result_.faults = monitor_->faults_seen();
        result_.events = writer_.events();
        result_.ledger = sim_.machine.ledger();
        result_.pass = result_.failures.empty() && result_.violations.empty();
        sim_.hv.remove_observer(&writer_);
        return std::move(result_);
    }

private:
    void note(const ScenarioStep& step, Json detail)
    {
        Json d{{"line", step.line}, {"op", step.op}};
        for (auto& [k, v] : detail.items()) {
            d[k] = v;
        }
        sim_.hv.emit(EventKind::Note, std::nullopt, std::nullopt, std::move(d));
    }

    void failure(const ScenarioStep& step, const std::string& what)
    {
        result_.failures.push_back("line " + std::to_string(step.line) + ": " + what);
    }

    ScriptEnclave& enclave(const ScenarioStep& step, const std::string& label)
    {
        auto it = enclaves_.find(label);
        if (it == enclaves_.end()) {
            throw Error(Errc::ScenarioParseError,
                        "line " + std::to_string(step.line) + ": unknown enclave '" + label + "'");
        }
        return it->second;
    }

    Bytes build_arg(const ScenarioStep& step, const std::string& arg)
    {
        Bytes out;
        if (arg == "-") {
            return out;
        }
        for (const auto& part : split(arg, '+')) {
            Bytes piece;
            if (part.starts_with("hex:")) {
                piece = from_hex(std::string_view(part).substr(4));
            } else if (part.starts_with("text:")) {
                piece.assign(part.begin() + 5, part.end());
            } else if (part.starts_with("u32:")) {
                auto v = need_u64(step.line, part.substr(4));
                piece = wallet::key_id_arg(static_cast<std::uint32_t>(v));
            } else if (part.starts_with("u64:") || part.starts_with("handle:")) {
                std::uint64_t v = part.starts_with("u64:") ? need_u64(step.line, part.substr(4))
                                                           : enclave(step, part.substr(7)).handle.handle;
                for (int i = 0; i < 8; ++i) {
                    piece.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
                }
            } else if (part.starts_with("rand:")) {
                auto n = need_u64(step.line, part.substr(5));
                for (std::uint64_t i = 0; i < n; ++i) {
                    piece.push_back(static_cast<std::uint8_t>(rng_() & 0xFF));
                }
            } else if (part == "last" || part == "last~") {
                piece = last_payload_;
                if (part == "last~" && !piece.empty()) {
                    piece[0] ^= 0x01;
                }
            } else {
                throw Error(Errc::ScenarioParseError,
                            "line " + std::to_string(step.line) + ": bad argument part '" + part + "'");
            }
            out.insert(out.end(), piece.begin(), piece.end());
        }
        return out;
    }

    void check_status(const ScenarioStep& step, const InvokeResult& r)
    {
        result_.responses.push_back(r);
        if (auto want = keyword(step, "expect", positional_count(step))) {
            auto s = status_named(*want);
            if (!s) {
                throw Error(Errc::ScenarioParseError, "line " + std::to_string(step.line) +
                                                          ": unknown status '" + *want + "'");
            }
            if (*s != r.status) {
                failure(step, "expected " + *want + ", got " + std::string(to_string(r.status)));
            }
        }
        if (auto want = keyword(step, "payload", positional_count(step))) {
            if (build_arg(step, *want) != r.payload) {
                failure(step, "payload differs from " + *want);
            }
        }
        last_payload_ = r.payload;
    }

    // Runs `fn`; compares any Error against an "expect <name>" keyword.
    template <typename Fn>
    void expect_outcome(const ScenarioStep& step, Fn&& fn)
    {
        const auto want = keyword(step, "expect", positional_count(step)).value_or("ok");
        std::string got = "ok";
        try {
            fn();
        } catch (const Error& e) {
            got = std::string(to_string(e.code()));
        }
        note(step, Json{{"outcome", got}});
        if (got != want) {
            failure(step, "expected " + want + ", got " + got);
        }
    }

    VcpuId target_vcpu(const ScenarioStep& step, PcpuId pcpu)
    {
        auto t = keyword(step, "target", positional_count(step)).value_or("primary");
        if (t == "primary") {
            return sim_.hv.primary_vcpu(pcpu);
        }
        const auto& e = enclave(step, t);
        return sim_.hv.vm(e.handle.vm).vcpus.front();
    }

    void execute(const ScenarioStep& step)
    {
        const auto& a = step.args;
        const std::size_t pos = positional_count(step);
        if (step.op == "image") {
            EnclaveImage img;
            if (a[1] == "file") {
                auto path = std::filesystem::path(a[2]);
                img = EnclaveImage::load(path.is_absolute() ? path : sc_.base_dir / path);
            } else {
                auto kw = [&](const char* k, std::uint64_t dflt) {
                    auto v = keyword(step, k, pos);
                    return v ? need_u64(step.line, *v) : dflt;
                };
                img = builtin_image(a[1], static_cast<std::uint32_t>(kw("mem", 0)),
                                    static_cast<std::uint32_t>(kw("channel", 1)), kw("code", 0));
            }
            images_[a[0]] = std::move(img);
        } else if (step.op == "create") {
            auto it = images_.find(a[1]);
            if (it == images_.end()) {
                throw Error(Errc::ScenarioParseError,
                            "line " + std::to_string(step.line) + ": unknown image '" + a[1] + "'");
            }
            const auto pcpu = static_cast<PcpuId>(need_u64(step.line, keyword(step, "pcpu", pos).value_or("0")));
            expect_outcome(step, [&] {
                const int fd = sim_.os.driver_create(it->second, pcpu);
                ScriptEnclave e;
                e.fd = fd;
                e.handle = sim_.os.fd(fd).handle;
                for (const auto& [ipa, entry] : sim_.hv.vm(e.handle.vm).stage2.entries()) {
                    e.frames.push_back(entry.frame);
                }
                enclaves_[a[0]] = std::move(e);
            });
        } else if (step.op == "invoke") {
            auto& e = enclave(step, a[0]);
            const auto cmd = static_cast<std::uint32_t>(need_u64(step.line, a[1]));
            Bytes args = build_arg(step, a[2]);
            if (cmd == wallet::kCreateMasterKey) {
                e.wallet_seed = args;
            }
            auto r = sim_.os.driver_invoke(e.fd, cmd, args);
            note(step, Json{{"status", to_string(r.status)}, {"ret_len", r.payload.size()}});
            check_status(step, r);
        } else if (step.op == "resume") {
            auto r = sim_.os.driver_resume(enclave(step, a[0]).fd);
            note(step, Json{{"status", to_string(r.status)}, {"ret_len", r.payload.size()}});
            check_status(step, r);
        } else if (step.op == "destroy") {
            auto& e = enclave(step, a[0]);
            expect_outcome(step, [&] {
                sim_.os.driver_destroy(e.fd);
                e.destroyed = true;
            });
        } else if (step.op == "irq") {
            const auto pcpu = static_cast<PcpuId>(need_u64(step.line, a[0]));
            sim_.hv.deliver_interrupt(pcpu, target_vcpu(step, pcpu));
        } else if (step.op == "irq-after") {
            const auto pcpu = static_cast<PcpuId>(need_u64(step.line, a[0]));
            sim_.hv.arm_interrupt(pcpu, target_vcpu(step, pcpu), need_u64(step.line, a[1]));
        } else if (step.op == "probe-private") {
            const auto& e = enclave(step, a[0]);
            std::size_t contained = 0;
            const Bytes poke{0xEE};
            for (IpaPage page : e.handle.private_pages) {
                const bool r = !sim_.hv.read(sim_.hv.primary(), page << kPageShift, 1);
                const bool w = !sim_.hv.write(sim_.hv.primary(), page << kPageShift, poke);
                contained += (r && w) ? 1 : 0;
            }
            note(step, Json{{"pages", e.handle.private_pages.size()}, {"contained", contained}});
            if (contained != e.handle.private_pages.size()) {
                failure(step, "primary reached " +
                                  std::to_string(e.handle.private_pages.size() - contained) +
                                  " private pages");
            }
        } else if (step.op == "probe-reclaimed") {
            const auto& e = enclave(step, a[0]);
            std::size_t nonzero = 0;
            std::vector<IpaPage> pages = e.handle.private_pages;
            pages.insert(pages.end(), e.handle.channel_pages.begin(), e.handle.channel_pages.end());
            for (IpaPage page : pages) {
                auto r = sim_.hv.read(sim_.hv.primary(), page << kPageShift, kPageSize);
                if (!r) {
                    failure(step, "reclaimed page " + std::to_string(page) + " not readable");
                    continue;
                }
                nonzero += static_cast<std::size_t>(
                    std::count_if(r.data().begin(), r.data().end(), [](auto b) { return b != 0; }));
            }
            note(step, Json{{"pages", pages.size()}, {"nonzero_bytes", nonzero}});
            if (nonzero != 0) {
                failure(step, std::to_string(nonzero) + " nonzero bytes in reclaimed pages");
            }
        } else if (step.op == "scan-secret") {
            const auto& e = enclave(step, a[0]);
            if (!e.wallet_seed) {
                failure(step, "no wallet master key was created on " + a[0]);
                return;
            }
            const auto key = wallet::master_from_seed(*e.wallet_seed);
            const bool all = has_flag(step, "all", pos);
            const std::size_t hits = all ? count_in_memory(sim_.machine, key) : count_in_primary(sim_.hv, key);
            note(step, Json{{"scope", all ? "all" : "primary"}, {"hits", hits}});
            if (hits != 0) {
                failure(step, "master key found " + std::to_string(hits) + " times");
            }
        }
    }

    const Scenario& sc_;
    Simulation sim_;
    TraceWriter writer_;
    std::optional<Monitor> monitor_;
    std::mt19937_64 rng_;
    std::map<std::string, EnclaveImage> images_;
    std::map<std::string, ScriptEnclave> enclaves_;
    Bytes last_payload_;
    ScenarioResult result_;
};

}  // namespace

Scenario Scenario::parse(std::string_view text, std::string name)
{
    Scenario sc;
    sc.name = std::move(name);
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (auto hash = raw.find('#'); hash != std::string::npos) {
            raw.erase(hash);
        }
        std::istringstream words(raw);
        ScenarioStep step;
        step.line = line;
        if (!(words >> step.op)) {
            continue;
        }
        for (std::string w; words >> w;) {
            step.args.push_back(w);
        }
        if (step.op == "name") {
            std::string joined;
            for (const auto& w : step.args) {
                joined += (joined.empty() ? "" : " ") + w;
            }
            sc.name = joined;
        } else if (step.op == "seed") {
            if (step.args.size() != 1) {
                parse_error(line, "seed takes one value");
            }
            sc.seed = need_u64(line, step.args[0]);
        } else if (step.op == "machine") {
            if (!sc.steps.empty()) {
                parse_error(line, "machine must come before any step");
            }
            if (step.args.size() % 2 != 0) {
                parse_error(line, "machine takes key/value pairs");
            }
            for (std::size_t i = 0; i < step.args.size(); i += 2) {
                const auto v = need_u64(line, step.args[i + 1]);
                if (step.args[i] == "frames") {
                    sc.config.machine.frames = v;
                } else if (step.args[i] == "pcpus") {
                    sc.config.machine.pcpus = v;
                } else if (step.args[i] == "reserved") {
                    sc.config.reserved_pages = v;
                } else {
                    parse_error(line, "unknown machine key '" + step.args[i] + "'");
                }
            }
            if (sc.config.machine.frames == 0 || sc.config.machine.pcpus == 0) {
                parse_error(line, "machine needs frames and pcpus >= 1");
            }
        } else {
            validate(step);
            sc.steps.push_back(std::move(step));
        }
    }
    return sc;
}

Scenario Scenario::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(Errc::ScenarioParseError, "cannot open " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    Scenario sc = parse(buf.str(), path.stem().string());
    sc.base_dir = path.parent_path();
    return sc;
}

ScenarioResult run_scenario(const Scenario& scenario, std::ostream* trace,
                            std::optional<std::uint64_t> seed_override)
{
    Runner runner(scenario, trace, seed_override.value_or(scenario.seed));
    return runner.run();
}

}  // namespace stackvisor
