// SPDX-License-Identifier: Apache-2.0
// Command-line front end: scenario runner, attack suite, cost benchmark,
// fuzzer and enclave image packer.
#include <CLI11.hpp>

#include <atomic>
#include <fstream>
#include <iostream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>

#include "stackvisor/attack.hpp"
#include "stackvisor/bench.hpp"
#include "stackvisor/error.hpp"
#include "stackvisor/fuzz.hpp"
#include "stackvisor/image.hpp"
#include "stackvisor/scenario.hpp"
#include "stackvisor/ta_runtime.hpp"

namespace sv = stackvisor;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitError = 2;

struct RunOptions {
    std::vector<std::string> files;
    std::string trace;
    std::string trace_dir;
    std::optional<std::uint64_t> seed;
    unsigned jobs = 1;
    bool json = false;
};

std::string run_one(const RunOptions& opt, const std::string& file, bool& pass)
{
    std::ostringstream out;
    try {
        const sv::Scenario sc = sv::Scenario::load(file);
        std::ofstream trace_file;
        std::string trace_path = opt.trace;
        if (!opt.trace_dir.empty()) {
            trace_path = (std::filesystem::path(opt.trace_dir) /
                          (std::filesystem::path(file).stem().string() + ".jsonl"))
                             .string();
        }
        if (!trace_path.empty()) {
            trace_file.open(trace_path, std::ios::binary);
            if (!trace_file) {
                throw sv::Error(sv::Errc::InvalidArgument, "cannot write " + trace_path);
            }
        }
        const auto r = sv::run_scenario(sc, trace_path.empty() ? nullptr : &trace_file, opt.seed);
        pass = r.pass;
        std::size_t done = 0;
        for (const auto& resp : r.responses) {
            done += resp.status == sv::ChannelStatus::Done ? 1 : 0;
        }
        if (opt.json) {
            sv::Json j{{"scenario", sc.name},
                       {"file", file},
                       {"pass", r.pass},
                       {"events", r.events},
                       {"responses", r.responses.size()},
                       {"done", done},
                       {"faults", r.faults},
                       {"failures", r.failures}};
            sv::Json viol = sv::Json::array();
            for (const auto& v : r.violations) {
                viol.push_back({{"step", v.step}, {"check", v.check}, {"detail", v.detail}});
            }
            j["violations"] = viol;
            out << j.dump() << '\n';
        } else {
            out << (r.pass ? "PASS " : "FAIL ") << sc.name << ": " << r.events << " events, " << done << '/'
                << r.responses.size() << " responses done, " << r.faults << " faults";
            if (!trace_path.empty()) {
                out << ", trace " << trace_path;
            }
            out << '\n';
            for (const auto& f : r.failures) {
                out << "  failure: " << f << '\n';
            }
            for (const auto& v : r.violations) {
                out << "  violation at step " << v.step << " [" << v.check << "]: " << v.detail << '\n';
            }
        }
    } catch (const sv::Error& e) {
        pass = false;
        out << "ERROR " << file << ": " << e.what() << '\n';
    }
    return out.str();
}

int cmd_run(const RunOptions& opt)
{
    if (!opt.trace.empty() && opt.files.size() > 1) {
        std::cerr << "--trace takes a single scenario; use --trace-dir for several\n";
        return kExitError;
    }
    if (!opt.trace_dir.empty()) {
        std::filesystem::create_directories(opt.trace_dir);
    }
    // Each scenario owns its machine, so they run independently; output is
    // printed in input order.
    std::vector<std::string> outputs(opt.files.size());
    std::vector<char> passed(opt.files.size(), 0);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < opt.files.size(); i = next++) {
            bool pass = false;
            outputs[i] = run_one(opt, opt.files[i], pass);
            passed[i] = pass ? 1 : 0;
        }
    };
    const unsigned jobs = std::max(1U, std::min<unsigned>(opt.jobs, static_cast<unsigned>(opt.files.size())));
    std::vector<std::thread> pool;
    for (unsigned j = 1; j < jobs; ++j) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    bool all = true;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        std::cout << outputs[i];
        all = all && passed[i];
    }
    return all ? kExitPass : kExitFail;
}

int cmd_attack(bool json)
{
    const auto report = sv::attack_suite();
    if (json) {
        std::cout << report.to_json().dump(2) << '\n';
    } else {
        for (const auto& a : report.attacks) {
            std::cout << (a.pass ? "CONTAINED " : "BREACHED  ") << '(' << a.id << ") " << a.name << "\n    "
                      << a.contained << '/' << a.attempts << " contained; " << a.detail << '\n';
        }
        for (const auto& v : report.violations) {
            std::cout << "violation at step " << v.step << " [" << v.check << "]: " << v.detail << '\n';
        }
        std::cout << (report.pass ? "attack suite: 100% containment" : "attack suite: FAILED") << " in "
                  << report.seconds << " s\n";
    }
    return report.pass ? kExitPass : kExitFail;
}

std::string fmt_units(double v)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(0) << v;
    return s.str();
}

int cmd_bench(const std::vector<std::uint32_t>& pages, std::uint32_t reps, bool json)
{
    const auto report = sv::bench(pages, reps);
    if (json) {
        std::cout << report.to_json().dump(2) << '\n';
        return report.pass ? kExitPass : kExitFail;
    }
    std::cout << "ledger units, mean of " << report.reps
              << " runs (std-dev N/A: the simulator is deterministic, measured 0)\n";
    std::cout << std::left << std::setw(8) << "pages" << std::setw(12) << "invoke" << std::setw(12) << "create"
              << std::setw(12) << "destroy" << std::setw(16) << "destroy-create" << "ordered\n";
    for (const auto& r : report.rows) {
        std::cout << std::left << std::setw(8) << r.pages << std::setw(12) << fmt_units(r.invoke.mean)
                  << std::setw(12) << fmt_units(r.create.mean) << std::setw(12) << fmt_units(r.destroy.mean)
                  << std::setw(16) << fmt_units(r.destroy.mean - r.create.mean) << (r.ordered ? "yes" : "NO")
                  << '\n';
    }
    std::cout << "invoke < create < destroy at every size: " << (report.ordering ? "yes" : "NO") << '\n'
              << "invoke constant across sizes: " << (report.invoke_constant ? "yes" : "NO") << '\n'
              << std::setprecision(10) << "destroy-create vs pages*4096: slope " << report.slope << ", intercept "
              << report.intercept << ", R^2 " << report.r_squared << '\n';
    return report.pass ? kExitPass : kExitFail;
}

int cmd_fuzz(const sv::FuzzConfig& config, bool json)
{
    const auto report = sv::fuzz(config);
    if (json) {
        std::cout << report.to_json().dump(2) << '\n';
        return report.pass ? kExitPass : kExitFail;
    }
    std::cout << (report.pass ? "PASS" : "FAIL") << " fuzz seed " << report.seed << ": " << report.ops_run
              << " ops, " << report.lifecycles << " lifecycles, " << report.rejected << " rejected, "
              << report.monitor_checks << " invariant checks\n";
    if (!report.pass) {
        std::cout << "  first violation at op " << *report.failing_step << " (trace step "
                  << report.violation->step << ") [" << report.violation->check << "]: " << report.violation->detail
                  << "\n  reproduce: " << report.reproducer << '\n';
    }
    return report.pass ? kExitPass : kExitFail;
}

struct PackOptions {
    std::uint32_t mem_pages = 0;
    std::uint32_t channel_pages = 1;
    std::uint32_t entry_table_len = 0;
    std::string code;
    std::string program;
    std::size_t code_len = 0;
    std::string output;
};

int cmd_pack(const PackOptions& opt)
{
    sv::EnclaveImage img;
    img.channel_size_pages = opt.channel_pages;
    img.entry_cmd_table_len = opt.entry_table_len;
    if (!opt.code.empty()) {
        std::ifstream in(opt.code, std::ios::binary);
        if (!in) {
            std::cerr << "cannot read " << opt.code << '\n';
            return kExitError;
        }
        img.code_blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    } else {
        img.code_blob = sv::ta::make_code_blob(opt.program, std::max(opt.code_len, sv::ta::kProgramNameLen));
    }
    img.mem_size_pages = opt.mem_pages != 0
                             ? opt.mem_pages
                             : sv::ta::required_mem_pages(img.code_blob.size(), opt.channel_pages);
    // Round-trip through the parser so only valid images are written.
    const sv::Bytes bytes = img.serialize();
    sv::EnclaveImage::parse(bytes);
    img.save(opt.output);
    std::cout << "wrote " << opt.output << ": " << bytes.size() << " bytes, mem " << img.mem_size_pages
              << " pages, channel " << img.channel_size_pages << " pages, code " << img.code_blob.size()
              << " bytes\n";
    return kExitPass;
}

int cmd_inspect(const std::string& path)
{
    const auto img = sv::EnclaveImage::load(path);
    sv::Json j{{"version", img.version},
               {"mem_size_pages", img.mem_size_pages},
               {"channel_size_pages", img.channel_size_pages},
               {"entry_cmd_table_len", img.entry_cmd_table_len},
               {"code_blob_len", img.code_blob.size()},
               {"program", sv::ta::program_name(img.code_blob).value_or("")}};
    std::cout << j.dump(2) << '\n';
    return kExitPass;
}

std::vector<std::uint32_t> parse_pages(const std::string& list)
{
    std::vector<std::uint32_t> out;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');) {
        out.push_back(static_cast<std::uint32_t>(std::stoul(item)));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"stackvisor: enclave hypervisor simulator"};
    app.require_subcommand(1);

    RunOptions run;
    auto* run_cmd = app.add_subcommand("run", "Run scenario scripts and report a verdict for each");
    run_cmd->add_option("scenario", run.files, "Scenario file(s)")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--trace", run.trace, "Write the JSON-lines trace here (single scenario)");
    run_cmd->add_option("--trace-dir", run.trace_dir, "Write one <scenario>.jsonl trace per scenario here");
    run_cmd->add_option("--seed", run.seed, "Override the scenario seed");
    run_cmd->add_option("-j,--jobs", run.jobs, "Scenarios to run in parallel")->check(CLI::PositiveNumber);
    run_cmd->add_flag("--json", run.json, "One JSON object per scenario");

    bool attack_json = false;
    auto* attack_cmd = app.add_subcommand("attack", "Run the adversary playbook");
    attack_cmd->add_flag("--json", attack_json, "JSON report");

    std::string bench_pages = "16,64,256,1024";
    std::uint32_t bench_reps = 30;
    bool bench_json = false;
    auto* bench_cmd = app.add_subcommand("bench", "Ledger-unit cost of create/invoke/destroy");
    bench_cmd->add_option("--pages", bench_pages, "Comma-separated donation sizes in pages")->capture_default_str();
    bench_cmd->add_option("--reps", bench_reps, "Cycles per size")->capture_default_str()->check(CLI::PositiveNumber);
    bench_cmd->add_flag("--json", bench_json, "JSON report");

    sv::FuzzConfig fuzz_cfg;
    std::string mutate;
    bool fuzz_json = false;
    auto* fuzz_cmd = app.add_subcommand("fuzz", "Random operations with every invariant checked");
    fuzz_cmd->add_option("--ops", fuzz_cfg.ops, "Operations to generate")->capture_default_str();
    fuzz_cmd->add_option("--seed", fuzz_cfg.seed, "Random seed")->capture_default_str();
    fuzz_cmd->add_option("--frames", fuzz_cfg.frames, "Physical frames")->capture_default_str();
    fuzz_cmd->add_option("--pcpus", fuzz_cfg.pcpus, "Physical CPUs")->capture_default_str()->check(CLI::PositiveNumber);
    fuzz_cmd->add_option("--mutate", mutate, "Inject a known bug (skip-zeroize)")
        ->check(CLI::IsMember({"skip-zeroize"}));
    fuzz_cmd->add_flag("--json", fuzz_json, "JSON report");

    PackOptions pack;
    auto* pack_cmd = app.add_subcommand("pack-image", "Write an enclave image file");
    pack_cmd->add_option("--mem-pages", pack.mem_pages, "Private memory pages (default: what the TA needs)");
    pack_cmd->add_option("--channel-pages", pack.channel_pages, "Channel pages")->capture_default_str()
        ->check(CLI::PositiveNumber);
    pack_cmd->add_option("--entry-table-len", pack.entry_table_len, "Entry command table length")->capture_default_str();
    auto* code_opt = pack_cmd->add_option("--code", pack.code, "Code blob file")->check(CLI::ExistingFile);
    auto* program_opt =
        pack_cmd->add_option("--program", pack.program, "Generate the blob for a built-in TA")
            ->check(CLI::IsMember({"echo", "counter", "wallet", "rogue"}));
    pack_cmd->add_option("--code-len", pack.code_len, "Blob length when using --program");
    code_opt->excludes(program_opt);
    pack_cmd->add_option("-o,--output", pack.output, "Output image")->required();

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect-image", "Print an image header");
    inspect_cmd->add_option("image", inspect_path, "Image file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            return cmd_run(run);
        }
        if (*attack_cmd) {
            return cmd_attack(attack_json);
        }
        if (*bench_cmd) {
            return cmd_bench(parse_pages(bench_pages), bench_reps, bench_json);
        }
        if (*fuzz_cmd) {
            fuzz_cfg.skip_zeroize = mutate == "skip-zeroize";
            return cmd_fuzz(fuzz_cfg, fuzz_json);
        }
        if (*pack_cmd) {
            if (pack.code.empty() && pack.program.empty()) {
                std::cerr << "pack-image needs --code or --program\n";
                return kExitError;
            }
            return cmd_pack(pack);
        }
        if (*inspect_cmd) {
            return cmd_inspect(inspect_path);
        }
    } catch (const sv::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
