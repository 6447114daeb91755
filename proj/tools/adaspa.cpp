// adaspa: experiment front end over the header-only library.
//
//   adaspa verify
//   adaspa pattern-compare [--config f.ini] [--seed N]
//   adaspa sweep | run | scaling | flops | show-config
//
// Exit status: 0 ok, 1 a verification check failed, 2 bad input.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "adaspa/adaspa.hpp"
#include "adaspa/settings.hpp"
#include "adaspa/summary.hpp"

namespace fs = std::filesystem;
using namespace adaspa;

namespace {

struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> sparsity;
    std::optional<std::string> block_size;
    std::optional<std::string> warmup;
    std::optional<std::string> key_steps;
    std::optional<std::string> head_adaptive;
    std::optional<std::string> row_wise;
    std::optional<std::string> text_sink;
    std::optional<std::string> compare_full;
};

// Which config section the search-shaped flags land in for a subcommand.
enum class Target { Search, Scaling, Flops };

Settings resolve(const Flags& f, Target target) {
    std::optional<fs::path> file;
    if (f.config) file = fs::path(*f.config);
    Config cfg = layered_config(file, [](const char* name) -> const char* { return std::getenv(name); });

    auto put = [&](const char* section, const char* key, const std::optional<std::string>& v, const char* flag) {
        if (v) cfg.set(section, key, *v, flag);
    };
    const char* sec = target == Target::Scaling ? "scaling" : "search";
    const char* sched = target == Target::Scaling ? "scaling" : "schedule";
    if (f.seed) cfg.set("workload", "seed", std::to_string(*f.seed), "--seed");
    put("experiment", "out", f.out, "--out");
    put(target == Target::Flops ? "flops" : sec, "sparsity", f.sparsity, "--sparsity");
    put(sec, "block_size", f.block_size, "--block-size");
    put(sched, "warmup", f.warmup, "--warmup");
    if (f.key_steps) {
        std::string list = *f.key_steps;
        for (char& c : list)
            if (c == ' ' || c == ';') c = ',';
        cfg.set(sched, "key_steps", list, "--key-steps");
    }
    put("search", "head_adaptive", f.head_adaptive, "--head-adaptive");
    put("search", "row_wise", f.row_wise, "--row-wise");
    put("search", "text_sink", f.text_sink, "--text-sink");
    put("experiment", "compare_full", f.compare_full, "--compare-full");
    return from_config(cfg);
}

Config resolved_config(const Flags& f, Target target) {
    return to_config(resolve(f, target));
}

fs::path write_output(const Settings& s, const std::string& name, const std::string& text) {
    const fs::path dir(s.out);
    fs::create_directories(dir);
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    std::cout << "wrote " << path.string() << "\n";
    return path;
}

int cmd_verify(const Flags& f, bool inject_fault) {
    const Settings s = resolve(f, Target::Search);
    const auto checks = run_verify(inject_fault, s.workload.seed);
    std::ostringstream csv;
    csv << csv_preamble("verify", s.workload.seed) << "check,passed,detail\n";
    bool ok = true;
    for (const auto& c : checks) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
        csv << c.name << "," << (c.passed ? 1 : 0) << "," << c.detail << "\n";
        ok = ok && c.passed;
    }
    write_output(s, "verify.csv", csv.str());
    std::cout << (ok ? "all checks passed" : "verification FAILED") << "\n";
    return ok ? 0 : 1;
}

int cmd_pattern_compare(const Flags& f) {
    const Settings s = resolve(f, Target::Search);
    const auto rows = pattern_compare(s.workload, s.pattern_sparsities, s.search.block_size);
    write_output(s, "pattern_compare.csv", pattern_compare_csv(rows, s.workload.seed));
    for (double sp : s.pattern_sparsities) {
        std::cout << "s=" << fmt_num(sp, 3);
        for (PatternKind k : all_pattern_kinds) std::cout << "  " << to_string(k) << "=" << fmt_num(mean_pattern_recall(rows, sp, k), 4);
        std::cout << "\n";
    }
    return 0;
}

int cmd_sweep(const Flags& f) {
    const Settings s = resolve(f, Target::Search);
    SweepOptions opt;
    opt.spec = s.workload;
    opt.config = s.search;
    opt.schedule = s.schedule;
    opt.sparsities = s.sweep_sparsities;
    opt.cost = s.cost;
    const auto rows = run_sweep(opt);
    write_output(s, "sweep.csv", sweep_csv(rows, s.workload.seed));
    for (const auto& r : rows) {
        std::cout << r.section << " s=" << fmt_num(r.sparsity, 3) << " adaptive=" << r.head_adaptive
                  << " warmup=" << r.warmup << " keys={" << join_steps(r.key_steps, ',') << "}"
                  << " recall=" << fmt_num(r.mean_recall, 4) << " dev=" << fmt_num(r.max_deviation, 4)
                  << " speedup=" << fmt_num(r.predicted_speedup, 4) << "\n";
    }
    return 0;
}

int cmd_run(const Flags& f) {
    const Settings s = resolve(f, Target::Search);
    const auto run = run_pipeline<double>(s.workload, s.schedule, s.search, s.compare_full);
    const auto estimate = estimate_speedup(s.workload.layout, s.schedule, s.search, s.cost);
    write_output(s, "steps.csv", step_reports_csv(run.reports, s.workload.seed));
    const auto summary = pipeline_summary_json(run, s.workload, s.schedule, s.search, estimate);
    write_output(s, "summary.json", summary.dump(2) + "\n");
    std::cout << "predicted attention speedup " << fmt_num(estimate.attention_speedup, 4) << " (analytic)\n";
    return 0;
}

int cmd_flops(const Flags& f, const std::optional<std::size_t>& length) {
    Settings s = resolve(f, Target::Flops);
    if (length) s.flops.length = *length;
    const auto e = estimate_flops(s.flops);
    write_output(s, "flops.json", flops_json(s.flops, e, s.workload.seed).dump(2) + "\n");
    std::cout << "dense attention " << fmt_num(e.dense_attention / 1e15, 6) << " PFLOPs, sparse "
              << fmt_num(e.sparse_attention / 1e15, 6) << " PFLOPs, attention share "
              << fmt_num(e.attention_share_dense, 4) << "\n";
    return 0;
}

int cmd_scaling(const Flags& f) {
    const Settings s = resolve(f, Target::Scaling);
    const auto rows = run_scaling(s.scaling_seconds, s.scaling);
    write_output(s, "scaling.csv", scaling_csv(rows, s.workload.seed));
    for (const auto& r : rows) {
        std::cout << fmt_num(r.seconds) << "s L=" << r.length << " speedup=" << fmt_num(r.estimate.attention_speedup, 4)
                  << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Blockified adaptive sparse attention: verification and experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    Flags f;
    app.add_option("--config", f.config, "Config file (INI-style)");
    app.add_option("--seed", f.seed, "Top-level seed");
    app.add_option("--out", f.out, "Output directory");
    app.add_option("--sparsity", f.sparsity, "Base sparsity in [0,1)");
    app.add_option("--block-size", f.block_size, "Block size B");
    app.add_option("--warmup", f.warmup, "Warmup step t_w");
    app.add_option("--key-steps", f.key_steps, "Comma-separated key steps, first equal to warmup");
    app.add_option("--head-adaptive", f.head_adaptive, "true/false");
    app.add_option("--row-wise", f.row_wise, "true/false");
    app.add_option("--text-sink", f.text_sink, "true/false");
    app.add_option("--compare-full", f.compare_full, "true/false");

    bool inject_fault = false;
    auto* verify = app.add_subcommand("verify", "Kernel-versus-oracle equivalence checks");
    verify->add_flag("--inject-fault", inject_fault)->group("");
    auto* pattern = app.add_subcommand("pattern-compare", "Recall of Topk/Block/Col/Diag/DiagCol patterns");
    auto* sweep = app.add_subcommand("sweep", "Sparsity, head-adaptive, key-step and warmup sweeps");
    auto* run = app.add_subcommand("run", "One pipeline run with per-step report");
    std::optional<std::size_t> length;
    auto* flops = app.add_subcommand("flops", "Attention FLOPs share estimate");
    flops->add_option("--length", length, "Sequence length L");
    auto* scaling = app.add_subcommand("scaling", "Predicted speedup versus video length");
    auto* show = app.add_subcommand("show-config", "Print the resolved configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (verify->parsed()) return cmd_verify(f, inject_fault);
        if (pattern->parsed()) return cmd_pattern_compare(f);
        if (sweep->parsed()) return cmd_sweep(f);
        if (run->parsed()) return cmd_run(f);
        if (flops->parsed()) return cmd_flops(f, length);
        if (scaling->parsed()) return cmd_scaling(f);
        if (show->parsed()) {
            std::cout << resolved_config(f, Target::Search).to_text();
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
