#pragma once

// Resolved experiment settings. Layering, lowest first:
//   built-in defaults -> config file -> ADASPA_* environment -> flags.
// Every key a file may use exists in the defaults, so unknown keys are
// rejected with their line number.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adaspa/config.hpp"
#include "adaspa/experiments.hpp"
#include "adaspa/pipeline.hpp"
#include "adaspa/search.hpp"
#include "adaspa/workload.hpp"

namespace adaspa {

struct Settings {
    WorkloadSpec workload;
    SparsityConfig search;
    SearchSchedule schedule;
    CostModel cost;
    bool compare_full = true;
    std::vector<double> pattern_sparsities{0.0, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> sweep_sparsities{0.5, 0.6, 0.7, 0.8, 0.9};
    ScalingOptions scaling;
    std::vector<double> scaling_seconds{2, 4, 8, 12, 16, 20, 24};
    FlopsQuery flops;
    std::string out = "out";
};

namespace detail {

inline std::string join_reals(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + format_real(xs[i]);
    return out;
}

inline std::string join_sizes(const std::vector<std::size_t>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
    return out;
}

inline const char* bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace detail

/// Desk-scale defaults: block size 16 so the default workload has a
/// meaningful block grid.
inline Settings default_settings() {
    Settings s;
    s.search.block_size = 16;
    return s;
}

inline Config to_config(const Settings& s) {
    using detail::bool_text;
    Config cfg;
    write_workload(s.workload, cfg);
    const std::string d = "<default>";

    cfg.set("search", "sparsity", format_real(s.search.sparsity), d);
    cfg.set("search", "block_size", std::to_string(s.search.block_size), d);
    cfg.set("search", "text_sink", bool_text(s.search.text_sink), d);
    cfg.set("search", "row_wise", bool_text(s.search.row_wise), d);
    cfg.set("search", "head_adaptive", bool_text(s.search.head_adaptive), d);
    cfg.set("search", "recall_threshold", format_real(s.search.recall_threshold), d);

    cfg.set("schedule", "warmup", std::to_string(s.schedule.warmup), d);
    cfg.set("schedule", "key_steps", detail::join_sizes(s.schedule.key_steps), d);

    cfg.set("cost", "search_pass", format_real(s.cost.search_pass), d);
    cfg.set("cost", "heads", std::to_string(s.cost.heads), d);
    cfg.set("cost", "head_dim", std::to_string(s.cost.head_dim), d);
    cfg.set("cost", "non_attention_flops_per_token", format_real(s.cost.non_attention_flops_per_token), d);

    cfg.set("experiment", "compare_full", bool_text(s.compare_full), d);
    cfg.set("experiment", "pattern_sparsities", detail::join_reals(s.pattern_sparsities), d);
    cfg.set("experiment", "sweep_sparsities", detail::join_reals(s.sweep_sparsities), d);
    cfg.set("experiment", "out", s.out, d);

    const auto& sc = s.scaling;
    cfg.set("scaling", "seconds", detail::join_reals(s.scaling_seconds), d);
    cfg.set("scaling", "fps", format_real(sc.fps), d);
    cfg.set("scaling", "temporal_compression", std::to_string(sc.temporal_compression), d);
    cfg.set("scaling", "latent_height", std::to_string(sc.latent_height), d);
    cfg.set("scaling", "latent_width", std::to_string(sc.latent_width), d);
    cfg.set("scaling", "text_tokens", std::to_string(sc.text_tokens), d);
    cfg.set("scaling", "sparsity", format_real(sc.config.sparsity), d);
    cfg.set("scaling", "block_size", std::to_string(sc.config.block_size), d);
    cfg.set("scaling", "warmup", std::to_string(sc.schedule.warmup), d);
    cfg.set("scaling", "key_steps", detail::join_sizes(sc.schedule.key_steps), d);
    cfg.set("scaling", "non_attention_flops_per_token", format_real(sc.cost.non_attention_flops_per_token), d);

    const auto& f = s.flops;
    cfg.set("flops", "length", std::to_string(f.length), d);
    cfg.set("flops", "head_dim", std::to_string(f.head_dim), d);
    cfg.set("flops", "heads", std::to_string(f.heads), d);
    cfg.set("flops", "layers", std::to_string(f.layers), d);
    cfg.set("flops", "steps", std::to_string(f.steps), d);
    cfg.set("flops", "sparsity", format_real(f.sparsity), d);
    cfg.set("flops", "non_attention_per_layer", format_real(f.non_attention_per_layer), d);
    return cfg;
}

/// Merges a config file over `cfg`, rejecting keys `cfg` does not know.
inline void merge_file(Config& cfg, const std::filesystem::path& path) {
    const Config file = Config::load(path);
    for (const auto& [name, entry] : file.entries()) {
        if (!cfg.entries().count(name)) throw ConfigError(entry.source, entry.line, "unknown key '" + name + "'");
    }
    for (const auto& [name, entry] : file.entries()) {
        const auto dot = name.find('.');
        const std::string section = dot == std::string::npos ? "" : name.substr(0, dot);
        const std::string key = dot == std::string::npos ? name : name.substr(dot + 1);
        cfg.set(section, key, entry.value, entry.source + ":" + std::to_string(entry.line));
    }
}

inline Settings from_config(const Config& cfg, const Settings& defaults = default_settings()) {
    Settings s = defaults;
    s.workload = read_workload(cfg, defaults.workload);

    s.search.sparsity = cfg.get_double("search", "sparsity", defaults.search.sparsity);
    s.search.block_size = cfg.get_size("search", "block_size", defaults.search.block_size);
    s.search.text_sink = cfg.get_bool("search", "text_sink", defaults.search.text_sink);
    s.search.row_wise = cfg.get_bool("search", "row_wise", defaults.search.row_wise);
    s.search.head_adaptive = cfg.get_bool("search", "head_adaptive", defaults.search.head_adaptive);
    s.search.recall_threshold = cfg.get_double("search", "recall_threshold", defaults.search.recall_threshold);
    s.search.validate();

    s.schedule.warmup = cfg.get_size("schedule", "warmup", defaults.schedule.warmup);
    s.schedule.key_steps = cfg.get_sizes("schedule", "key_steps", defaults.schedule.key_steps);
    s.schedule.steps = s.workload.steps;
    s.schedule.validate();

    s.cost.search_pass = cfg.get_double("cost", "search_pass", defaults.cost.search_pass);
    s.cost.heads = cfg.get_size("cost", "heads", defaults.cost.heads);
    s.cost.head_dim = cfg.get_size("cost", "head_dim", defaults.cost.head_dim);
    s.cost.non_attention_flops_per_token =
        cfg.get_double("cost", "non_attention_flops_per_token", defaults.cost.non_attention_flops_per_token);

    s.compare_full = cfg.get_bool("experiment", "compare_full", defaults.compare_full);
    s.pattern_sparsities = cfg.get_doubles("experiment", "pattern_sparsities", defaults.pattern_sparsities);
    s.sweep_sparsities = cfg.get_doubles("experiment", "sweep_sparsities", defaults.sweep_sparsities);
    s.out = cfg.get_string("experiment", "out", defaults.out);

    auto& sc = s.scaling;
    s.scaling_seconds = cfg.get_doubles("scaling", "seconds", defaults.scaling_seconds);
    sc.fps = cfg.get_double("scaling", "fps", defaults.scaling.fps);
    sc.temporal_compression = cfg.get_size("scaling", "temporal_compression", defaults.scaling.temporal_compression);
    sc.latent_height = cfg.get_size("scaling", "latent_height", defaults.scaling.latent_height);
    sc.latent_width = cfg.get_size("scaling", "latent_width", defaults.scaling.latent_width);
    sc.text_tokens = cfg.get_size("scaling", "text_tokens", defaults.scaling.text_tokens);
    sc.config.sparsity = cfg.get_double("scaling", "sparsity", defaults.scaling.config.sparsity);
    sc.config.block_size = cfg.get_size("scaling", "block_size", defaults.scaling.config.block_size);
    sc.schedule.warmup = cfg.get_size("scaling", "warmup", defaults.scaling.schedule.warmup);
    sc.schedule.key_steps = cfg.get_sizes("scaling", "key_steps", defaults.scaling.schedule.key_steps);
    sc.cost.search_pass = s.cost.search_pass;
    sc.cost.heads = s.cost.heads;
    sc.cost.head_dim = s.cost.head_dim;
    sc.cost.non_attention_flops_per_token =
        cfg.get_double("scaling", "non_attention_flops_per_token", defaults.scaling.cost.non_attention_flops_per_token);
    sc.config.validate();
    sc.schedule.validate();

    auto& f = s.flops;
    f.length = cfg.get_size("flops", "length", defaults.flops.length);
    f.head_dim = cfg.get_size("flops", "head_dim", defaults.flops.head_dim);
    f.heads = cfg.get_size("flops", "heads", defaults.flops.heads);
    f.layers = cfg.get_size("flops", "layers", defaults.flops.layers);
    f.steps = cfg.get_size("flops", "steps", defaults.flops.steps);
    f.sparsity = cfg.get_double("flops", "sparsity", defaults.flops.sparsity);
    f.non_attention_per_layer = cfg.get_double("flops", "non_attention_per_layer", defaults.flops.non_attention_per_layer);
    return s;
}

/// Defaults, then `file` if given, then the environment seen through `lookup`.
template <typename Lookup>
Config layered_config(const std::optional<std::filesystem::path>& file, Lookup&& lookup) {
    Config cfg = to_config(default_settings());
    if (file) merge_file(cfg, *file);
    cfg.apply_env(std::forward<Lookup>(lookup));
    return cfg;
}

}  // namespace adaspa
