#pragma once

// JSON renderings of pipeline runs and FLOPs estimates. Field names and
// nesting are part of the output schema (schema_version 1).

#include <algorithm>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "adaspa/experiments.hpp"
#include "adaspa/pipeline.hpp"
#include "adaspa/search.hpp"

namespace adaspa {

/// Per-head recall averaged over the sparse steps that report one.
inline std::vector<double> mean_recall_per_head(const std::vector<StepReport>& reports, std::size_t heads) {
    std::vector<double> sum(heads, 0.0);
    std::size_t n = 0;
    for (const auto& r : reports) {
        if ((r.mode != StepMode::Sparse && r.mode != StepMode::SparseCachedSearch) || r.recall.size() != heads) continue;
        for (std::size_t h = 0; h < heads; ++h) sum[h] += r.recall[h];
        ++n;
    }
    if (n == 0) return {};
    for (double& s : sum) s /= static_cast<double>(n);
    return sum;
}

inline nlohmann::ordered_json pipeline_summary_json(const PipelineResult& run, const WorkloadSpec& spec,
                                                    const SearchSchedule& schedule, const SparsityConfig& config,
                                                    const SpeedupEstimate& estimate) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "pipeline";
    j["data"] = "synthetic-workload";
    j["seed"] = spec.seed;
    j["length"] = spec.layout.length();
    j["heads"] = spec.heads;
    j["steps"] = schedule.steps;
    j["warmup"] = schedule.warmup;
    j["key_steps"] = schedule.key_steps;
    j["sparsity"] = config.sparsity;
    j["block_size"] = config.block_size;
    j["text_sink"] = config.text_sink;
    j["row_wise"] = config.row_wise;
    j["head_adaptive"] = config.head_adaptive;

    j["per_head_recall"] = mean_recall_per_head(run.reports, spec.heads);
    double eff = 0.0, nominal = 0.0, dev = 0.0;
    std::size_t sparse = 0;
    for (const auto& r : run.reports) {
        if (r.max_abs_deviation) dev = std::max(dev, *r.max_abs_deviation);
        if (r.mode == StepMode::Sparse || r.mode == StepMode::SparseCachedSearch) {
            eff += r.effective_sparsity;
            nominal += r.nominal_sparsity;
            ++sparse;
        }
    }
    j["mean_nominal_sparsity"] = sparse ? nominal / static_cast<double>(sparse) : 0.0;
    j["mean_effective_sparsity"] = sparse ? eff / static_cast<double>(sparse) : 0.0;
    j["max_abs_deviation"] = dev;
    j["predicted_speedup"] = estimate.attention_speedup;
    j["predicted_speedup_basis"] = "analytic cost model";
    j["search_fraction"] = estimate.search_fraction;

    nlohmann::ordered_json masks = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < run.key_masks.size(); ++i) {
        const auto& m = run.key_masks[i];
        nlohmann::ordered_json entry;
        entry["key_step"] = schedule.key_steps[i];
        std::vector<double> per_head;
        std::vector<std::size_t> kept;
        for (std::size_t h = 0; h < m.heads(); ++h) {
            per_head.push_back(m.sparsity(h));
            kept.push_back(m.kept_count(h));
        }
        entry["head_sparsity"] = per_head;
        entry["kept_blocks"] = kept;
        masks.push_back(entry);
    }
    j["key_masks"] = masks;
    return j;
}

inline nlohmann::ordered_json flops_json(const FlopsQuery& q, const FlopsEstimate& e, std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "flops";
    j["seed"] = seed;
    j["length"] = q.length;
    j["head_dim"] = q.head_dim;
    j["heads"] = q.heads;
    j["layers"] = q.layers;
    j["steps"] = q.steps;
    j["sparsity"] = q.sparsity;
    j["attention_flops_per_layer"] = e.attention_per_layer;
    j["dense_attention_flops"] = e.dense_attention;
    j["sparse_attention_flops"] = e.sparse_attention;
    j["dense_attention_pflops"] = e.dense_attention / 1e15;
    j["sparse_attention_pflops"] = e.sparse_attention / 1e15;
    j["non_attention_flops"] = e.non_attention;
    j["non_attention_source"] = e.non_attention_estimated ? "24*d_model^2 per token per layer" : "user";
    j["attention_share_dense"] = e.attention_share_dense;
    j["attention_share_sparse"] = e.attention_share_sparse;
    return j;
}

}  // namespace adaspa
