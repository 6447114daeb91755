#pragma once

// Synthetic multi-step attention workload. Not a diffusion model: a
// parametric tensor process whose dense attention shows
//   - frame-region structure: tokens cluster by (frame, spatial band); a
//     cluster attends itself strongly, the same band of other frames through
//     an uneven per-head coupling, and neighbouring bands of its own frame
//     weakly;
//   - a text sink: every query puts extra logit on the text keys;
//   - per-head concentration: logit temperature varies across heads;
//   - step stability: step t mixes the fixed base tensors with fresh noise,
//     sqrt(1 - s_t^2) * base + s_t * rms(base) * noise, where the drift s_t
//     anneals from sigma * (1 + anneal) at step 1 to sigma at the last step.
// Everything is a pure function of the spec and the step index.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaspa/blocks.hpp"
#include "adaspa/config.hpp"
#include "adaspa/core.hpp"
#include "adaspa/flashblock.hpp"
#include "adaspa/oracle.hpp"
#include "adaspa/search.hpp"

namespace adaspa {

struct WorkloadSpec {
    SequenceLayout layout{4, 8, 8, 16};
    std::size_t heads = 4;
    std::size_t head_dim = 32;
    std::size_t steps = 50;
    /// Per-step drift sigma at the end of the trajectory.
    double drift = 0.05;
    /// Extra drift at step 1, relative to `drift`; decays linearly to 0.
    double anneal = 3.0;
    /// Spatial rows per token cluster inside a frame.
    std::size_t group_rows = 2;
    /// Upper bound of the same-band coupling between different frames.
    double coupling = 0.7;
    /// Affinity between neighbouring bands of one frame (decays per band).
    double locality = 0.35;
    /// Affinity every query has for text keys.
    double sink = 0.9;
    /// Logit scale range across heads; head 0 gets the low end.
    double temperature_min = 3.0;
    double temperature_max = 9.0;
    /// Per-token direction jitter.
    double jitter = 0.35;
    std::uint64_t seed = 0;

    void validate() const {
        if (heads == 0 || head_dim == 0) throw std::invalid_argument("WorkloadSpec: heads and head_dim must be positive");
        if (steps == 0) throw std::invalid_argument("WorkloadSpec: steps must be >= 1");
        if (!(drift >= 0.0) || !(anneal >= 0.0)) throw std::invalid_argument("WorkloadSpec: drift and anneal must be >= 0");
        if (group_rows == 0) throw std::invalid_argument("WorkloadSpec: group_rows must be >= 1");
        if (!(temperature_min > 0.0) || temperature_max < temperature_min) {
            throw std::invalid_argument("WorkloadSpec: need 0 < temperature_min <= temperature_max");
        }
        if (!(jitter >= 0.0) || !(coupling >= 0.0) || !(locality >= 0.0) || !(sink >= 0.0)) {
            throw std::invalid_argument("WorkloadSpec: jitter/coupling/locality/sink must be >= 0");
        }
    }

    /// Drift applied at `step` (1-based).
    double drift_at(std::size_t step) const {
        const double remaining = steps > 1 ? static_cast<double>(steps - step) / static_cast<double>(steps - 1) : 0.0;
        return std::min(1.0, drift * (1.0 + anneal * remaining));
    }

    friend bool operator==(const WorkloadSpec&, const WorkloadSpec&) = default;
};

template <typename Real = double>
struct StepTensors {
    std::size_t step = 0;
    AttnTensor<Real> q;
    AttnTensor<Real> k;
    AttnTensor<Real> v;
};

namespace detail {

enum : std::uint64_t {
    kTagBasis = 1,
    kTagCoupling = 2,
    kTagJitterQ = 3,
    kTagJitterK = 4,
    kTagValue = 5,
    kTagStepQ = 16,
    kTagStepK = 17,
    kTagStepV = 18,
};

/// Orthonormalized Gaussian directions; beyond `dim` vectors they are only
/// normalized.
inline std::vector<std::vector<double>> random_basis(std::size_t count, std::size_t dim, std::uint64_t seed) {
    const CounterRng rng(seed);
    std::vector<std::vector<double>> basis;
    for (std::size_t c = 0; c < count; ++c) {
        std::vector<double> e(dim);
        for (std::size_t d = 0; d < dim; ++d) e[d] = rng.normal(c * dim + d);
        if (c < dim) {
            for (std::size_t prev = 0; prev < c; ++prev) {
                double proj = 0.0;
                for (std::size_t d = 0; d < dim; ++d) proj += e[d] * basis[prev][d];
                for (std::size_t d = 0; d < dim; ++d) e[d] -= proj * basis[prev][d];
            }
        }
        double norm = 0.0;
        for (double x : e) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : e) x /= norm;
        basis.push_back(std::move(e));
    }
    return basis;
}

template <typename Real>
double rms(const AttnTensor<Real>& t) {
    double acc = 0.0;
    for (Real x : t.values()) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc / static_cast<double>(t.size()));
}

}  // namespace detail

/// Holds the base tensors of a spec so consecutive steps are cheap to draw.
template <typename Real = double>
class Workload {
public:
    explicit Workload(WorkloadSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        build_base();
    }

    const WorkloadSpec& spec() const noexcept { return spec_; }
    const AttnTensor<Real>& base_q() const noexcept { return q_; }
    const AttnTensor<Real>& base_k() const noexcept { return k_; }
    const AttnTensor<Real>& base_v() const noexcept { return v_; }

    /// Cluster id of a token: frame * bands + band for video, `clusters() - 1`
    /// for text.
    std::size_t cluster_of(std::size_t token) const noexcept {
        const SequenceLayout& l = spec_.layout;
        if (l.is_text(token)) return clusters() - 1;
        const std::size_t within = token % l.tokens_per_frame();
        return l.frame_of(token) * bands() + (within / l.width()) / spec_.group_rows;
    }
    std::size_t bands() const noexcept { return (spec_.layout.height() + spec_.group_rows - 1) / spec_.group_rows; }
    std::size_t clusters() const noexcept { return spec_.layout.frames() * bands() + 1; }

    StepTensors<Real> step(std::size_t t) const {
        if (t < 1 || t > spec_.steps) {
            throw std::out_of_range("Workload::step: step " + std::to_string(t) + " outside [1, " +
                                    std::to_string(spec_.steps) + "]");
        }
        const double sigma = spec_.drift_at(t);
        return {t, drift(q_, sigma, t, detail::kTagStepQ), drift(k_, sigma, t, detail::kTagStepK),
                drift(v_, sigma, t, detail::kTagStepV)};
    }

private:
    AttnTensor<Real> drift(const AttnTensor<Real>& base, double sigma, std::size_t t, std::uint64_t tag) const {
        if (sigma == 0.0) return base;
        const double keep = std::sqrt(1.0 - sigma * sigma);
        const double amp = sigma * detail::rms(base);
        const CounterRng rng(derive_seed(derive_seed(spec_.seed, tag), t));
        AttnTensor<Real> out = base;
        auto values = out.values();
        for (std::size_t n = 0; n < values.size(); ++n) {
            values[n] = static_cast<Real>(keep * static_cast<double>(values[n]) + amp * rng.normal(n));
        }
        return out;
    }

    /// Affinity of a query cluster for a key cluster, in units of the head's
    /// temperature.
    double affinity(std::size_t h, std::size_t qc, std::size_t kc) const {
        const std::size_t text = clusters() - 1;
        if (kc == text) return spec_.sink;
        if (qc == text) return 0.2;
        const std::size_t qf = qc / bands(), qb = qc % bands();
        const std::size_t kf = kc / bands(), kb = kc % bands();
        if (qc == kc) return 1.0;
        if (qb == kb) return spec_.coupling * coupling_[(h * spec_.layout.frames() + qf) * spec_.layout.frames() + kf];
        if (qf == kf) {
            const std::size_t gap = qb > kb ? qb - kb : kb - qb;
            return std::pow(spec_.locality, static_cast<double>(gap));
        }
        return 0.0;
    }

    void build_base() {
        const std::size_t heads = spec_.heads;
        const std::size_t length = spec_.layout.length();
        const std::size_t dim = spec_.head_dim;
        const std::size_t frames = spec_.layout.frames();
        const std::size_t nc = clusters();

        // Uneven inter-frame coupling: squared uniforms, so most pairs are weak.
        const CounterRng coupling_rng(derive_seed(spec_.seed, detail::kTagCoupling));
        coupling_.assign(heads * frames * frames, 0.0);
        for (std::size_t n = 0; n < coupling_.size(); ++n) {
            const double u = coupling_rng.uniform(n);
            coupling_[n] = u * u;
        }

        q_ = AttnTensor<Real>(heads, length, dim);
        k_ = AttnTensor<Real>(heads, length, dim);
        v_ = seeded_tensor<Real>(heads, length, dim, derive_seed(spec_.seed, detail::kTagValue));
        const CounterRng jitter_q(derive_seed(spec_.seed, detail::kTagJitterQ));
        const CounterRng jitter_k(derive_seed(spec_.seed, detail::kTagJitterK));
        const double jitter_scale = spec_.jitter / std::sqrt(static_cast<double>(dim));

        for (std::size_t h = 0; h < heads; ++h) {
            const double temperature =
                heads > 1 ? spec_.temperature_min + (spec_.temperature_max - spec_.temperature_min) *
                                                        static_cast<double>(h) / static_cast<double>(heads - 1)
                          : spec_.temperature_min;
            // q . k / sqrt(D) = temperature * affinity for orthonormal directions.
            const double alpha = std::sqrt(temperature * std::sqrt(static_cast<double>(dim)));
            const auto basis = detail::random_basis(nc, dim, derive_seed(derive_seed(spec_.seed, detail::kTagBasis), h));

            // Key direction of cluster kc: sum over query clusters of affinity * e_qc.
            std::vector<std::vector<double>> key_dir(nc, std::vector<double>(dim, 0.0));
            for (std::size_t kc = 0; kc < nc; ++kc)
                for (std::size_t qc = 0; qc < nc; ++qc) {
                    const double a = affinity(h, qc, kc);
                    if (a == 0.0) continue;
                    for (std::size_t d = 0; d < dim; ++d) key_dir[kc][d] += a * basis[qc][d];
                }

            for (std::size_t i = 0; i < length; ++i) {
                const std::size_t c = cluster_of(i);
                const std::size_t offset = (h * length + i) * dim;
                for (std::size_t d = 0; d < dim; ++d) {
                    q_(h, i, d) = static_cast<Real>(alpha * (basis[c][d] + jitter_scale * jitter_q.normal(offset + d)));
                    k_(h, i, d) = static_cast<Real>(alpha * (key_dir[c][d] + jitter_scale * jitter_k.normal(offset + d)));
                }
            }
        }
    }

    WorkloadSpec spec_;
    std::vector<double> coupling_;  // [H, frames, frames]
    AttnTensor<Real> q_, k_, v_;
};

template <typename Real = double>
StepTensors<Real> generate_step(const WorkloadSpec& spec, std::size_t step) {
    return Workload<Real>(spec).step(step);
}

struct CrossInputRecall {
    std::vector<double> cross;  // A's optimal mask evaluated on B, per head
    std::vector<double> own;    // B's optimal mask evaluated on B, per head
};

/// Builds the optimal block mask from A's step-1 attention and measures how
/// much of B's step-1 attention it keeps.
inline CrossInputRecall cross_input_recall(const WorkloadSpec& a, const WorkloadSpec& b, double sparsity,
                                           std::size_t block_size) {
    if (a.layout != b.layout || a.heads != b.heads || a.head_dim != b.head_dim) {
        throw std::invalid_argument("cross_input_recall: specs have incompatible dimensions");
    }
    const BlockGrid grid(a.layout.length(), block_size);
    const std::size_t budget = keep_budget(sparsity, grid.cells());

    const auto sa = generate_step<double>(a, 1);
    const auto sb = generate_step<double>(b, 1);
    const auto wa = dense_attention(sa.q, sa.k, sa.v).weights;
    const auto wb = dense_attention(sb.q, sb.k, sb.v).weights;

    const auto mask_a = optimal_block_mask_oracle(wa, grid, budget);
    const auto mask_b = optimal_block_mask_oracle(wb, grid, budget);
    const auto scores_b = block_sum_oracle(wb, grid);
    return {recall_from_scores(scores_b, mask_a), recall_from_scores(scores_b, mask_b)};
}

struct LseDrift {
    std::size_t from_step = 0;
    std::size_t to_step = 0;
    double mean_abs = 0.0;
    double std_dev = 0.0;  // of the signed row delta
    double max_abs = 0.0;
};

/// Exact LSE of steps 1..steps and the row deltas between consecutive steps.
inline std::vector<LseDrift> lse_drift_stats(const WorkloadSpec& spec, std::size_t steps,
                                             std::size_t kernel_block = 64) {
    if (steps < 2) throw std::invalid_argument("lse_drift_stats: need at least 2 steps");
    if (steps > spec.steps) throw std::invalid_argument("lse_drift_stats: more steps than the workload has");
    const Workload<double> workload(spec);
    std::vector<LseDrift> out;
    LseVector<double> previous;
    for (std::size_t t = 1; t <= steps; ++t) {
        const auto s = workload.step(t);
        auto lse = flash_forward(s.q, s.k, s.v, kernel_block).lse;
        if (t > 1) {
            LseDrift d{t - 1, t};
            const auto now = lse.values();
            const auto before = previous.values();
            double sum = 0.0, sum_sq = 0.0;
            for (std::size_t n = 0; n < now.size(); ++n) {
                const double delta = now[n] - before[n];
                sum += delta;
                sum_sq += delta * delta;
                d.mean_abs += std::abs(delta);
                d.max_abs = std::max(d.max_abs, std::abs(delta));
            }
            const double count = static_cast<double>(now.size());
            d.mean_abs /= count;
            const double mean = sum / count;
            d.std_dev = std::sqrt(std::max(0.0, sum_sq / count - mean * mean));
            out.push_back(d);
        }
        previous = std::move(lse);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config round trip, section [workload].
// ---------------------------------------------------------------------------

// Shortest text that parses back to the same double.
inline std::string format_real(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline void write_workload(const WorkloadSpec& spec, Config& cfg) {
    const std::string s = "workload";
    cfg.set(s, "frames", std::to_string(spec.layout.frames()), "<default>");
    cfg.set(s, "height", std::to_string(spec.layout.height()), "<default>");
    cfg.set(s, "width", std::to_string(spec.layout.width()), "<default>");
    cfg.set(s, "text", std::to_string(spec.layout.text()), "<default>");
    cfg.set(s, "heads", std::to_string(spec.heads), "<default>");
    cfg.set(s, "head_dim", std::to_string(spec.head_dim), "<default>");
    cfg.set(s, "steps", std::to_string(spec.steps), "<default>");
    cfg.set(s, "drift", format_real(spec.drift), "<default>");
    cfg.set(s, "anneal", format_real(spec.anneal), "<default>");
    cfg.set(s, "group_rows", std::to_string(spec.group_rows), "<default>");
    cfg.set(s, "coupling", format_real(spec.coupling), "<default>");
    cfg.set(s, "locality", format_real(spec.locality), "<default>");
    cfg.set(s, "sink", format_real(spec.sink), "<default>");
    cfg.set(s, "temperature_min", format_real(spec.temperature_min), "<default>");
    cfg.set(s, "temperature_max", format_real(spec.temperature_max), "<default>");
    cfg.set(s, "jitter", format_real(spec.jitter), "<default>");
    cfg.set(s, "seed", std::to_string(spec.seed), "<default>");
}

inline WorkloadSpec read_workload(const Config& cfg, const WorkloadSpec& defaults = {}) {
    const std::string s = "workload";
    WorkloadSpec spec = defaults;
    const auto frames = cfg.get_size(s, "frames", defaults.layout.frames());
    const auto height = cfg.get_size(s, "height", defaults.layout.height());
    const auto width = cfg.get_size(s, "width", defaults.layout.width());
    const auto text = cfg.get_size(s, "text", defaults.layout.text());
    spec.layout = SequenceLayout(frames, height, width, text);
    spec.heads = cfg.get_size(s, "heads", defaults.heads);
    spec.head_dim = cfg.get_size(s, "head_dim", defaults.head_dim);
    spec.steps = cfg.get_size(s, "steps", defaults.steps);
    spec.drift = cfg.get_double(s, "drift", defaults.drift);
    spec.anneal = cfg.get_double(s, "anneal", defaults.anneal);
    spec.group_rows = cfg.get_size(s, "group_rows", defaults.group_rows);
    spec.coupling = cfg.get_double(s, "coupling", defaults.coupling);
    spec.locality = cfg.get_double(s, "locality", defaults.locality);
    spec.sink = cfg.get_double(s, "sink", defaults.sink);
    spec.temperature_min = cfg.get_double(s, "temperature_min", defaults.temperature_min);
    spec.temperature_max = cfg.get_double(s, "temperature_max", defaults.temperature_max);
    spec.jitter = cfg.get_double(s, "jitter", defaults.jitter);
    spec.seed = cfg.get_u64(s, "seed", defaults.seed);
    spec.validate();
    return spec;
}

}  // namespace adaspa
