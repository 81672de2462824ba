#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "blockdiff/training.hpp"

namespace blockdiff {

/// Empirical joint (size, degree) histogram of the first block over a
/// training set; generation bootstraps from it before the size head takes
/// over.
struct FirstBlockPrior {
    struct Entry {
        int size = 0;
        int degree = 0;
        double prob = 0.0;
    };
    std::vector<Entry> entries;

    static FirstBlockPrior from_dataset(const std::vector<TrainExample>& dataset) {
        if (dataset.empty()) throw std::invalid_argument("FirstBlockPrior: empty dataset");
        std::map<std::pair<int, int>, int> counts;
        for (const auto& ex : dataset) {
            if (ex.num_blocks() == 0) continue;
            counts[{static_cast<int>(ex.decomp.blocks[0].size()), ex.block_degree[0]}] += 1;
        }
        if (counts.empty()) throw std::invalid_argument("FirstBlockPrior: no first blocks observed");
        FirstBlockPrior prior;
        double total = 0;
        for (auto& [key, c] : counts) total += c;
        for (auto& [key, c] : counts) prior.entries.push_back({key.first, key.second, c / total});
        return prior;
    }

    std::pair<int, int> sample(double u) const {
        std::vector<double> probs;
        probs.reserve(entries.size());
        for (const auto& e : entries) probs.push_back(e.prob);
        const Entry& e = entries[sample_categorical(probs, u)];
        return {e.size, e.degree};
    }
};

struct GenLimits {
    int max_nodes = 64;
    int max_blocks = 32;
};

struct GenerationTrace {
    struct BlockRecord {
        int size = 0;
        int degree = 0;
    };
    std::vector<BlockRecord> blocks;
    LabeledGraph graph;
    bool truncated = false;
    std::vector<LabeledGraph> committed_snapshots;  // filled when debug requested
};

namespace detail {

// Counter codes for generation draws; element ids reuse the training scheme
// over the final layout size.
constexpr std::uint32_t kDrawInit = 1u << 24;
constexpr std::uint32_t kDrawStep = 2u << 24;
constexpr std::uint32_t kDrawSize = 3u << 24;
constexpr std::uint32_t kDrawDegree = 4u << 24;
constexpr std::uint32_t kDrawPrior = 5u << 24;

}  // namespace detail

/// Block-by-block ancestral generation: bootstrap the first block's size and
/// degree from the training prior, then alternate a T-step denoising pass of
/// the new block with a next-size draw from the size network until the stop
/// class fires or the limits cut the trace short.
inline GenerationTrace generate(const DenoiserConfig& cfg, const ParamStore& f_params,
                                const ParamStore& g_params, const TransitionFamily& fam_v,
                                const TransitionFamily& fam_e, const FirstBlockPrior& prior,
                                const GenLimits& limits, const CounterRng& rng, int sample_id,
                                bool keep_snapshots = false) {
    GenerationTrace trace;
    int t_max = fam_v.schedule.t_max;

    LabeledGraph committed = LabeledGraph::empty(0, cfg.k_v, cfg.k_e);
    std::vector<int> committed_ids, committed_degrees;

    auto [size, degree] =
        prior.sample(rng.uniform(rng_purpose::kGenerate, static_cast<std::uint32_t>(sample_id),
                                 detail::kDrawPrior, 0));
    int block_i = 1;
    while (size > 0) {
        if (block_i > limits.max_blocks || committed.n + size > limits.max_nodes) {
            trace.truncated = true;
            break;
        }
        int m = committed.n;
        int n = m + size;
        auto elem_key = [&](int u, int v) { return element_counter(limits.max_nodes, u, v); };

        // Assemble the working layout: committed prefix stays clean, the new
        // block enters as flagged placeholders initialized from pure noise.
        DenoiserInput in;
        in.n = n;
        in.node_labels.resize(n);
        in.degrees.resize(n);
        in.mask.block_ids.resize(n);
        in.mask.virtual_flags.assign(n, 0);
        in.edge_labels.assign(static_cast<std::size_t>(n) * n, 0);
        for (int v = 0; v < m; ++v) {
            in.node_labels[v] = committed.node_labels[v];
            in.degrees[v] = committed_degrees[v];
            in.mask.block_ids[v] = committed_ids[v];
        }
        for (int v = m; v < n; ++v) {
            in.degrees[v] = degree;
            in.mask.block_ids[v] = block_i;
            in.mask.virtual_flags[v] = 1;
            double u = rng.uniform(rng_purpose::kGenerate, static_cast<std::uint32_t>(sample_id),
                                   detail::kDrawInit | elem_key(v, -1), static_cast<std::uint32_t>(block_i));
            in.node_labels[v] = sample_categorical(fam_v.m, u);
        }
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b)
                in.edge_labels[static_cast<std::size_t>(a) * n + b] = committed.edge(a, b);
        auto set_edge = [&](int a, int b, int lab) {
            in.edge_labels[static_cast<std::size_t>(a) * n + b] = lab;
            in.edge_labels[static_cast<std::size_t>(b) * n + a] = lab;
        };
        for (int v = m; v < n; ++v)
            for (int u = 0; u < v; ++u) {
                double uu = rng.uniform(rng_purpose::kGenerate, static_cast<std::uint32_t>(sample_id),
                                        detail::kDrawInit | elem_key(u, v), static_cast<std::uint32_t>(block_i));
                set_edge(u, v, sample_categorical(fam_e.m, uu));
            }

        // T reverse steps, resampling only the new block's elements.
        for (int t = t_max; t >= 1; --t) {
            in.t = t;
            auto out = denoiser_forward(cfg, f_params, in);
            auto resample = [&](const TransitionFamily& fam, const Tensor& logits_row, int xt,
                               std::uint32_t key) {
                std::vector<double> p0(fam.k);
                double mx = logits_row.data[0];
                for (int c = 1; c < fam.k; ++c) mx = std::max(mx, logits_row.data[c]);
                double denom = 0;
                for (int c = 0; c < fam.k; ++c) {
                    p0[c] = std::exp(logits_row.data[c] - mx);
                    denom += p0[c];
                }
                for (double& p : p0) p /= denom;
                auto rev = reverse_step_distribution(fam, xt, t, p0);
                double u = rng.uniform(rng_purpose::kGenerate, static_cast<std::uint32_t>(sample_id),
                                       detail::kDrawStep | key,
                                       static_cast<std::uint32_t>((block_i << 8) | t));
                return sample_categorical(rev, u);
            };
            std::vector<int> new_labels(in.node_labels);
            std::vector<int> new_edges(in.edge_labels);
            for (int v = m; v < n; ++v) {
                Tensor row(1, cfg.k_v);
                for (int c = 0; c < cfg.k_v; ++c) row.data[c] = out.node_logits.at(v, c);
                new_labels[v] = resample(fam_v, row, in.node_labels[v],
                                         static_cast<std::uint32_t>(elem_key(v, -1)));
            }
            for (int v = m; v < n; ++v)
                for (int u = 0; u < v; ++u) {
                    Tensor row(1, cfg.k_e);
                    for (int c = 0; c < cfg.k_e; ++c) row.data[c] = out.edge_logits.at(u * n + v, c);
                    int lab = resample(fam_e, row, in.edge_labels[static_cast<std::size_t>(u) * n + v],
                                       static_cast<std::uint32_t>(elem_key(u, v)));
                    new_edges[static_cast<std::size_t>(u) * n + v] = lab;
                    new_edges[static_cast<std::size_t>(v) * n + u] = lab;
                }
            in.node_labels = std::move(new_labels);
            in.edge_labels = std::move(new_edges);
        }

        // Commit the denoised block.
        LabeledGraph next = LabeledGraph::empty(n, cfg.k_v, cfg.k_e);
        next.node_labels = in.node_labels;
        next.edge_labels = in.edge_labels;
        next.validate();
        committed = std::move(next);
        for (int v = m; v < n; ++v) {
            committed_ids.push_back(block_i);
            committed_degrees.push_back(committed.degree(v));
        }
        trace.blocks.push_back({size, degree});
        if (keep_snapshots) trace.committed_snapshots.push_back(committed);

        // Ask the size network for the next block, pooling over a clean
        // flagged copy of the block just committed.
        {
            int twin_count = size;
            int gn = committed.n + twin_count;
            DenoiserInput gin;
            gin.n = gn;
            gin.t = 0;
            gin.node_labels.resize(gn);
            gin.degrees.resize(gn);
            gin.mask.block_ids.resize(gn);
            gin.mask.virtual_flags.assign(gn, 0);
            gin.edge_labels.assign(static_cast<std::size_t>(gn) * gn, 0);
            for (int v = 0; v < committed.n; ++v) {
                gin.node_labels[v] = committed.node_labels[v];
                gin.degrees[v] = committed_degrees[v];
                gin.mask.block_ids[v] = committed_ids[v];
                for (int u = 0; u < committed.n; ++u)
                    gin.edge_labels[static_cast<std::size_t>(v) * gn + u] = committed.edge(v, u);
            }
            std::vector<int> twins;
            for (int j = 0; j < twin_count; ++j) {
                int orig = m + j;
                int tw = committed.n + j;
                twins.push_back(tw);
                gin.node_labels[tw] = committed.node_labels[orig];
                gin.degrees[tw] = committed_degrees[orig];
                gin.mask.block_ids[tw] = block_i;
                gin.mask.virtual_flags[tw] = 1;
                for (int u = 0; u < committed.n; ++u) {
                    if (committed_ids[u] < block_i) {
                        int lab = committed.edge(orig, u);
                        gin.edge_labels[static_cast<std::size_t>(tw) * gn + u] = lab;
                        gin.edge_labels[static_cast<std::size_t>(u) * gn + tw] = lab;
                    }
                }
                for (int jj = 0; jj < j; ++jj) {
                    int other = committed.n + jj;
                    int lab = committed.edge(orig, m + jj);
                    gin.edge_labels[static_cast<std::size_t>(tw) * gn + other] = lab;
                    gin.edge_labels[static_cast<std::size_t>(other) * gn + tw] = lab;
                }
            }
            gin.virtual_blocks = {twins};
            auto gout = denoiser_forward(cfg, g_params, gin);
            auto sample_head = [&](const Tensor& logits, std::uint32_t code) {
                std::vector<double> p(logits.cols);
                double mx = logits.data[0];
                for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, logits.data[c]);
                double denom = 0;
                for (int c = 0; c < logits.cols; ++c) {
                    p[c] = std::exp(logits.data[c] - mx);
                    denom += p[c];
                }
                for (double& x : p) x /= denom;
                double u = rng.uniform(rng_purpose::kGenerate, static_cast<std::uint32_t>(sample_id), code,
                                       static_cast<std::uint32_t>(block_i));
                return sample_categorical(p, u);
            };
            size = sample_head(gout.size_logits[0], detail::kDrawSize);
            degree = sample_head(gout.degree_logits[0], detail::kDrawDegree);
        }
        ++block_i;
    }
    trace.graph = committed;
    return trace;
}

/// Fraction of traces whose generated block-size sequence matches the
/// structural decomposition recomputed from the finished graph.
inline double path_consistency_report(const std::vector<GenerationTrace>& samples, int k_hops) {
    if (samples.empty()) return 0.0;
    int matches = 0;
    for (const auto& tr : samples) {
        auto d = structural_partial_order(tr.graph, k_hops, PeelWeights::residual, /*warn=*/false);
        bool ok = d.num_blocks() == static_cast<int>(tr.blocks.size());
        if (ok)
            for (int i = 0; i < d.num_blocks(); ++i)
                if (static_cast<int>(d.blocks[i].size()) != tr.blocks[i].size) ok = false;
        matches += ok ? 1 : 0;
    }
    return static_cast<double>(matches) / static_cast<double>(samples.size());
}

}  // namespace blockdiff
