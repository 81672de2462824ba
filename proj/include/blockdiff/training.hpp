#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "blockdiff/denoiser.hpp"
#include "blockdiff/diffusion.hpp"
#include "blockdiff/partial_order.hpp"

namespace blockdiff {

/// A graph with its decomposition and the per-block facts training needs.
/// Nodes of one block share their degree inside the prefix graph they were
/// born into; that uniformity is asserted here at build time.
struct TrainExample {
    LabeledGraph graph;
    BlockDecomposition decomp;
    std::vector<int> node_degree;   // degree of v within G[B_{1:phi(v)}]
    std::vector<int> block_degree;  // shared degree per block (0-based)
    int graph_id = 0;

    int num_blocks() const { return decomp.num_blocks(); }

    static TrainExample build(LabeledGraph g, int k_hops, int graph_id = 0,
                              PeelWeights weights = PeelWeights::residual) {
        g.validate();
        TrainExample ex;
        ex.graph_id = graph_id;
        ex.decomp = structural_partial_order(g, k_hops, weights);
        ex.graph = std::move(g);
        ex.node_degree.assign(ex.graph.n, 0);
        ex.block_degree.assign(ex.decomp.num_blocks(), 0);
        for (int r = 0; r < ex.decomp.num_blocks(); ++r) {
            int shared = -1;
            for (int v : ex.decomp.blocks[r]) {
                int d = 0;
                for (int u = 0; u < ex.graph.n; ++u)
                    if (ex.decomp.phi[u] <= r + 1 && ex.graph.edge(v, u) != 0) ++d;
                if (shared == -1)
                    shared = d;
                else if (shared != d)
                    throw std::runtime_error("TrainExample: block " + std::to_string(r + 1) + " of graph " +
                                             std::to_string(graph_id) +
                                             " has non-uniform degrees; decomposition is inconsistent");
                ex.node_degree[v] = d;
            }
            ex.block_degree[r] = std::max(shared, 0);
        }
        return ex;
    }
};

/// Noisy labels for every element at one diffusion step, drawn with the
/// counter RNG keyed by (graph id, element id, t) so sequential and parallel
/// training corrupt each element identically.
struct NoiseAssignment {
    int t = 0;
    std::vector<int> node_xt;  // length n
    std::vector<int> edge_xt;  // n*n symmetric
};

inline std::uint32_t element_counter(int n, int u, int v /* -1 for node u */) {
    if (v < 0) return static_cast<std::uint32_t>(u);
    return static_cast<std::uint32_t>(n + u * n + v);
}

/// Corruption draws are keyed on (graph id, element id, t, draw), so both
/// training modes corrupt each element identically within one step while
/// successive epochs (distinct draw indices) see fresh noise.
inline NoiseAssignment sample_noise(const TrainExample& ex, const TransitionFamily& fam_v,
                                    const TransitionFamily& fam_e, int t, const CounterRng& rng,
                                    std::uint32_t draw = 0) {
    const LabeledGraph& g = ex.graph;
    std::uint32_t step_key = static_cast<std::uint32_t>(t) | (draw << 10);
    NoiseAssignment na;
    na.t = t;
    na.node_xt.resize(g.n);
    na.edge_xt.assign(static_cast<std::size_t>(g.n) * g.n, 0);
    for (int v = 0; v < g.n; ++v) {
        double u = rng.uniform(rng_purpose::kElementNoise, static_cast<std::uint32_t>(ex.graph_id),
                               element_counter(g.n, v, -1), step_key);
        na.node_xt[v] = sample_categorical(forward_marginal(fam_v, g.node_labels[v], t), u);
    }
    for (int a = 0; a < g.n; ++a)
        for (int b = a + 1; b < g.n; ++b) {
            double u = rng.uniform(rng_purpose::kElementNoise, static_cast<std::uint32_t>(ex.graph_id),
                                   element_counter(g.n, a, b), step_key);
            int xt = sample_categorical(forward_marginal(fam_e, g.edge(a, b), t), u);
            na.edge_xt[static_cast<std::size_t>(a) * g.n + b] = xt;
            na.edge_xt[static_cast<std::size_t>(b) * g.n + a] = xt;
        }
    return na;
}

/// Permute a noise assignment together with its graph, for invariance checks.
inline NoiseAssignment permute_noise(const NoiseAssignment& na, const Permutation& p) {
    int n = static_cast<int>(na.node_xt.size());
    NoiseAssignment out;
    out.t = na.t;
    out.node_xt.resize(n);
    out.edge_xt.assign(static_cast<std::size_t>(n) * n, 0);
    for (int v = 0; v < n; ++v) out.node_xt[p.mapping[v]] = na.node_xt[v];
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            out.edge_xt[static_cast<std::size_t>(p.mapping[a]) * n + p.mapping[b]] =
                na.edge_xt[static_cast<std::size_t>(a) * n + b];
    return out;
}

/// One supervised element of one block task, in original-graph indexing.
struct SupervisedElement {
    bool is_edge = false;
    int u = 0, v = 0;  // node: u only
    int x0 = 0;
    int xt = 0;
};

/// The elements of G[B_{1:i}] \ G[B_{1:i-1}]: the new block's nodes plus all
/// edge slots from new nodes into the prefix-plus-new node set.
inline std::vector<SupervisedElement> supervised_elements(const TrainExample& ex, int block_i,
                                                          const NoiseAssignment& na) {
    const LabeledGraph& g = ex.graph;
    std::vector<SupervisedElement> out;
    for (int v = 0; v < g.n; ++v) {
        if (ex.decomp.phi[v] != block_i) continue;
        out.push_back({false, v, -1, g.node_labels[v], na.node_xt[v]});
    }
    for (int a = 0; a < g.n; ++a)
        for (int b = a + 1; b < g.n; ++b) {
            if (std::max(ex.decomp.phi[a], ex.decomp.phi[b]) != block_i) continue;
            out.push_back({true, a, b, g.edge(a, b), na.edge_xt[static_cast<std::size_t>(a) * g.n + b]});
        }
    return out;
}

// ---------------------------------------------------------------------------
// Layout builders
// ---------------------------------------------------------------------------

/// Sequential task layout for block i: the prefix blocks enter as clean real
/// nodes, the new block as flagged placeholders carrying noisy labels.
struct TaskLayout {
    DenoiserInput input;
    std::vector<int> real_of_local;     // local -> original node (real part)
    std::vector<int> local_of_node;     // original -> local (-1 if absent)
    std::vector<int> new_local;         // locals of the new/virtual block
};

inline TaskLayout build_sequential_input(const DenoiserConfig& cfg, const TrainExample& ex, int block_i,
                                         const NoiseAssignment& na) {
    const LabeledGraph& g = ex.graph;
    TaskLayout lay;
    std::vector<int> prefix, fresh;
    for (int v = 0; v < g.n; ++v) {
        if (ex.decomp.phi[v] < block_i) prefix.push_back(v);
        if (ex.decomp.phi[v] == block_i) fresh.push_back(v);
    }
    int n = static_cast<int>(prefix.size() + fresh.size());
    lay.local_of_node.assign(g.n, -1);
    DenoiserInput& in = lay.input;
    in.n = n;
    in.t = na.t;
    in.node_labels.resize(n);
    in.degrees.resize(n);
    in.mask.block_ids.resize(n);
    in.mask.virtual_flags.assign(n, 0);
    in.edge_labels.assign(static_cast<std::size_t>(n) * n, 0);

    int local = 0;
    for (int v : prefix) {
        lay.local_of_node[v] = local;
        lay.real_of_local.push_back(v);
        in.node_labels[local] = g.node_labels[v];
        in.degrees[local] = ex.node_degree[v];
        in.mask.block_ids[local] = ex.decomp.phi[v];
        ++local;
    }
    for (int v : fresh) {
        lay.local_of_node[v] = local;
        lay.new_local.push_back(local);
        in.node_labels[local] = na.node_xt[v];
        in.degrees[local] = ex.node_degree[v];
        in.mask.block_ids[local] = block_i;
        in.mask.virtual_flags[local] = 1;
        ++local;
    }
    auto put_edge = [&](int a, int b, int label) {
        int la = lay.local_of_node[a], lb = lay.local_of_node[b];
        in.edge_labels[static_cast<std::size_t>(la) * n + lb] = label;
        in.edge_labels[static_cast<std::size_t>(lb) * n + la] = label;
    };
    for (std::size_t ia = 0; ia < prefix.size(); ++ia)
        for (std::size_t ib = ia + 1; ib < prefix.size(); ++ib)
            put_edge(prefix[ia], prefix[ib], g.edge(prefix[ia], prefix[ib]));
    for (int v : fresh) {
        for (int u : prefix) put_edge(v, u, na.edge_xt[static_cast<std::size_t>(v) * g.n + u]);
        for (int w : fresh)
            if (v < w) put_edge(v, w, na.edge_xt[static_cast<std::size_t>(v) * g.n + w]);
    }
    (void)cfg;
    return lay;
}

/// Parallel layout: all blocks at once on the 2N virtual augmentation. Real
/// slots stay clean; each twin block carries its block's noisy copy. Edge
/// slots the mask blocks are left at class 0 and never read.
struct ParallelLayout {
    DenoiserInput input;
    AugmentedLayout aug;
};

inline ParallelLayout build_parallel_input(const DenoiserConfig& cfg, const TrainExample& ex,
                                           const NoiseAssignment& na, bool noisy_twins) {
    const LabeledGraph& g = ex.graph;
    ParallelLayout lay;
    lay.aug = augment_virtual_blocks(ex.decomp);
    int n2 = lay.aug.n_total;
    DenoiserInput& in = lay.input;
    in.n = n2;
    in.t = noisy_twins ? na.t : 0;
    in.mask.block_ids = lay.aug.block_ids;
    in.mask.virtual_flags = lay.aug.virtual_flags;
    in.node_labels.resize(n2);
    in.degrees.resize(n2);
    in.edge_labels.assign(static_cast<std::size_t>(n2) * n2, 0);
    in.virtual_blocks = lay.aug.virtual_blocks;

    for (int v = 0; v < g.n; ++v) {
        in.node_labels[v] = g.node_labels[v];
        in.node_labels[lay.aug.twin_index[v]] = noisy_twins ? na.node_xt[v] : g.node_labels[v];
        in.degrees[v] = ex.node_degree[v];
        in.degrees[lay.aug.twin_index[v]] = ex.node_degree[v];
    }
    auto put_edge = [&](int a, int b, int label) {
        in.edge_labels[static_cast<std::size_t>(a) * n2 + b] = label;
        in.edge_labels[static_cast<std::size_t>(b) * n2 + a] = label;
    };
    for (int a = 0; a < g.n; ++a)
        for (int b = a + 1; b < g.n; ++b) {
            int clean = g.edge(a, b);
            int noisy = noisy_twins ? na.edge_xt[static_cast<std::size_t>(a) * g.n + b] : clean;
            put_edge(a, b, clean);
            int pa = ex.decomp.phi[a], pb = ex.decomp.phi[b];
            if (pa == pb) {
                put_edge(lay.aug.twin_index[a], lay.aug.twin_index[b], noisy);
            } else if (pa < pb) {
                put_edge(a, lay.aug.twin_index[b], noisy);
            } else {
                put_edge(b, lay.aug.twin_index[a], noisy);
            }
        }
    (void)cfg;
    return lay;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossVar {
    Tape::Var var = -1;
    std::int64_t elements = 0;
};

namespace detail {

/// Vectorized diffusion loss over a set of supervised logit rows of one
/// transition family: KL(q(x_{t-1}|x_t,x_0) || R p0) + ce_weight * CE(p0, x0),
/// with the posterior mixture folded into a constant matrix per x_t class.
inline Tape::Var element_losses(Tape& tape, const TransitionFamily& fam, int t, Tape::Var logits_rows,
                                const std::vector<int>& x0s, const std::vector<int>& xts,
                                double ce_weight) {
    int m = static_cast<int>(x0s.size());
    int k = fam.k;
    auto logsm = tape.log_softmax_rows(logits_rows);

    // Cross-entropy part: -sum_r logsm[r][x0_r].
    Tensor wce(m, k);
    for (int r = 0; r < m; ++r) wce.at(r, x0s[r]) = -ce_weight;
    auto total = tape.dot_const(logsm, std::move(wce));

    auto p0 = tape.exp_op(logsm);
    double entropy_const = 0.0;
    std::vector<Tape::Var> parts{total};
    for (int c = 0; c < k; ++c) {
        std::vector<int> rows;
        for (int r = 0; r < m; ++r)
            if (xts[r] == c) rows.push_back(r);
        if (rows.empty()) continue;
        // Mixture matrix: row = candidate clean class, column = previous state.
        Tensor mix(k, k);
        for (int cand = 0; cand < k; ++cand) {
            auto post = posterior(fam, c, cand, t);
            for (int v = 0; v < k; ++v) mix.at(cand, v) = post[v];
        }
        auto p_rev = tape.matmul_const_right(tape.gather_rows(p0, rows), std::move(mix));
        Tensor wq(static_cast<int>(rows.size()), k);
        for (std::size_t rr = 0; rr < rows.size(); ++rr) {
            auto q = posterior(fam, c, x0s[rows[rr]], t);
            for (int v = 0; v < k; ++v) {
                wq.at(static_cast<int>(rr), v) = -q[v];
                if (q[v] > 0.0) entropy_const += q[v] * std::log(q[v]);
            }
        }
        parts.push_back(tape.dot_const(tape.log_op(p_rev), std::move(wq)));
    }
    parts.push_back(tape.constant(Tensor::scalar(entropy_const)));
    return tape.add_list(parts);
}

}  // namespace detail

/// Diffusion loss of one sequential block task: forward on G[B_{1:i}] with
/// the new block noised, summed KL + ce_weight * CE over the new elements.
inline LossVar block_diffusion_loss_tape(Tape& tape, const DenoiserConfig& cfg, const ParamVars& pv,
                                         const TrainExample& ex, int block_i, const NoiseAssignment& na,
                                         const TransitionFamily& fam_v, const TransitionFamily& fam_e,
                                         double ce_weight) {
    if (block_i < 1 || block_i > ex.num_blocks())
        throw std::invalid_argument("block_diffusion_loss: block index out of range");
    auto elems = supervised_elements(ex, block_i, na);
    if (elems.empty()) throw std::runtime_error("block_diffusion_loss: empty new block");

    auto lay = build_sequential_input(cfg, ex, block_i, na);
    auto fv = denoiser_forward_tape(tape, cfg, pv, lay.input);

    std::vector<int> node_rows, node_x0, node_xt, edge_rows, edge_x0, edge_xt;
    int n = lay.input.n;
    for (const auto& el : elems) {
        if (!el.is_edge) {
            node_rows.push_back(lay.local_of_node[el.u]);
            node_x0.push_back(el.x0);
            node_xt.push_back(el.xt);
        } else {
            int la = lay.local_of_node[el.u], lb = lay.local_of_node[el.v];
            edge_rows.push_back(std::min(la, lb) * n + std::max(la, lb));
            edge_x0.push_back(el.x0);
            edge_xt.push_back(el.xt);
        }
    }
    std::vector<Tape::Var> parts;
    if (!node_rows.empty())
        parts.push_back(detail::element_losses(tape, fam_v, na.t, tape.gather_rows(fv.node_logits, node_rows),
                                               node_x0, node_xt, ce_weight));
    if (!edge_rows.empty())
        parts.push_back(detail::element_losses(tape, fam_e, na.t, tape.gather_rows(fv.edge_logits, edge_rows),
                                               edge_x0, edge_xt, ce_weight));
    return {tape.add_list(parts), static_cast<std::int64_t>(elems.size())};
}

/// Diffusion loss of all blocks via one forward on the 2N parallel layout.
inline LossVar parallel_diffusion_loss_tape(Tape& tape, const DenoiserConfig& cfg, const ParamVars& pv,
                                            const TrainExample& ex, const NoiseAssignment& na,
                                            const TransitionFamily& fam_v, const TransitionFamily& fam_e,
                                            double ce_weight) {
    auto lay = build_parallel_input(cfg, ex, na, /*noisy_twins=*/true);
    DenoiserInput in = lay.input;
    in.virtual_blocks.clear();  // size heads belong to the size network
    auto fv = denoiser_forward_tape(tape, cfg, pv, in);

    const LabeledGraph& g = ex.graph;
    int n2 = lay.aug.n_total;
    std::vector<int> node_rows, node_x0, node_xt, edge_rows, edge_x0, edge_xt;
    for (int v = 0; v < g.n; ++v) {
        node_rows.push_back(lay.aug.twin_index[v]);
        node_x0.push_back(g.node_labels[v]);
        node_xt.push_back(na.node_xt[v]);
    }
    for (int a = 0; a < g.n; ++a)
        for (int b = a + 1; b < g.n; ++b) {
            int pa = ex.decomp.phi[a], pb = ex.decomp.phi[b];
            int ra, rb;
            if (pa == pb) {
                ra = lay.aug.twin_index[a];
                rb = lay.aug.twin_index[b];
            } else if (pa < pb) {
                ra = a;
                rb = lay.aug.twin_index[b];
            } else {
                ra = b;
                rb = lay.aug.twin_index[a];
            }
            edge_rows.push_back(std::min(ra, rb) * n2 + std::max(ra, rb));
            edge_x0.push_back(g.edge(a, b));
            edge_xt.push_back(na.edge_xt[static_cast<std::size_t>(a) * g.n + b]);
        }
    std::vector<Tape::Var> parts;
    if (!node_rows.empty())
        parts.push_back(detail::element_losses(tape, fam_v, na.t, tape.gather_rows(fv.node_logits, node_rows),
                                               node_x0, node_xt, ce_weight));
    if (!edge_rows.empty())
        parts.push_back(detail::element_losses(tape, fam_e, na.t, tape.gather_rows(fv.edge_logits, edge_rows),
                                               edge_x0, edge_xt, ce_weight));
    std::int64_t count = static_cast<std::int64_t>(node_rows.size() + edge_rows.size());
    return {tape.add_list(parts), count};
}

namespace detail {

inline Tape::Var ce_row(Tape& tape, Tape::Var logits_row, int target) {
    auto logsm = tape.log_softmax_rows(logits_row);
    Tensor w(1, tape.value(logits_row).cols);
    w.at(0, target) = -1.0;
    return tape.dot_const(logsm, std::move(w));
}

}  // namespace detail

/// Next-block size (and degree) cross-entropy, all blocks at once on the
/// clean parallel layout: after block i the network must call the size of
/// block i+1, with class 0 meaning stop.
inline LossVar blocksize_loss_tape(Tape& tape, const DenoiserConfig& cfg, const ParamVars& pv,
                                   const TrainExample& ex) {
    if (ex.num_blocks() == 0) throw std::invalid_argument("blocksize_loss: empty decomposition");
    NoiseAssignment clean;  // unused when twins stay clean
    clean.t = 0;
    clean.node_xt.assign(ex.graph.n, 0);
    clean.edge_xt.assign(static_cast<std::size_t>(ex.graph.n) * ex.graph.n, 0);
    auto lay = build_parallel_input(cfg, ex, clean, /*noisy_twins=*/false);
    auto fv = denoiser_forward_tape(tape, cfg, pv, lay.input);

    std::vector<Tape::Var> parts;
    std::int64_t terms = 0;
    for (int i = 1; i <= ex.num_blocks(); ++i) {
        int next_size = i < ex.num_blocks() ? static_cast<int>(ex.decomp.blocks[i].size()) : 0;
        if (next_size > cfg.max_block_size)
            throw std::runtime_error("blocksize_loss: graph " + std::to_string(ex.graph_id) + " block " +
                                     std::to_string(i + 1) + " has size " + std::to_string(next_size) +
                                     " above max_block_size " + std::to_string(cfg.max_block_size));
        parts.push_back(detail::ce_row(tape, fv.size_logits[i - 1], next_size));
        ++terms;
        if (cfg.degree_conditioning && i < ex.num_blocks()) {
            int next_degree = ex.block_degree[i];
            if (next_degree > cfg.max_degree)
                throw std::runtime_error("blocksize_loss: graph " + std::to_string(ex.graph_id) +
                                         " next-block degree " + std::to_string(next_degree) +
                                         " above max_degree " + std::to_string(cfg.max_degree));
            parts.push_back(detail::ce_row(tape, fv.degree_logits[i - 1], next_degree));
            ++terms;
        }
    }
    return {tape.add_list(parts), terms};
}

/// Sequential variant: one forward per task, each on the prefix plus a clean
/// flagged copy of its last block.
inline LossVar blocksize_loss_sequential_tape(Tape& tape, const DenoiserConfig& cfg, const ParamVars& pv,
                                              const TrainExample& ex) {
    if (ex.num_blocks() == 0) throw std::invalid_argument("blocksize_loss: empty decomposition");
    const LabeledGraph& g = ex.graph;
    std::vector<Tape::Var> parts;
    std::int64_t terms = 0;
    for (int i = 1; i <= ex.num_blocks(); ++i) {
        // Prefix blocks < i real; block i enters as clean flagged twins.
        DenoiserInput in;
        std::vector<int> prefix, fresh;
        for (int v = 0; v < g.n; ++v) {
            if (ex.decomp.phi[v] < i) prefix.push_back(v);
            if (ex.decomp.phi[v] == i) fresh.push_back(v);
        }
        int n = static_cast<int>(prefix.size() + fresh.size());
        in.n = n;
        in.t = 0;
        in.node_labels.resize(n);
        in.degrees.resize(n);
        in.mask.block_ids.resize(n);
        in.mask.virtual_flags.assign(n, 0);
        in.edge_labels.assign(static_cast<std::size_t>(n) * n, 0);
        std::vector<int> local_of(g.n, -1);
        int local = 0;
        std::vector<int> twins;
        for (int v : prefix) {
            local_of[v] = local;
            in.node_labels[local] = g.node_labels[v];
            in.degrees[local] = ex.node_degree[v];
            in.mask.block_ids[local] = ex.decomp.phi[v];
            ++local;
        }
        for (int v : fresh) {
            local_of[v] = local;
            twins.push_back(local);
            in.node_labels[local] = g.node_labels[v];
            in.degrees[local] = ex.node_degree[v];
            in.mask.block_ids[local] = i;
            in.mask.virtual_flags[local] = 1;
            ++local;
        }
        auto all = prefix;
        all.insert(all.end(), fresh.begin(), fresh.end());
        for (std::size_t x = 0; x < all.size(); ++x)
            for (std::size_t y = x + 1; y < all.size(); ++y) {
                int a = all[x], b = all[y];
                int la = local_of[a], lb = local_of[b];
                in.edge_labels[static_cast<std::size_t>(la) * n + lb] = g.edge(a, b);
                in.edge_labels[static_cast<std::size_t>(lb) * n + la] = g.edge(a, b);
            }
        in.virtual_blocks = {twins};
        auto fv = denoiser_forward_tape(tape, cfg, pv, in);
        int next_size = i < ex.num_blocks() ? static_cast<int>(ex.decomp.blocks[i].size()) : 0;
        if (next_size > cfg.max_block_size)
            throw std::runtime_error("blocksize_loss: graph " + std::to_string(ex.graph_id) +
                                     " exceeds max_block_size");
        parts.push_back(detail::ce_row(tape, fv.size_logits[0], next_size));
        ++terms;
        if (cfg.degree_conditioning && i < ex.num_blocks()) {
            parts.push_back(detail::ce_row(tape, fv.degree_logits[0], ex.block_degree[i]));
            ++terms;
        }
    }
    return {tape.add_list(parts), terms};
}

// ---------------------------------------------------------------------------
// Optimizer and epoch loop
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::int64_t step = 0;
    GradMap m, v;
};

struct TrainerConfig {
    enum class Mode { sequential, parallel };
    Mode mode = Mode::parallel;
    int epochs = 400;
    int batch_size = 16;
    double lr = 3e-4;
    double lr_min = 1e-5;
    // The size/degree network converges far too slowly at the diffusion
    // net's rate on desk-scale data, so it gets its own peak rate with a
    // proportionally scaled floor.
    double lr_size = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double ce_weight = 0.1;
    std::uint64_t seed = 0;
};

inline double cosine_decay(double peak, double floor, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 1) return peak;
    double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(M_PI * frac));
}

inline double cosine_lr(const TrainerConfig& tc, std::int64_t step, std::int64_t total_steps) {
    return cosine_decay(tc.lr, tc.lr_min, step, total_steps);
}

inline void adam_step(ParamStore& params, const GradMap& grads, OptimizerState& st,
                      const TrainerConfig& tc, double lr) {
    st.step += 1;
    double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(st.step));
    for (auto& [name, p] : params.items) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        Tensor& m = st.m.try_emplace(name, Tensor(p.rows, p.cols)).first->second;
        Tensor& v = st.v.try_emplace(name, Tensor(p.rows, p.cols)).first->second;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = tc.beta1 * m.data[i] + (1.0 - tc.beta1) * g.data[i];
            v.data[i] = tc.beta2 * v.data[i] + (1.0 - tc.beta2) * g.data[i] * g.data[i];
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + tc.adam_eps);
        }
    }
}

struct EpochMetrics {
    double diffusion_loss = 0.0;  // per supervised element
    double size_loss = 0.0;       // per size/degree term
    std::int64_t elements = 0;
    std::int64_t size_terms = 0;
    bool finite = true;
};

namespace detail {

inline void accumulate(GradMap& into, const Tape& tape, const ParamVars& pv, const ParamStore& params) {
    for (const auto& [name, t] : params.items) {
        const Tensor& g = tape.grad(pv.at(name));
        if (g.size() == 0) continue;
        auto it = into.try_emplace(name, Tensor(t.rows, t.cols)).first;
        for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
    }
}

inline void scale_grads(GradMap& grads, double f) {
    for (auto& [name, g] : grads)
        for (double& x : g.data) x *= f;
}

}  // namespace detail

/// One pass over the dataset: per batch, graph losses are summed, divided by
/// the supervised element count, and stepped with Adam under cosine decay.
/// Per graph a single t ~ U{1..T} drives every block's corruption.
inline EpochMetrics train_epoch(const DenoiserConfig& cfg, ParamStore& f_params, ParamStore& g_params,
                                const std::vector<TrainExample>& dataset, const TransitionFamily& fam_v,
                                const TransitionFamily& fam_e, const TrainerConfig& tc, int epoch,
                                OptimizerState& f_opt, OptimizerState& g_opt) {
    CounterRng rng(tc.seed);
    EpochMetrics met;
    bool shared_params = &f_params == &g_params;

    std::vector<int> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = order.size(); i > 1; --i) {
        double u = rng.uniform(rng_purpose::kShuffle, static_cast<std::uint32_t>(epoch),
                               static_cast<std::uint32_t>(i), 0);
        std::swap(order[i - 1], order[static_cast<std::size_t>(u * i)]);
    }

    std::int64_t total_batches =
        static_cast<std::int64_t>((dataset.size() + tc.batch_size - 1) / tc.batch_size);
    std::int64_t total_steps = static_cast<std::int64_t>(tc.epochs) * std::max<std::int64_t>(total_batches, 1);

    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
        std::size_t stop = std::min(order.size(), start + tc.batch_size);
        GradMap f_grads, g_grads;
        double batch_diff_loss = 0.0, batch_size_loss = 0.0;
        std::int64_t batch_elems = 0, batch_terms = 0;

        for (std::size_t pos = start; pos < stop; ++pos) {
            const TrainExample& ex = dataset[order[pos]];
            int t = 1 + static_cast<int>(rng.uniform(rng_purpose::kTimeDraw,
                                                     static_cast<std::uint32_t>(ex.graph_id),
                                                     static_cast<std::uint32_t>(epoch), 0) *
                                         fam_v.schedule.t_max);
            t = std::min(t, fam_v.schedule.t_max);
            auto na = sample_noise(ex, fam_v, fam_e, t, rng, static_cast<std::uint32_t>(epoch));

            {  // diffusion loss on f
                Tape tape;
                auto pv = register_params(tape, f_params);
                LossVar loss;
                if (tc.mode == TrainerConfig::Mode::parallel) {
                    loss = parallel_diffusion_loss_tape(tape, cfg, pv, ex, na, fam_v, fam_e, tc.ce_weight);
                } else {
                    std::vector<Tape::Var> parts;
                    std::int64_t elems = 0;
                    for (int i = 1; i <= ex.num_blocks(); ++i) {
                        auto lv = block_diffusion_loss_tape(tape, cfg, pv, ex, i, na, fam_v, fam_e,
                                                            tc.ce_weight);
                        parts.push_back(lv.var);
                        elems += lv.elements;
                    }
                    loss = {tape.add_list(parts), elems};
                }
                double value = tape.value(loss.var).item();
                if (!std::isfinite(value)) {
                    met.finite = false;
                    return met;
                }
                tape.backward(loss.var);
                detail::accumulate(f_grads, tape, pv, f_params);
                batch_diff_loss += value;
                batch_elems += loss.elements;
            }
            {  // size/degree loss on g
                Tape tape;
                auto pv = register_params(tape, g_params);
                LossVar loss = tc.mode == TrainerConfig::Mode::parallel
                                   ? blocksize_loss_tape(tape, cfg, pv, ex)
                                   : blocksize_loss_sequential_tape(tape, cfg, pv, ex);
                double value = tape.value(loss.var).item();
                if (!std::isfinite(value)) {
                    met.finite = false;
                    return met;
                }
                tape.backward(loss.var);
                detail::accumulate(g_grads, tape, pv, g_params);
                batch_size_loss += value;
                batch_terms += loss.elements;
            }
        }

        double lr = cosine_lr(tc, f_opt.step, total_steps);
        double g_floor = tc.lr > 0.0 ? tc.lr_min * (tc.lr_size / tc.lr) : 0.0;
        double lr_g = cosine_decay(tc.lr_size, g_floor, f_opt.step, total_steps);
        if (batch_elems > 0) {
            // Keep the loss scale independent of graph size.
            detail::scale_grads(f_grads, 1.0 / static_cast<double>(batch_elems));
        }
        if (batch_terms > 0) detail::scale_grads(g_grads, 1.0 / static_cast<double>(batch_terms));
        if (shared_params) {
            for (auto& [name, g] : g_grads) {
                auto it = f_grads.try_emplace(name, Tensor(g.rows, g.cols)).first;
                for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
            }
        }
        adam_step(f_params, f_grads, f_opt, tc, lr);
        if (!shared_params) adam_step(g_params, g_grads, g_opt, tc, lr_g);

        met.diffusion_loss += batch_diff_loss;
        met.size_loss += batch_size_loss;
        met.elements += batch_elems;
        met.size_terms += batch_terms;
    }
    if (met.elements > 0) met.diffusion_loss /= static_cast<double>(met.elements);
    if (met.size_terms > 0) met.size_loss /= static_cast<double>(met.size_terms);
    return met;
}

}  // namespace blockdiff
