#pragma once

#include <algorithm>
#include <iostream>
#include <limits>
#include <vector>

#include "blockdiff/biguint.hpp"
#include "blockdiff/graph.hpp"

namespace blockdiff {

/// Node ranking produced by iterative minimum-weighted-degree peeling.
/// blocks[r-1] holds the nodes with rank r; rank 1 is the structural core
/// (the last survivors of the peel), so prefixes grow outward.
struct BlockDecomposition {
    std::vector<int> phi;                 // length n, ranks in [1, num_blocks()]
    std::vector<std::vector<int>> blocks; // each sorted ascending
    int k_hops = 0;
    int component_count = 1;

    int num_blocks() const { return static_cast<int>(blocks.size()); }

    friend bool operator==(const BlockDecomposition& a, const BlockDecomposition& b) {
        return a.phi == b.phi && a.blocks == b.blocks && a.k_hops == b.k_hops;
    }
};

/// Per-hop neighbor counts folded into one exact integer:
///   w(v) = sum_k d_k(v) * n^(k_hops - k),
/// where d_k(v) is the number of nodes at shortest-path distance exactly k.
/// Since d_k < n this is a positional encoding of [d_1..d_K]: equal weights
/// iff equal per-hop counts, and lower hops dominate. k_hops == 0 gives every
/// node weight 1 (the degenerate single-block regime).
inline std::vector<BigUint> weighted_degree(const LabeledGraph& g, int k_hops) {
    if (k_hops < 0) throw std::invalid_argument("weighted_degree: k_hops must be >= 0");
    std::vector<BigUint> w(g.n);
    if (k_hops == 0) {
        for (int v = 0; v < g.n; ++v) w[v] = BigUint(1);
        return w;
    }
    // Powers n^(k_hops-k) for k = 1..k_hops.
    std::vector<BigUint> pow(k_hops + 1);
    pow[0] = BigUint(1);
    for (int e = 1; e <= k_hops; ++e) pow[e] = pow[e - 1] * static_cast<std::uint32_t>(g.n);

    std::vector<int> dist(g.n);
    std::vector<int> frontier, next;
    for (int v = 0; v < g.n; ++v) {
        std::fill(dist.begin(), dist.end(), -1);
        dist[v] = 0;
        frontier.assign(1, v);
        BigUint acc;
        for (int k = 1; k <= k_hops && !frontier.empty(); ++k) {
            next.clear();
            for (int u : frontier) {
                for (int t = 0; t < g.n; ++t) {
                    if (dist[t] == -1 && g.edge(u, t) != 0) {
                        dist[t] = k;
                        next.push_back(t);
                    }
                }
            }
            acc += pow[k_hops - k] * static_cast<std::uint32_t>(next.size());
            frontier.swap(next);
        }
        w[v] = acc;
    }
    return w;
}

enum class PeelWeights {
    residual,  // recompute weights on the residual graph each round
    original   // rank by weights of the original graph throughout
};

namespace detail {

/// Peels one connected node set; returns removal rounds in removal order.
inline std::vector<std::vector<int>> peel_rounds(const LabeledGraph& g, const std::vector<int>& comp,
                                                 int k_hops, PeelWeights mode) {
    std::vector<std::vector<int>> rounds;
    std::vector<int> alive = comp;  // ascending original indices

    std::vector<BigUint> static_w;
    if (mode == PeelWeights::original) {
        LabeledGraph h = induced_subgraph(g, alive);
        static_w = weighted_degree(h, k_hops);
    }

    std::vector<int> alive_pos(g.n, -1);
    while (!alive.empty()) {
        std::vector<BigUint> w;
        if (mode == PeelWeights::residual) {
            LabeledGraph h = induced_subgraph(g, alive);
            w = weighted_degree(h, k_hops);
        } else {
            // Static weights indexed by position within the original component.
            for (std::size_t i = 0; i < comp.size(); ++i) alive_pos[comp[i]] = static_cast<int>(i);
            w.clear();
            w.reserve(alive.size());
            for (int v : alive) w.push_back(static_w[alive_pos[v]]);
        }
        const BigUint* mn = &w[0];
        for (const auto& x : w)
            if (x < *mn) mn = &x;
        std::vector<int> removed, surviving;
        for (std::size_t i = 0; i < alive.size(); ++i) {
            if (w[i] == *mn)
                removed.push_back(alive[i]);
            else
                surviving.push_back(alive[i]);
        }
        rounds.push_back(std::move(removed));
        alive.swap(surviving);
    }
    return rounds;
}

}  // namespace detail

/// Iterative peeling: while nodes remain, remove every node attaining the
/// minimum weighted degree of the residual graph as one round. Blocks are
/// numbered in reverse removal order. Disconnected inputs are peeled per
/// component and merged round-by-round, with a warning.
inline BlockDecomposition structural_partial_order(const LabeledGraph& g, int k_hops,
                                                   PeelWeights mode = PeelWeights::residual,
                                                   bool warn_disconnected = true) {
    BlockDecomposition d;
    d.k_hops = k_hops;
    d.phi.assign(g.n, 0);
    if (g.n == 0) return d;

    auto comps = connected_components(g);
    d.component_count = static_cast<int>(comps.size());
    if (comps.size() > 1 && warn_disconnected)
        std::cerr << "[blockdiff] warning: structural_partial_order on a disconnected graph ("
                  << comps.size() << " components); peeling per component\n";

    // Merge per-component removal rounds by round index, then reverse so the
    // last survivors form block 1.
    std::vector<std::vector<int>> merged;
    for (const auto& comp : comps) {
        auto rounds = detail::peel_rounds(g, comp, k_hops, mode);
        if (rounds.size() > merged.size()) merged.resize(rounds.size());
        for (std::size_t r = 0; r < rounds.size(); ++r)
            merged[r].insert(merged[r].end(), rounds[r].begin(), rounds[r].end());
    }
    std::reverse(merged.begin(), merged.end());
    for (auto& blk : merged) std::sort(blk.begin(), blk.end());

    d.blocks = std::move(merged);
    for (int r = 0; r < d.num_blocks(); ++r)
        for (int v : d.blocks[r]) d.phi[v] = r + 1;
    return d;
}

/// The growing prefixes G[B_{1:i}] for i = 1..K_B, with the original-index
/// map for each (node_maps[i][local] == original index). Prefix nodes follow
/// the natural order of g.
struct PrefixGraphs {
    std::vector<LabeledGraph> graphs;
    std::vector<std::vector<int>> node_maps;
};

inline PrefixGraphs block_prefix_graphs(const LabeledGraph& g, const BlockDecomposition& d) {
    PrefixGraphs out;
    std::vector<int> nodes;
    for (int i = 0; i < d.num_blocks(); ++i) {
        nodes.insert(nodes.end(), d.blocks[i].begin(), d.blocks[i].end());
        std::sort(nodes.begin(), nodes.end());
        out.graphs.push_back(induced_subgraph(g, nodes));
        out.node_maps.push_back(nodes);
    }
    return out;
}

}  // namespace blockdiff
