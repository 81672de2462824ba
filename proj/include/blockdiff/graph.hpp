#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockdiff {

/// Undirected labeled graph with dense categorical edge storage.
/// Edge class 0 means "no edge"; the diagonal is fixed to class 0 (no
/// self-loops). All n*n pairs are modeled, absences included.
struct LabeledGraph {
    int n = 0;
    int k_v = 1;  // node vocabulary size
    int k_e = 2;  // edge vocabulary size, class 0 = absent
    std::vector<int> node_labels;  // length n, values in [0, k_v)
    std::vector<int> edge_labels;  // n*n row-major, symmetric, diagonal 0

    static LabeledGraph empty(int n, int k_v, int k_e) {
        LabeledGraph g;
        g.n = n;
        g.k_v = k_v;
        g.k_e = k_e;
        g.node_labels.assign(static_cast<std::size_t>(n), 0);
        g.edge_labels.assign(static_cast<std::size_t>(n) * n, 0);
        return g;
    }

    int edge(int i, int j) const { return edge_labels[static_cast<std::size_t>(i) * n + j]; }

    void set_edge(int i, int j, int label) {
        edge_labels[static_cast<std::size_t>(i) * n + j] = label;
        edge_labels[static_cast<std::size_t>(j) * n + i] = label;
    }

    int degree(int i) const {
        int d = 0;
        for (int j = 0; j < n; ++j)
            if (edge(i, j) != 0) ++d;
        return d;
    }

    int num_edges() const {
        int m = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (edge(i, j) != 0) ++m;
        return m;
    }

    void validate() const {
        if (n < 0) throw std::invalid_argument("LabeledGraph: negative node count");
        if (k_v < 1 || k_e < 1) throw std::invalid_argument("LabeledGraph: vocabulary sizes must be positive");
        if (static_cast<int>(node_labels.size()) != n || edge_labels.size() != static_cast<std::size_t>(n) * n)
            throw std::invalid_argument("LabeledGraph: field sizes inconsistent with n");
        for (int i = 0; i < n; ++i) {
            if (node_labels[i] < 0 || node_labels[i] >= k_v)
                throw std::invalid_argument("LabeledGraph: node label out of range at node " + std::to_string(i));
            if (edge(i, i) != 0)
                throw std::invalid_argument("LabeledGraph: self-loop at node " + std::to_string(i));
            for (int j = 0; j < n; ++j) {
                if (edge(i, j) < 0 || edge(i, j) >= k_e)
                    throw std::invalid_argument("LabeledGraph: edge label out of range");
                if (edge(i, j) != edge(j, i))
                    throw std::invalid_argument("LabeledGraph: edge labels must be symmetric");
            }
        }
    }

    friend bool operator==(const LabeledGraph& a, const LabeledGraph& b) {
        return a.n == b.n && a.k_v == b.k_v && a.k_e == b.k_e && a.node_labels == b.node_labels &&
               a.edge_labels == b.edge_labels;
    }
};

/// Bijection on {0..n-1}. mapping[i] is the image of node i.
struct Permutation {
    std::vector<int> mapping;

    int n() const { return static_cast<int>(mapping.size()); }

    static Permutation identity(int n) {
        Permutation p;
        p.mapping.resize(n);
        std::iota(p.mapping.begin(), p.mapping.end(), 0);
        return p;
    }

    Permutation inverse() const {
        Permutation inv;
        inv.mapping.assign(mapping.size(), 0);
        for (int i = 0; i < n(); ++i) inv.mapping[mapping[i]] = i;
        return inv;
    }

    /// (a.compose(b))(i) == a(b(i))
    Permutation compose(const Permutation& b) const {
        Permutation out;
        out.mapping.resize(mapping.size());
        for (int i = 0; i < n(); ++i) out.mapping[i] = mapping[b.mapping[i]];
        return out;
    }

    void validate() const {
        std::vector<int> sorted = mapping;
        std::sort(sorted.begin(), sorted.end());
        for (int i = 0; i < n(); ++i)
            if (sorted[i] != i) throw std::invalid_argument("Permutation: mapping is not a bijection");
    }

    friend bool operator==(const Permutation& a, const Permutation& b) { return a.mapping == b.mapping; }
};

/// Relabels nodes so that node i of the output carries the data of node
/// p^{-1}(i) of the input, i.e. input node v lands at position p(v).
inline LabeledGraph apply_permutation(const LabeledGraph& g, const Permutation& p) {
    if (p.n() != g.n) throw std::invalid_argument("apply_permutation: size mismatch");
    p.validate();
    LabeledGraph out = LabeledGraph::empty(g.n, g.k_v, g.k_e);
    for (int v = 0; v < g.n; ++v) out.node_labels[p.mapping[v]] = g.node_labels[v];
    for (int u = 0; u < g.n; ++u)
        for (int v = 0; v < g.n; ++v)
            out.edge_labels[static_cast<std::size_t>(p.mapping[u]) * g.n + p.mapping[v]] = g.edge(u, v);
    return out;
}

/// Induced subgraph on an ordered subset of nodes. Local node i of the output
/// is nodes[i] of the input.
inline LabeledGraph induced_subgraph(const LabeledGraph& g, const std::vector<int>& nodes) {
    std::vector<bool> seen(g.n, false);
    for (int v : nodes) {
        if (v < 0 || v >= g.n) throw std::invalid_argument("induced_subgraph: node index out of range");
        if (seen[v]) throw std::invalid_argument("induced_subgraph: duplicate node index");
        seen[v] = true;
    }
    int m = static_cast<int>(nodes.size());
    LabeledGraph out = LabeledGraph::empty(m, g.k_v, g.k_e);
    for (int i = 0; i < m; ++i) out.node_labels[i] = g.node_labels[nodes[i]];
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            out.edge_labels[static_cast<std::size_t>(i) * m + j] = g.edge(nodes[i], nodes[j]);
    return out;
}

/// Connected components over edges with label != 0, each sorted ascending,
/// ordered by smallest member.
inline std::vector<std::vector<int>> connected_components(const LabeledGraph& g) {
    std::vector<std::vector<int>> comps;
    std::vector<bool> visited(g.n, false);
    for (int s = 0; s < g.n; ++s) {
        if (visited[s]) continue;
        std::vector<int> comp;
        std::queue<int> q;
        q.push(s);
        visited[s] = true;
        while (!q.empty()) {
            int v = q.front();
            q.pop();
            comp.push_back(v);
            for (int w = 0; w < g.n; ++w) {
                if (!visited[w] && g.edge(v, w) != 0) {
                    visited[w] = true;
                    q.push(w);
                }
            }
        }
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
    }
    return comps;
}

constexpr int kDefaultAutomorphismCap = 10;

/// All label-preserving automorphisms, by backtracking with degree/label
/// pruning. Factorial worst case, so n is capped; this exists for symmetry
/// demonstrations on tiny graphs, not production search.
inline std::vector<Permutation> enumerate_automorphisms(const LabeledGraph& g,
                                                        int cap = kDefaultAutomorphismCap) {
    if (g.n > cap)
        throw std::invalid_argument("enumerate_automorphisms: n=" + std::to_string(g.n) +
                                    " exceeds cap=" + std::to_string(cap) +
                                    "; raise the cap argument for a deliberate factorial search");
    std::vector<int> deg(g.n);
    for (int i = 0; i < g.n; ++i) deg[i] = g.degree(i);

    std::vector<Permutation> result;
    std::vector<int> image(g.n, -1);
    std::vector<bool> used(g.n, false);

    auto consistent = [&](int v, int target) {
        if (g.node_labels[v] != g.node_labels[target] || deg[v] != deg[target]) return false;
        for (int u = 0; u < v; ++u)
            if (g.edge(v, u) != g.edge(target, image[u])) return false;
        return true;
    };

    // Backtracking over candidate images of nodes 0..n-1 in order.
    std::function<void(int)> rec = [&](int v) {
        if (v == g.n) {
            Permutation p;
            p.mapping = image;
            result.push_back(p);
            return;
        }
        for (int t = 0; t < g.n; ++t) {
            if (used[t] || !consistent(v, t)) continue;
            image[v] = t;
            used[t] = true;
            rec(v + 1);
            used[t] = false;
            image[v] = -1;
        }
    };
    rec(0);
    return result;
}

/// Node/edge classes under the automorphism group. Edge orbits are over
/// ordered pairs (i, j), i != j; self-pairs are excluded along with
/// self-loops.
struct OrbitPartition {
    std::vector<std::vector<int>> node_orbits;                    // each sorted, ordered by min member
    std::vector<std::vector<std::pair<int, int>>> edge_orbits;    // ordered pairs
    std::vector<int> node_orbit_id;                               // length n
    std::vector<int> edge_orbit_id;                               // n*n, -1 on diagonal
};

inline OrbitPartition orbit_partition(const LabeledGraph& g, int cap = kDefaultAutomorphismCap) {
    auto autos = enumerate_automorphisms(g, cap);
    OrbitPartition out;
    out.node_orbit_id.assign(g.n, -1);
    out.edge_orbit_id.assign(static_cast<std::size_t>(g.n) * g.n, -1);

    for (int v = 0; v < g.n; ++v) {
        if (out.node_orbit_id[v] != -1) continue;
        int id = static_cast<int>(out.node_orbits.size());
        std::vector<int> orbit;
        for (const auto& s : autos) {
            int w = s.mapping[v];
            if (out.node_orbit_id[w] == -1) {
                out.node_orbit_id[w] = id;
                orbit.push_back(w);
            }
        }
        std::sort(orbit.begin(), orbit.end());
        out.node_orbits.push_back(std::move(orbit));
    }

    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < g.n; ++j) {
            if (i == j) continue;
            std::size_t idx = static_cast<std::size_t>(i) * g.n + j;
            if (out.edge_orbit_id[idx] != -1) continue;
            int id = static_cast<int>(out.edge_orbits.size());
            std::vector<std::pair<int, int>> orbit;
            for (const auto& s : autos) {
                int u = s.mapping[i], v = s.mapping[j];
                std::size_t uidx = static_cast<std::size_t>(u) * g.n + v;
                if (out.edge_orbit_id[uidx] == -1) {
                    out.edge_orbit_id[uidx] = id;
                    orbit.emplace_back(u, v);
                }
            }
            std::sort(orbit.begin(), orbit.end());
            out.edge_orbits.push_back(std::move(orbit));
        }
    }
    return out;
}

}  // namespace blockdiff
