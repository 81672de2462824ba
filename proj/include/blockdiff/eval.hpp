#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "blockdiff/graph.hpp"
#include "blockdiff/rng.hpp"

namespace blockdiff {

// ---------------------------------------------------------------------------
// Per-graph statistics
// ---------------------------------------------------------------------------

/// Degree counts binned 0..max degree, normalized to sum 1.
inline std::vector<double> degree_histogram(const LabeledGraph& g) {
    if (g.n < 1) throw std::invalid_argument("degree_histogram: empty graph");
    std::vector<int> deg(g.n, 0);
    int mx = 0;
    for (int v = 0; v < g.n; ++v) {
        deg[v] = g.degree(v);
        mx = std::max(mx, deg[v]);
    }
    std::vector<double> h(mx + 1, 0.0);
    for (int v = 0; v < g.n; ++v) h[deg[v]] += 1.0;
    for (double& x : h) x /= g.n;
    return h;
}

/// Per-node triangle ratio binned into 100 uniform bins on [0, 1].
inline std::vector<double> clustering_histogram(const LabeledGraph& g) {
    if (g.n < 1) throw std::invalid_argument("clustering_histogram: empty graph");
    std::vector<double> h(100, 0.0);
    for (int v = 0; v < g.n; ++v) {
        std::vector<int> nb;
        for (int u = 0; u < g.n; ++u)
            if (g.edge(v, u) != 0) nb.push_back(u);
        double c = 0.0;
        if (nb.size() >= 2) {
            int tri = 0;
            for (std::size_t a = 0; a < nb.size(); ++a)
                for (std::size_t b = a + 1; b < nb.size(); ++b)
                    if (g.edge(nb[a], nb[b]) != 0) ++tri;
            c = 2.0 * tri / (static_cast<double>(nb.size()) * (nb.size() - 1));
        }
        int bin = std::min(99, static_cast<int>(c * 100.0));
        h[bin] += 1.0;
    }
    for (double& x : h) x /= g.n;
    return h;
}

/// Orbit participation counts over the 11 orbits of the six connected
/// 4-node graphlets, by brute force over all C(n,4) subsets. Orbits are
/// indexed: path ends, path mids, star leaves, star center, cycle,
/// paw pendant, paw mids, paw hub, diamond rim, diamond hub, clique.
inline std::vector<double> orbit_counts(const LabeledGraph& g) {
    std::vector<double> counts(11, 0.0);
    if (g.n < 4) return counts;
    std::array<int, 4> s{};
    for (s[0] = 0; s[0] < g.n; ++s[0])
        for (s[1] = s[0] + 1; s[1] < g.n; ++s[1])
            for (s[2] = s[1] + 1; s[2] < g.n; ++s[2])
                for (s[3] = s[2] + 1; s[3] < g.n; ++s[3]) {
                    int deg[4] = {0, 0, 0, 0};
                    int edges = 0;
                    for (int a = 0; a < 4; ++a)
                        for (int b = a + 1; b < 4; ++b)
                            if (g.edge(s[a], s[b]) != 0) {
                                ++deg[a];
                                ++deg[b];
                                ++edges;
                            }
                    if (edges < 3) continue;
                    // Connectivity on 4 nodes: reject the triangle-plus-isolate
                    // and other split shapes (any isolated vertex).
                    if (deg[0] == 0 || deg[1] == 0 || deg[2] == 0 || deg[3] == 0) continue;
                    int sorted[4] = {deg[0], deg[1], deg[2], deg[3]};
                    std::sort(sorted, sorted + 4);
                    if (edges == 3) {
                        if (sorted[3] == 3) {
                            // Star: leaves deg 1, center deg 3.
                            for (int a = 0; a < 4; ++a) counts[deg[a] == 3 ? 3 : 2] += 1.0;
                        } else {
                            // Path: ends deg 1, mids deg 2.
                            for (int a = 0; a < 4; ++a) counts[deg[a] == 1 ? 0 : 1] += 1.0;
                        }
                    } else if (edges == 4) {
                        if (sorted[0] == 2) {
                            counts[4] += 4.0;  // cycle, all deg 2
                        } else {
                            // Paw: pendant deg 1, two mids deg 2, hub deg 3.
                            for (int a = 0; a < 4; ++a)
                                counts[deg[a] == 1 ? 5 : (deg[a] == 2 ? 6 : 7)] += 1.0;
                        }
                    } else if (edges == 5) {
                        // Diamond: rim deg 2, hubs deg 3.
                        for (int a = 0; a < 4; ++a) counts[deg[a] == 2 ? 8 : 9] += 1.0;
                    } else {
                        counts[10] += 4.0;  // clique
                    }
                }
    return counts;
}

/// Orbit vector normalized to sum 1 (all-zero stays all-zero).
inline std::vector<double> orbit_histogram(const LabeledGraph& g) {
    auto h = orbit_counts(g);
    double total = 0;
    for (double x : h) total += x;
    if (total > 0)
        for (double& x : h) x /= total;
    return h;
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

/// Squared maximum mean discrepancy between two sets of normalized
/// histograms under a Gaussian kernel on total-variation distance:
///   k(x, y) = exp(-TV(x, y)^2 / bandwidth^2),  TV = 0.5 * sum |x - y|.
/// The biased V-statistic is used, so identical multisets give exactly 0.
inline double mmd(const std::vector<std::vector<double>>& set_a,
                  const std::vector<std::vector<double>>& set_b, double bandwidth = 1.0) {
    if (set_a.empty() || set_b.empty()) throw std::invalid_argument("mmd: empty sample set");
    std::size_t dim = 0;
    for (const auto& h : set_a) dim = std::max(dim, h.size());
    for (const auto& h : set_b) dim = std::max(dim, h.size());
    auto tv = [&](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0;
        for (std::size_t i = 0; i < dim; ++i) {
            double xi = i < x.size() ? x[i] : 0.0;
            double yi = i < y.size() ? y[i] : 0.0;
            s += std::abs(xi - yi);
        }
        return 0.5 * s;
    };
    auto kernel = [&](const std::vector<double>& x, const std::vector<double>& y) {
        double d = tv(x, y);
        return std::exp(-d * d / (bandwidth * bandwidth));
    };
    double kaa = 0, kbb = 0, kab = 0;
    for (const auto& x : set_a)
        for (const auto& y : set_a) kaa += kernel(x, y);
    for (const auto& x : set_b)
        for (const auto& y : set_b) kbb += kernel(x, y);
    for (const auto& x : set_a)
        for (const auto& y : set_b) kab += kernel(x, y);
    double m = static_cast<double>(set_a.size()), n = static_cast<double>(set_b.size());
    double v = kaa / (m * m) + kbb / (n * n) - 2.0 * kab / (m * n);
    return v < 0.0 ? 0.0 : v;
}

struct MmdReport {
    double degree = 0.0;
    double clustering = 0.0;
    double orbit = 0.0;
};

inline MmdReport mmd_report(const std::vector<LabeledGraph>& generated,
                            const std::vector<LabeledGraph>& reference, double bandwidth = 1.0) {
    auto collect = [](const std::vector<LabeledGraph>& gs, auto fn) {
        std::vector<std::vector<double>> out;
        out.reserve(gs.size());
        for (const auto& g : gs) out.push_back(fn(g));
        return out;
    };
    MmdReport r;
    r.degree = mmd(collect(generated, degree_histogram), collect(reference, degree_histogram), bandwidth);
    r.clustering =
        mmd(collect(generated, clustering_histogram), collect(reference, clustering_histogram), bandwidth);
    r.orbit = mmd(collect(generated, orbit_histogram), collect(reference, orbit_histogram), bandwidth);
    return r;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generators
// ---------------------------------------------------------------------------

enum class DatasetKind { community, caveman, grid };

inline DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "community") return DatasetKind::community;
    if (s == "caveman") return DatasetKind::caveman;
    if (s == "grid") return DatasetKind::grid;
    throw std::invalid_argument("unknown dataset kind: " + s);
}

struct DatasetParams {
    // community
    int community_min = 6, community_max = 10;
    double p_in = 0.7;
    double inter_frac = 0.05;
    // caveman
    int caveman_cliques_min = 2, caveman_cliques_max = 4;
    int caveman_size_min = 4, caveman_size_max = 6;
    bool caveman_rewire = true;
    // grid
    int grid_min = 3, grid_max = 6;

    void validate(DatasetKind kind) const {
        switch (kind) {
            case DatasetKind::community:
                if (community_min < 2 || community_max < community_min || p_in <= 0.0 || p_in > 1.0 ||
                    inter_frac < 0.0)
                    throw std::invalid_argument("community parameters out of range");
                break;
            case DatasetKind::caveman:
                if (caveman_cliques_min < 2 || caveman_cliques_max < caveman_cliques_min ||
                    caveman_size_min < 3 || caveman_size_max < caveman_size_min)
                    throw std::invalid_argument("caveman parameters out of range");
                break;
            case DatasetKind::grid:
                if (grid_min < 2 || grid_max < grid_min)
                    throw std::invalid_argument("grid parameters out of range");
                break;
        }
    }
};

namespace detail {

inline bool is_connected(const LabeledGraph& g) { return connected_components(g).size() <= 1; }

inline int rand_int(const CounterRng& rng, std::uint32_t a, std::uint32_t b, std::uint32_t c, int lo,
                    int hi) {
    return lo + static_cast<int>(rng.uniform(rng_purpose::kDataset, a, b, c) * (hi - lo + 1));
}

}  // namespace detail

/// Two dense blocks joined by a few inter-community edges; resampled until
/// connected (a near-certain event at these densities).
inline LabeledGraph make_community_graph(const DatasetParams& p, const CounterRng& rng, int id) {
    for (std::uint32_t attempt = 0; attempt < 100; ++attempt) {
        std::uint32_t base = static_cast<std::uint32_t>(id) * 128 + attempt;
        int s1 = detail::rand_int(rng, base, 0, 1, p.community_min, p.community_max);
        int s2 = detail::rand_int(rng, base, 0, 2, p.community_min, p.community_max);
        int n = s1 + s2;
        LabeledGraph g = LabeledGraph::empty(n, 1, 2);
        std::uint32_t c = 8;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                bool same = (i < s1) == (j < s1);
                if (same && rng.uniform(rng_purpose::kDataset, base, ++c, 3) < p.p_in) g.set_edge(i, j, 1);
            }
        int inter = p.inter_frac == 0.0 ? 0 : std::max(1, static_cast<int>(std::lround(p.inter_frac * n)));
        for (int e = 0; e < inter; ++e) {
            int a = detail::rand_int(rng, base, 1000 + e, 4, 0, s1 - 1);
            int b = s1 + detail::rand_int(rng, base, 1000 + e, 5, 0, s2 - 1);
            g.set_edge(a, b, 1);
        }
        // With no bridging edges requested the two blocks are intentionally
        // disjoint, so skip the connectivity retry.
        if (inter == 0 || detail::is_connected(g)) return g;
    }
    throw std::runtime_error("make_community_graph: failed to draw a connected sample");
}

/// Ring of cliques with one connector edge per adjacent pair; with rewiring
/// on, each connector replaces a random internal edge of its source clique.
inline LabeledGraph make_caveman_graph(const DatasetParams& p, const CounterRng& rng, int id) {
    std::uint32_t base = static_cast<std::uint32_t>(id) * 128;
    int c = detail::rand_int(rng, base, 1, 1, p.caveman_cliques_min, p.caveman_cliques_max);
    int k = detail::rand_int(rng, base, 1, 2, p.caveman_size_min, p.caveman_size_max);
    int n = c * k;
    LabeledGraph g = LabeledGraph::empty(n, 1, 2);
    for (int q = 0; q < c; ++q)
        for (int i = 0; i < k; ++i)
            for (int j = i + 1; j < k; ++j) g.set_edge(q * k + i, q * k + j, 1);
    int pairs = c == 2 ? 1 : c;
    for (int q = 0; q < pairs; ++q) {
        int q2 = (q + 1) % c;
        int u = q * k + detail::rand_int(rng, base, 2000 + q, 3, 0, k - 1);
        int v = q2 * k + detail::rand_int(rng, base, 2000 + q, 4, 0, k - 1);
        if (p.caveman_rewire) {
            // Drop one internal edge of clique q not touching the connector
            // endpoint, keeping the clique connected.
            int a = detail::rand_int(rng, base, 2000 + q, 5, 0, k - 1);
            int b = detail::rand_int(rng, base, 2000 + q, 6, 0, k - 1);
            if (a != b && q * k + a != u && q * k + b != u) g.set_edge(q * k + a, q * k + b, 0);
        }
        g.set_edge(u, v, 1);
    }
    return g;
}

inline LabeledGraph make_grid_graph(const DatasetParams& p, const CounterRng& rng, int id) {
    std::uint32_t base = static_cast<std::uint32_t>(id) * 128;
    int w = detail::rand_int(rng, base, 3, 1, p.grid_min, p.grid_max);
    int h = detail::rand_int(rng, base, 3, 2, p.grid_min, p.grid_max);
    LabeledGraph g = LabeledGraph::empty(w * h, 1, 2);
    auto idx = [&](int x, int y) { return y * w + x; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (x + 1 < w) g.set_edge(idx(x, y), idx(x + 1, y), 1);
            if (y + 1 < h) g.set_edge(idx(x, y), idx(x, y + 1), 1);
        }
    return g;
}

inline std::vector<LabeledGraph> generate_dataset(DatasetKind kind, const DatasetParams& params, int count,
                                                  const CounterRng& rng) {
    params.validate(kind);
    if (count < 1) throw std::invalid_argument("generate_dataset: count must be positive");
    std::vector<LabeledGraph> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        switch (kind) {
            case DatasetKind::community: out.push_back(make_community_graph(params, rng, i)); break;
            case DatasetKind::caveman: out.push_back(make_caveman_graph(params, rng, i)); break;
            case DatasetKind::grid: out.push_back(make_grid_graph(params, rng, i)); break;
        }
    }
    return out;
}

/// Erdos-Renyi graph matched to a reference size and edge density; used as
/// the evaluation baseline.
inline LabeledGraph make_er_matched(const LabeledGraph& ref, const CounterRng& rng, int id) {
    int n = ref.n;
    double pairs = n * (n - 1) / 2.0;
    double p = pairs > 0 ? ref.num_edges() / pairs : 0.0;
    LabeledGraph g = LabeledGraph::empty(n, 1, 2);
    std::uint32_t c = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (rng.uniform(rng_purpose::kDataset, 0xE000000u + static_cast<std::uint32_t>(id), ++c, 9) < p)
                g.set_edge(i, j, 1);
    return g;
}

}  // namespace blockdiff
