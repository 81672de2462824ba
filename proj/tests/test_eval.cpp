#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "blockdiff/eval.hpp"

using namespace blockdiff;

namespace {

LabeledGraph triangle() {
    LabeledGraph g = LabeledGraph::empty(3, 1, 2);
    g.set_edge(0, 1, 1);
    g.set_edge(0, 2, 1);
    g.set_edge(1, 2, 1);
    return g;
}

LabeledGraph cycle(int n) {
    LabeledGraph g = LabeledGraph::empty(n, 1, 2);
    for (int i = 0; i < n; ++i) g.set_edge(i, (i + 1) % n, 1);
    return g;
}

LabeledGraph star(int leaves) {
    LabeledGraph g = LabeledGraph::empty(leaves + 1, 1, 2);
    for (int i = 1; i <= leaves; ++i) g.set_edge(0, i, 1);
    return g;
}

Permutation random_permutation(const CounterRng& rng, std::uint32_t tag, int n) {
    Permutation p = Permutation::identity(n);
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng.uniform(rng_purpose::kTest, tag, static_cast<std::uint32_t>(i), 70) *
                                 (i + 1));
        std::swap(p.mapping[i], p.mapping[std::min(j, i)]);
    }
    return p;
}

// Second orbit-counting implementation: classify each connected 4-subset by
// the automorphism orbits of its induced subgraph instead of degree rules.
std::vector<double> orbit_counts_via_automorphisms(const LabeledGraph& g) {
    std::vector<double> counts(11, 0.0);
    if (g.n < 4) return counts;
    for (int a = g.n - 1; a >= 3; --a)
        for (int b = a - 1; b >= 2; --b)
            for (int c = b - 1; c >= 1; --c)
                for (int d = c - 1; d >= 0; --d) {
                    LabeledGraph sub = induced_subgraph(g, {d, c, b, a});
                    // reset labels so orbits are structural only
                    std::fill(sub.node_labels.begin(), sub.node_labels.end(), 0);
                    sub.k_v = 1;
                    if (connected_components(sub).size() != 1) continue;
                    int edges = sub.num_edges();
                    auto orb = orbit_partition(sub);
                    int degs[4];
                    for (int i = 0; i < 4; ++i) degs[i] = sub.degree(i);
                    int mx = *std::max_element(degs, degs + 4);
                    for (const auto& orbit : orb.node_orbits) {
                        int deg = degs[orbit[0]];
                        int idx = -1;
                        if (edges == 3 && mx == 2) idx = deg == 1 ? 0 : 1;           // path
                        else if (edges == 3) idx = deg == 1 ? 2 : 3;                 // star
                        else if (edges == 4 && mx == 2) idx = 4;                     // cycle
                        else if (edges == 4) idx = deg == 1 ? 5 : (deg == 2 ? 6 : 7);  // paw
                        else if (edges == 5) idx = deg == 2 ? 8 : 9;                 // diamond
                        else idx = 10;                                               // clique
                        counts[idx] += static_cast<double>(orbit.size());
                    }
                }
    return counts;
}

}  // namespace

TEST_CASE("mmd is zero for identical multisets and symmetric") {
    std::vector<std::vector<double>> a = {{0.5, 0.5}, {0.25, 0.75}, {1.0, 0.0}};
    std::vector<std::vector<double>> b = {{0.9, 0.1}, {0.2, 0.8}};
    CHECK(mmd(a, a) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(mmd(a, b) == doctest::Approx(mmd(b, a)).epsilon(1e-14));
    CHECK(mmd(a, b) >= 0.0);
    CHECK_THROWS_AS(mmd({}, b), std::invalid_argument);
}

TEST_CASE("mmd closed form for disjoint singletons") {
    // TV distance 1 at bandwidth 1: squared MMD = 2 (1 - e^{-1}).
    std::vector<std::vector<double>> a = {{1.0, 0.0}};
    std::vector<std::vector<double>> b = {{0.0, 1.0}};
    CHECK(mmd(a, b, 1.0) == doctest::Approx(2.0 * (1.0 - std::exp(-1.0))).epsilon(1e-9));
}

TEST_CASE("degree and clustering statistics on canonical graphs") {
    auto tri = triangle();
    auto dh = degree_histogram(tri);
    REQUIRE(dh.size() == 3);
    CHECK(dh[2] == doctest::Approx(1.0));
    auto ch = clustering_histogram(tri);
    CHECK(ch[99] == doctest::Approx(1.0));  // coefficient 1.0 lands in the last bin

    auto sh = clustering_histogram(star(4));
    CHECK(sh[0] == doctest::Approx(1.0));  // no triangles anywhere
}

TEST_CASE("orbit counts of the 4-cycle") {
    auto counts = orbit_counts(cycle(4));
    CHECK(counts[4] == 4.0);  // all four nodes sit on the cycle orbit
    for (int i = 0; i < 11; ++i)
        if (i != 4) CHECK(counts[i] == 0.0);
}

TEST_CASE("orbit counts match the automorphism-based second implementation") {
    CounterRng rng(3);
    for (std::uint32_t tag = 0; tag < 8; ++tag) {
        int n = 6 + static_cast<int>(tag) % 3;
        LabeledGraph g = LabeledGraph::empty(n, 1, 2);
        std::uint32_t c = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (rng.uniform(rng_purpose::kTest, tag, c++, 71) < 0.45) g.set_edge(i, j, 1);
        CHECK(orbit_counts(g) == orbit_counts_via_automorphisms(g));
    }
}

TEST_CASE("statistics are isomorphism invariant") {
    CounterRng rng(7);
    for (std::uint32_t tag = 0; tag < 6; ++tag) {
        int n = 7;
        LabeledGraph g = LabeledGraph::empty(n, 1, 2);
        std::uint32_t c = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (rng.uniform(rng_purpose::kTest, tag, c++, 72) < 0.4) g.set_edge(i, j, 1);
        auto p = random_permutation(rng, tag, n);
        auto gp = apply_permutation(g, p);
        CHECK(degree_histogram(g) == degree_histogram(gp));
        CHECK(clustering_histogram(g) == clustering_histogram(gp));
        CHECK(orbit_counts(g) == orbit_counts(gp));
    }
}

TEST_CASE("grid generator facts") {
    DatasetParams p;
    p.grid_min = 3;
    p.grid_max = 3;
    CounterRng rng(11);
    auto g = make_grid_graph(p, rng, 0);
    CHECK(g.n == 9);
    CHECK(g.num_edges() == 12);
    CHECK(connected_components(g).size() == 1);
    // Bipartite: 2-color by BFS.
    std::vector<int> color(g.n, -1);
    color[0] = 0;
    std::vector<int> stack{0};
    bool bipartite = true;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w = 0; w < g.n; ++w) {
            if (g.edge(v, w) == 0) continue;
            if (color[w] == -1) {
                color[w] = 1 - color[v];
                stack.push_back(w);
            } else if (color[w] == color[v]) {
                bipartite = false;
            }
        }
    }
    CHECK(bipartite);
}

TEST_CASE("caveman generator without rewiring is cliques plus bridges") {
    DatasetParams p;
    p.caveman_cliques_min = p.caveman_cliques_max = 2;
    p.caveman_size_min = p.caveman_size_max = 4;
    p.caveman_rewire = false;
    CounterRng rng(13);
    auto g = make_caveman_graph(p, rng, 0);
    CHECK(g.n == 8);
    CHECK(g.num_edges() == 13);  // two K4 (12) plus one bridge
    CHECK(connected_components(g).size() == 1);
    // Clustering mass concentrates near 1: nodes untouched by the bridge
    // have coefficient exactly 1.
    auto ch = clustering_histogram(g);
    CHECK(ch[99] >= 0.5);
}

TEST_CASE("community generator degenerate case gives two cliques") {
    DatasetParams p;
    p.community_min = p.community_max = 4;
    p.p_in = 1.0;
    p.inter_frac = 0.0;
    CounterRng rng(17);
    auto g = make_community_graph(p, rng, 0);
    CHECK(g.n == 8);
    CHECK(g.num_edges() == 12);
    CHECK(connected_components(g).size() == 2);
}

TEST_CASE("parameter validation") {
    DatasetParams p;
    p.p_in = 0.0;
    CHECK_THROWS_AS(p.validate(DatasetKind::community), std::invalid_argument);
    DatasetParams q;
    q.caveman_size_min = 2;
    CHECK_THROWS_AS(q.validate(DatasetKind::caveman), std::invalid_argument);
    CHECK_THROWS_AS(generate_dataset(DatasetKind::grid, DatasetParams{}, 0, CounterRng(1)),
                    std::invalid_argument);
}

TEST_CASE("mmd separates resamples from a density-matched baseline") {
    DatasetParams p;
    CounterRng rng_a(19), rng_b(23), rng_er(29);
    auto train = generate_dataset(DatasetKind::community, p, 60, rng_a);
    auto resample = generate_dataset(DatasetKind::community, p, 60, rng_b);
    std::vector<LabeledGraph> er;
    for (std::size_t i = 0; i < train.size(); ++i)
        er.push_back(make_er_matched(train[i], rng_er, static_cast<int>(i)));
    auto close = mmd_report(resample, train);
    auto far = mmd_report(er, train);
    CHECK(close.degree < far.degree);
    CHECK(close.clustering < far.clustering);
    CHECK(close.orbit < far.orbit);
}
