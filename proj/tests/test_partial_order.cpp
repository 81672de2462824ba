#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "blockdiff/partial_order.hpp"
#include "blockdiff/rng.hpp"

using namespace blockdiff;

namespace {

LabeledGraph path(int n) {
    LabeledGraph g = LabeledGraph::empty(n, 1, 2);
    for (int i = 0; i + 1 < n; ++i) g.set_edge(i, i + 1, 1);
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

LabeledGraph grid(int w, int h) {
    LabeledGraph g = LabeledGraph::empty(w * h, 1, 2);
    auto id = [&](int x, int y) { return y * w + x; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (x + 1 < w) g.set_edge(id(x, y), id(x + 1, y), 1);
            if (y + 1 < h) g.set_edge(id(x, y), id(x, y + 1), 1);
        }
    return g;
}

LabeledGraph random_connected(const CounterRng& rng, std::uint32_t tag, int n, double p) {
    // Random spanning tree plus extra edges.
    LabeledGraph g = LabeledGraph::empty(n, 1, 2);
    std::uint32_t c = 0;
    for (int v = 1; v < n; ++v) {
        int u = static_cast<int>(rng.uniform(rng_purpose::kTest, tag, c++, 10) * v);
        g.set_edge(v, std::min(u, v - 1), 1);
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (rng.uniform(rng_purpose::kTest, tag, c++, 11) < p) g.set_edge(i, j, 1);
    return g;
}

Permutation random_permutation(const CounterRng& rng, std::uint32_t tag, int n) {
    Permutation p = Permutation::identity(n);
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng.uniform(rng_purpose::kTest, tag, static_cast<std::uint32_t>(i), 12) *
                                 (i + 1));
        std::swap(p.mapping[i], p.mapping[std::min(j, i)]);
    }
    return p;
}

}  // namespace

TEST_CASE("weighted degree reduces to plain degree at one hop") {
    auto w = weighted_degree(path(3), 1);
    CHECK(w[0].to_u64() == 1);
    CHECK(w[1].to_u64() == 2);
    CHECK(w[2].to_u64() == 1);
}

TEST_CASE("weighted degree at two hops matches the hand BFS plug-in") {
    // P3, n=3: endpoints see [1,1] -> 1*3 + 1 = 4; center sees [2,0] -> 6.
    auto w = weighted_degree(path(3), 2);
    CHECK(w[0].to_u64() == 4);
    CHECK(w[1].to_u64() == 6);
    CHECK(w[2].to_u64() == 4);
}

TEST_CASE("weighted degree is constant on a vertex-transitive graph") {
    for (int k : {1, 2, 3, 5}) {
        auto w = weighted_degree(cycle(4), k);
        for (int v = 1; v < 4; ++v) CHECK(w[v] == w[0]);
    }
}

TEST_CASE("weighted degree k_hops=0 gives unit weights") {
    auto w = weighted_degree(star(3), 0);
    for (auto& x : w) CHECK(x.to_u64() == 1);
}

TEST_CASE("4-cycle peels as a single block") {
    auto d = structural_partial_order(cycle(4), 1);
    REQUIRE(d.num_blocks() == 1);
    CHECK(d.blocks[0] == std::vector<int>{0, 1, 2, 3});
    CHECK(d.phi == std::vector<int>{1, 1, 1, 1});
}

TEST_CASE("star peels leaves first so the center is the core block") {
    auto d = structural_partial_order(star(3), 1);
    REQUIRE(d.num_blocks() == 2);
    CHECK(d.blocks[0] == std::vector<int>{0});
    CHECK(d.blocks[1] == std::vector<int>{1, 2, 3});
    CHECK(d.phi == std::vector<int>{1, 2, 2, 2});
}

TEST_CASE("k_hops=0 collapses any graph to one block") {
    CounterRng rng(3);
    for (std::uint32_t tag = 0; tag < 5; ++tag) {
        auto g = random_connected(rng, tag, 9, 0.2);
        auto d = structural_partial_order(g, 0);
        CHECK(d.num_blocks() == 1);
    }
}

TEST_CASE("empty graph decomposes to nothing") {
    auto d = structural_partial_order(LabeledGraph::empty(0, 1, 2), 2);
    CHECK(d.num_blocks() == 0);
    CHECK(d.phi.empty());
}

TEST_CASE("prefix graphs grow to the whole graph") {
    auto g = star(3);
    auto d = structural_partial_order(g, 1);
    auto pre = block_prefix_graphs(g, d);
    REQUIRE(pre.graphs.size() == 2);
    CHECK(pre.graphs[0].n == 1);
    CHECK(pre.graphs[0].num_edges() == 0);
    CHECK(pre.graphs[1] == g);
    CHECK(pre.node_maps[1] == std::vector<int>{0, 1, 2, 3});

    auto single = structural_partial_order(cycle(4), 1);
    auto ps = block_prefix_graphs(cycle(4), single);
    REQUIRE(ps.graphs.size() == 1);
    CHECK(ps.graphs[0] == cycle(4));
}

TEST_CASE("grid prefixes stay connected under peeling") {
    auto g = grid(3, 3);
    auto d = structural_partial_order(g, 1);
    auto pre = block_prefix_graphs(g, d);
    CHECK(pre.graphs.back() == g);
    for (const auto& h : pre.graphs) CHECK(connected_components(h).size() == 1);
}

TEST_CASE("equivariance: phi commutes with node relabeling") {
    CounterRng rng(17);
    int trials = 0;
    for (std::uint32_t tag = 0; tag < 100; ++tag) {
        int n = 5 + static_cast<int>(rng.uniform(rng_purpose::kTest, tag, 0, 13) * 8);
        auto g = random_connected(rng, tag, n, 0.25);
        auto p = random_permutation(rng, tag + 1000, n);
        for (int k_hops : {1, 3}) {
            auto d = structural_partial_order(g, k_hops);
            auto dp = structural_partial_order(apply_permutation(g, p), k_hops);
            REQUIRE(d.phi.size() == dp.phi.size());
            for (int v = 0; v < n; ++v) CHECK(dp.phi[p.mapping[v]] == d.phi[v]);
        }
        ++trials;
    }
    CHECK(trials == 100);
}

TEST_CASE("determinism: repeated decompositions are identical") {
    CounterRng rng(19);
    auto g = random_connected(rng, 5, 10, 0.3);
    auto a = structural_partial_order(g, 3);
    auto b = structural_partial_order(g, 3);
    CHECK(a == b);
}

TEST_CASE("within-block weighted degrees agree at removal time") {
    CounterRng rng(29);
    for (std::uint32_t tag = 0; tag < 10; ++tag) {
        auto g = random_connected(rng, tag, 9, 0.3);
        auto d = structural_partial_order(g, 2);
        // Block r is removed from the residual graph B_{1:r}; recompute its
        // weighted degrees there and check uniformity within the block.
        std::vector<int> residual;
        for (int r = 0; r < d.num_blocks(); ++r)
            residual.insert(residual.end(), d.blocks[r].begin(), d.blocks[r].end());
        std::sort(residual.begin(), residual.end());
        for (int r = d.num_blocks() - 1; r >= 0; --r) {
            auto h = induced_subgraph(g, residual);
            auto w = weighted_degree(h, 2);
            std::vector<BigUint> block_w;
            for (std::size_t i = 0; i < residual.size(); ++i)
                if (d.phi[residual[i]] == r + 1) block_w.push_back(w[i]);
            REQUIRE(!block_w.empty());
            for (auto& x : block_w) CHECK(x == block_w[0]);
            std::vector<int> next;
            for (int v : residual)
                if (d.phi[v] != r + 1) next.push_back(v);
            residual = next;
        }
    }
}

TEST_CASE("mean block count is non-decreasing in hop count") {
    CounterRng rng(37);
    std::vector<double> means;
    for (int k_hops : {0, 1, 2, 3}) {
        double total = 0;
        for (std::uint32_t tag = 0; tag < 30; ++tag) {
            auto g = random_connected(rng, tag, 10, 0.25);
            total += structural_partial_order(g, k_hops).num_blocks();
        }
        means.push_back(total / 30.0);
    }
    for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] >= means[i - 1]);
}

TEST_CASE("disconnected input peels per component and merges rounds") {
    // Star on {0..3} plus an isolated edge {4,5}.
    LabeledGraph g = LabeledGraph::empty(6, 1, 2);
    for (int i = 1; i <= 3; ++i) g.set_edge(0, i, 1);
    g.set_edge(4, 5, 1);
    auto d = structural_partial_order(g, 1, PeelWeights::residual, /*warn=*/false);
    CHECK(d.component_count == 2);
    // Star peels in 2 rounds, the edge in 1; merged by round index the edge
    // joins the star's first removal round, which becomes the last block.
    REQUIRE(d.num_blocks() == 2);
    CHECK(d.blocks[0] == std::vector<int>{0});
    CHECK(d.blocks[1] == std::vector<int>{1, 2, 3, 4, 5});
}

TEST_CASE("static-weight peeling variant is exposed") {
    // On a path of 4, residual peeling needs two rounds; static weights also
    // terminate and rank endpoints below midpoints in round one.
    auto g = path(4);
    auto d = structural_partial_order(g, 1, PeelWeights::original);
    REQUIRE(d.num_blocks() == 2);
    CHECK(d.blocks[1] == std::vector<int>{0, 3});
}
