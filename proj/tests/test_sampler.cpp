#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "blockdiff/sampler.hpp"

using namespace blockdiff;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.layers = 1;
    cfg.node_dim = 16;
    cfg.edge_dim = 8;
    cfg.heads = 2;
    cfg.max_block_id = 8;
    cfg.max_degree = 8;
    cfg.t_max = 4;
    cfg.max_block_size = 8;
    cfg.k_v = 1;
    cfg.k_e = 2;
    return cfg;
}

TransitionFamily family_for(const DenoiserConfig& cfg, int k) {
    return TransitionFamily::uniform(k, cosine_schedule(cfg.t_max));
}

bool isomorphic_bruteforce(const LabeledGraph& a, const LabeledGraph& b) {
    if (a.n != b.n) return false;
    std::vector<int> perm(a.n);
    std::iota(perm.begin(), perm.end(), 0);
    do {
        Permutation p;
        p.mapping = perm;
        if (apply_permutation(a, p) == b) return true;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return false;
}

}  // namespace

TEST_CASE("first block prior collects the joint size and degree histogram") {
    LabeledGraph star = LabeledGraph::empty(4, 1, 2);
    for (int i = 1; i < 4; ++i) star.set_edge(0, i, 1);
    LabeledGraph pair = LabeledGraph::empty(2, 1, 2);
    pair.set_edge(0, 1, 1);
    std::vector<TrainExample> data{TrainExample::build(star, 1, 0), TrainExample::build(pair, 1, 1),
                                   TrainExample::build(pair, 1, 2)};
    auto prior = FirstBlockPrior::from_dataset(data);
    // Star core: size 1, degree 0. Pair: one block of size 2, degree 1.
    REQUIRE(prior.entries.size() == 2);
    double total = 0;
    for (auto& e : prior.entries) total += e.prob;
    CHECK(total == doctest::Approx(1.0));
    CHECK(prior.sample(0.99) != prior.sample(0.0));
}

TEST_CASE("forcing the stop class yields a single isolated node") {
    auto cfg = tiny_config();
    auto f = init_denoiser_params(cfg, 5);
    auto g = init_denoiser_params(cfg, 6);
    // Size head: overwhelming mass on class 0 (stop).
    std::fill(g.at("head.size2.w").data.begin(), g.at("head.size2.w").data.end(), 0.0);
    std::fill(g.at("head.size2.b").data.begin(), g.at("head.size2.b").data.end(), 0.0);
    g.at("head.size2.b").data[0] = 60.0;
    FirstBlockPrior prior;
    prior.entries = {{1, 0, 1.0}};
    auto trace = generate(cfg, f, g, family_for(cfg, 1), family_for(cfg, 2), prior, GenLimits{},
                          CounterRng(3), 0);
    CHECK(!trace.truncated);
    REQUIRE(trace.blocks.size() == 1);
    CHECK(trace.blocks[0].size == 1);
    CHECK(trace.graph.n == 1);
    CHECK(trace.graph.num_edges() == 0);
    CHECK_NOTHROW(trace.graph.validate());
}

TEST_CASE("identical seeds give bit-identical traces") {
    auto cfg = tiny_config();
    auto f = init_denoiser_params(cfg, 7);
    auto g = init_denoiser_params(cfg, 8);
    FirstBlockPrior prior;
    prior.entries = {{2, 1, 0.6}, {1, 0, 0.4}};
    GenLimits limits;
    limits.max_nodes = 10;
    limits.max_blocks = 4;
    auto a = generate(cfg, f, g, family_for(cfg, 1), family_for(cfg, 2), prior, limits, CounterRng(11), 5);
    auto b = generate(cfg, f, g, family_for(cfg, 1), family_for(cfg, 2), prior, limits, CounterRng(11), 5);
    CHECK(a.graph == b.graph);
    REQUIRE(a.blocks.size() == b.blocks.size());
    for (std::size_t i = 0; i < a.blocks.size(); ++i) {
        CHECK(a.blocks[i].size == b.blocks[i].size);
        CHECK(a.blocks[i].degree == b.blocks[i].degree);
    }
}

TEST_CASE("every generated graph satisfies the labeled-graph invariants") {
    auto cfg = tiny_config();
    auto f = init_denoiser_params(cfg, 9);
    auto g = init_denoiser_params(cfg, 10);
    FirstBlockPrior prior;
    prior.entries = {{2, 1, 0.5}, {3, 2, 0.5}};
    GenLimits limits;
    limits.max_nodes = 14;
    limits.max_blocks = 5;
    for (int s = 0; s < 6; ++s) {
        auto trace =
            generate(cfg, f, g, family_for(cfg, 1), family_for(cfg, 2), prior, limits, CounterRng(21), s);
        CHECK_NOTHROW(trace.graph.validate());
        int total = 0;
        for (auto& b : trace.blocks) total += b.size;
        CHECK(total == trace.graph.n);
    }
}

TEST_CASE("limits truncate the trace but still return it") {
    auto cfg = tiny_config();
    auto f = init_denoiser_params(cfg, 9);
    auto g = init_denoiser_params(cfg, 10);
    FirstBlockPrior prior;
    prior.entries = {{3, 1, 1.0}};
    GenLimits limits;
    limits.max_nodes = 5;  // a second 3-node block cannot fit
    limits.max_blocks = 8;
    std::fill(g.at("head.size2.w").data.begin(), g.at("head.size2.w").data.end(), 0.0);
    std::fill(g.at("head.size2.b").data.begin(), g.at("head.size2.b").data.end(), 0.0);
    g.at("head.size2.b").data[3] = 60.0;  // always ask for 3 more nodes
    auto big = generate(cfg, f, g, family_for(cfg, 1), family_for(cfg, 2), prior, limits, CounterRng(13), 1);
    CHECK(big.truncated);
    CHECK(big.graph.n <= limits.max_nodes);
    CHECK_NOTHROW(big.graph.validate());
}

TEST_CASE("prefix blocks are immutable along the trace") {
    auto cfg = tiny_config();
    auto f = init_denoiser_params(cfg, 15);
    auto g = init_denoiser_params(cfg, 16);
    FirstBlockPrior prior;
    prior.entries = {{2, 1, 1.0}};
    GenLimits limits;
    limits.max_nodes = 12;
    limits.max_blocks = 5;
    auto trace = generate(cfg, f, g, family_for(cfg, 1), family_for(cfg, 2), prior, limits,
                          CounterRng(17), 2, /*keep_snapshots=*/true);
    REQUIRE(trace.committed_snapshots.size() == trace.blocks.size());
    for (std::size_t s = 1; s < trace.committed_snapshots.size(); ++s) {
        const LabeledGraph& prev = trace.committed_snapshots[s - 1];
        const LabeledGraph& cur = trace.committed_snapshots[s];
        for (int v = 0; v < prev.n; ++v) CHECK(prev.node_labels[v] == cur.node_labels[v]);
        for (int a = 0; a < prev.n; ++a)
            for (int b = 0; b < prev.n; ++b) CHECK(prev.edge(a, b) == cur.edge(a, b));
    }
}

TEST_CASE("noise initialization is statistically uniform") {
    // Fresh-block elements start from categorical draws of m; a chi-square
    // over 10k draws must not reject uniformity at p = 0.01.
    CounterRng rng(19);
    int k = 4;
    std::vector<double> m(k, 1.0 / k);
    std::vector<int> counts(k, 0);
    int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        double u =
            rng.uniform(rng_purpose::kGenerate, 1, detail::kDrawInit | static_cast<std::uint32_t>(i), 7);
        counts[sample_categorical(m, u)] += 1;
    }
    double expected = static_cast<double>(draws) / k;
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 11.345);  // 99th percentile of chi-square with 3 dof
}

TEST_CASE("path consistency report degenerate cases") {
    // A single-block trace under k_hops=0 always matches itself.
    LabeledGraph g = LabeledGraph::empty(3, 1, 2);
    g.set_edge(0, 1, 1);
    g.set_edge(1, 2, 1);
    GenerationTrace good;
    good.graph = g;
    good.blocks = {{3, 0}};
    CHECK(path_consistency_report({good}, 0) == doctest::Approx(1.0));

    // Intentionally splitting one true block counts as a mismatch.
    GenerationTrace bad;
    bad.graph = g;
    bad.blocks = {{2, 0}, {1, 0}};
    CHECK(path_consistency_report({bad}, 0) == doctest::Approx(0.0));
    CHECK(path_consistency_report({good, bad}, 0) == doctest::Approx(0.5));
}

TEST_CASE("memorized graph is regenerated up to isomorphism" * doctest::timeout(3000)) {
    // A labeled 6-node graph whose peeling gives a triangle core plus
    // singleton blocks with unambiguous attachments: a desk-size net can
    // memorize it fully.
    LabeledGraph g = LabeledGraph::empty(6, 2, 2);
    g.node_labels = {0, 1, 0, 0, 0, 0};
    g.set_edge(0, 4, 1);
    g.set_edge(0, 5, 1);
    g.set_edge(1, 2, 1);
    g.set_edge(1, 3, 1);
    g.set_edge(1, 4, 1);
    g.set_edge(2, 3, 1);

    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.node_dim = 48;
    cfg.edge_dim = 24;
    cfg.heads = 2;
    cfg.max_block_id = 8;
    cfg.max_degree = 8;
    cfg.t_max = 10;
    cfg.max_block_size = 8;
    cfg.k_v = 2;
    cfg.k_e = 2;
    auto f = init_denoiser_params(cfg, 71);
    auto gp = init_denoiser_params(cfg, 72);
    std::vector<TrainExample> data;
    for (int copy = 0; copy < 4; ++copy) data.push_back(TrainExample::build(g, 3, copy));
    auto fam_v = TransitionFamily::uniform(2, cosine_schedule(cfg.t_max));
    auto fam_e = TransitionFamily::uniform(2, cosine_schedule(cfg.t_max));
    TrainerConfig tc;
    tc.epochs = 500;
    tc.batch_size = 4;
    tc.lr = 3e-3;
    tc.lr_min = 1e-4;
    OptimizerState of, og;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        auto met = train_epoch(cfg, f, gp, data, fam_v, fam_e, tc, epoch, of, og);
        REQUIRE(met.finite);
    }

    auto prior = FirstBlockPrior::from_dataset(data);
    GenLimits limits;
    limits.max_nodes = 12;
    limits.max_blocks = 8;
    CounterRng rng(29);
    int hits = 0;
    for (int s = 0; s < 50; ++s) {
        auto trace = generate(cfg, f, gp, fam_v, fam_e, prior, limits, rng, s);
        if (trace.graph.n == 6 && isomorphic_bruteforce(trace.graph, g)) ++hits;
    }
    CHECK(hits >= 40);
}
