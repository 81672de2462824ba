#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "blockdiff/eval.hpp"
#include "blockdiff/io.hpp"
#include "blockdiff/sampler.hpp"

namespace blockdiff {

inline std::pair<int, int> infer_vocab(const std::vector<LabeledGraph>& graphs) {
    int k_v = 1, k_e = 2;
    for (const auto& g : graphs) {
        k_v = std::max(k_v, g.k_v);
        k_e = std::max(k_e, g.k_e);
        for (int lab : g.node_labels) k_v = std::max(k_v, lab + 1);
        for (int lab : g.edge_labels) k_e = std::max(k_e, lab + 1);
    }
    return {k_v, k_e};
}

inline std::vector<TrainExample> build_examples(const std::vector<LabeledGraph>& graphs, int k_hops,
                                                PeelWeights weights = PeelWeights::residual) {
    std::vector<TrainExample> out;
    out.reserve(graphs.size());
    for (std::size_t i = 0; i < graphs.size(); ++i)
        out.push_back(TrainExample::build(graphs[i], k_hops, static_cast<int>(i), weights));
    return out;
}

/// Rejects configurations the dataset cannot satisfy before any training
/// work starts.
inline void validate_dataset_against_config(const std::vector<TrainExample>& examples,
                                            const DenoiserConfig& cfg, std::ostream* log) {
    for (const auto& ex : examples) {
        for (int r = 1; r < ex.num_blocks(); ++r) {
            int sz = static_cast<int>(ex.decomp.blocks[r].size());
            if (sz > cfg.max_block_size)
                throw std::invalid_argument(
                    "config: max_block_size=" + std::to_string(cfg.max_block_size) + " but graph " +
                    std::to_string(ex.graph_id) + " has a block of size " + std::to_string(sz));
            if (ex.block_degree[r] > cfg.max_degree)
                throw std::invalid_argument("config: max_degree=" + std::to_string(cfg.max_degree) +
                                            " but graph " + std::to_string(ex.graph_id) +
                                            " needs degree " + std::to_string(ex.block_degree[r]));
        }
        if (ex.num_blocks() > cfg.max_block_id && log)
            *log << "[blockdiff] warning: graph " << ex.graph_id << " has " << ex.num_blocks()
                 << " blocks; IDs beyond " << cfg.max_block_id << " share one embedding row\n";
    }
}

struct TrainOutcome {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> history;
    bool diverged = false;
    std::string last_good_path;
    std::string final_path;
};

/// Full training run: decomposition, validation, schedule setup, the epoch
/// loop, and periodic checkpointing when save_dir is set.
inline TrainOutcome train_model(const RunConfig& rc, const std::vector<LabeledGraph>& graphs,
                                std::ostream* log = nullptr, const std::string& save_dir = "") {
    rc.validate_fields();
    if (graphs.empty()) throw std::invalid_argument("train: empty dataset");
    auto [k_v, k_e] = infer_vocab(graphs);
    DenoiserConfig cfg = rc.denoiser_config(k_v, k_e);
    PeelWeights weights = rc.weight_mode == "original" ? PeelWeights::original : PeelWeights::residual;
    auto examples = build_examples(graphs, rc.k_hops, weights);
    validate_dataset_against_config(examples, cfg, log);

    NoiseSchedule sched = rc.schedule == "linear" ? linear_schedule(rc.t_max) : cosine_schedule(rc.t_max);
    auto fam_v = TransitionFamily::uniform(k_v, sched);
    auto fam_e = TransitionFamily::uniform(k_e, sched);

    TrainOutcome out;
    Checkpoint& ck = out.checkpoint;
    ck.config = rc;
    ck.k_v = k_v;
    ck.k_e = k_e;
    ck.seed = rc.seed;
    ck.schedule = sched;
    ck.prior = FirstBlockPrior::from_dataset(examples);
    ck.f_params = init_denoiser_params(cfg, rc.seed);
    if (!rc.share_trunk) ck.g_params = init_denoiser_params(cfg, rc.seed ^ 0x9E3779B97F4A7C15ull);

    TrainerConfig tc = rc.trainer_config();
    auto save = [&](int epoch, const std::string& name) {
        if (save_dir.empty()) return std::string();
        std::filesystem::create_directories(save_dir);
        ck.epoch = epoch;
        ck.f_step = ck.f_opt.step;
        ck.g_step = ck.g_opt.step;
        std::string path = save_dir + "/" + name;
        save_checkpoint(path, ck);
        return path;
    };

    int print_every = std::max(1, rc.epochs / 20);
    for (int epoch = 0; epoch < rc.epochs; ++epoch) {
        ParamStore& g_ref = rc.share_trunk ? ck.f_params : ck.g_params;
        OptimizerState& g_opt_ref = rc.share_trunk ? ck.f_opt : ck.g_opt;
        EpochMetrics met =
            train_epoch(cfg, ck.f_params, g_ref, examples, fam_v, fam_e, tc, epoch, ck.f_opt, g_opt_ref);
        out.history.push_back(met);
        if (!met.finite) {
            out.diverged = true;
            if (log)
                *log << "[blockdiff] training diverged at epoch " << epoch << "; last good checkpoint: "
                     << (out.last_good_path.empty() ? "<none>" : out.last_good_path) << "\n";
            return out;
        }
        if (log && (epoch % print_every == 0 || epoch + 1 == rc.epochs))
            *log << "epoch " << epoch << "  diffusion_loss " << met.diffusion_loss << "  size_loss "
                 << met.size_loss << "\n";
        if ((epoch + 1) % rc.checkpoint_every == 0 && epoch + 1 < rc.epochs) {
            std::string p = save(epoch + 1, "ckpt_epoch" + std::to_string(epoch + 1) + ".pard");
            if (!p.empty()) out.last_good_path = p;
        }
    }
    out.final_path = save(rc.epochs, "final.pard");
    if (!out.final_path.empty()) out.last_good_path = out.final_path;
    return out;
}

inline std::vector<GenerationTrace> sample_model(const Checkpoint& ck, int count, const GenLimits& limits,
                                                 std::uint64_t seed, bool keep_snapshots = false) {
    DenoiserConfig cfg = ck.config.denoiser_config(ck.k_v, ck.k_e);
    auto fam_v = TransitionFamily::uniform(ck.k_v, ck.schedule);
    auto fam_e = TransitionFamily::uniform(ck.k_e, ck.schedule);
    const ParamStore& g_params = ck.config.share_trunk ? ck.f_params : ck.g_params;
    CounterRng rng(seed);
    std::vector<GenerationTrace> traces;
    traces.reserve(count);
    for (int s = 0; s < count; ++s)
        traces.push_back(
            generate(cfg, ck.f_params, g_params, fam_v, fam_e, ck.prior, limits, rng, s, keep_snapshots));
    return traces;
}

}  // namespace blockdiff
