#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "blockdiff/causal.hpp"
#include "blockdiff/rng.hpp"
#include "blockdiff/tensor.hpp"

namespace blockdiff {

struct DenoiserConfig {
    int layers = 4;
    int node_dim = 64;
    int edge_dim = 32;  // kept below node_dim: edges are the memory hog
    int heads = 4;
    int max_block_id = 32;
    int max_degree = 16;
    int t_max = 20;
    int max_block_size = 16;  // size head classes 0..max_block_size, 0 = stop
    int k_v = 1;
    int k_e = 2;
    enum class Backbone { hybrid, transformer_only, ppgn_only };
    Backbone backbone = Backbone::hybrid;
    bool degree_conditioning = true;

    void validate() const {
        if (layers < 1 || node_dim < 1 || edge_dim < 1 || heads < 1 || max_block_id < 1 ||
            max_degree < 0 || t_max < 1 || max_block_size < 1 || k_v < 1 || k_e < 2)
            throw std::invalid_argument("DenoiserConfig: all sizes must be positive");
        if (node_dim % heads != 0)
            throw std::invalid_argument("DenoiserConfig: node_dim must be divisible by heads");
        if (edge_dim >= node_dim)
            throw std::invalid_argument("DenoiserConfig: edge_dim must stay below node_dim");
    }
};

/// Named parameter tensors in a stable insertion order.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> items;
    std::map<std::string, int> index;

    void add(const std::string& name, Tensor t) {
        if (index.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
        index[name] = static_cast<int>(items.size());
        items.emplace_back(name, std::move(t));
    }
    Tensor& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::invalid_argument("ParamStore: missing " + name);
        return items[it->second].second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::invalid_argument("ParamStore: missing " + name);
        return items[it->second].second;
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }
    std::size_t size() const { return items.size(); }

    void check_finite() const {
        for (const auto& [name, t] : items)
            if (!t.finite()) throw std::runtime_error("ParamStore: non-finite values in " + name);
    }

    friend bool operator==(const ParamStore& a, const ParamStore& b) {
        if (a.items.size() != b.items.size()) return false;
        for (std::size_t i = 0; i < a.items.size(); ++i) {
            if (a.items[i].first != b.items[i].first) return false;
            const Tensor& x = a.items[i].second;
            const Tensor& y = b.items[i].second;
            if (x.rows != y.rows || x.cols != y.cols || x.data != y.data) return false;
        }
        return true;
    }
};

using GradMap = std::map<std::string, Tensor>;

namespace detail {

inline Tensor init_normal(const CounterRng& rng, std::uint32_t tag, int r, int c, double std) {
    Tensor t(r, c);
    for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = std * rng.normal(rng_purpose::kParamInit, tag, static_cast<std::uint32_t>(i / 65536),
                                     static_cast<std::uint32_t>(i % 65536));
    return t;
}

inline Tensor init_xavier(const CounterRng& rng, std::uint32_t tag, int r, int c) {
    return init_normal(rng, tag, r, c, std::sqrt(2.0 / (r + c)));
}

}  // namespace detail

inline ParamStore init_denoiser_params(const DenoiserConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng rng(seed);
    ParamStore p;
    std::uint32_t tag = 0;
    auto emb = [&](const std::string& name, int r, int c) {
        p.add(name, detail::init_normal(rng, tag++, r, c, 0.02));
    };
    auto lin = [&](const std::string& name, int r, int c) {
        p.add(name + ".w", detail::init_xavier(rng, tag++, r, c));
        p.add(name + ".b", Tensor(1, c));
        ++tag;
    };
    auto ln = [&](const std::string& name, int c) {
        p.add(name + ".g", Tensor(1, c, 1.0));
        p.add(name + ".b", Tensor(1, c));
    };

    emb("embed.node_label", cfg.k_v, cfg.node_dim);
    emb("embed.block_id", cfg.max_block_id + 1, cfg.node_dim);
    emb("embed.degree", cfg.max_degree + 1, cfg.node_dim);
    emb("embed.virtual", 2, cfg.node_dim);
    emb("embed.edge_label", cfg.k_e, cfg.edge_dim);
    emb("embed.edge_block", cfg.max_block_id + 1, cfg.edge_dim);

    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        lin(pre + "attn.q", cfg.node_dim, cfg.node_dim);
        lin(pre + "attn.k", cfg.node_dim, cfg.node_dim);
        lin(pre + "attn.v", cfg.node_dim, cfg.node_dim);
        lin(pre + "attn.o", cfg.node_dim, cfg.node_dim);
        lin(pre + "attn.bias", cfg.edge_dim, cfg.heads);
        ln(pre + "attn.ln", cfg.node_dim);
        lin(pre + "ppgn.a1", cfg.edge_dim, cfg.edge_dim);
        lin(pre + "ppgn.a2", cfg.edge_dim, cfg.edge_dim);
        lin(pre + "ppgn.b1", cfg.edge_dim, cfg.edge_dim);
        lin(pre + "ppgn.b2", cfg.edge_dim, cfg.edge_dim);
        lin(pre + "ppgn.mix1", 2 * cfg.edge_dim, cfg.edge_dim);
        lin(pre + "ppgn.mix2", cfg.edge_dim, cfg.edge_dim);
        ln(pre + "ppgn.ln", cfg.edge_dim);
        lin(pre + "cross.ne", cfg.node_dim, cfg.edge_dim);
        lin(pre + "cross.en", cfg.edge_dim, cfg.node_dim);
        ln(pre + "cross.ln_e", cfg.edge_dim);
        ln(pre + "cross.ln_n", cfg.node_dim);
    }
    lin("head.node1", cfg.node_dim, cfg.node_dim);
    lin("head.node2", cfg.node_dim, cfg.k_v);
    lin("head.edge1", cfg.edge_dim, cfg.edge_dim);
    lin("head.edge2", cfg.edge_dim, cfg.k_e);
    lin("head.size1", cfg.node_dim, cfg.node_dim);
    lin("head.size2", cfg.node_dim, cfg.max_block_size + 1);
    lin("head.degree1", cfg.node_dim, cfg.node_dim);
    lin("head.degree2", cfg.node_dim, cfg.max_degree + 1);
    return p;
}

/// One forward-pass input: a (possibly virtual-augmented) labeled layout at
/// diffusion step t. Labels are the noisy/clean mix the caller assembled.
struct DenoiserInput {
    int n = 0;
    std::vector<int> node_labels;   // length n
    std::vector<int> edge_labels;   // n*n, symmetric, diagonal 0
    int t = 0;                      // 0..t_max (0 = no noise, used by the size net)
    BlockMask mask;                 // ids + virtual flags over the layout
    std::vector<int> degrees;       // per-node conditioning degree
    std::vector<std::vector<int>> virtual_blocks;  // pooling sets for size/degree heads
};

struct ParamVars {
    std::map<std::string, Tape::Var> vars;
    Tape::Var at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw std::invalid_argument("ParamVars: missing " + name);
        return it->second;
    }
};

inline ParamVars register_params(Tape& tape, const ParamStore& params) {
    ParamVars pv;
    for (const auto& [name, t] : params.items) pv.vars[name] = tape.param(t);
    return pv;
}

struct ForwardVars {
    Tape::Var node_logits = -1;   // n x k_v
    Tape::Var edge_logits = -1;   // (n*n) x k_e, symmetric across the pair transpose
    std::vector<Tape::Var> size_logits;    // one 1 x (max_block_size+1) row per virtual block
    std::vector<Tape::Var> degree_logits;  // one 1 x (max_degree+1) row per virtual block
    int clamp_count = 0;
};

namespace detail {

inline std::vector<double> time_embedding(int t, int t_max, int dim) {
    std::vector<double> pe(dim, 0.0);
    double pos = static_cast<double>(t) / (t_max + 1);
    for (int k = 0; 2 * k + 1 < dim; ++k) {
        double angle = 2.0 * M_PI * (k + 1) * pos;
        pe[2 * k] = std::sin(angle);
        pe[2 * k + 1] = std::cos(angle);
    }
    return pe;
}

inline Tape::Var mlp2(Tape& tape, const ParamVars& pv, const std::string& l1, const std::string& l2,
                      Tape::Var x) {
    auto h = tape.tanh_op(tape.linear(x, pv.at(l1 + ".w"), pv.at(l1 + ".b")));
    return tape.linear(h, pv.at(l2 + ".w"), pv.at(l2 + ".b"));
}

inline void check_finite(const Tape& tape, Tape::Var v, const std::string& where) {
    if (!tape.value(v).finite())
        throw std::runtime_error("denoiser: non-finite activation at " + where);
}

/// Runs one sublayer, folding numeric failures raised inside tape ops into
/// an error that names the failing layer.
template <typename Fn>
auto at_layer(const std::string& where, Fn&& fn) {
    try {
        return fn();
    } catch (const std::runtime_error& e) {
        throw std::runtime_error("denoiser: non-finite activation at " + where + " (" + e.what() + ")");
    }
}

}  // namespace detail

/// Builds the full network on the tape and returns logit handles. The caller
/// owns the tape, so training can splice losses on top while sampling just
/// reads values.
inline ForwardVars denoiser_forward_tape(Tape& tape, const DenoiserConfig& cfg, const ParamVars& pv,
                                         const DenoiserInput& in) {
    cfg.validate();
    in.mask.validate();
    int n = in.n;
    if (static_cast<int>(in.node_labels.size()) != n ||
        in.edge_labels.size() != static_cast<std::size_t>(n) * n ||
        static_cast<int>(in.degrees.size()) != n || in.mask.size() != n)
        throw std::invalid_argument("denoiser_forward: input sizes disagree");
    if (in.t < 0 || in.t > cfg.t_max) throw std::invalid_argument("denoiser_forward: t out of range");

    ForwardVars out;

    // Clamped embedding indices. IDs and degrees beyond the table spill into
    // the last row; count the spills so callers can surface a warning.
    std::vector<int> id_idx(n), deg_idx(n), vflag_idx(n);
    for (int i = 0; i < n; ++i) {
        int id = in.mask.block_ids[i];
        if (id > cfg.max_block_id) ++out.clamp_count;
        id_idx[i] = std::min(id, cfg.max_block_id);
        int dg = in.degrees[i];
        if (dg > cfg.max_degree) ++out.clamp_count;
        deg_idx[i] = std::min(std::max(dg, 0), cfg.max_degree);
        vflag_idx[i] = in.mask.virtual_flags.empty() ? 0 : (in.mask.virtual_flags[i] ? 1 : 0);
    }
    std::vector<int> elab_idx(static_cast<std::size_t>(n) * n), eblk_idx(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            std::size_t idx = static_cast<std::size_t>(i) * n + j;
            elab_idx[idx] = in.edge_labels[idx];
            int eb = std::max(in.mask.block_ids[i], in.mask.block_ids[j]);
            if (eb > cfg.max_block_id) ++out.clamp_count;
            eblk_idx[idx] = std::min(eb, cfg.max_block_id);
        }

    // Input features.
    std::vector<Tape::Var> node_parts;
    node_parts.push_back(tape.gather_rows(pv.at("embed.node_label"), in.node_labels));
    {
        Tensor te(n, cfg.node_dim);
        auto row = detail::time_embedding(in.t, cfg.t_max, cfg.node_dim);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg.node_dim; ++j) te.at(i, j) = row[j];
        node_parts.push_back(tape.constant(std::move(te)));
    }
    node_parts.push_back(tape.gather_rows(pv.at("embed.block_id"), id_idx));
    if (cfg.degree_conditioning) node_parts.push_back(tape.gather_rows(pv.at("embed.degree"), deg_idx));
    node_parts.push_back(tape.gather_rows(pv.at("embed.virtual"), vflag_idx));
    auto h = tape.add_list(node_parts);

    auto e = tape.add(tape.gather_rows(pv.at("embed.edge_label"), elab_idx),
                      tape.gather_rows(pv.at("embed.edge_block"), eblk_idx));

    // Constant mask materializations.
    Tensor mdense_t(n, n);
    mdense_t.data = in.mask.dense();
    // Mean aggregation over the edges a node may read: n x n*n selector.
    Tensor agg_sel(n, n * n);
    for (int i = 0; i < n; ++i) {
        int cnt = 0;
        for (int j = 0; j < n; ++j)
            if (in.mask.allowed(i, j)) ++cnt;
        for (int j = 0; j < n; ++j)
            if (in.mask.allowed(i, j)) agg_sel.at(i, i * n + j) = 1.0 / cnt;
    }
    std::vector<int> endpoint_i(static_cast<std::size_t>(n) * n), endpoint_j(static_cast<std::size_t>(n) * n);
    std::vector<int> pair_transpose(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            endpoint_i[static_cast<std::size_t>(i) * n + j] = i;
            endpoint_j[static_cast<std::size_t>(i) * n + j] = j;
            pair_transpose[static_cast<std::size_t>(i) * n + j] = j * n + i;
        }

    bool use_attn = cfg.backbone != DenoiserConfig::Backbone::ppgn_only;
    bool use_ppgn = cfg.backbone != DenoiserConfig::Backbone::transformer_only;
    int dh = cfg.node_dim / cfg.heads;

    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";

        if (use_attn) {
            h = detail::at_layer(pre + "attn", [&] {
                auto q = tape.linear(h, pv.at(pre + "attn.q.w"), pv.at(pre + "attn.q.b"));
                auto k = tape.linear(h, pv.at(pre + "attn.k.w"), pv.at(pre + "attn.k.b"));
                auto v = tape.linear(h, pv.at(pre + "attn.v.w"), pv.at(pre + "attn.v.b"));
                auto bias = tape.linear(e, pv.at(pre + "attn.bias.w"), pv.at(pre + "attn.bias.b"));
                std::vector<Tape::Var> head_outs;
                for (int hd = 0; hd < cfg.heads; ++hd) {
                    auto qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
                    auto kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
                    auto vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
                    auto scores =
                        tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
                    auto bias_h = tape.reshape(tape.slice_cols(bias, hd, hd + 1), n, n);
                    auto weights = tape.masked_softmax_rows(tape.add(scores, bias_h), mdense_t);
                    head_outs.push_back(tape.matmul(weights, vh));
                }
                auto attn = tape.linear(tape.concat_cols(head_outs), pv.at(pre + "attn.o.w"),
                                        pv.at(pre + "attn.o.b"));
                return tape.layer_norm(tape.add(h, attn), pv.at(pre + "attn.ln.g"),
                                       pv.at(pre + "attn.ln.b"));
            });
            detail::check_finite(tape, h, pre + "attn");
        }

        if (use_ppgn) {
            e = detail::at_layer(pre + "ppgn", [&] {
                auto a2d = detail::mlp2(tape, pv, pre + "ppgn.a1", pre + "ppgn.a2", e);
                auto b2d = detail::mlp2(tape, pv, pre + "ppgn.b1", pre + "ppgn.b2", e);
                auto mixed_in = tape.ppgn_causal(a2d, b2d, mdense_t);
                auto mixed = detail::mlp2(tape, pv, pre + "ppgn.mix1", pre + "ppgn.mix2",
                                          tape.concat_cols({e, mixed_in}));
                return tape.layer_norm(tape.add(e, mixed), pv.at(pre + "ppgn.ln.g"),
                                       pv.at(pre + "ppgn.ln.b"));
            });
            detail::check_finite(tape, e, pre + "ppgn");
        }

        // Cross-talk: edges absorb their endpoints, nodes absorb the edges
        // they are allowed to read.
        {
            auto u = tape.linear(h, pv.at(pre + "cross.ne.w"), pv.at(pre + "cross.ne.b"));
            auto pair_sum = tape.add(tape.gather_rows(u, endpoint_i), tape.gather_rows(u, endpoint_j));
            e = tape.layer_norm(tape.add(e, pair_sum), pv.at(pre + "cross.ln_e.g"),
                                pv.at(pre + "cross.ln_e.b"));
            auto agg = tape.matmul_const_left(agg_sel, e);
            auto z = tape.linear(agg, pv.at(pre + "cross.en.w"), pv.at(pre + "cross.en.b"));
            h = tape.layer_norm(tape.add(h, z), pv.at(pre + "cross.ln_n.g"), pv.at(pre + "cross.ln_n.b"));
            detail::check_finite(tape, h, pre + "cross");
            detail::check_finite(tape, e, pre + "cross");
        }
    }

    out.node_logits = detail::mlp2(tape, pv, "head.node1", "head.node2", h);
    auto esym = tape.scale(tape.add(e, tape.gather_rows(e, pair_transpose)), 0.5);
    out.edge_logits = detail::mlp2(tape, pv, "head.edge1", "head.edge2", esym);
    detail::check_finite(tape, out.node_logits, "head.node");
    detail::check_finite(tape, out.edge_logits, "head.edge");

    for (const auto& vb : in.virtual_blocks) {
        if (vb.empty()) throw std::invalid_argument("denoiser_forward: empty virtual block");
        Tensor sel(1, n);
        for (int idx : vb) sel.at(0, idx) = 1.0 / static_cast<double>(vb.size());
        auto pooled = tape.matmul_const_left(sel, h);
        out.size_logits.push_back(detail::mlp2(tape, pv, "head.size1", "head.size2", pooled));
        out.degree_logits.push_back(detail::mlp2(tape, pv, "head.degree1", "head.degree2", pooled));
    }
    return out;
}

/// Plain (n x k_v, n*n x k_e, per-block size/degree) logits with no gradient
/// bookkeeping kept around.
struct DenoiserOutput {
    Tensor node_logits;
    Tensor edge_logits;  // (n*n) x k_e
    std::vector<Tensor> size_logits;
    std::vector<Tensor> degree_logits;
    int clamp_count = 0;
};

inline DenoiserOutput denoiser_forward(const DenoiserConfig& cfg, const ParamStore& params,
                                       const DenoiserInput& in) {
    Tape tape;
    auto pv = register_params(tape, params);
    auto fv = denoiser_forward_tape(tape, cfg, pv, in);
    DenoiserOutput out;
    out.node_logits = tape.value(fv.node_logits);
    out.edge_logits = tape.value(fv.edge_logits);
    for (auto v : fv.size_logits) out.size_logits.push_back(tape.value(v));
    for (auto v : fv.degree_logits) out.degree_logits.push_back(tape.value(v));
    out.clamp_count = fv.clamp_count;
    return out;
}

/// Gradients of a scalar loss assembled by `build` on top of the registered
/// parameters. The map is congruent to the store; untouched parameters get
/// zero tensors.
inline GradMap parameter_gradients(
    const ParamStore& params,
    const std::function<Tape::Var(Tape&, const ParamVars&)>& build) {
    Tape tape;
    auto pv = register_params(tape, params);
    auto loss = build(tape, pv);
    tape.backward(loss);
    GradMap grads;
    for (const auto& [name, t] : params.items) {
        const Tensor& g = tape.grad(pv.at(name));
        Tensor out = g.size() ? g : Tensor(t.rows, t.cols);
        if (!out.finite()) throw std::runtime_error("parameter_gradients: non-finite gradient for " + name);
        grads[name] = std::move(out);
    }
    return grads;
}

}  // namespace blockdiff
