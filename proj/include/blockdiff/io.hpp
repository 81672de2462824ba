#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockdiff/denoiser.hpp"
#include "blockdiff/diffusion.hpp"
#include "blockdiff/sampler.hpp"
#include "blockdiff/training.hpp"

namespace blockdiff {

// ---------------------------------------------------------------------------
// Graph JSONL: one graph per line,
//   {"n": int, "nodes": [int...], "edges": [[i, j, label], ...]}
// with i < j and absent edges omitted (implicitly class 0).
// ---------------------------------------------------------------------------

inline nlohmann::json graph_to_json(const LabeledGraph& g) {
    nlohmann::json j;
    j["n"] = g.n;
    j["nodes"] = g.node_labels;
    auto edges = nlohmann::json::array();
    for (int i = 0; i < g.n; ++i)
        for (int jj = i + 1; jj < g.n; ++jj)
            if (g.edge(i, jj) != 0) edges.push_back({i, jj, g.edge(i, jj)});
    j["edges"] = std::move(edges);
    return j;
}

inline LabeledGraph graph_from_json(const nlohmann::json& j, int k_v, int k_e) {
    LabeledGraph g = LabeledGraph::empty(j.at("n").get<int>(), k_v, k_e);
    auto nodes = j.at("nodes").get<std::vector<int>>();
    if (static_cast<int>(nodes.size()) != g.n)
        throw std::runtime_error("graph_from_json: node list length disagrees with n");
    g.node_labels = std::move(nodes);
    for (const auto& e : j.at("edges")) {
        int a = e.at(0).get<int>(), b = e.at(1).get<int>(), lab = e.at(2).get<int>();
        if (a >= b) throw std::runtime_error("graph_from_json: edges must satisfy i < j");
        g.set_edge(a, b, lab);
    }
    g.validate();
    return g;
}

inline void write_graphs_jsonl(const std::string& path, const std::vector<LabeledGraph>& graphs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& g : graphs) out << graph_to_json(g).dump() << "\n";
}

/// Reads a JSONL graph file. Vocabulary sizes are inferred from the file
/// contents (k_e at least 2), so labels always validate.
inline std::vector<LabeledGraph> read_graphs_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<nlohmann::json> lines;
    std::string line;
    int k_v = 1, k_e = 2;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        for (int lab : j.at("nodes").get<std::vector<int>>()) k_v = std::max(k_v, lab + 1);
        for (const auto& e : j.at("edges")) k_e = std::max(k_e, e.at(2).get<int>() + 1);
        lines.push_back(std::move(j));
    }
    std::vector<LabeledGraph> graphs;
    graphs.reserve(lines.size());
    for (const auto& j : lines) graphs.push_back(graph_from_json(j, k_v, k_e));
    return graphs;
}

// ---------------------------------------------------------------------------
// Run configuration (strict JSON: unknown keys are rejected)
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string dataset;
    int k_hops = 3;
    int t_max = 20;
    int layers = 4;
    int node_dim = 64;
    int edge_dim = 32;
    int heads = 4;
    int max_block_id = 32;
    int max_degree = 16;
    int max_block_size = 16;
    std::string backbone = "hybrid";
    bool degree_conditioning = true;
    bool share_trunk = false;
    std::string schedule = "cosine";
    std::string weight_mode = "residual";
    double lr = 3e-4;
    double lr_min = 1e-5;
    double lr_size = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int epochs = 400;
    int batch_size = 16;
    int checkpoint_every = 100;
    std::string mode = "parallel";
    std::uint64_t seed = 0;
    std::string out_dir = ".";

    nlohmann::json to_json() const {
        return nlohmann::json{{"dataset", dataset},
                              {"k_hops", k_hops},
                              {"t_max", t_max},
                              {"layers", layers},
                              {"node_dim", node_dim},
                              {"edge_dim", edge_dim},
                              {"heads", heads},
                              {"max_block_id", max_block_id},
                              {"max_degree", max_degree},
                              {"max_block_size", max_block_size},
                              {"backbone", backbone},
                              {"degree_conditioning", degree_conditioning},
                              {"share_trunk", share_trunk},
                              {"schedule", schedule},
                              {"weight_mode", weight_mode},
                              {"lr", lr},
                              {"lr_min", lr_min},
                              {"lr_size", lr_size},
                              {"beta1", beta1},
                              {"beta2", beta2},
                              {"epochs", epochs},
                              {"batch_size", batch_size},
                              {"checkpoint_every", checkpoint_every},
                              {"mode", mode},
                              {"seed", seed},
                              {"out_dir", out_dir}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        nlohmann::json known = c.to_json();
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!known.contains(it.key()))
                throw std::invalid_argument("RunConfig: unknown key '" + it.key() + "'");
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("dataset", c.dataset);
        get("k_hops", c.k_hops);
        get("t_max", c.t_max);
        get("layers", c.layers);
        get("node_dim", c.node_dim);
        get("edge_dim", c.edge_dim);
        get("heads", c.heads);
        get("max_block_id", c.max_block_id);
        get("max_degree", c.max_degree);
        get("max_block_size", c.max_block_size);
        get("backbone", c.backbone);
        get("degree_conditioning", c.degree_conditioning);
        get("share_trunk", c.share_trunk);
        get("schedule", c.schedule);
        get("weight_mode", c.weight_mode);
        get("lr", c.lr);
        get("lr_min", c.lr_min);
        get("lr_size", c.lr_size);
        get("beta1", c.beta1);
        get("beta2", c.beta2);
        get("epochs", c.epochs);
        get("batch_size", c.batch_size);
        get("checkpoint_every", c.checkpoint_every);
        get("mode", c.mode);
        get("seed", c.seed);
        get("out_dir", c.out_dir);
        c.validate_fields();
        return c;
    }

    void validate_fields() const {
        if (k_hops < 0) throw std::invalid_argument("RunConfig: k_hops must be >= 0");
        if (t_max < 1 || epochs < 1 || batch_size < 1 || checkpoint_every < 1)
            throw std::invalid_argument("RunConfig: counters must be positive");
        if (backbone != "hybrid" && backbone != "transformer" && backbone != "ppgn")
            throw std::invalid_argument("RunConfig: backbone must be hybrid|transformer|ppgn");
        if (schedule != "cosine" && schedule != "linear")
            throw std::invalid_argument("RunConfig: schedule must be cosine|linear");
        if (mode != "parallel" && mode != "sequential")
            throw std::invalid_argument("RunConfig: mode must be parallel|sequential");
        if (weight_mode != "residual" && weight_mode != "original")
            throw std::invalid_argument("RunConfig: weight_mode must be residual|original");
        if (lr <= 0 || lr_min < 0 || lr_size <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
            throw std::invalid_argument("RunConfig: optimizer fields out of range");
    }

    DenoiserConfig denoiser_config(int k_v, int k_e) const {
        DenoiserConfig d;
        d.layers = layers;
        d.node_dim = node_dim;
        d.edge_dim = edge_dim;
        d.heads = heads;
        d.max_block_id = max_block_id;
        d.max_degree = max_degree;
        d.t_max = t_max;
        d.max_block_size = max_block_size;
        d.k_v = k_v;
        d.k_e = k_e;
        if (backbone == "transformer")
            d.backbone = DenoiserConfig::Backbone::transformer_only;
        else if (backbone == "ppgn")
            d.backbone = DenoiserConfig::Backbone::ppgn_only;
        d.degree_conditioning = degree_conditioning;
        d.validate();
        return d;
    }

    TrainerConfig trainer_config() const {
        TrainerConfig t;
        t.mode = mode == "parallel" ? TrainerConfig::Mode::parallel : TrainerConfig::Mode::sequential;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.lr = lr;
        t.lr_min = lr_min;
        t.lr_size = lr_size;
        t.beta1 = beta1;
        t.beta2 = beta2;
        t.seed = seed;
        return t;
    }
};

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config: " + path);
    nlohmann::json j;
    in >> j;
    return RunConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Checkpoints: fixed binary layout.
//   magic "PARD" | u32 version | u64 header_len | header JSON |
//   u32 record_count | records (u32 name_len, name, u32 rows, u32 cols,
//   rows*cols little-endian f64)
// ---------------------------------------------------------------------------

struct Checkpoint {
    RunConfig config;
    int k_v = 1;
    int k_e = 2;
    int epoch = 0;
    std::uint64_t seed = 0;
    std::int64_t f_step = 0;
    std::int64_t g_step = 0;
    NoiseSchedule schedule;
    ParamStore f_params, g_params;
    OptimizerState f_opt, g_opt;
    FirstBlockPrior prior;
};

namespace detail {

constexpr char kCheckpointMagic[4] = {'P', 'A', 'R', 'D'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}
inline std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_record(std::ostream& out, const std::string& name, const Tensor& t) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rows));
    write_u32(out, static_cast<std::uint32_t>(t.cols));
    for (double d : t.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        write_u64(out, bits);
    }
}

inline std::pair<std::string, Tensor> read_record(std::istream& in) {
    std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated record name");
    std::uint32_t rows = read_u32(in), cols = read_u32(in);
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 32))
        throw std::runtime_error("checkpoint: record '" + name + "' has an implausible shape");
    Tensor t(static_cast<int>(rows), static_cast<int>(cols));
    for (auto& d : t.data) {
        std::uint64_t bits = read_u64(in);
        std::memcpy(&d, &bits, 8);
    }
    return {name, std::move(t)};
}

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(detail::kCheckpointMagic, 4);
    detail::write_u32(out, detail::kCheckpointVersion);

    nlohmann::json header;
    header["config"] = ck.config.to_json();
    header["k_v"] = ck.k_v;
    header["k_e"] = ck.k_e;
    header["epoch"] = ck.epoch;
    header["seed"] = ck.seed;
    header["f_step"] = ck.f_step;
    header["g_step"] = ck.g_step;
    header["t_max"] = ck.schedule.t_max;
    std::string htxt = header.dump();
    detail::write_u64(out, htxt.size());
    out.write(htxt.data(), static_cast<std::streamsize>(htxt.size()));

    std::vector<std::pair<std::string, Tensor>> records;
    records.emplace_back("schedule.alpha", Tensor::row(ck.schedule.alpha));
    records.emplace_back("schedule.alpha_bar", Tensor::row(ck.schedule.alpha_bar));
    {
        Tensor pr(static_cast<int>(ck.prior.entries.size()), 3);
        for (std::size_t i = 0; i < ck.prior.entries.size(); ++i) {
            pr.at(static_cast<int>(i), 0) = ck.prior.entries[i].size;
            pr.at(static_cast<int>(i), 1) = ck.prior.entries[i].degree;
            pr.at(static_cast<int>(i), 2) = ck.prior.entries[i].prob;
        }
        records.emplace_back("prior", std::move(pr));
    }
    auto add_store = [&](const std::string& prefix, const ParamStore& ps) {
        for (const auto& [name, t] : ps.items) records.emplace_back(prefix + name, t);
    };
    auto add_opt = [&](const std::string& prefix, const OptimizerState& st) {
        for (const auto& [name, t] : st.m) records.emplace_back(prefix + ".m." + name, t);
        for (const auto& [name, t] : st.v) records.emplace_back(prefix + ".v." + name, t);
    };
    add_store("f.", ck.f_params);
    add_store("g.", ck.g_params);
    add_opt("opt.f", ck.f_opt);
    add_opt("opt.g", ck.g_opt);

    std::ostringstream payload;
    detail::write_u32(payload, static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, t] : records) detail::write_record(payload, name, t);
    std::string bytes = payload.str();
    detail::write_u64(out, bytes.size());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    detail::write_u64(out, detail::fnv1a(bytes));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic (not a checkpoint file): " + path);
    std::uint32_t version = detail::read_u32(in);
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    std::uint64_t hlen = detail::read_u64(in);
    std::string htxt(hlen, '\0');
    if (!in.read(htxt.data(), static_cast<std::streamsize>(hlen)))
        throw std::runtime_error("checkpoint: truncated header");
    nlohmann::json header = nlohmann::json::parse(htxt);

    Checkpoint ck;
    ck.config = RunConfig::from_json(header.at("config"));
    ck.k_v = header.at("k_v").get<int>();
    ck.k_e = header.at("k_e").get<int>();
    ck.epoch = header.at("epoch").get<int>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.f_step = header.at("f_step").get<std::int64_t>();
    ck.g_step = header.at("g_step").get<std::int64_t>();
    ck.f_opt.step = ck.f_step;
    ck.g_opt.step = ck.g_step;
    ck.schedule.t_max = header.at("t_max").get<int>();

    std::uint64_t payload_len = detail::read_u64(in);
    std::string bytes(payload_len, '\0');
    if (!in.read(bytes.data(), static_cast<std::streamsize>(payload_len)))
        throw std::runtime_error("checkpoint: truncated payload");
    std::uint64_t want = detail::read_u64(in);
    if (detail::fnv1a(bytes) != want)
        throw std::runtime_error("checkpoint: payload checksum mismatch (file is corrupted)");
    std::istringstream pin(bytes);

    std::uint32_t count = detail::read_u32(pin);
    for (std::uint32_t r = 0; r < count; ++r) {
        auto [name, t] = detail::read_record(pin);
        if (name == "schedule.alpha") {
            ck.schedule.alpha = t.data;
        } else if (name == "schedule.alpha_bar") {
            ck.schedule.alpha_bar = t.data;
        } else if (name == "prior") {
            for (int i = 0; i < t.rows; ++i)
                ck.prior.entries.push_back({static_cast<int>(t.at(i, 0)), static_cast<int>(t.at(i, 1)),
                                            t.at(i, 2)});
        } else if (name.rfind("opt.f.m.", 0) == 0) {
            ck.f_opt.m[name.substr(8)] = std::move(t);
        } else if (name.rfind("opt.f.v.", 0) == 0) {
            ck.f_opt.v[name.substr(8)] = std::move(t);
        } else if (name.rfind("opt.g.m.", 0) == 0) {
            ck.g_opt.m[name.substr(8)] = std::move(t);
        } else if (name.rfind("opt.g.v.", 0) == 0) {
            ck.g_opt.v[name.substr(8)] = std::move(t);
        } else if (name.rfind("f.", 0) == 0) {
            ck.f_params.add(name.substr(2), std::move(t));
        } else if (name.rfind("g.", 0) == 0) {
            ck.g_params.add(name.substr(2), std::move(t));
        } else {
            throw std::runtime_error("checkpoint: unknown record '" + name + "'");
        }
    }
    if (static_cast<int>(ck.schedule.alpha.size()) != ck.schedule.t_max ||
        ck.schedule.alpha_bar.size() != ck.schedule.alpha.size())
        throw std::runtime_error("checkpoint: schedule records missing or inconsistent");
    return ck;
}

}  // namespace blockdiff
