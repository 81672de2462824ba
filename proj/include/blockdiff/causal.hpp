#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "blockdiff/partial_order.hpp"

namespace blockdiff {

/// Per-node block IDs plus the derived binary communication mask.
/// Plain form (no virtual flags): receiver i may read sender j iff
/// block_ids[i] >= block_ids[j].
///
/// With virtual flags set (the 2N parallel-training layout), the rule is
/// refined so a noisy virtual copy never sees the clean block it must
/// predict: a virtual receiver reads real senders of strictly lower ID and
/// virtual senders of its own ID only; real receivers never read virtual
/// senders. Without virtual nodes both rules coincide.
struct BlockMask {
    std::vector<int> block_ids;           // length n, IDs >= 1
    std::vector<std::uint8_t> virtual_flags;  // empty, or length n

    int size() const { return static_cast<int>(block_ids.size()); }

    bool allowed(int receiver, int sender) const {
        int ri = block_ids[receiver], si = block_ids[sender];
        if (virtual_flags.empty()) return ri >= si;
        bool rv = virtual_flags[receiver] != 0, sv = virtual_flags[sender] != 0;
        if (!sv) return rv ? si < ri : si <= ri;
        return rv && si == ri;
    }

    /// Dense n*n row-major 0/1 matrix, recomputed on demand.
    std::vector<double> dense() const {
        int n = size();
        std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (allowed(i, j)) m[static_cast<std::size_t>(i) * n + j] = 1.0;
        return m;
    }

    void validate() const {
        int n = size();
        if (!virtual_flags.empty() && static_cast<int>(virtual_flags.size()) != n)
            throw std::invalid_argument("BlockMask: virtual flag length mismatch");
        for (int i = 0; i < n; ++i) {
            if (block_ids[i] < 1) throw std::invalid_argument("BlockMask: block IDs must be >= 1");
            if (!allowed(i, i)) throw std::invalid_argument("BlockMask: diagonal must be allowed");
        }
    }
};

/// Block ID of the element at position (i, j): max of the endpoint IDs.
inline int edge_block_id(const BlockMask& mask, int i, int j) {
    if (i < 0 || j < 0 || i >= mask.size() || j >= mask.size())
        throw std::invalid_argument("edge_block_id: index out of range");
    return std::max(mask.block_ids[i], mask.block_ids[j]);
}

/// (A .* M) x, the attention-vector product with leakage masked out.
/// out[i] depends only on x[j] the mask lets node i read.
inline std::vector<double> masked_attention_product(const std::vector<double>& a,
                                                    const std::vector<double>& x,
                                                    const BlockMask& mask) {
    int n = mask.size();
    if (static_cast<int>(x.size()) != n || a.size() != static_cast<std::size_t>(n) * n)
        throw std::invalid_argument("masked_attention_product: shape mismatch");
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        const double* row = a.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j)
            if (mask.allowed(i, j)) s += row[j] * x[j];
        out[i] = s;
    }
    return out;
}

/// Causal matrix product
///   O = (A .* M) B  +  A (B .* M^T)  -  (A .* M)(B .* M^T),
/// whose (i, j) entry reads only A/B entries within the blocks position
/// (i, j) may use. Summation order is fixed, so entries the mask protects are
/// bit-identical under arbitrary finite perturbation of blocked inputs.
inline std::vector<double> causal_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                         const BlockMask& mask) {
    int n = mask.size();
    std::size_t nn = static_cast<std::size_t>(n) * n;
    if (a.size() != nn || b.size() != nn) throw std::invalid_argument("causal_matmul: shape mismatch");

    std::vector<double> m = mask.dense();
    std::vector<double> am(nn), bm(nn);
    for (std::size_t idx = 0; idx < nn; ++idx) am[idx] = a[idx] * m[idx];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            bm[static_cast<std::size_t>(i) * n + j] =
                b[static_cast<std::size_t>(i) * n + j] * m[static_cast<std::size_t>(j) * n + i];

    std::vector<double> out(nn, 0.0);
    auto accumulate = [&](const std::vector<double>& lhs, const std::vector<double>& rhs, double sign) {
        for (int i = 0; i < n; ++i) {
            const double* lrow = lhs.data() + static_cast<std::size_t>(i) * n;
            double* orow = out.data() + static_cast<std::size_t>(i) * n;
            for (int l = 0; l < n; ++l) {
                double f = sign * lrow[l];
                const double* rrow = rhs.data() + static_cast<std::size_t>(l) * n;
                for (int j = 0; j < n; ++j) orow[j] += f * rrow[j];
            }
        }
    };
    accumulate(am, b, 1.0);
    accumulate(a, bm, 1.0);
    // Subtract the doubly-masked product so fully-visible terms count once.
    std::vector<double> corr(nn, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* lrow = am.data() + static_cast<std::size_t>(i) * n;
        double* crow = corr.data() + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < n; ++l) {
            double f = lrow[l];
            const double* rrow = bm.data() + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += f * rrow[j];
        }
    }
    for (std::size_t idx = 0; idx < nn; ++idx) out[idx] -= corr[idx];
    return out;
}

/// Index layout for parallel all-blocks training: original nodes keep their
/// indices, and node v gains a twin at n_real + v carrying the same block ID
/// with its virtual flag set. Twins of block i hold the noisy (or, for the
/// size network, clean) copy of block i's content.
struct AugmentedLayout {
    int n_real = 0;
    int n_total = 0;
    std::vector<int> twin_index;              // original -> virtual twin
    std::vector<int> block_ids;               // length n_total
    std::vector<std::uint8_t> virtual_flags;  // length n_total
    std::vector<std::vector<int>> virtual_blocks;  // twin indices per block, ordered by block ID

    BlockMask mask() const { return BlockMask{block_ids, virtual_flags}; }
};

inline AugmentedLayout augment_virtual_blocks(const BlockDecomposition& d) {
    AugmentedLayout lay;
    lay.n_real = static_cast<int>(d.phi.size());
    lay.n_total = 2 * lay.n_real;
    lay.twin_index.resize(lay.n_real);
    lay.block_ids.resize(lay.n_total);
    lay.virtual_flags.assign(lay.n_total, 0);
    for (int v = 0; v < lay.n_real; ++v) {
        lay.twin_index[v] = lay.n_real + v;
        lay.block_ids[v] = d.phi[v];
        lay.block_ids[lay.n_real + v] = d.phi[v];
        lay.virtual_flags[lay.n_real + v] = 1;
    }
    lay.virtual_blocks.resize(d.num_blocks());
    for (int r = 0; r < d.num_blocks(); ++r)
        for (int v : d.blocks[r]) lay.virtual_blocks[r].push_back(lay.twin_index[v]);
    return lay;
}

}  // namespace blockdiff
