#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockdiff {

/// Dense row-major 2-D tensor of doubles. Scalars are {1,1}.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }
    static Tensor row(const std::vector<double>& v) {
        Tensor t(1, static_cast<int>(v.size()));
        t.data = v;
        return t;
    }

    std::size_t size() const { return data.size(); }
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    double item() const { return data[0]; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

namespace kernels {

// C += A(r x k) . B(k x c)
inline void mm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, int r, int k, int cc) {
    for (int i = 0; i < r; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * cc;
        const double* arow = a + static_cast<std::size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            double f = arow[l];
            if (f == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(l) * cc;
            for (int j = 0; j < cc; ++j) crow[j] += f * brow[j];
        }
    }
}

// C += A(r x k) . B(c x k)^T
inline void mm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, int r, int k, int cc) {
    for (int i = 0; i < r; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * cc;
        for (int j = 0; j < cc; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
            crow[j] += s;
        }
    }
}

// C += A(r x k)^T . B(r x c), i.e. C is k x c
inline void mm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, int r, int k, int cc) {
    for (int i = 0; i < r; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* brow = b + static_cast<std::size_t>(i) * cc;
        for (int l = 0; l < k; ++l) {
            double f = arow[l];
            if (f == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(l) * cc;
            for (int j = 0; j < cc; ++j) crow[j] += f * brow[j];
        }
    }
}

}  // namespace kernels

/// Reverse-mode tape over eagerly evaluated tensor ops. Values are computed
/// at op creation; backward() fills gradients for every reachable node that
/// requires them. Summation order inside every kernel is fixed by index, so
/// identical graphs give bit-identical values and gradients.
class Tape {
public:
    using Var = int;

    Var param(Tensor t) { return push(Op::leaf, {}, std::move(t), true); }
    Var constant(Tensor t) { return push(Op::leaf, {}, std::move(t), false); }

    const Tensor& value(Var v) const { return nodes_[v].value; }
    const Tensor& grad(Var v) const { return nodes_[v].grad; }
    bool requires_grad(Var v) const { return nodes_[v].req; }
    std::size_t node_count() const { return nodes_.size(); }

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor out = nodes_[a].value;
        const auto& bb = nodes_[b].value.data;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bb[i];
        return push(Op::add, {a, b}, std::move(out), nodes_[a].req || nodes_[b].req);
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor out = nodes_[a].value;
        const auto& bb = nodes_[b].value.data;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bb[i];
        return push(Op::sub, {a, b}, std::move(out), nodes_[a].req || nodes_[b].req);
    }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor out = nodes_[a].value;
        const auto& bb = nodes_[b].value.data;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bb[i];
        return push(Op::mul, {a, b}, std::move(out), nodes_[a].req || nodes_[b].req);
    }

    Var scale(Var a, double c) {
        Tensor out = nodes_[a].value;
        for (double& v : out.data) v *= c;
        Var id = push(Op::scale, {a}, std::move(out), nodes_[a].req);
        nodes_[id].daux = c;
        return id;
    }

    Var add_list(const std::vector<Var>& xs) {
        if (xs.empty()) throw std::invalid_argument("Tape::add_list: empty");
        Tensor out = nodes_[xs[0]].value;
        bool req = nodes_[xs[0]].req;
        for (std::size_t i = 1; i < xs.size(); ++i) {
            check_same(xs[0], xs[i], "add_list");
            const auto& d = nodes_[xs[i]].value.data;
            for (std::size_t j = 0; j < out.data.size(); ++j) out.data[j] += d[j];
            req = req || nodes_[xs[i]].req;
        }
        return push(Op::addn, xs, std::move(out), req);
    }

    Var matmul(Var a, Var b) {
        const Tensor& ta = nodes_[a].value;
        const Tensor& tb = nodes_[b].value;
        if (ta.cols != tb.rows) throw std::invalid_argument("Tape::matmul: inner dims disagree");
        Tensor out(ta.rows, tb.cols);
        kernels::mm_nn(ta.data.data(), tb.data.data(), out.data.data(), ta.rows, ta.cols, tb.cols);
        return push(Op::matmul, {a, b}, std::move(out), nodes_[a].req || nodes_[b].req);
    }

    /// A . B^T with B given row-major (c x k).
    Var matmul_nt(Var a, Var b) {
        const Tensor& ta = nodes_[a].value;
        const Tensor& tb = nodes_[b].value;
        if (ta.cols != tb.cols) throw std::invalid_argument("Tape::matmul_nt: inner dims disagree");
        Tensor out(ta.rows, tb.rows);
        kernels::mm_nt(ta.data.data(), tb.data.data(), out.data.data(), ta.rows, ta.cols, tb.rows);
        return push(Op::matmul_nt, {a, b}, std::move(out), nodes_[a].req || nodes_[b].req);
    }

    /// x(r x i) . W(i x o) + bias row(1 x o).
    Var linear(Var x, Var w, Var b) {
        const Tensor& tx = nodes_[x].value;
        const Tensor& tw = nodes_[w].value;
        const Tensor& tb = nodes_[b].value;
        if (tx.cols != tw.rows || tb.rows != 1 || tb.cols != tw.cols)
            throw std::invalid_argument("Tape::linear: shape mismatch");
        Tensor out(tx.rows, tw.cols);
        kernels::mm_nn(tx.data.data(), tw.data.data(), out.data.data(), tx.rows, tx.cols, tw.cols);
        for (int r = 0; r < out.rows; ++r)
            for (int c = 0; c < out.cols; ++c) out.at(r, c) += tb.data[c];
        return push(Op::linear, {x, w, b}, std::move(out),
                    nodes_[x].req || nodes_[w].req || nodes_[b].req);
    }

    Var tanh_op(Var a) {
        Tensor out = nodes_[a].value;
        for (double& v : out.data) v = std::tanh(v);
        return push(Op::tanh_, {a}, std::move(out), nodes_[a].req);
    }

    Var exp_op(Var a) {
        Tensor out = nodes_[a].value;
        for (double& v : out.data) v = std::exp(v);
        return push(Op::exp_, {a}, std::move(out), nodes_[a].req);
    }

    Var log_op(Var a) {
        Tensor out = nodes_[a].value;
        for (double& v : out.data) {
            if (v <= 0.0) throw std::runtime_error("Tape::log: non-positive input");
            v = std::log(v);
        }
        return push(Op::log_, {a}, std::move(out), nodes_[a].req);
    }

    /// Per-row layer normalization with learned gain/bias rows (1 x c).
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
        const Tensor& tx = nodes_[x].value;
        const Tensor& tg = nodes_[gain].value;
        const Tensor& tb = nodes_[bias].value;
        if (tg.rows != 1 || tb.rows != 1 || tg.cols != tx.cols || tb.cols != tx.cols)
            throw std::invalid_argument("Tape::layer_norm: shape mismatch");
        int r = tx.rows, c = tx.cols;
        Tensor out(r, c), xhat(r, c), ivar(r, 1);
        for (int i = 0; i < r; ++i) {
            const double* row = tx.data.data() + static_cast<std::size_t>(i) * c;
            double mu = 0;
            for (int j = 0; j < c; ++j) mu += row[j];
            mu /= c;
            double var = 0;
            for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
            var /= c;
            double iv = 1.0 / std::sqrt(var + eps);
            ivar.data[i] = iv;
            for (int j = 0; j < c; ++j) {
                double xh = (row[j] - mu) * iv;
                xhat.at(i, j) = xh;
                out.at(i, j) = xh * tg.data[j] + tb.data[j];
            }
        }
        Var id = push(Op::layernorm, {x, gain, bias}, std::move(out),
                      nodes_[x].req || nodes_[gain].req || nodes_[bias].req);
        nodes_[id].auxs.push_back(std::move(xhat));
        nodes_[id].auxs.push_back(std::move(ivar));
        return id;
    }

    Var softmax_rows(Var x) {
        Tensor out = softmax_of(nodes_[x].value);
        return push(Op::softmax, {x}, std::move(out), nodes_[x].req);
    }

    Var log_softmax_rows(Var x) {
        const Tensor& tx = nodes_[x].value;
        Tensor out(tx.rows, tx.cols);
        for (int i = 0; i < tx.rows; ++i) {
            const double* row = tx.data.data() + static_cast<std::size_t>(i) * tx.cols;
            double mx = row[0];
            for (int j = 1; j < tx.cols; ++j) mx = std::max(mx, row[j]);
            double lse = 0;
            for (int j = 0; j < tx.cols; ++j) lse += std::exp(row[j] - mx);
            lse = mx + std::log(lse);
            for (int j = 0; j < tx.cols; ++j) out.at(i, j) = row[j] - lse;
        }
        return push(Op::logsoftmax, {x}, std::move(out), nodes_[x].req);
    }

    /// Softmax over the surviving entries of each row; masked entries get
    /// exactly zero weight. Every row of the mask must keep at least one entry.
    Var masked_softmax_rows(Var x, Tensor mask) {
        const Tensor& tx = nodes_[x].value;
        if (!tx.same_shape(mask)) throw std::invalid_argument("Tape::masked_softmax_rows: mask shape");
        Tensor out(tx.rows, tx.cols);
        for (int i = 0; i < tx.rows; ++i) {
            const double* row = tx.data.data() + static_cast<std::size_t>(i) * tx.cols;
            const double* mrow = mask.data.data() + static_cast<std::size_t>(i) * tx.cols;
            double mx = -1e300;
            bool any = false;
            for (int j = 0; j < tx.cols; ++j)
                if (mrow[j] != 0.0) {
                    any = true;
                    if (!std::isfinite(row[j]))
                        throw std::runtime_error("Tape::masked_softmax_rows: non-finite score");
                    mx = std::max(mx, row[j]);
                }
            if (!any) throw std::invalid_argument("Tape::masked_softmax_rows: empty row");
            double denom = 0;
            for (int j = 0; j < tx.cols; ++j) {
                double e = mrow[j] != 0.0 ? std::exp(row[j] - mx) : 0.0;
                out.at(i, j) = e;
                denom += e;
            }
            for (int j = 0; j < tx.cols; ++j) out.at(i, j) /= denom;
        }
        Var id = push(Op::msoftmax, {x}, std::move(out), nodes_[x].req);
        nodes_[id].auxs.push_back(std::move(mask));
        return id;
    }

    Var mul_mask(Var x, Tensor mask) {
        const Tensor& tx = nodes_[x].value;
        if (!tx.same_shape(mask)) throw std::invalid_argument("Tape::mul_mask: mask shape");
        Tensor out = tx;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
        Var id = push(Op::mulmask, {x}, std::move(out), nodes_[x].req);
        nodes_[id].auxs.push_back(std::move(mask));
        return id;
    }

    /// Constant-matrix (r x k) times variable (k x c).
    Var matmul_const_left(Tensor a, Var b) {
        const Tensor& tb = nodes_[b].value;
        if (a.cols != tb.rows) throw std::invalid_argument("Tape::matmul_const_left: inner dims");
        Tensor out(a.rows, tb.cols);
        kernels::mm_nn(a.data.data(), tb.data.data(), out.data.data(), a.rows, a.cols, tb.cols);
        Var id = push(Op::cmatl, {b}, std::move(out), nodes_[b].req);
        nodes_[id].auxs.push_back(std::move(a));
        return id;
    }

    /// Variable (r x k) times constant matrix (k x c).
    Var matmul_const_right(Var a, Tensor b) {
        const Tensor& ta = nodes_[a].value;
        if (ta.cols != b.rows) throw std::invalid_argument("Tape::matmul_const_right: inner dims");
        Tensor out(ta.rows, b.cols);
        kernels::mm_nn(ta.data.data(), b.data.data(), out.data.data(), ta.rows, ta.cols, b.cols);
        Var id = push(Op::cmatr, {a}, std::move(out), nodes_[a].req);
        nodes_[id].auxs.push_back(std::move(b));
        return id;
    }

    Var gather_rows(Var x, std::vector<int> idx) {
        const Tensor& tx = nodes_[x].value;
        Tensor out(static_cast<int>(idx.size()), tx.cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= tx.rows) throw std::invalid_argument("Tape::gather_rows: index");
            for (int j = 0; j < tx.cols; ++j) out.at(static_cast<int>(i), j) = tx.at(idx[i], j);
        }
        Var id = push(Op::gather, {x}, std::move(out), nodes_[x].req);
        nodes_[id].iaux = std::move(idx);
        return id;
    }

    Var slice_cols(Var x, int c0, int c1) {
        const Tensor& tx = nodes_[x].value;
        if (c0 < 0 || c1 > tx.cols || c0 >= c1) throw std::invalid_argument("Tape::slice_cols: bounds");
        Tensor out(tx.rows, c1 - c0);
        for (int r = 0; r < tx.rows; ++r)
            for (int j = c0; j < c1; ++j) out.at(r, j - c0) = tx.at(r, j);
        Var id = push(Op::slice, {x}, std::move(out), nodes_[x].req);
        nodes_[id].iaux = {c0, c1};
        return id;
    }

    Var concat_cols(const std::vector<Var>& xs) {
        if (xs.empty()) throw std::invalid_argument("Tape::concat_cols: empty");
        int r = nodes_[xs[0]].value.rows, c = 0;
        bool req = false;
        for (Var v : xs) {
            if (nodes_[v].value.rows != r) throw std::invalid_argument("Tape::concat_cols: row mismatch");
            c += nodes_[v].value.cols;
            req = req || nodes_[v].req;
        }
        Tensor out(r, c);
        int off = 0;
        for (Var v : xs) {
            const Tensor& t = nodes_[v].value;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < t.cols; ++j) out.at(i, off + j) = t.at(i, j);
            off += t.cols;
        }
        return push(Op::concat, xs, std::move(out), req);
    }

    Var reshape(Var x, int r, int c) {
        const Tensor& tx = nodes_[x].value;
        if (static_cast<std::size_t>(r) * c != tx.size()) throw std::invalid_argument("Tape::reshape: size");
        Tensor out = tx;
        out.rows = r;
        out.cols = c;
        Var id = push(Op::reshapev, {x}, std::move(out), nodes_[x].req);
        nodes_[id].iaux = {tx.rows, tx.cols};
        return id;
    }

    Var sum_all(Var x) {
        double s = 0;
        for (double v : nodes_[x].value.data) s += v;
        return push(Op::sum, {x}, Tensor::scalar(s), nodes_[x].req);
    }

    /// Scalar <x, w> with a constant weight tensor of the same shape.
    Var dot_const(Var x, Tensor w) {
        const Tensor& tx = nodes_[x].value;
        if (!tx.same_shape(w)) throw std::invalid_argument("Tape::dot_const: shape");
        double s = 0;
        for (std::size_t i = 0; i < w.data.size(); ++i) s += tx.data[i] * w.data[i];
        Var id = push(Op::dotc, {x}, Tensor::scalar(s), nodes_[x].req);
        nodes_[id].auxs.push_back(std::move(w));
        return id;
    }

    /// Fused per-channel causal matrix product for (n*n) x C edge tensors:
    /// for each channel, with Am = A .* M and Bm = B .* M^T,
    ///   O = Am B + A Bm - Am Bm.
    /// One op instead of ~8C slice/mask/matmul nodes keeps the tape small.
    Var ppgn_causal(Var a2, Var b2, Tensor mask) {
        const Tensor& ta = nodes_[a2].value;
        const Tensor& tb = nodes_[b2].value;
        int n = mask.rows;
        if (mask.cols != n || ta.rows != n * n || !ta.same_shape(tb))
            throw std::invalid_argument("Tape::ppgn_causal: shape mismatch");
        int channels = ta.cols;
        Tensor out(n * n, channels);
        std::vector<double> A(static_cast<std::size_t>(n) * n), B(A.size()), Am(A.size()), Bm(A.size()),
            O(A.size()), tmp(A.size());
        for (int c = 0; c < channels; ++c) {
            for (int idx = 0; idx < n * n; ++idx) {
                A[idx] = ta.data[static_cast<std::size_t>(idx) * channels + c];
                B[idx] = tb.data[static_cast<std::size_t>(idx) * channels + c];
            }
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    std::size_t ij = static_cast<std::size_t>(i) * n + j;
                    Am[ij] = A[ij] * mask.data[ij];
                    Bm[ij] = B[ij] * mask.data[static_cast<std::size_t>(j) * n + i];
                }
            std::fill(O.begin(), O.end(), 0.0);
            kernels::mm_nn(Am.data(), B.data(), O.data(), n, n, n);
            kernels::mm_nn(A.data(), Bm.data(), O.data(), n, n, n);
            std::fill(tmp.begin(), tmp.end(), 0.0);
            kernels::mm_nn(Am.data(), Bm.data(), tmp.data(), n, n, n);
            for (int idx = 0; idx < n * n; ++idx)
                out.data[static_cast<std::size_t>(idx) * channels + c] = O[idx] - tmp[idx];
        }
        Var id = push(Op::ppgn, {a2, b2}, std::move(out), nodes_[a2].req || nodes_[b2].req);
        nodes_[id].auxs.push_back(std::move(mask));
        return id;
    }

    void backward(Var loss) {
        if (nodes_[loss].value.size() != 1) throw std::invalid_argument("Tape::backward: loss not scalar");
        for (auto& n : nodes_) {
            n.grad = Tensor();
        }
        ensure_grad(loss);
        nodes_[loss].grad.data[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.req || n.grad.size() == 0) continue;
            backprop(id);
        }
    }

private:
    enum class Op {
        leaf, add, sub, mul, scale, addn, matmul, matmul_nt, linear, tanh_, exp_, log_,
        layernorm, softmax, logsoftmax, msoftmax, mulmask, cmatl, cmatr, gather, slice,
        concat, reshapev, sum, dotc, ppgn
    };

    struct Node {
        Op op;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;
        bool req = false;
        std::vector<Tensor> auxs;
        std::vector<int> iaux;
        double daux = 0;
    };

    std::vector<Node> nodes_;

    Var push(Op op, std::vector<int> inputs, Tensor value, bool req) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.req = req;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void check_same(Var a, Var b, const char* what) const {
        if (!nodes_[a].value.same_shape(nodes_[b].value))
            throw std::invalid_argument(std::string("Tape::") + what + ": shape mismatch");
    }

    static Tensor softmax_of(const Tensor& tx) {
        Tensor out(tx.rows, tx.cols);
        for (int i = 0; i < tx.rows; ++i) {
            const double* row = tx.data.data() + static_cast<std::size_t>(i) * tx.cols;
            double mx = row[0];
            for (int j = 1; j < tx.cols; ++j) mx = std::max(mx, row[j]);
            double denom = 0;
            for (int j = 0; j < tx.cols; ++j) {
                double e = std::exp(row[j] - mx);
                out.at(i, j) = e;
                denom += e;
            }
            for (int j = 0; j < tx.cols; ++j) out.at(i, j) /= denom;
        }
        return out;
    }

    void ensure_grad(Var v) {
        Node& n = nodes_[v];
        if (n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
    }

    Tensor* grad_sink(Var v) {
        if (!nodes_[v].req) return nullptr;
        ensure_grad(v);
        return &nodes_[v].grad;
    }

    void backprop(int id) {
        Node& n = nodes_[id];
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add:
                for (int i = 0; i < 2; ++i)
                    if (Tensor* s = grad_sink(n.inputs[i]))
                        for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j];
                break;
            case Op::sub: {
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j];
                if (Tensor* s = grad_sink(n.inputs[1]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] -= g.data[j];
                break;
            }
            case Op::mul: {
                const Tensor& va = nodes_[n.inputs[0]].value;
                const Tensor& vb = nodes_[n.inputs[1]].value;
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j] * vb.data[j];
                if (Tensor* s = grad_sink(n.inputs[1]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j] * va.data[j];
                break;
            }
            case Op::scale:
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j] * n.daux;
                break;
            case Op::addn:
                for (int in : n.inputs)
                    if (Tensor* s = grad_sink(in))
                        for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j];
                break;
            case Op::matmul: {
                const Tensor& va = nodes_[n.inputs[0]].value;
                const Tensor& vb = nodes_[n.inputs[1]].value;
                if (Tensor* s = grad_sink(n.inputs[0]))
                    kernels::mm_nt(g.data.data(), vb.data.data(), s->data.data(), g.rows, g.cols, va.cols);
                if (Tensor* s = grad_sink(n.inputs[1]))
                    kernels::mm_tn(va.data.data(), g.data.data(), s->data.data(), va.rows, va.cols, g.cols);
                break;
            }
            case Op::matmul_nt: {
                const Tensor& va = nodes_[n.inputs[0]].value;
                const Tensor& vb = nodes_[n.inputs[1]].value;
                // out = A . B^T ; dA += g . B ; dB += g^T . A
                if (Tensor* s = grad_sink(n.inputs[0]))
                    kernels::mm_nn(g.data.data(), vb.data.data(), s->data.data(), g.rows, g.cols, vb.cols);
                if (Tensor* s = grad_sink(n.inputs[1]))
                    kernels::mm_tn(g.data.data(), va.data.data(), s->data.data(), g.rows, g.cols, va.cols);
                break;
            }
            case Op::linear: {
                const Tensor& vx = nodes_[n.inputs[0]].value;
                const Tensor& vw = nodes_[n.inputs[1]].value;
                if (Tensor* s = grad_sink(n.inputs[0]))
                    kernels::mm_nt(g.data.data(), vw.data.data(), s->data.data(), g.rows, g.cols, vw.rows);
                if (Tensor* s = grad_sink(n.inputs[1]))
                    kernels::mm_tn(vx.data.data(), g.data.data(), s->data.data(), vx.rows, vx.cols, g.cols);
                if (Tensor* s = grad_sink(n.inputs[2]))
                    for (int r = 0; r < g.rows; ++r)
                        for (int c = 0; c < g.cols; ++c) s->data[c] += g.at(r, c);
                break;
            }
            case Op::tanh_:
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j)
                        s->data[j] += g.data[j] * (1.0 - n.value.data[j] * n.value.data[j]);
                break;
            case Op::exp_:
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j] * n.value.data[j];
                break;
            case Op::log_: {
                const Tensor& vx = nodes_[n.inputs[0]].value;
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j] / vx.data[j];
                break;
            }
            case Op::layernorm: {
                const Tensor& xhat = n.auxs[0];
                const Tensor& ivar = n.auxs[1];
                const Tensor& vg = nodes_[n.inputs[1]].value;
                int r = g.rows, c = g.cols;
                if (Tensor* s = grad_sink(n.inputs[0])) {
                    for (int i = 0; i < r; ++i) {
                        double sum_dxhat = 0, sum_dxhat_xhat = 0;
                        for (int j = 0; j < c; ++j) {
                            double dxh = g.at(i, j) * vg.data[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat.at(i, j);
                        }
                        double iv = ivar.data[i];
                        for (int j = 0; j < c; ++j) {
                            double dxh = g.at(i, j) * vg.data[j];
                            s->at(i, j) += iv * (dxh - sum_dxhat / c - xhat.at(i, j) * sum_dxhat_xhat / c);
                        }
                    }
                }
                if (Tensor* s = grad_sink(n.inputs[1]))
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) s->data[j] += g.at(i, j) * xhat.at(i, j);
                if (Tensor* s = grad_sink(n.inputs[2]))
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) s->data[j] += g.at(i, j);
                break;
            }
            case Op::softmax:
            case Op::msoftmax: {
                if (Tensor* s = grad_sink(n.inputs[0])) {
                    const Tensor& w = n.value;
                    for (int i = 0; i < g.rows; ++i) {
                        double dot = 0;
                        for (int j = 0; j < g.cols; ++j) dot += g.at(i, j) * w.at(i, j);
                        for (int j = 0; j < g.cols; ++j)
                            s->at(i, j) += w.at(i, j) * (g.at(i, j) - dot);
                    }
                }
                break;
            }
            case Op::logsoftmax: {
                if (Tensor* s = grad_sink(n.inputs[0])) {
                    for (int i = 0; i < g.rows; ++i) {
                        double total = 0;
                        for (int j = 0; j < g.cols; ++j) total += g.at(i, j);
                        for (int j = 0; j < g.cols; ++j)
                            s->at(i, j) += g.at(i, j) - std::exp(n.value.at(i, j)) * total;
                    }
                }
                break;
            }
            case Op::mulmask: {
                const Tensor& m = n.auxs[0];
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j] * m.data[j];
                break;
            }
            case Op::cmatl: {
                const Tensor& a = n.auxs[0];
                if (Tensor* s = grad_sink(n.inputs[0]))
                    kernels::mm_tn(a.data.data(), g.data.data(), s->data.data(), a.rows, a.cols, g.cols);
                break;
            }
            case Op::cmatr: {
                const Tensor& b = n.auxs[0];
                if (Tensor* s = grad_sink(n.inputs[0]))
                    kernels::mm_nt(g.data.data(), b.data.data(), s->data.data(), g.rows, g.cols, b.rows);
                break;
            }
            case Op::gather: {
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t i = 0; i < n.iaux.size(); ++i)
                        for (int j = 0; j < g.cols; ++j) s->at(n.iaux[i], j) += g.at(static_cast<int>(i), j);
                break;
            }
            case Op::slice: {
                if (Tensor* s = grad_sink(n.inputs[0])) {
                    int c0 = n.iaux[0];
                    for (int r = 0; r < g.rows; ++r)
                        for (int j = 0; j < g.cols; ++j) s->at(r, c0 + j) += g.at(r, j);
                }
                break;
            }
            case Op::concat: {
                int off = 0;
                for (int in : n.inputs) {
                    const Tensor& t = nodes_[in].value;
                    if (Tensor* s = grad_sink(in))
                        for (int r = 0; r < g.rows; ++r)
                            for (int j = 0; j < t.cols; ++j) s->at(r, j) += g.at(r, off + j);
                    off += t.cols;
                }
                break;
            }
            case Op::reshapev: {
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < g.data.size(); ++j) s->data[j] += g.data[j];
                break;
            }
            case Op::sum: {
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < s->data.size(); ++j) s->data[j] += g.data[0];
                break;
            }
            case Op::dotc: {
                const Tensor& w = n.auxs[0];
                if (Tensor* s = grad_sink(n.inputs[0]))
                    for (std::size_t j = 0; j < w.data.size(); ++j) s->data[j] += g.data[0] * w.data[j];
                break;
            }
            case Op::ppgn: {
                const Tensor& ta = nodes_[n.inputs[0]].value;
                const Tensor& tb = nodes_[n.inputs[1]].value;
                const Tensor& mask = n.auxs[0];
                int nn = mask.rows;
                int channels = ta.cols;
                Tensor* sa = grad_sink(n.inputs[0]);
                Tensor* sb = grad_sink(n.inputs[1]);
                std::vector<double> A(static_cast<std::size_t>(nn) * nn), B(A.size()), Am(A.size()),
                    Bm(A.size()), dO(A.size()), p1(A.size()), p2(A.size()), q1(A.size()), q2(A.size());
                for (int c = 0; c < channels; ++c) {
                    for (int idx = 0; idx < nn * nn; ++idx) {
                        A[idx] = ta.data[static_cast<std::size_t>(idx) * channels + c];
                        B[idx] = tb.data[static_cast<std::size_t>(idx) * channels + c];
                        dO[idx] = g.data[static_cast<std::size_t>(idx) * channels + c];
                    }
                    for (int i = 0; i < nn; ++i)
                        for (int j = 0; j < nn; ++j) {
                            std::size_t ij = static_cast<std::size_t>(i) * nn + j;
                            Am[ij] = A[ij] * mask.data[ij];
                            Bm[ij] = B[ij] * mask.data[static_cast<std::size_t>(j) * nn + i];
                        }
                    if (sa) {
                        // dA = dO Bm^T + M .* (dO B^T - dO Bm^T)
                        std::fill(p1.begin(), p1.end(), 0.0);
                        std::fill(p2.begin(), p2.end(), 0.0);
                        kernels::mm_nt(dO.data(), B.data(), p1.data(), nn, nn, nn);
                        kernels::mm_nt(dO.data(), Bm.data(), p2.data(), nn, nn, nn);
                        for (int idx = 0; idx < nn * nn; ++idx)
                            sa->data[static_cast<std::size_t>(idx) * channels + c] +=
                                p2[idx] + mask.data[idx] * (p1[idx] - p2[idx]);
                    }
                    if (sb) {
                        // dB = Am^T dO + M^T .* (A^T dO - Am^T dO)
                        std::fill(q1.begin(), q1.end(), 0.0);
                        std::fill(q2.begin(), q2.end(), 0.0);
                        kernels::mm_tn(Am.data(), dO.data(), q1.data(), nn, nn, nn);
                        kernels::mm_tn(A.data(), dO.data(), q2.data(), nn, nn, nn);
                        for (int i = 0; i < nn; ++i)
                            for (int j = 0; j < nn; ++j) {
                                std::size_t ij = static_cast<std::size_t>(i) * nn + j;
                                double mt = mask.data[static_cast<std::size_t>(j) * nn + i];
                                sb->data[ij * channels + c] += q1[ij] + mt * (q2[ij] - q1[ij]);
                            }
                    }
                }
                break;
            }
        }
    }
};

}  // namespace blockdiff
