#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "crocodil/numerics/rng.hpp"

namespace crocodil {

#define CROC_CHECK(cond, msg)                                                  \
    do {                                                                       \
        if (!(cond)) throw std::runtime_error(std::string("crocodil: ") + msg); \
    } while (0)

// Global switch: scan every op output for NaN/Inf and throw with the op tag.
inline bool& finite_checks() {
    static bool on = true;
    return on;
}

template <class F> struct AutogradNode {
    std::vector<std::shared_ptr<AutogradNode<F>>> parents;
    std::function<void()> backward;
    const char* tag = "";
};

template <class F> struct TensorData {
    std::vector<int> shape;
    std::vector<F> v;
    std::vector<F> g; // empty until a gradient is accumulated
    bool requires_grad = false;
    std::string name;
    std::shared_ptr<AutogradNode<F>> node;

    size_t numel() const {
        size_t n = 1;
        for (int e : shape) n *= size_t(e);
        return n;
    }
    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), F(0));
    }
};

// Shared-handle dense tensor. Values are written once by the producing op;
// gradients accumulate during backward().
template <class F> class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : d_(std::make_shared<TensorData<F>>()) {
        d_->shape = std::move(shape);
        d_->v.assign(d_->numel(), F(0));
    }
    Tensor(std::vector<int> shape, std::vector<F> values)
        : d_(std::make_shared<TensorData<F>>()) {
        d_->shape = std::move(shape);
        d_->v = std::move(values);
        CROC_CHECK(d_->v.size() == d_->numel(), "tensor data length does not match shape");
    }

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[size_t(i)]; }
    size_t numel() const { return d_->numel(); }
    int rows() const { return d_->shape.size() == 2 ? d_->shape[0] : int(numel()); }
    int cols() const { return d_->shape.size() == 2 ? d_->shape[1] : 1; }

    F* data() { return d_->v.data(); }
    const F* data() const { return d_->v.data(); }
    std::vector<F>& values() { return d_->v; }
    const std::vector<F>& values() const { return d_->v; }
    F item() const {
        CROC_CHECK(numel() == 1, "item() on non-scalar tensor");
        return d_->v[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool rg = true) {
        d_->requires_grad = rg;
        return *this;
    }
    const std::string& name() const { return d_->name; }
    Tensor& set_name(std::string n) {
        d_->name = std::move(n);
        return *this;
    }

    std::vector<F>& grad() {
        d_->ensure_grad();
        return d_->g;
    }
    const std::vector<F>* grad_if_any() const { return d_->g.empty() ? nullptr : &d_->g; }
    void zero_grad() {
        if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), F(0));
    }

    std::shared_ptr<TensorData<F>> impl() const { return d_; }

  private:
    std::shared_ptr<TensorData<F>> d_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------- creation

template <class F> Tensor<F> full(std::vector<int> shape, F value) {
    Tensor<F> t(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

template <class F> Tensor<F> scalar(F value) { return Tensor<F>({1}, {value}); }

template <class F> Tensor<F> randn(std::vector<int> shape, RngStream& rng, F stddev = F(1)) {
    Tensor<F> t(std::move(shape));
    for (auto& x : t.values()) x = F(rng.gaussian()) * stddev;
    return t;
}

// ------------------------------------------------------------ tape plumbing

namespace detail {

template <class F>
std::shared_ptr<AutogradNode<F>> make_node(const char* tag,
                                           std::initializer_list<Tensor<F>> inputs) {
    auto node = std::make_shared<AutogradNode<F>>();
    node->tag = tag;
    for (const auto& in : inputs) {
        if (in.defined() && in.impl()->node) node->parents.push_back(in.impl()->node);
    }
    return node;
}

template <class F> bool any_grad(std::initializer_list<Tensor<F>> inputs) {
    for (const auto& in : inputs)
        if (in.defined() && (in.requires_grad() || in.impl()->node)) return true;
    return false;
}

template <class F> void check_out(const Tensor<F>& out, const char* tag) {
    if (!finite_checks()) return;
    for (F x : out.values())
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("crocodil: non-finite value produced by op '") +
                                     tag + "'" +
                                     (out.name().empty() ? "" : " (tensor '" + out.name() + "')"));
}

// Attach a backward fn; output tracks the tape only if some input does.
// The node must not own the output (the output owns the node), so the
// closure receives the output's data through a weak reference.
template <class F, class Fn>
void wire(Tensor<F>& out, const char* tag, std::initializer_list<Tensor<F>> inputs, Fn backward) {
    check_out(out, tag);
    if (!any_grad(inputs)) return;
    auto node = make_node(tag, inputs);
    std::weak_ptr<TensorData<F>> weak_out = out.impl();
    node->backward = [weak_out, fn = std::move(backward)]() mutable {
        if (auto od = weak_out.lock())
            if (!od->g.empty()) fn(*od);
    };
    out.impl()->node = node;
}

template <class F> bool wants(const Tensor<F>& t) {
    return t.requires_grad() || t.impl()->node != nullptr;
}

} // namespace detail

// Reverse-mode sweep from a scalar loss. Every tensor reachable on the tape
// with requires_grad (or produced by an op) accumulates its exact gradient;
// accumulation order is the reverse of definition order, so repeated runs
// are bit-identical. Value-semantics op construction cannot form cycles.
template <class F> void backward(Tensor<F> loss) {
    CROC_CHECK(loss.numel() == 1, "backward: loss must be a scalar");
    if (!loss.impl()->node) return;
    loss.impl()->ensure_grad();
    loss.impl()->g[0] = F(1);

    // iterative post-order DFS; reversed post-order is a valid topo order
    std::vector<std::shared_ptr<AutogradNode<F>>> order;
    std::unordered_set<AutogradNode<F>*> seen;
    struct Frame {
        std::shared_ptr<AutogradNode<F>> node;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl()->node, 0});
    seen.insert(loss.impl()->node.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->parents.size()) {
            auto child = f.node->parents[f.next_child++];
            if (seen.insert(child.get()).second) stack.push_back({std::move(child), 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward();
}

// ------------------------------------------------------------- gemm kernels

// C[M,N] += A(ta) * B(tb); A,B row-major as stored. alpha scales the product.
template <class F>
void gemm_acc(F* C, const F* A, const F* B, int M, int K, int N, bool ta, bool tb,
              F alpha = F(1)) {
    if (!ta && !tb) {
        for (int i = 0; i < M; ++i) {
            F* __restrict c = C + size_t(i) * N;
            const F* a = A + size_t(i) * K;
            for (int k = 0; k < K; ++k) {
                const F aik = alpha * a[k];
                if (aik == F(0)) continue;
                const F* __restrict b = B + size_t(k) * N;
                for (int j = 0; j < N; ++j) c[j] += aik * b[j];
            }
        }
    } else if (ta && !tb) { // A stored K x M
        for (int k = 0; k < K; ++k) {
            const F* a = A + size_t(k) * M;
            const F* __restrict b = B + size_t(k) * N;
            for (int i = 0; i < M; ++i) {
                const F aik = alpha * a[i];
                if (aik == F(0)) continue;
                F* __restrict c = C + size_t(i) * N;
                for (int j = 0; j < N; ++j) c[j] += aik * b[j];
            }
        }
    } else if (!ta && tb) { // B stored N x K: transpose into scratch, reuse the NN loop
        std::vector<F> bt(size_t(K) * N);
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < K; ++k) bt[size_t(k) * N + j] = B[size_t(j) * K + k];
        gemm_acc(C, A, bt.data(), M, K, N, false, false, alpha);
    } else { // A stored K x M, B stored N x K
        std::vector<F> bt(size_t(K) * N);
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < K; ++k) bt[size_t(k) * N + j] = B[size_t(j) * K + k];
        gemm_acc(C, A, bt.data(), M, K, N, true, false, alpha);
    }
}

// --------------------------------------------------------------------- ops

template <class F> Tensor<F> add(Tensor<F> a, Tensor<F> b) {
    CROC_CHECK(a.shape() == b.shape(), "add: shape mismatch");
    Tensor<F> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::wire(out, "add", {a, b}, [a, b](TensorData<F>& od) mutable {
        const auto& go = od.g;
        if (detail::wants(a)) {
            a.impl()->ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) a.impl()->g[i] += go[i];
        }
        if (detail::wants(b)) {
            b.impl()->ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) b.impl()->g[i] += go[i];
        }
    });
    return out;
}

template <class F> Tensor<F> sub(Tensor<F> a, Tensor<F> b) {
    CROC_CHECK(a.shape() == b.shape(), "sub: shape mismatch");
    Tensor<F> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    detail::wire(out, "sub", {a, b}, [a, b](TensorData<F>& od) mutable {
        const auto& go = od.g;
        if (detail::wants(a)) {
            a.impl()->ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) a.impl()->g[i] += go[i];
        }
        if (detail::wants(b)) {
            b.impl()->ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) b.impl()->g[i] -= go[i];
        }
    });
    return out;
}

template <class F> Tensor<F> mul(Tensor<F> a, Tensor<F> b) {
    CROC_CHECK(a.shape() == b.shape(), "mul: shape mismatch");
    Tensor<F> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    detail::wire(out, "mul", {a, b}, [a, b](TensorData<F>& od) mutable {
        const auto& go = od.g;
        if (detail::wants(a)) {
            a.impl()->ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) a.impl()->g[i] += go[i] * b.data()[i];
        }
        if (detail::wants(b)) {
            b.impl()->ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) b.impl()->g[i] += go[i] * a.data()[i];
        }
    });
    return out;
}

template <class F> Tensor<F> scale(Tensor<F> a, F c) {
    Tensor<F> out(a.shape());
    for (size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * c;
    detail::wire(out, "scale", {a}, [a, c](TensorData<F>& od) mutable {
        const auto& go = od.g;
        a.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) a.impl()->g[i] += go[i] * c;
    });
    return out;
}

// x: [R, C], b: [C]
template <class F> Tensor<F> add_bias(Tensor<F> x, Tensor<F> b) {
    const int R = x.rows(), C = x.cols();
    CROC_CHECK(int(b.numel()) == C, "add_bias: bias length mismatch");
    Tensor<F> out(x.shape());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out.data()[size_t(r) * C + c] = x.data()[size_t(r) * C + c] + b.data()[c];
    detail::wire(out, "add_bias", {x, b}, [x, b, R, C](TensorData<F>& od) mutable {
        const auto& go = od.g;
        if (detail::wants(x)) {
            x.impl()->ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) x.impl()->g[i] += go[i];
        }
        if (detail::wants(b)) {
            b.impl()->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) b.impl()->g[c] += go[size_t(r) * C + c];
        }
    });
    return out;
}

template <class F> Tensor<F> matmul(Tensor<F> a, Tensor<F> b, bool ta = false, bool tb = false) {
    CROC_CHECK(a.shape().size() == 2 && b.shape().size() == 2, "matmul: 2-D tensors expected");
    const int M = ta ? a.dim(1) : a.dim(0);
    const int K = ta ? a.dim(0) : a.dim(1);
    const int Kb = tb ? b.dim(1) : b.dim(0);
    const int N = tb ? b.dim(0) : b.dim(1);
    CROC_CHECK(K == Kb, "matmul: inner dimensions disagree");
    Tensor<F> out({M, N});
    gemm_acc(out.data(), a.data(), b.data(), M, K, N, ta, tb);
    detail::wire(out, "matmul", {a, b}, [a, b, M, K, N, ta, tb](TensorData<F>& od) mutable {
        const F* go = od.g.data();
        // dA' = G * B'^T ; dB' = A'^T * G, mapped back through the stored layouts
        if (detail::wants(a)) {
            a.impl()->ensure_grad();
            F* ga = a.impl()->g.data();
            if (!ta)
                gemm_acc(ga, go, b.data(), M, N, K, false, !tb);
            else // a stored K x M: dA = (G B'^T)^T = B' G^T
                gemm_acc(ga, b.data(), go, K, N, M, tb, true);
        }
        if (detail::wants(b)) {
            b.impl()->ensure_grad();
            F* gb = b.impl()->g.data();
            if (!tb)
                gemm_acc(gb, a.data(), go, K, M, N, !ta, false);
            else // b stored N x K: dB = (A'^T G)^T = G^T A'
                gemm_acc(gb, go, a.data(), N, M, K, true, ta);
        }
    });
    return out;
}

// table: [V, d]; ids outside [0, V) are rejected
template <class F> Tensor<F> embedding(Tensor<F> table, const std::vector<int32_t>& ids) {
    const int V = table.dim(0), d = table.dim(1);
    Tensor<F> out({int(ids.size()), d});
    for (size_t t = 0; t < ids.size(); ++t) {
        CROC_CHECK(ids[t] >= 0 && ids[t] < V, "embedding: id out of range");
        std::memcpy(out.data() + t * d, table.data() + size_t(ids[t]) * d, sizeof(F) * d);
    }
    detail::wire(out, "embedding", {table}, [table, ids, d](TensorData<F>& od) mutable {
        table.impl()->ensure_grad();
        const auto& go = od.g;
        for (size_t t = 0; t < ids.size(); ++t) {
            F* dst = table.impl()->g.data() + size_t(ids[t]) * d;
            const F* src = go.data() + t * d;
            for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
    return out;
}

// y = x * w / rms(x) per row
template <class F> Tensor<F> rmsnorm(Tensor<F> x, Tensor<F> w, F eps = F(1e-5)) {
    const int R = x.rows(), C = x.cols();
    CROC_CHECK(int(w.numel()) == C, "rmsnorm: weight length mismatch");
    Tensor<F> out(x.shape());
    std::vector<F> inv(R);
    for (int r = 0; r < R; ++r) {
        const F* xr = x.data() + size_t(r) * C;
        F ss = 0;
        for (int c = 0; c < C; ++c) ss += xr[c] * xr[c];
        inv[r] = F(1) / std::sqrt(ss / C + eps);
        for (int c = 0; c < C; ++c) out.data()[size_t(r) * C + c] = xr[c] * w.data()[c] * inv[r];
    }
    detail::wire(out, "rmsnorm", {x, w}, [x, w, inv, R, C](TensorData<F>& od) mutable {
        const auto& go = od.g;
        if (detail::wants(x)) {
            x.impl()->ensure_grad();
            for (int r = 0; r < R; ++r) {
                const F* xr = x.data() + size_t(r) * C;
                const F* gr = go.data() + size_t(r) * C;
                F dot = 0;
                for (int c = 0; c < C; ++c) dot += gr[c] * w.data()[c] * xr[c];
                const F k = inv[r] * inv[r] * inv[r] * dot / C;
                F* gx = x.impl()->g.data() + size_t(r) * C;
                for (int c = 0; c < C; ++c) gx[c] += gr[c] * w.data()[c] * inv[r] - xr[c] * k;
            }
        }
        if (detail::wants(w)) {
            w.impl()->ensure_grad();
            for (int r = 0; r < R; ++r) {
                const F* xr = x.data() + size_t(r) * C;
                const F* gr = go.data() + size_t(r) * C;
                for (int c = 0; c < C; ++c) w.impl()->g[c] += gr[c] * xr[c] * inv[r];
            }
        }
    });
    return out;
}

template <class F> Tensor<F> silu(Tensor<F> x) {
    Tensor<F> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        const F s = F(1) / (F(1) + std::exp(-x.data()[i]));
        out.data()[i] = x.data()[i] * s;
    }
    detail::wire(out, "silu", {x}, [x](TensorData<F>& od) mutable {
        const auto& go = od.g;
        x.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) {
            const F xi = x.data()[i];
            const F s = F(1) / (F(1) + std::exp(-xi));
            x.impl()->g[i] += go[i] * s * (F(1) + xi * (F(1) - s));
        }
    });
    return out;
}

// rotate channel pairs (2p, 2p+1) of every head by angles[row*pairs + p]
template <class F>
Tensor<F> rope_apply(Tensor<F> x, const std::vector<F>& angles, int heads) {
    const int R = x.rows(), C = x.cols();
    CROC_CHECK(C % heads == 0, "rope_apply: width not divisible by heads");
    const int dh = C / heads;
    CROC_CHECK(dh % 2 == 0, "rope_apply: head width must be even");
    const int pairs = dh / 2;
    CROC_CHECK(angles.size() == size_t(R) * pairs, "rope_apply: angle table size mismatch");
    Tensor<F> out(x.shape());
    for (int r = 0; r < R; ++r) {
        const F* xr = x.data() + size_t(r) * C;
        F* orow = out.data() + size_t(r) * C;
        for (int p = 0; p < pairs; ++p) {
            const F c = std::cos(angles[size_t(r) * pairs + p]);
            const F s = std::sin(angles[size_t(r) * pairs + p]);
            for (int h = 0; h < heads; ++h) {
                const int i0 = h * dh + 2 * p, i1 = i0 + 1;
                orow[i0] = c * xr[i0] - s * xr[i1];
                orow[i1] = s * xr[i0] + c * xr[i1];
            }
        }
    }
    detail::wire(out, "rope_apply", {x}, [x, angles, R, C, heads, dh](TensorData<F>& od) mutable {
        const int pairs = dh / 2;
        const auto& go = od.g;
        x.impl()->ensure_grad();
        for (int r = 0; r < R; ++r) {
            const F* gr = go.data() + size_t(r) * C;
            F* gx = x.impl()->g.data() + size_t(r) * C;
            for (int p = 0; p < pairs; ++p) {
                const F c = std::cos(angles[size_t(r) * pairs + p]);
                const F s = std::sin(angles[size_t(r) * pairs + p]);
                for (int h = 0; h < heads; ++h) {
                    const int i0 = h * dh + 2 * p, i1 = i0 + 1;
                    gx[i0] += c * gr[i0] + s * gr[i1];
                    gx[i1] += -s * gr[i0] + c * gr[i1];
                }
            }
        }
    });
    return out;
}

// Batched multi-head attention over per-sample blocks: queries come in
// blocks of tq rows, keys/values in blocks of tk rows (tq == tk for
// self-attention). keep: optional [B*tq*tk] bytes, keep[b][ti][tu] = 1 means
// query ti of sample b may attend key tu. Blocked scores are replaced by a
// large negative constant so their softmax weight underflows to exactly zero;
// a fully blocked key therefore cannot leak into any output bit.
template <class F>
Tensor<F> attention(Tensor<F> q, Tensor<F> k, Tensor<F> v, int batch, int tq, int tk, int heads,
                    const std::vector<uint8_t>& keep = {}) {
    const int C = q.cols();
    CROC_CHECK(k.shape() == v.shape() && k.cols() == C, "attention: k/v shape mismatch");
    CROC_CHECK(q.rows() == batch * tq, "attention: q rows != batch*tq");
    CROC_CHECK(k.rows() == batch * tk, "attention: k rows != batch*tk");
    CROC_CHECK(C % heads == 0, "attention: width not divisible by heads");
    CROC_CHECK(keep.empty() || keep.size() == size_t(batch) * tq * tk,
               "attention: mask size mismatch");
    const int dh = C / heads;
    const F sc = F(1) / std::sqrt(F(dh));
    const F neg = F(-1e30);

    Tensor<F> out(q.shape());
    auto wsave = std::make_shared<std::vector<F>>(size_t(batch) * heads * tq * tk);

    std::vector<F> row(size_t(tk), F(0));
    for (int b = 0; b < batch; ++b) {
        const uint8_t* kb = keep.empty() ? nullptr : keep.data() + size_t(b) * tq * tk;
        for (int h = 0; h < heads; ++h) {
            F* wbh = wsave->data() + (size_t(b) * heads + h) * tq * tk;
            for (int ti = 0; ti < tq; ++ti) {
                const F* qr = q.data() + (size_t(b) * tq + ti) * C + h * dh;
                F mx = neg;
                for (int tu = 0; tu < tk; ++tu) {
                    if (kb && !kb[size_t(ti) * tk + tu]) {
                        row[size_t(tu)] = neg;
                        continue;
                    }
                    const F* kr = k.data() + (size_t(b) * tk + tu) * C + h * dh;
                    F acc = 0;
                    for (int c = 0; c < dh; ++c) acc += qr[c] * kr[c];
                    row[size_t(tu)] = acc * sc;
                    mx = std::max(mx, row[size_t(tu)]);
                }
                F denom = 0;
                for (int tu = 0; tu < tk; ++tu) {
                    const F e = (row[size_t(tu)] == neg) ? F(0) : std::exp(row[size_t(tu)] - mx);
                    wbh[size_t(ti) * tk + tu] = e;
                    denom += e;
                }
                CROC_CHECK(denom > F(0), "attention: query row with every key blocked");
                F* orow = out.data() + (size_t(b) * tq + ti) * C + h * dh;
                for (int tu = 0; tu < tk; ++tu) {
                    const F w = wbh[size_t(ti) * tk + tu] / denom;
                    wbh[size_t(ti) * tk + tu] = w;
                    if (w == F(0)) continue;
                    const F* vr = v.data() + (size_t(b) * tk + tu) * C + h * dh;
                    for (int c = 0; c < dh; ++c) orow[c] += w * vr[c];
                }
            }
        }
    }

    detail::wire(out, "attention", {q, k, v},
                 [q, k, v, wsave, batch, tq, tk, heads, dh, C, sc](TensorData<F>& od) mutable {
        const auto& go = od.g;
        q.impl()->ensure_grad();
        k.impl()->ensure_grad();
        v.impl()->ensure_grad();
        std::vector<F> dw(size_t(tq) * tk), ds(size_t(tq) * tk);
        for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < heads; ++h) {
                const F* wbh = wsave->data() + (size_t(b) * heads + h) * tq * tk;
                for (int ti = 0; ti < tq; ++ti) {
                    const F* gor = go.data() + (size_t(b) * tq + ti) * C + h * dh;
                    F rowdot = 0;
                    for (int tu = 0; tu < tk; ++tu) {
                        const F w = wbh[size_t(ti) * tk + tu];
                        F d = 0;
                        if (w != F(0)) {
                            const F* vr = v.data() + (size_t(b) * tk + tu) * C + h * dh;
                            for (int c = 0; c < dh; ++c) d += gor[c] * vr[c];
                            F* gv = v.impl()->g.data() + (size_t(b) * tk + tu) * C + h * dh;
                            for (int c = 0; c < dh; ++c) gv[c] += w * gor[c];
                        }
                        dw[size_t(ti) * tk + tu] = d;
                        rowdot += d * w;
                    }
                    for (int tu = 0; tu < tk; ++tu) {
                        const F w = wbh[size_t(ti) * tk + tu];
                        ds[size_t(ti) * tk + tu] = w * (dw[size_t(ti) * tk + tu] - rowdot);
                    }
                }
                for (int ti = 0; ti < tq; ++ti) {
                    F* gq = q.impl()->g.data() + (size_t(b) * tq + ti) * C + h * dh;
                    const F* qr = q.data() + (size_t(b) * tq + ti) * C + h * dh;
                    for (int tu = 0; tu < tk; ++tu) {
                        const F d = ds[size_t(ti) * tk + tu] * sc;
                        if (d == F(0)) continue;
                        const F* kr = k.data() + (size_t(b) * tk + tu) * C + h * dh;
                        F* gk = k.impl()->g.data() + (size_t(b) * tk + tu) * C + h * dh;
                        for (int c = 0; c < dh; ++c) {
                            gq[c] += d * kr[c];
                            gk[c] += d * qr[c];
                        }
                    }
                }
            }
        }
    });
    return out;
}

// Repeat each row `times` times: [R, C] -> [R*times, C].
template <class F> Tensor<F> repeat_rows(Tensor<F> x, int times) {
    const int R = x.rows(), C = x.cols();
    Tensor<F> out({R * times, C});
    for (int r = 0; r < R; ++r)
        for (int rep = 0; rep < times; ++rep)
            std::memcpy(out.data() + (size_t(r) * times + rep) * C, x.data() + size_t(r) * C,
                        sizeof(F) * C);
    detail::wire(out, "repeat_rows", {x}, [x, R, C, times](TensorData<F>& od) mutable {
        const auto& go = od.g;
        x.impl()->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int rep = 0; rep < times; ++rep) {
                const F* src = go.data() + (size_t(r) * times + rep) * C;
                F* dst = x.impl()->g.data() + size_t(r) * C;
                for (int c = 0; c < C; ++c) dst[c] += src[c];
            }
    });
    return out;
}

// Weighted cross entropy over rows; target < 0 marks an inactive row.
// Returns sum_r w_r * (logsumexp(row_r) - row_r[target_r]) / divisor.
template <class F>
Tensor<F> cross_entropy_rows(Tensor<F> logits, const std::vector<int32_t>& targets,
                             const std::vector<F>& row_weights, F divisor) {
    const int R = logits.rows(), V = logits.cols();
    CROC_CHECK(targets.size() == size_t(R), "cross_entropy_rows: target count mismatch");
    CROC_CHECK(row_weights.size() == size_t(R), "cross_entropy_rows: weight count mismatch");
    CROC_CHECK(divisor != F(0), "cross_entropy_rows: zero divisor");
    F total = 0;
    for (int r = 0; r < R; ++r) {
        if (targets[r] < 0 || row_weights[r] == F(0)) continue;
        CROC_CHECK(targets[r] < V, "cross_entropy_rows: target out of range");
        const F* row = logits.data() + size_t(r) * V;
        F mx = row[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        F lse = 0;
        for (int j = 0; j < V; ++j) lse += std::exp(row[j] - mx);
        lse = std::log(lse) + mx;
        total += row_weights[r] * (lse - row[targets[r]]);
    }
    Tensor<F> out = scalar(total / divisor);
    detail::wire(out, "cross_entropy", {logits},
                 [logits, targets, row_weights, divisor, R, V](TensorData<F>& od) mutable {
        const F go = od.g[0];
        logits.impl()->ensure_grad();
        for (int r = 0; r < R; ++r) {
            if (targets[r] < 0 || row_weights[r] == F(0)) continue;
            const F* row = logits.data() + size_t(r) * V;
            F* grow = logits.impl()->g.data() + size_t(r) * V;
            F mx = row[0];
            for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
            F denom = 0;
            for (int j = 0; j < V; ++j) denom += std::exp(row[j] - mx);
            const F coef = go * row_weights[r] / divisor;
            for (int j = 0; j < V; ++j) {
                const F p = std::exp(row[j] - mx) / denom;
                grow[j] += coef * (p - (j == targets[r] ? F(1) : F(0)));
            }
        }
    });
    return out;
}

// sum((a - b)^2) / divisor
template <class F> Tensor<F> mse(Tensor<F> a, Tensor<F> b, F divisor) {
    CROC_CHECK(a.shape() == b.shape(), "mse: shape mismatch");
    CROC_CHECK(divisor != F(0), "mse: zero divisor");
    F total = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const F d = a.data()[i] - b.data()[i];
        total += d * d;
    }
    Tensor<F> out = scalar(total / divisor);
    detail::wire(out, "mse", {a, b}, [a, b, divisor](TensorData<F>& od) mutable {
        const F go = od.g[0];
        if (detail::wants(a)) {
            a.impl()->ensure_grad();
            for (size_t i = 0; i < a.numel(); ++i)
                a.impl()->g[i] += go * F(2) * (a.data()[i] - b.data()[i]) / divisor;
        }
        if (detail::wants(b)) {
            b.impl()->ensure_grad();
            for (size_t i = 0; i < b.numel(); ++i)
                b.impl()->g[i] -= go * F(2) * (a.data()[i] - b.data()[i]) / divisor;
        }
    });
    return out;
}

template <class F> Tensor<F> sum_all(Tensor<F> x) {
    F total = 0;
    for (size_t i = 0; i < x.numel(); ++i) total += x.data()[i];
    Tensor<F> out = scalar(total);
    detail::wire(out, "sum_all", {x}, [x](TensorData<F>& od) mutable {
        const F go = od.g[0];
        x.impl()->ensure_grad();
        for (size_t i = 0; i < x.numel(); ++i) x.impl()->g[i] += go;
    });
    return out;
}

// Per-sample concatenation: piece i holds rows_per[i] rows per sample.
// Output row order per sample b: piece 0 rows, piece 1 rows, ...
template <class F>
Tensor<F> interleave_blocks(const std::vector<Tensor<F>>& pieces,
                            const std::vector<int>& rows_per, int batch) {
    CROC_CHECK(!pieces.empty() && pieces.size() == rows_per.size(),
               "interleave_blocks: piece/row count mismatch");
    const int C = pieces[0].cols();
    int S = 0;
    for (size_t i = 0; i < pieces.size(); ++i) {
        CROC_CHECK(pieces[i].cols() == C, "interleave_blocks: column mismatch");
        CROC_CHECK(pieces[i].rows() == batch * rows_per[i], "interleave_blocks: row mismatch");
        S += rows_per[i];
    }
    Tensor<F> out({batch * S, C});
    for (int b = 0; b < batch; ++b) {
        int off = 0;
        for (size_t i = 0; i < pieces.size(); ++i) {
            std::memcpy(out.data() + (size_t(b) * S + off) * C,
                        pieces[i].data() + size_t(b) * rows_per[i] * C,
                        sizeof(F) * size_t(rows_per[i]) * C);
            off += rows_per[i];
        }
    }
    bool track = false;
    for (const auto& p : pieces)
        if (p.requires_grad() || p.impl()->node) track = true;
    if (track) {
        auto node = std::make_shared<AutogradNode<F>>();
        node->tag = "interleave_blocks";
        for (const auto& p : pieces)
            if (p.impl()->node) node->parents.push_back(p.impl()->node);
        auto pcopy = pieces;
        std::weak_ptr<TensorData<F>> weak_out = out.impl();
        node->backward = [weak_out, pcopy, rows_per, batch, S, C]() mutable {
            auto od = weak_out.lock();
            if (!od || od->g.empty()) return;
            const auto& go = od->g;
            for (int b = 0; b < batch; ++b) {
                int off = 0;
                for (size_t i = 0; i < pcopy.size(); ++i) {
                    if (detail::wants(pcopy[i])) {
                        pcopy[i].impl()->ensure_grad();
                        F* dst = pcopy[i].impl()->g.data() + size_t(b) * rows_per[i] * C;
                        const F* src = go.data() + (size_t(b) * S + off) * C;
                        for (size_t j = 0; j < size_t(rows_per[i]) * C; ++j) dst[j] += src[j];
                    }
                    off += rows_per[i];
                }
            }
        };
        out.impl()->node = node;
    }
    detail::check_out(out, "interleave_blocks");
    return out;
}

// Extract rows [offset, offset+len) of each sample block of S rows.
template <class F> Tensor<F> extract_block(Tensor<F> x, int batch, int S, int offset, int len) {
    CROC_CHECK(x.rows() == batch * S, "extract_block: rows != batch*S");
    CROC_CHECK(offset >= 0 && offset + len <= S, "extract_block: range out of bounds");
    const int C = x.cols();
    Tensor<F> out({batch * len, C});
    for (int b = 0; b < batch; ++b)
        std::memcpy(out.data() + size_t(b) * len * C, x.data() + (size_t(b) * S + offset) * C, sizeof(F) * size_t(len) * C);
    detail::wire(out, "extract_block", {x}, [x, batch, S, offset, len, C](TensorData<F>& od) mutable {
        const auto& go = od.g;
        x.impl()->ensure_grad();
        for (int b = 0; b < batch; ++b) {
            F* dst = x.impl()->g.data() + (size_t(b) * S + offset) * C;
            const F* src = go.data() + size_t(b) * len * C;
            for (size_t j = 0; j < size_t(len) * C; ++j) dst[j] += src[j];
        }
    });
    return out;
}

// Tile a [r, C] tensor into [batch*r, C].
template <class F> Tensor<F> broadcast_rows(Tensor<F> x, int batch) {
    const int r = x.rows(), C = x.cols();
    Tensor<F> out({batch * r, C});
    for (int b = 0; b < batch; ++b)
        std::memcpy(out.data() + size_t(b) * r * C, x.data(), sizeof(F) * size_t(r) * C);
    detail::wire(out, "broadcast_rows", {x}, [x, batch, r, C](TensorData<F>& od) mutable {
        const auto& go = od.g;
        x.impl()->ensure_grad();
        for (int b = 0; b < batch; ++b) {
            const F* src = go.data() + size_t(b) * r * C;
            for (size_t j = 0; j < size_t(r) * C; ++j) x.impl()->g[j] += src[j];
        }
    });
    return out;
}

// Pick one row per entry of idx (absolute row indices).
template <class F> Tensor<F> gather_rows(Tensor<F> x, const std::vector<int>& idx) {
    const int C = x.cols();
    Tensor<F> out({int(idx.size()), C});
    for (size_t i = 0; i < idx.size(); ++i) {
        CROC_CHECK(idx[i] >= 0 && idx[i] < x.rows(), "gather_rows: index out of range");
        std::memcpy(out.data() + i * C, x.data() + size_t(idx[i]) * C, sizeof(F) * C);
    }
    detail::wire(out, "gather_rows", {x}, [x, idx, C](TensorData<F>& od) mutable {
        const auto& go = od.g;
        x.impl()->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i) {
            F* dst = x.impl()->g.data() + size_t(idx[i]) * C;
            for (int c = 0; c < C; ++c) dst[c] += go[i * C + c];
        }
    });
    return out;
}

// Rescale every row to euclidean norm `target`.
template <class F> Tensor<F> renorm_rows(Tensor<F> x, F target) {
    const int R = x.rows(), C = x.cols();
    Tensor<F> out(x.shape());
    std::vector<F> inv(R);
    for (int r = 0; r < R; ++r) {
        const F* xr = x.data() + size_t(r) * C;
        F ss = 0;
        for (int c = 0; c < C; ++c) ss += xr[c] * xr[c];
        CROC_CHECK(ss > F(1e-24), "renorm_rows: zero-norm row");
        inv[r] = target / std::sqrt(ss);
        for (int c = 0; c < C; ++c) out.data()[size_t(r) * C + c] = xr[c] * inv[r];
    }
    detail::wire(out, "renorm_rows", {x}, [x, inv, R, C, target](TensorData<F>& od) mutable {
        const auto& go = od.g;
        x.impl()->ensure_grad();
        for (int r = 0; r < R; ++r) {
            const F* xr = x.data() + size_t(r) * C;
            const F* gr = go.data() + size_t(r) * C;
            F ss = 0, dot = 0;
            for (int c = 0; c < C; ++c) {
                ss += xr[c] * xr[c];
                dot += gr[c] * xr[c];
            }
            F* gx = x.impl()->g.data() + size_t(r) * C;
            // d/dx [ t*x/||x|| ] = t/||x|| (I - x x^T / ||x||^2)
            for (int c = 0; c < C; ++c) gx[c] += inv[r] * (gr[c] - xr[c] * dot / ss);
        }
    });
    return out;
}

// Value copy with the tape cut.
template <class F> Tensor<F> detach(const Tensor<F>& x) {
    Tensor<F> out(x.shape());
    out.values() = x.values();
    return out;
}

// Forward-only row softmax (no tape).
template <class F> void softmax_rows_inplace(std::vector<F>& row) {
    F mx = row[0];
    for (F x : row) mx = std::max(mx, x);
    F denom = 0;
    for (auto& x : row) {
        x = std::exp(x - mx);
        denom += x;
    }
    for (auto& x : row) x /= denom;
}

} // namespace crocodil
