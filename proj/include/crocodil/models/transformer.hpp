#pragma once

#include <string>
#include <vector>

#include "crocodil/models/rope.hpp"
#include "crocodil/numerics/rng.hpp"
#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

// Named parameter store shared by all models; the optimizer and checkpoint
// machinery work off this flat list.
template <class F> class ParamRegistry {
  public:
    Tensor<F> add(const std::string& name, std::vector<int> shape, RngStream& rng,
                  F stddev = F(0.02)) {
        Tensor<F> t = stddev > 0 ? randn<F>(std::move(shape), rng, stddev)
                                 : full<F>(std::move(shape), F(0));
        t.set_requires_grad().set_name(name);
        items_.push_back(t);
        return t;
    }
    Tensor<F> add_ones(const std::string& name, std::vector<int> shape) {
        Tensor<F> t = full<F>(std::move(shape), F(1));
        t.set_requires_grad().set_name(name);
        items_.push_back(t);
        return t;
    }

    std::vector<Tensor<F>>& items() { return items_; }
    const std::vector<Tensor<F>>& items() const { return items_; }

    size_t count() const {
        size_t n = 0;
        for (const auto& t : items_) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& t : items_) t.zero_grad();
    }

  private:
    std::vector<Tensor<F>> items_;
};

// Pre-norm transformer block: self-attention, optional cross-attention,
// silu MLP with 4x hidden.
template <class F> struct TransformerBlock {
    Tensor<F> norm1, wq, wk, wv, wo;
    Tensor<F> xnorm, xwq, xwk, xwv, xwo; // cross-attention (optional)
    Tensor<F> norm2, w1, w2;
    bool has_cross = false;

    static TransformerBlock make(ParamRegistry<F>& reg, const std::string& prefix, int width,
                                 RngStream& rng, bool cross = false) {
        TransformerBlock b;
        b.norm1 = reg.add_ones(prefix + ".norm1", {width});
        b.wq = reg.add(prefix + ".wq", {width, width}, rng);
        b.wk = reg.add(prefix + ".wk", {width, width}, rng);
        b.wv = reg.add(prefix + ".wv", {width, width}, rng);
        b.wo = reg.add(prefix + ".wo", {width, width}, rng);
        if (cross) {
            b.has_cross = true;
            b.xnorm = reg.add_ones(prefix + ".xnorm", {width});
            b.xwq = reg.add(prefix + ".xwq", {width, width}, rng);
            b.xwk = reg.add(prefix + ".xwk", {width, width}, rng);
            b.xwv = reg.add(prefix + ".xwv", {width, width}, rng);
            b.xwo = reg.add(prefix + ".xwo", {width, width}, rng);
        }
        b.norm2 = reg.add_ones(prefix + ".norm2", {width});
        b.w1 = reg.add(prefix + ".w1", {width, 4 * width}, rng);
        b.w2 = reg.add(prefix + ".w2", {4 * width, width}, rng);
        return b;
    }

    Tensor<F> self_attend(Tensor<F> x, int batch, int seq, int heads,
                          const std::vector<F>& angles, const std::vector<uint8_t>& keep) const {
        auto h = rmsnorm(x, norm1);
        auto q = matmul(h, wq);
        auto k = matmul(h, wk);
        if (!angles.empty()) {
            q = rope_apply(q, angles, heads);
            k = rope_apply(k, angles, heads);
        }
        auto v = matmul(h, wv);
        return add(x, matmul(attention(q, k, v, batch, seq, seq, heads, keep), wo));
    }

    Tensor<F> cross_attend(Tensor<F> x, Tensor<F> cond, int batch, int tq, int tk, int heads,
                           const std::vector<uint8_t>& keep) const {
        auto q = matmul(rmsnorm(x, xnorm), xwq);
        auto k = matmul(cond, xwk);
        auto v = matmul(cond, xwv);
        return add(x, matmul(attention(q, k, v, batch, tq, tk, heads, keep), xwo));
    }

    Tensor<F> mlp(Tensor<F> x) const {
        return add(x, matmul(silu(matmul(rmsnorm(x, norm2), w1)), w2));
    }
};

// sinusoidal features of a scalar time in [0,1], for time-conditioned nets
template <class F> std::vector<F> time_features(double t, int dims) {
    std::vector<F> out(size_t(dims), F(0));
    for (int i = 0; i < dims / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dims);
        out[size_t(2 * i)] = F(std::sin(t * 1000.0 * freq));
        out[size_t(2 * i + 1)] = F(std::cos(t * 1000.0 * freq));
    }
    return out;
}

} // namespace crocodil
