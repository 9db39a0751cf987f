#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

struct AdamWHyper {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.1f;
    // 0 disables clipping; otherwise gradients are rescaled to this global norm
    float clip_norm = 0.0f;
};

// Thrown when a gradient is non-finite: the step is aborted, parameters and
// moments stay exactly as they were.
struct AdamAbort : std::runtime_error {
    explicit AdamAbort(const std::string& what) : std::runtime_error(what) {}
};

template <class F> struct AdamWState {
    std::vector<std::vector<F>> first_moment;
    std::vector<std::vector<F>> second_moment;
    int64_t step_count = 0;
    AdamWHyper hyper;

    void init(const std::vector<Tensor<F>>& params, AdamWHyper h) {
        hyper = h;
        first_moment.clear();
        second_moment.clear();
        for (const auto& p : params) {
            first_moment.emplace_back(p.numel(), F(0));
            second_moment.emplace_back(p.numel(), F(0));
        }
        step_count = 0;
    }
};

// Decoupled-weight-decay update. `active` (when non-empty) selects which
// parameters are touched this step; frozen parameters keep their moments too,
// so a staged warmup leaves them bit-identical.
template <class F>
void adamw_step(std::vector<Tensor<F>>& params, AdamWState<F>& state,
                const std::vector<uint8_t>& active = {}) {
    CROC_CHECK(state.first_moment.size() == params.size(), "adamw_step: state size mismatch");
    const AdamWHyper& h = state.hyper;

    for (size_t pi = 0; pi < params.size(); ++pi) {
        if (!active.empty() && !active[pi]) continue;
        const auto* g = params[pi].grad_if_any();
        if (!g) continue;
        for (F x : *g)
            if (!std::isfinite(x))
                throw AdamAbort("adamw_step: non-finite gradient in parameter '" +
                                params[pi].name() + "', step aborted");
    }

    F scale = F(1);
    if (h.clip_norm > 0) {
        double sq = 0;
        for (size_t pi = 0; pi < params.size(); ++pi) {
            if (!active.empty() && !active[pi]) continue;
            if (const auto* g = params[pi].grad_if_any())
                for (F x : *g) sq += double(x) * double(x);
        }
        const double norm = std::sqrt(sq);
        if (norm > h.clip_norm) scale = F(h.clip_norm / norm);
    }

    state.step_count += 1;
    const F t = F(state.step_count);
    const F bc1 = F(1) - std::pow(F(h.beta1), t);
    const F bc2 = F(1) - std::pow(F(h.beta2), t);

    for (size_t pi = 0; pi < params.size(); ++pi) {
        if (!active.empty() && !active[pi]) continue;
        auto& p = params[pi];
        auto& m = state.first_moment[pi];
        auto& v = state.second_moment[pi];
        const auto* gptr = p.grad_if_any();
        for (size_t i = 0; i < p.numel(); ++i) {
            const F g = gptr ? (*gptr)[i] * scale : F(0);
            m[i] = F(h.beta1) * m[i] + (F(1) - F(h.beta1)) * g;
            v[i] = F(h.beta2) * v[i] + (F(1) - F(h.beta2)) * g * g;
            const F mhat = m[i] / bc1;
            const F vhat = v[i] / bc2;
            p.data()[i] -= F(h.lr) * (mhat / (std::sqrt(vhat) + F(h.eps)) +
                                      F(h.weight_decay) * p.data()[i]);
        }
    }
}

} // namespace crocodil
