#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

template <class F> struct GradCheckReport {
    F max_rel_error = 0;
    std::string worst_param;
    size_t worst_coord = 0;
    // set when the halved-step central difference disagrees with the full-step
    // one, which a smooth function does not do at these magnitudes
    bool suspect_nonsmooth = false;
};

// Compares reverse-mode gradients against central finite differences,
// coordinate by coordinate. `fn` must rebuild the scalar loss from the
// current parameter values on every call. Reported error per coordinate is
// |analytic - central| / max(1, |analytic|).
template <class F>
GradCheckReport<F> grad_check(const std::function<Tensor<F>()>& fn,
                              std::vector<Tensor<F>>& params, F eps) {
    CROC_CHECK(eps > F(0), "grad_check: eps must be positive");

    for (auto& p : params) p.zero_grad();
    Tensor<F> loss = fn();
    CROC_CHECK(loss.numel() == 1, "grad_check: function must return a scalar");
    CROC_CHECK(std::isfinite(loss.item()), "grad_check: non-finite function value");
    backward(loss);

    std::vector<std::vector<F>> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    auto eval = [&]() {
        Tensor<F> l = fn();
        CROC_CHECK(std::isfinite(l.item()), "grad_check: non-finite function value");
        return l.item();
    };

    GradCheckReport<F> rep;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (size_t i = 0; i < p.numel(); ++i) {
            const F orig = p.data()[i];
            p.data()[i] = orig + eps;
            const F fp = eval();
            p.data()[i] = orig - eps;
            const F fm = eval();
            p.data()[i] = orig + eps / 2;
            const F fp2 = eval();
            p.data()[i] = orig - eps / 2;
            const F fm2 = eval();
            p.data()[i] = orig;

            const F cd = (fp - fm) / (2 * eps);
            const F cd2 = (fp2 - fm2) / eps;
            const F a = analytic[pi][i];
            const F rel = std::abs(a - cd) / std::max(F(1), std::abs(a));
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_param = p.name();
                rep.worst_coord = i;
            }
            if (std::abs(cd - cd2) > F(0.1) * std::max(F(1), std::abs(cd)))
                rep.suspect_nonsmooth = true;
        }
    }
    return rep;
}

} // namespace crocodil
