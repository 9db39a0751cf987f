#pragma once

#include <cmath>

#include "crocodil/models/encoder.hpp"
#include "crocodil/numerics/rng.hpp"

namespace crocodil {

namespace detail {

// mean cosine similarity between registers and their sigma-scaled
// perturbations, with the probe noise fixed across evaluations
template <class F>
double mean_cs(const RegisterBank<F>& bank, const std::vector<double>& probe, double sigma) {
    const int R = bank.z.rows(), C = bank.z.cols();
    double total = 0;
    for (int r = 0; r < R; ++r) {
        const F* zr = bank.z.data() + size_t(r) * C;
        double dot = 0, nz = 0, np = 0;
        for (int c = 0; c < C; ++c) {
            const double z = double(zr[c]);
            const double p = z + sigma * probe[size_t(r) * C + c];
            dot += z * p;
            nz += z * z;
            np += p * p;
        }
        CROC_CHECK(nz > 1e-24, "calibrate_sigma: zero-norm register");
        total += dot / (std::sqrt(nz) * std::sqrt(np) + 1e-30);
    }
    return total / R;
}

} // namespace detail

// Noise scale for the robustness augmentation: the sigma at which the mean
// cosine similarity CS(z, z + sigma*e) hits the target, found by bisection
// against a fixed probe draw. CS is monotone decreasing in sigma, so the
// bracket always closes.
template <class F>
double calibrate_sigma(const RegisterBank<F>& bank, double target_cs, RngStream& rng,
                       double tol = 0.01) {
    CROC_CHECK(target_cs > 0.0 && target_cs <= 1.0, "calibrate_sigma: target outside (0,1]");
    if (target_cs >= 1.0) return 0.0;
    std::vector<double> probe(bank.z.numel());
    for (auto& p : probe) p = rng.gaussian();

    double lo = 0.0, hi = 1.0;
    while (detail::mean_cs(bank, probe, hi) > target_cs) {
        hi *= 2;
        CROC_CHECK(hi < 1e6, "calibrate_sigma: bracket failed to close");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double cs = detail::mean_cs(bank, probe, mid);
        if (std::abs(cs - target_cs) <= tol * 0.5) return mid;
        (cs > target_cs ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace crocodil
