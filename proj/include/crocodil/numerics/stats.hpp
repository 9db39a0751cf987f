#pragma once

#include <cmath>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

namespace detail {

// regularized lower incomplete gamma P(a, x), series expansion (x < a+1)
inline double gamma_p_series(double a, double x) {
    double sum = 1.0 / a, term = sum, ap = a;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// regularized upper incomplete gamma Q(a, x), continued fraction (x >= a+1)
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

// P(Chi2_dof >= stat)
inline double chi2_sf(double stat, double dof) {
    CROC_CHECK(dof > 0, "chi2_sf: dof must be positive");
    if (stat <= 0) return 1.0;
    const double a = dof / 2.0, x = stat / 2.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_cf(a, x);
}

// Pearson chi-squared statistic for two independent count vectors drawn from
// (possibly) the same distribution; dof = (#cells with any mass) - 1.
struct Chi2Result {
    double stat = 0;
    double dof = 0;
    double p_value = 1;
};

inline Chi2Result chi2_two_sample(const std::vector<int64_t>& counts_a,
                                  const std::vector<int64_t>& counts_b) {
    CROC_CHECK(counts_a.size() == counts_b.size(), "chi2_two_sample: cell count mismatch");
    double na = 0, nb = 0;
    for (size_t i = 0; i < counts_a.size(); ++i) {
        na += double(counts_a[i]);
        nb += double(counts_b[i]);
    }
    CROC_CHECK(na > 0 && nb > 0, "chi2_two_sample: empty sample");
    Chi2Result r;
    int cells = 0;
    for (size_t i = 0; i < counts_a.size(); ++i) {
        const double tot = double(counts_a[i]) + double(counts_b[i]);
        if (tot == 0) continue;
        ++cells;
        const double ea = tot * na / (na + nb);
        const double eb = tot * nb / (na + nb);
        r.stat += (counts_a[i] - ea) * (counts_a[i] - ea) / ea;
        r.stat += (counts_b[i] - eb) * (counts_b[i] - eb) / eb;
    }
    r.dof = double(cells - 1);
    r.p_value = r.dof > 0 ? chi2_sf(r.stat, r.dof) : 1.0;
    return r;
}

} // namespace crocodil
