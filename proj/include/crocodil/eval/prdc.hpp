#pragma once

#include <cmath>
#include <vector>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

struct PrdcValues {
    double precision = 0, recall = 0, density = 0, coverage = 0;
};

struct PrdcReport {
    std::vector<PrdcValues> per_register;
    PrdcValues mean;
    PrdcValues stddev;
};

namespace detail {

inline double sq_dist(const float* a, const float* b, int d) {
    double s = 0;
    for (int c = 0; c < d; ++c) {
        const double diff = double(a[c]) - double(b[c]);
        s += diff * diff;
    }
    return s;
}

// k-NN ball PRDC for one feature space
inline PrdcValues prdc_single(const std::vector<const float*>& real,
                              const std::vector<const float*>& gen, int d, int k_nn) {
    const int R = int(real.size()), G = int(gen.size());
    auto knn_radius = [&](const std::vector<const float*>& pts, int i) {
        std::vector<double> dist;
        dist.reserve(pts.size() - 1);
        for (size_t j = 0; j < pts.size(); ++j)
            if (int(j) != i) dist.push_back(sq_dist(pts[size_t(i)], pts[j], d));
        std::nth_element(dist.begin(), dist.begin() + (k_nn - 1), dist.end());
        return dist[size_t(k_nn - 1)];
    };
    std::vector<double> rad_real(size_t(R), 0.0), rad_gen(size_t(G), 0.0);
    for (int i = 0; i < R; ++i) rad_real[size_t(i)] = knn_radius(real, i);
    for (int i = 0; i < G; ++i) rad_gen[size_t(i)] = knn_radius(gen, i);

    PrdcValues out;
    int64_t density_hits = 0;
    for (int g = 0; g < G; ++g) {
        bool inside = false;
        for (int r = 0; r < R; ++r) {
            const double ds = sq_dist(gen[size_t(g)], real[size_t(r)], d);
            if (ds <= rad_real[size_t(r)]) {
                inside = true;
                ++density_hits;
            }
        }
        out.precision += inside ? 1 : 0;
    }
    for (int r = 0; r < R; ++r) {
        bool inside = false, covered = false;
        for (int g = 0; g < G; ++g) {
            const double ds = sq_dist(real[size_t(r)], gen[size_t(g)], d);
            if (ds <= rad_gen[size_t(g)]) inside = true;
            if (ds <= rad_real[size_t(r)]) covered = true;
        }
        out.recall += inside ? 1 : 0;
        out.coverage += covered ? 1 : 0;
    }
    out.precision /= G;
    out.recall /= R;
    out.coverage /= R;
    out.density = double(density_hits) / (double(k_nn) * double(G));
    return out;
}

} // namespace detail

// Per-register-index k-NN PRDC between real and generated register banks
// (each bank laid out as K*d floats), then mean and standard deviation
// across register indices.
inline PrdcReport prdc(const std::vector<std::vector<float>>& real_banks,
                       const std::vector<std::vector<float>>& gen_banks, int K, int d, int k_nn) {
    CROC_CHECK(!real_banks.empty() && !gen_banks.empty(), "prdc: empty sets");
    CROC_CHECK(k_nn >= 1 && k_nn < int(real_banks.size()) && k_nn < int(gen_banks.size()),
               "prdc: k_nn must be below both set sizes");
    for (const auto& b : real_banks) CROC_CHECK(int(b.size()) == K * d, "prdc: bank shape");
    for (const auto& b : gen_banks) CROC_CHECK(int(b.size()) == K * d, "prdc: bank shape");

    PrdcReport rep;
    for (int j = 0; j < K; ++j) {
        std::vector<const float*> real, gen;
        for (const auto& b : real_banks) real.push_back(b.data() + size_t(j) * d);
        for (const auto& b : gen_banks) gen.push_back(b.data() + size_t(j) * d);
        rep.per_register.push_back(detail::prdc_single(real, gen, d, k_nn));
    }
    auto agg = [&](auto getter) {
        double m = 0;
        for (const auto& v : rep.per_register) m += getter(v);
        m /= double(K);
        double s = 0;
        for (const auto& v : rep.per_register) s += (getter(v) - m) * (getter(v) - m);
        return std::make_pair(m, std::sqrt(s / double(K)));
    };
    std::tie(rep.mean.precision, rep.stddev.precision) =
        agg([](const PrdcValues& v) { return v.precision; });
    std::tie(rep.mean.recall, rep.stddev.recall) =
        agg([](const PrdcValues& v) { return v.recall; });
    std::tie(rep.mean.density, rep.stddev.density) =
        agg([](const PrdcValues& v) { return v.density; });
    std::tie(rep.mean.coverage, rep.stddev.coverage) =
        agg([](const PrdcValues& v) { return v.coverage; });
    return rep;
}

} // namespace crocodil
