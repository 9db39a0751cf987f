#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "crocodil/corpus/vocab.hpp"
#include "crocodil/numerics/rng.hpp"

namespace crocodil {

// Keep-probability schedule for the discrete masking process: alpha(0) ~ 1,
// alpha(1) ~ 0, strictly decreasing. Endpoints are clamped away from 0/1 so
// the reverse-transition denominators stay finite.
class MaskSchedule {
  public:
    static constexpr double kEps = 1e-6;

    static MaskSchedule linear() { return MaskSchedule(); }

    // custom table of (t, alpha) knots, linearly interpolated
    static MaskSchedule table(std::vector<std::pair<double, double>> knots) {
        MaskSchedule s;
        s.knots_ = std::move(knots);
        CROC_CHECK(s.knots_.size() >= 2, "MaskSchedule: table needs at least two knots");
        CROC_CHECK(s.knots_.front().first == 0.0 && s.knots_.back().first == 1.0,
                   "MaskSchedule: table must span [0,1]");
        for (size_t i = 1; i < s.knots_.size(); ++i) {
            CROC_CHECK(s.knots_[i].first > s.knots_[i - 1].first,
                       "MaskSchedule: knot times must increase");
            CROC_CHECK(s.knots_[i].second < s.knots_[i - 1].second,
                       "MaskSchedule: alpha must strictly decrease");
        }
        return s;
    }

    double alpha(double t) const {
        CROC_CHECK(t >= 0.0 && t <= 1.0, "alpha: t outside [0,1]");
        double a;
        if (knots_.empty()) {
            a = 1.0 - t;
        } else {
            size_t hi = 1;
            while (hi + 1 < knots_.size() && knots_[hi].first < t) ++hi;
            const auto [t0, a0] = knots_[hi - 1];
            const auto [t1, a1] = knots_[hi];
            a = a0 + (a1 - a0) * (t - t0) / (t1 - t0);
        }
        return std::clamp(a, kEps, 1.0 - kEps);
    }

  private:
    std::vector<std::pair<double, double>> knots_;
};

// q(x_t | x_0): keep each token with probability alpha_t, else [M].
inline Sequence forward_mask(const Sequence& x0, double t, const MaskSchedule& sched,
                             const Vocab& v, RngStream& rng) {
    CROC_CHECK(!v.has_mask(x0), "forward_mask: input already contains [M]");
    const double a = sched.alpha(t);
    Sequence xt = x0;
    for (auto& id : xt)
        if (rng.uniform() >= a) id = v.mask();
    return xt;
}

inline Sequence fully_masked(int n, const Vocab& v) { return Sequence(size_t(n), v.mask()); }

// Closed-form reverse transition for one position, s < t:
// unmasked positions are a point mass on their token; masked positions stay
// [M] with (1-alpha_s)/(1-alpha_t) and reveal x0 with (alpha_s-alpha_t)/(1-alpha_t).
struct ReverseTransition {
    double p_stay_value = 0; // current unmasked token
    double p_stay_mask = 0;
    double p_reveal = 0;
};

inline ReverseTransition reverse_transition(int32_t xt_i, int32_t /*x0_i*/, double s, double t,
                                            const MaskSchedule& sched, const Vocab& v) {
    CROC_CHECK(s < t, "reverse_transition: requires s < t");
    ReverseTransition r;
    if (xt_i != v.mask()) {
        r.p_stay_value = 1.0;
        return r;
    }
    const double as = sched.alpha(s), at = sched.alpha(t);
    r.p_stay_mask = (1.0 - as) / (1.0 - at);
    r.p_reveal = (as - at) / (1.0 - at);
    return r;
}

enum class RemaskPolicy { Random, Confidence };

// Re-noise a fully unmasked prediction back to level t. The random policy is
// the forward process applied to x0_hat; the confidence policy masks the
// ceil((1-alpha_t)*n) lowest-confidence positions.
inline Sequence remask(const Sequence& x0_hat, double t, RemaskPolicy policy,
                       const MaskSchedule& sched, const Vocab& v, RngStream& rng,
                       const std::vector<double>* confidence = nullptr) {
    CROC_CHECK(!v.has_mask(x0_hat), "remask: prediction must be fully unmasked");
    if (policy == RemaskPolicy::Random) return forward_mask(x0_hat, t, sched, v, rng);

    CROC_CHECK(confidence != nullptr && confidence->size() == x0_hat.size(),
               "remask: confidence policy needs per-position confidence scores");
    const int n = int(x0_hat.size());
    const int to_mask = std::min<int>(n, int(std::ceil((1.0 - sched.alpha(t)) * n)));
    std::vector<int> order(size_t(n), 0);
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return (*confidence)[size_t(a)] < (*confidence)[size_t(b)];
    });
    Sequence xt = x0_hat;
    for (int k = 0; k < to_mask; ++k) xt[size_t(order[size_t(k)])] = v.mask();
    return xt;
}

// Block decomposition of a generation run. gen_length/block_size blocks,
// nfe/blocks demasker calls per block, block_size/steps tokens revealed per
// call; every quantity must divide exactly.
struct UnmaskPlan {
    int gen_length = 0;
    int block_size = 0;
    int blocks = 0;
    int steps_per_block = 0;
    int reveal_per_step = 0;
    RemaskPolicy policy = RemaskPolicy::Random;

    int nfe() const { return blocks * steps_per_block; }
    std::vector<int> reveal_counts() const {
        return std::vector<int>(size_t(steps_per_block), reveal_per_step);
    }
};

inline UnmaskPlan build_plan(int gen_length, int block_size, int nfe,
                             RemaskPolicy policy = RemaskPolicy::Random) {
    CROC_CHECK(gen_length > 0 && block_size > 0 && nfe > 0, "build_plan: sizes must be positive");
    CROC_CHECK(gen_length % block_size == 0, "build_plan: block_size must divide gen_length");
    UnmaskPlan p;
    p.gen_length = gen_length;
    p.block_size = block_size;
    p.blocks = gen_length / block_size;
    CROC_CHECK(nfe % p.blocks == 0, "build_plan: nfe must split evenly across blocks");
    p.steps_per_block = nfe / p.blocks;
    CROC_CHECK(block_size % p.steps_per_block == 0,
               "build_plan: steps per block must divide block_size");
    p.reveal_per_step = block_size / p.steps_per_block;
    p.policy = policy;
    return p;
}

} // namespace crocodil
