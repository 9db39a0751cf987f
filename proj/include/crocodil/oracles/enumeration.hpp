#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "crocodil/corpus/grammar.hpp"
#include "crocodil/masking/schedule.hpp"

namespace crocodil {

// ------------------------------------------------------- support posteriors

// q(x0 | x_t) over the enumerated support: Bayes with the factorized masking
// kernel. The kernel factors cancel, so the posterior is the prior restricted
// to support sequences that agree with x_t on its unmasked positions.
inline std::vector<double> exact_posterior(const ExactJoint& joint, const Sequence& xt,
                                           int32_t mask_id) {
    CROC_CHECK(int(xt.size()) == joint.n, "exact_posterior: length mismatch");
    std::vector<double> post(joint.support.size(), 0.0);
    double z = 0;
    for (size_t s = 0; s < joint.support.size(); ++s) {
        bool consistent = true;
        for (int i = 0; i < joint.n && consistent; ++i)
            if (xt[size_t(i)] != mask_id && xt[size_t(i)] != joint.support[s][size_t(i)])
                consistent = false;
        if (consistent) {
            post[s] = joint.probs[s];
            z += joint.probs[s];
        }
    }
    CROC_CHECK(z > 0, "exact_posterior: x_t is inconsistent with the support");
    for (auto& p : post) p /= z;
    return post;
}

// Independent marginalization route for q(x0^i = token | x_t); used to
// cross-check the posterior vector above.
inline double posterior_marginal(const ExactJoint& joint, const Sequence& xt, int32_t mask_id,
                                 int position, int32_t token) {
    double num = 0, den = 0;
    for (size_t s = 0; s < joint.support.size(); ++s) {
        bool consistent = true;
        for (int i = 0; i < joint.n && consistent; ++i)
            if (xt[size_t(i)] != mask_id && xt[size_t(i)] != joint.support[s][size_t(i)])
                consistent = false;
        if (!consistent) continue;
        den += joint.probs[s];
        if (joint.support[s][size_t(position)] == token) num += joint.probs[s];
    }
    CROC_CHECK(den > 0, "posterior_marginal: x_t is inconsistent with the support");
    return num / den;
}

// KL( q(x0|x_t) || prod_i q(x0^i|x_t) ) in nats: the conditional total
// correlation of the tokens given x_t.
inline double independence_gap(const ExactJoint& joint, const Sequence& xt, int32_t mask_id) {
    auto post = exact_posterior(joint, xt, mask_id);
    // per-position marginals of the posterior
    std::vector<std::map<int32_t, double>> marg(size_t(joint.n));
    for (size_t s = 0; s < joint.support.size(); ++s)
        if (post[s] > 0)
            for (int i = 0; i < joint.n; ++i)
                marg[size_t(i)][joint.support[s][size_t(i)]] += post[s];
    double kl = 0;
    for (size_t s = 0; s < joint.support.size(); ++s) {
        if (post[s] <= 0) continue;
        double prod = 1;
        for (int i = 0; i < joint.n; ++i)
            prod *= marg[size_t(i)][joint.support[s][size_t(i)]];
        kl += post[s] * std::log(post[s] / prod);
    }
    return kl;
}

inline double independence_gap_bits(const ExactJoint& joint, const Sequence& xt,
                                    int32_t mask_id) {
    return independence_gap(joint, xt, mask_id) / std::log(2.0);
}

// Sample every masked position independently from its exact marginal and
// report the fraction of draws that land outside the support.
inline double factorized_sampler_ood(const ExactJoint& joint, const Sequence& xt, int32_t mask_id,
                                     int n_samples, RngStream& rng) {
    CROC_CHECK(n_samples > 0, "factorized_sampler_ood: need samples");
    auto post = exact_posterior(joint, xt, mask_id);
    std::vector<std::vector<std::pair<int32_t, double>>> marg(size_t(joint.n));
    for (int i = 0; i < joint.n; ++i) {
        std::map<int32_t, double> m;
        for (size_t s = 0; s < joint.support.size(); ++s)
            if (post[s] > 0) m[joint.support[s][size_t(i)]] += post[s];
        marg[size_t(i)].assign(m.begin(), m.end());
    }
    std::map<Sequence, double> in_support;
    for (size_t s = 0; s < joint.support.size(); ++s) in_support[joint.support[s]] = 1;

    int ood = 0;
    Sequence draw(size_t(joint.n));
    for (int k = 0; k < n_samples; ++k) {
        for (int i = 0; i < joint.n; ++i) {
            if (xt[size_t(i)] != mask_id) {
                draw[size_t(i)] = xt[size_t(i)];
                continue;
            }
            double r = rng.uniform(), acc = 0;
            draw[size_t(i)] = marg[size_t(i)].back().first;
            for (const auto& [tok, p] : marg[size_t(i)]) {
                acc += p;
                if (r < acc) {
                    draw[size_t(i)] = tok;
                    break;
                }
            }
        }
        if (!in_support.count(draw)) ++ood;
    }
    return double(ood) / n_samples;
}

// ------------------------------------------- factorization theorem checking

// Finite model p(z) * p(x0 | z) with x0 in {0..V-1}^n; the mask symbol is V.
struct FiniteLatentModel {
    int n = 2;
    int V = 2;
    std::vector<double> pz;
    std::vector<std::vector<double>> px0_given_z; // [z][config], configs odometer over V^n

    size_t configs() const {
        size_t c = 1;
        for (int i = 0; i < n; ++i) c *= size_t(V);
        return c;
    }
    void validate() const {
        CROC_CHECK(!pz.empty() && px0_given_z.size() == pz.size(),
                   "FiniteLatentModel: table shape mismatch");
        double zsum = 0;
        for (double p : pz) zsum += p;
        CROC_CHECK(std::abs(zsum - 1.0) < 1e-9, "FiniteLatentModel: p(z) must sum to 1");
        for (const auto& row : px0_given_z) {
            CROC_CHECK(row.size() == configs(), "FiniteLatentModel: config count mismatch");
            double s = 0;
            for (double p : row) s += p;
            CROC_CHECK(std::abs(s - 1.0) < 1e-9, "FiniteLatentModel: p(x0|z) must sum to 1");
        }
    }

    // build from per-position conditionals (the conditionally independent case)
    static FiniteLatentModel factorized(int n, int V, std::vector<double> pz,
                                        const std::vector<std::vector<std::vector<double>>>& pos) {
        FiniteLatentModel m;
        m.n = n;
        m.V = V;
        m.pz = std::move(pz);
        for (size_t z = 0; z < m.pz.size(); ++z) {
            std::vector<double> row(m.configs());
            std::vector<int> cfg(size_t(n), 0);
            for (size_t c = 0; c < row.size(); ++c) {
                double p = 1;
                for (int i = 0; i < n; ++i) p *= pos[z][size_t(i)][size_t(cfg[size_t(i)])];
                row[c] = p;
                int pos_i = n - 1;
                while (pos_i >= 0 && ++cfg[size_t(pos_i)] == V) cfg[size_t(pos_i--)] = 0;
            }
            m.px0_given_z.push_back(std::move(row));
        }
        return m;
    }
};

namespace detail {

inline void decode_config(size_t code, int n, int base, std::vector<int>& out) {
    out.resize(size_t(n));
    for (int i = n - 1; i >= 0; --i) {
        out[size_t(i)] = int(code % size_t(base));
        code /= size_t(base);
    }
}

// q(x_t | x_0) under the masking kernel, mask symbol = V
inline double mask_kernel(const std::vector<int>& xt, const std::vector<int>& x0, int V,
                          double alpha) {
    double p = 1;
    for (size_t i = 0; i < xt.size(); ++i) {
        if (xt[i] == V)
            p *= (1.0 - alpha);
        else if (xt[i] == x0[i])
            p *= alpha;
        else
            return 0.0;
    }
    return p;
}

// q(x_t | x_s) for s < t: masked stays masked, survivors survive w.p. a_t/a_s
inline double mask_step_kernel(const std::vector<int>& xt, const std::vector<int>& xs, int V,
                               double as, double at) {
    const double keep = at / as;
    double p = 1;
    for (size_t i = 0; i < xt.size(); ++i) {
        if (xs[i] == V) {
            if (xt[i] != V) return 0.0;
        } else if (xt[i] == V) {
            p *= (1.0 - keep);
        } else if (xt[i] == xs[i]) {
            p *= keep;
        } else {
            return 0.0;
        }
    }
    return p;
}

} // namespace detail

// Enumerate p(x_s | x_t, z) two independent ways — a joint Bayes computation
// versus the product of per-position marginals — and return the maximum
// absolute elementwise deviation over all (z, x_t, x_s). The two agree
// exactly when x0 is conditionally independent given z.
inline double verify_factorization(const FiniteLatentModel& m, double s, double t,
                                   const MaskSchedule& sched, size_t cap = 1000000) {
    CROC_CHECK(0 <= s && s < t && t <= 1.0, "verify_factorization: need 0 <= s < t <= 1");
    m.validate();
    const int n = m.n, V = m.V;
    const double as = sched.alpha(s), at = sched.alpha(t);

    size_t masked_configs = 1;
    for (int i = 0; i < n; ++i) masked_configs *= size_t(V + 1);
    CROC_CHECK(masked_configs * masked_configs * m.pz.size() <= cap * 100 &&
                   masked_configs <= cap,
               "verify_factorization: enumeration too large");

    std::vector<int> xt, xs, x0;
    double max_dev = 0;

    for (size_t zi = 0; zi < m.pz.size(); ++zi) {
        for (size_t ct = 0; ct < masked_configs; ++ct) {
            detail::decode_config(ct, n, V + 1, xt);

            // route A: joint table p(x_s, x_t | z) via full enumeration of x0 and x_s
            std::vector<double> joint_route(masked_configs, 0.0);
            double norm = 0;
            for (size_t cs = 0; cs < masked_configs; ++cs) {
                detail::decode_config(cs, n, V + 1, xs);
                const double step = detail::mask_step_kernel(xt, xs, V, as, at);
                if (step == 0) continue;
                double acc = 0;
                for (size_t c0 = 0; c0 < m.configs(); ++c0) {
                    const double px = m.px0_given_z[zi][c0];
                    if (px == 0) continue;
                    detail::decode_config(c0, n, V, x0);
                    acc += px * detail::mask_kernel(xs, x0, V, as);
                }
                joint_route[cs] = acc * step;
                norm += joint_route[cs];
            }
            if (norm <= 0) continue; // x_t unreachable under this z
            for (auto& p : joint_route) p /= norm;

            // route B: per-position marginals p(x_s^i | x_t, z), no x_s enumeration
            // p(x_s^i, x_t | z) = sum_x0 p(x0|z) q(x_s^i|x0^i) q(x_t^i|x_s^i)
            //                     prod_{j != i} q(x_t^j | x0^j)
            std::vector<std::vector<double>> marg(size_t(n), std::vector<double>(size_t(V + 1), 0));
            for (int i = 0; i < n; ++i) {
                for (int sv = 0; sv <= V; ++sv) {
                    double acc = 0;
                    for (size_t c0 = 0; c0 < m.configs(); ++c0) {
                        const double px = m.px0_given_z[zi][c0];
                        if (px == 0) continue;
                        detail::decode_config(c0, n, V, x0);
                        double qi;
                        if (sv == V)
                            qi = (1.0 - as);
                        else if (sv == x0[size_t(i)])
                            qi = as;
                        else
                            continue;
                        // q(x_t^i | x_s^i)
                        double qt;
                        const double keep = at / as;
                        if (sv == V)
                            qt = (xt[size_t(i)] == V) ? 1.0 : 0.0;
                        else if (xt[size_t(i)] == V)
                            qt = 1.0 - keep;
                        else if (xt[size_t(i)] == sv)
                            qt = keep;
                        else
                            qt = 0.0;
                        if (qt == 0) continue;
                        double rest = 1;
                        for (int j = 0; j < n; ++j) {
                            if (j == i) continue;
                            if (xt[size_t(j)] == V)
                                rest *= (1.0 - at);
                            else if (xt[size_t(j)] == x0[size_t(j)])
                                rest *= at;
                            else {
                                rest = 0;
                                break;
                            }
                        }
                        acc += px * qi * qt * rest;
                    }
                    marg[size_t(i)][size_t(sv)] = acc;
                }
                double z2 = 0;
                for (double p : marg[size_t(i)]) z2 += p;
                CROC_CHECK(z2 > 0, "verify_factorization: inconsistent marginal");
                for (auto& p : marg[size_t(i)]) p /= z2;
            }

            for (size_t cs = 0; cs < masked_configs; ++cs) {
                detail::decode_config(cs, n, V + 1, xs);
                double prod = 1;
                for (int i = 0; i < n; ++i) prod *= marg[size_t(i)][size_t(xs[size_t(i)])];
                max_dev = std::max(max_dev, std::abs(prod - joint_route[cs]));
            }
        }
    }
    return max_dev;
}

// Random conditionally-independent instance for the randomized theorem check.
inline FiniteLatentModel random_ci_model(int n, int V, int latents, RngStream& rng) {
    std::vector<double> pz(size_t(latents), 0.0);
    double zs = 0;
    for (auto& p : pz) {
        p = 0.1 + rng.uniform();
        zs += p;
    }
    for (auto& p : pz) p /= zs;
    std::vector<std::vector<std::vector<double>>> pos(
        size_t(latents),
        std::vector<std::vector<double>>(size_t(n), std::vector<double>(size_t(V), 0.0)));
    for (auto& per_z : pos)
        for (auto& per_pos : per_z) {
            double s = 0;
            for (auto& p : per_pos) {
                p = 0.05 + rng.uniform();
                s += p;
            }
            for (auto& p : per_pos) p /= s;
        }
    return FiniteLatentModel::factorized(n, V, std::move(pz), pos);
}

// Correlated negative control: mass concentrated on matching-token configs,
// which no product distribution can represent.
inline FiniteLatentModel correlated_model(int n, int V) {
    FiniteLatentModel m;
    m.n = n;
    m.V = V;
    m.pz = {1.0};
    std::vector<double> row(m.configs(), 0.0);
    std::vector<int> cfg;
    double z = 0;
    for (size_t c = 0; c < row.size(); ++c) {
        detail::decode_config(c, n, V, cfg);
        bool all_same = true;
        for (int i = 1; i < n; ++i) all_same &= (cfg[size_t(i)] == cfg[0]);
        row[c] = all_same ? 1.0 : 0.0;
        z += row[c];
    }
    for (auto& p : row) p /= z;
    m.px0_given_z.push_back(std::move(row));
    return m;
}

} // namespace crocodil
