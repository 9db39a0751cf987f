#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crocodil/masking/schedule.hpp"
#include "crocodil/models/demasker.hpp"
#include "crocodil/models/denoiser.hpp"
#include "crocodil/models/encoder.hpp"
#include "crocodil/training/config.hpp"

namespace crocodil {

// Everything a generation run needs to know.
struct GenConfig {
    int gen_length = 16;
    int block_size = 16;
    int nfe = 16;
    int registers_k = 0;               // 0: all K visible
    std::vector<double> refresh = {0.5}; // ConWithinDisc refresh fractions
    bool refresh_every_step = false;
    std::string latent_sampler = "ddim"; // ddim | ddpm
    int latent_steps = 32;
    int cond_latent_steps = 32; // per refresh
    double temperature = 1.0;
    RemaskPolicy remask = RemaskPolicy::Random;
    bool renorm_latent = true;
    bool fixed_r_conditioning = false; // pad the refresh view to mask ratio 0.5
    uint64_t seed = 0;

    void validate() const {
        for (size_t i = 0; i < refresh.size(); ++i) {
            CROC_CHECK(refresh[i] >= 0.0 && refresh[i] < 1.0,
                       "GenConfig: refresh fractions must lie in [0,1)");
            CROC_CHECK(i == 0 || refresh[i] > refresh[i - 1],
                       "GenConfig: refresh fractions must strictly increase");
        }
        CROC_CHECK(latent_steps >= 1, "GenConfig: latent sampler needs at least one step");
        CROC_CHECK(latent_sampler == "ddim" || latent_sampler == "ddpm",
                   "GenConfig: unknown latent sampler");
    }
};

// Exact call accounting. Denoiser passes convert into demasker equivalents
// through the parameter-count ratio.
struct NfeReport {
    int64_t demasker_calls = 0;
    int64_t denoiser_calls = 0;
    double conversion_ratio = 0.0; // denoiser params / demasker params

    double demasker_equivalent() const {
        return double(demasker_calls) + double(denoiser_calls) * conversion_ratio;
    }
};

// ------------------------------------------------------------ latent sampler

// Reverse diffusion over register banks from Gaussian noise, x0-prediction
// parameterization, block-offset-aware effective times. DDIM is
// deterministic given the initial noise; DDPM is ancestral. The final output
// is the last clean-bank prediction (optionally renormalized to sqrt(d)).
template <class Den>
RegisterBank<typename Den::value_type>
sample_latent(const Den& den, const LatentSchedule& ls, int steps, RngStream& rng, int batch = 1,
              const RegisterBank<typename Den::value_type>* cond = nullptr, bool ddpm = false,
              NfeReport* nfe = nullptr, bool renorm = true, int visible_k = 0) {
    using F = typename Den::value_type;
    CROC_CHECK(steps >= 1, "sample_latent: steps must be >= 1");
    const int K = den.config().K, d = den.config().d;

    Tensor<F> z({batch * K, d});
    for (auto& x : z.values()) x = F(rng.gaussian());

    Tensor<F> zhat;
    for (int k = steps; k >= 1; --k) {
        const double t = double(k) / steps;
        zhat = detach(den.forward(z, std::vector<double>(size_t(batch), t), cond));
        if (nfe) nfe->denoiser_calls += 1;
        if (k == 1) break;
        const double t_next = double(k - 1) / steps;
        for (int b = 0; b < batch; ++b)
            for (int r = 0; r < K; ++r) {
                const double ab_cur = LatentSchedule::abar(ls.effective_time(t, r));
                const double ab_nxt = LatentSchedule::abar(ls.effective_time(t_next, r));
                F* zr = z.data() + (size_t(b) * K + r) * d;
                const F* hr = zhat.data() + (size_t(b) * K + r) * d;
                if (!ddpm) {
                    const double sc = std::sqrt(ab_cur), sn = std::sqrt(1.0 - ab_cur);
                    const double nc = std::sqrt(ab_nxt), nn = std::sqrt(1.0 - ab_nxt);
                    for (int c = 0; c < d; ++c) {
                        const double eps = (double(zr[c]) - sc * double(hr[c])) / sn;
                        zr[c] = F(nc * double(hr[c]) + nn * eps);
                    }
                } else {
                    const double alpha_step = ab_cur / ab_nxt;
                    const double beta = 1.0 - alpha_step;
                    const double mean_x0 = std::sqrt(ab_nxt) * beta / (1.0 - ab_cur);
                    const double mean_zt = std::sqrt(alpha_step) * (1.0 - ab_nxt) / (1.0 - ab_cur);
                    const double var = beta * (1.0 - ab_nxt) / (1.0 - ab_cur);
                    const double sd = std::sqrt(std::max(var, 0.0));
                    for (int c = 0; c < d; ++c)
                        zr[c] = F(mean_x0 * double(hr[c]) + mean_zt * double(zr[c]) +
                                  sd * rng.gaussian());
                }
            }
    }

    RegisterBank<F> bank;
    bank.z = renorm ? renorm_rows(zhat, F(std::sqrt(double(d)))) : zhat;
    bank.z = detach(bank.z);
    bank.batch = batch;
    bank.K = K;
    bank.d = d;
    bank.visible.assign(size_t(batch), visible_k > 0 ? visible_k : K);
    return bank;
}

// ------------------------------------------------------------- decode loop

// Called before every demasker step with the fraction of steps already done
// and the current sequence; may replace the guidance bank.
template <class F>
using RefreshHook = std::function<void(double fraction_done, const Sequence& xt,
                                       RegisterBank<F>& guidance)>;

namespace detail {

template <class F>
int32_t sample_token(const F* probs, int vocab, double temperature, RngStream& rng) {
    if (temperature <= 0.0) { // argmax
        int32_t best = 0;
        for (int j = 1; j < vocab; ++j)
            if (probs[j] > probs[best]) best = j;
        return best;
    }
    std::vector<double> p(size_t(vocab), 0.0);
    double z = 0;
    for (int j = 0; j < vocab; ++j) {
        p[size_t(j)] = std::pow(std::max(double(probs[j]), 0.0), 1.0 / temperature);
        z += p[size_t(j)];
    }
    double r = rng.uniform() * z, acc = 0;
    for (int j = 0; j < vocab; ++j) {
        acc += p[size_t(j)];
        if (r < acc) return j;
    }
    return int32_t(vocab - 1);
}

} // namespace detail

// The guided demasking loop: start from the fully masked sequence and run
// the plan block by block, sampling clean-token predictions and re-noising
// the active block down its per-block time grid. Exactly plan.nfe() demasker
// calls; the result carries no masks.
template <class F>
Sequence guided_decode(const Demasker<F>& dem, const Vocab& v, const MaskSchedule& sched,
                       const UnmaskPlan& plan, RegisterBank<F> guidance, double temperature,
                       RngStream& rng, NfeReport* nfe = nullptr,
                       const RefreshHook<F>& refresh = {}) {
    CROC_CHECK(guidance.batch == 1, "guided_decode: one sequence at a time");
    const int n = plan.gen_length;
    const int bs = plan.block_size;
    const int total_steps = plan.nfe();

    Sequence x = fully_masked(n, v);
    std::vector<double> conf(size_t(n), 0.0);
    int done_steps = 0;

    for (int blk = 0; blk < plan.blocks; ++blk) {
        const int lo = blk * bs;
        for (int j = 0; j < plan.steps_per_block; ++j) {
            const double t = 1.0 - double(j) / plan.steps_per_block;
            const double t_next = 1.0 - double(j + 1) / plan.steps_per_block;

            if (refresh) refresh(double(done_steps) / total_steps, x, guidance);

            auto out = dem.demask(x, t, &guidance, v);
            if (nfe) nfe->demasker_calls += 1;
            ++done_steps;

            // clean prediction on the active block
            Sequence xhat = x;
            for (int i = lo; i < lo + bs; ++i) {
                if (x[size_t(i)] != v.mask()) continue;
                xhat[size_t(i)] =
                    detail::sample_token(out.prob_row(0, i), out.vocab, temperature, rng);
                conf[size_t(i)] = out.conf(0, i);
            }

            // re-noise the active block to the next level
            if (plan.policy == RemaskPolicy::Random) {
                const double a = sched.alpha(std::clamp(t_next, 0.0, 1.0));
                for (int i = lo; i < lo + bs; ++i)
                    x[size_t(i)] = (t_next > 0.0 && rng.uniform() >= a) ? v.mask() : xhat[size_t(i)];
            } else {
                // committed tokens are final; transfer the highest-confidence
                // fresh samples among the still-masked positions
                std::vector<int> masked_idx;
                for (int i = lo; i < lo + bs; ++i)
                    if (x[size_t(i)] == v.mask()) masked_idx.push_back(i);
                std::stable_sort(masked_idx.begin(), masked_idx.end(), [&](int a2, int b2) {
                    return conf[size_t(a2)] > conf[size_t(b2)];
                });
                const int reveal = std::min<int>(plan.reveal_per_step, int(masked_idx.size()));
                for (int idx = 0; idx < reveal; ++idx)
                    x[size_t(masked_idx[size_t(idx)])] = xhat[size_t(masked_idx[size_t(idx)])];
            }
        }
    }
    CROC_CHECK(!v.has_mask(x), "guided_decode: masks survived the plan");
    return x;
}

// --------------------------------------------------------------- algorithms

template <class F> struct ModelSet {
    const Encoder<F>* enc = nullptr;
    const Demasker<F>* dem = nullptr;
    const Denoiser<F>* prior = nullptr;
    const Denoiser<F>* cond = nullptr;
    LatentSchedule latent_schedule;

    double conversion_ratio(const Denoiser<F>& den) const {
        return double(den.registry().count()) / double(dem->registry().count());
    }
};

// Encode to the continuum and decode back with the guided demask loop.
template <class F>
Sequence autoencode(const Sequence& x0, const GenConfig& gen, const ModelSet<F>& models,
                    const Vocab& v, const MaskSchedule& sched, NfeReport* nfe = nullptr) {
    gen.validate();
    CROC_CHECK(!v.has_mask(x0), "autoencode: input must be mask-free");
    const int k = gen.registers_k > 0 ? gen.registers_k : models.enc->config().K;
    auto bank = models.enc->encode({x0}, v, {k}).detached();
    bank.visible = {k};
    auto plan = build_plan(gen.gen_length, gen.block_size, gen.nfe, gen.remask);
    RngStream rng(gen.seed, streams::generate);
    return guided_decode(*models.dem, v, sched, plan, bank, gen.temperature, rng, nfe);
}

// Continuous-then-discrete synthesis: one latent from the unconditional
// prior, then the full guided decode with the guidance held fixed.
template <class F>
Sequence con_then_disc(const GenConfig& gen, const ModelSet<F>& models, const Vocab& v,
                       const MaskSchedule& sched, NfeReport* nfe = nullptr) {
    gen.validate();
    CROC_CHECK(models.prior != nullptr, "con_then_disc: prior model required");
    RngStream rng(gen.seed, streams::generate);
    if (nfe) nfe->conversion_ratio = models.conversion_ratio(*models.prior);
    const int k = gen.registers_k > 0 ? gen.registers_k : models.enc->config().K;
    auto bank = sample_latent(*models.prior, models.latent_schedule, gen.latent_steps, rng, 1,
                              nullptr, gen.latent_sampler == "ddpm", nfe, gen.renorm_latent, k);
    auto plan = build_plan(gen.gen_length, gen.block_size, gen.nfe, gen.remask);
    return guided_decode(*models.dem, v, sched, plan, bank, gen.temperature, rng, nfe);
}

// ConThenDisc plus mid-decode refreshes: at each configured fraction the
// guidance is resampled from the conditional latent model given the frozen
// encoder's blocked view of the current sequence. Committed tokens are not
// touched by a refresh.
template <class F>
Sequence con_within_disc(const GenConfig& gen, const ModelSet<F>& models, const Vocab& v,
                         const MaskSchedule& sched, NfeReport* nfe = nullptr) {
    gen.validate();
    CROC_CHECK(models.prior != nullptr && models.cond != nullptr,
               "con_within_disc: prior and conditional models required");
    RngStream rng(gen.seed, streams::generate);
    if (nfe) nfe->conversion_ratio = models.conversion_ratio(*models.prior);
    const int k = gen.registers_k > 0 ? gen.registers_k : models.enc->config().K;
    auto bank = sample_latent(*models.prior, models.latent_schedule, gen.latent_steps, rng, 1,
                              nullptr, gen.latent_sampler == "ddpm", nfe, gen.renorm_latent, k);

    size_t next_refresh = 0;
    RefreshHook<F> hook = [&](double frac, const Sequence& xt, RegisterBank<F>& guidance) {
        bool fire = gen.refresh_every_step;
        if (!fire && next_refresh < gen.refresh.size() && frac >= gen.refresh[next_refresh]) {
            fire = true;
            ++next_refresh;
        }
        if (!fire) return;
        Sequence view = xt;
        if (gen.fixed_r_conditioning) {
            // pad the visible set down to a 0.5 mask ratio (committed tokens
            // are hidden from the conditioning only, never in the sequence)
            const int want = int(std::ceil(0.5 * double(view.size())));
            int have = 0;
            for (auto id : view) have += (id == v.mask());
            std::vector<int> visible_idx;
            for (size_t i = 0; i < view.size(); ++i)
                if (view[i] != v.mask()) visible_idx.push_back(int(i));
            while (have < want && !visible_idx.empty()) {
                const size_t pick = rng.next_below(visible_idx.size());
                view[size_t(visible_idx[pick])] = v.mask();
                visible_idx.erase(visible_idx.begin() + long(pick));
                ++have;
            }
        }
        auto cond_bank = models.enc->encode({view}, v, {}, /*cond_mode=*/true).detached();
        auto fresh = sample_latent(*models.cond, models.latent_schedule, gen.cond_latent_steps,
                                   rng, 1, &cond_bank, gen.latent_sampler == "ddpm", nfe,
                                   gen.renorm_latent, guidance.visible[0]);
        guidance = fresh;
    };

    auto plan = build_plan(gen.gen_length, gen.block_size, gen.nfe, gen.remask);
    return guided_decode(*models.dem, v, sched, plan, bank, gen.temperature, rng, nfe, hook);
}

} // namespace crocodil
