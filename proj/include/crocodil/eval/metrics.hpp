#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "crocodil/eval/cer.hpp"
#include "crocodil/eval/ngram.hpp"
#include "crocodil/models/scorer.hpp"
#include "crocodil/sampling/generate.hpp"
#include "crocodil/training/latent.hpp"

namespace crocodil {

// ------------------------------------------------------ masked prediction

struct MaskedPredictionPoint {
    double mask_prob = 0;
    double cross_entropy = 0;
    double top1_accuracy = 0;
    int64_t masked_positions = 0;
    bool defined = false; // p = 0 has nothing to score
};

// Mask each sequence at the exact ratio p and score only the masked
// positions. guided = nullptr evaluates the unguided path.
template <class F>
std::vector<MaskedPredictionPoint> masked_prediction_curve(
    const Demasker<F>& dem, std::type_identity_t<const Encoder<F>*> guided_enc,
    const std::vector<Sequence>& dataset, const std::vector<double>& mask_probs, const Vocab& v,
    RngStream rng, int chunk = 32, double bank_noise_sigma = 0.0) {
    CROC_CHECK(!dataset.empty(), "masked_prediction_curve: empty dataset");
    std::vector<MaskedPredictionPoint> curve;
    for (double p : mask_probs) {
        CROC_CHECK(p >= 0.0 && p <= 1.0, "masked_prediction_curve: p outside [0,1]");
        MaskedPredictionPoint pt;
        pt.mask_prob = p;
        double ce = 0, acc = 0;
        int64_t count = 0;
        for (size_t off = 0; off < dataset.size(); off += size_t(chunk)) {
            std::vector<Sequence> clean(dataset.begin() + long(off),
                                        dataset.begin() + long(std::min(dataset.size(),
                                                                        off + size_t(chunk))));
            const int B = int(clean.size());
            const int n = int(clean[0].size());
            const int to_mask = int(std::lround(p * n));
            std::vector<Sequence> masked = clean;
            for (auto& seq : masked) {
                std::vector<int> order(seq.size(), 0);
                for (size_t i = 0; i < seq.size(); ++i) order[i] = int(i);
                for (size_t i = 0; i < seq.size(); ++i) {
                    const size_t j = i + size_t(rng.next_below(seq.size() - i));
                    std::swap(order[i], order[j]);
                }
                for (int i = 0; i < to_mask; ++i) seq[size_t(order[size_t(i)])] = v.mask();
            }
            std::optional<RegisterBank<F>> bank;
            if (guided_enc) {
                bank = guided_enc->encode(clean, v).detached();
                if (bank_noise_sigma > 0)
                    for (auto& x : bank->z.values()) x += F(rng.gaussian() * bank_noise_sigma);
            }
            auto out = dem.forward(masked, std::vector<double>(size_t(B), p),
                                   bank ? &*bank : nullptr, v);
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < n; ++i) {
                    if (masked[size_t(b)][size_t(i)] != v.mask()) continue;
                    const F* row = out.prob_row(b, i);
                    const int32_t target = clean[size_t(b)][size_t(i)];
                    ce += -std::log(std::max(double(row[target]), 1e-30));
                    int32_t best = 0;
                    for (int j2 = 1; j2 < out.vocab; ++j2)
                        if (row[j2] > row[best]) best = j2;
                    acc += (best == target);
                    ++count;
                }
        }
        if (count > 0) {
            pt.cross_entropy = ce / double(count);
            pt.top1_accuracy = acc / double(count);
            pt.masked_positions = count;
            pt.defined = true;
        }
        curve.push_back(pt);
    }
    return curve;
}

// ------------------------------------------------------------------ gen-ppl

// exp(mean per-token NLL under the scorer); tokens after the first EOS are
// layout, not language, and are not scored.
template <class F>
double gen_ppl(const std::vector<Sequence>& samples, const Scorer<F>& scorer, const Vocab& v) {
    CROC_CHECK(!samples.empty(), "gen_ppl: no samples");
    double total = 0;
    int64_t count = 0;
    for (const auto& seq : samples) {
        auto nll = scorer.token_nll(seq);
        int scored = int(nll.size());
        for (size_t i = 0; i < seq.size(); ++i)
            if (seq[i] == v.eos()) {
                scored = std::min<int>(scored, int(i)); // predictions for tokens 1..eos
                break;
            }
        for (int i = 0; i < scored; ++i) {
            CROC_CHECK(std::isfinite(nll[size_t(i)]), "gen_ppl: non-finite likelihood");
            total += nll[size_t(i)];
            ++count;
        }
    }
    CROC_CHECK(count > 0, "gen_ppl: nothing to score");
    return std::exp(total / double(count));
}

// ------------------------------------------------------------------- psnr

// PSNR between denoiser predictions and clean banks across diffusion time.
// MAX is the register dynamic range 2*sqrt(d); exact reconstructions are
// capped at 120 dB.
template <class Den, class F = typename Den::value_type>
std::vector<double> psnr_curve(const Den& den, const std::vector<std::vector<F>>& banks,
                               const std::vector<double>& t_grid, const LatentSchedule& ls,
                               RngStream rng, const Encoder<F>* cond_enc = nullptr,
                               const std::vector<Sequence>* cond_views = nullptr,
                               const Vocab* v = nullptr) {
    CROC_CHECK(!banks.empty(), "psnr_curve: no banks");
    const int K = den.config().K, d = den.config().d;
    const double max_val = 2.0 * std::sqrt(double(d));
    std::vector<double> out;
    for (double t : t_grid) {
        double se = 0;
        int64_t count = 0;
        for (size_t s = 0; s < banks.size(); ++s) {
            Tensor<F> z0({K, d});
            std::copy(banks[s].begin(), banks[s].end(), z0.data());
            std::vector<const F*> rows{z0.data()};
            auto zt = detail::noise_banks<F>(rows, K, d, {t}, ls, rng);
            std::optional<RegisterBank<F>> cond;
            if (cond_enc) {
                CROC_CHECK(cond_views && v, "psnr_curve: conditional model needs views");
                cond = cond_enc->encode({(*cond_views)[s]}, *v, {}, true).detached();
            }
            auto zhat = den.forward(zt, {t}, cond ? &*cond : nullptr);
            for (size_t i = 0; i < zhat.numel(); ++i) {
                const double diff = double(zhat.data()[i]) - double(z0.data()[i]);
                se += diff * diff;
            }
            count += int64_t(zhat.numel());
        }
        const double mse_val = se / double(count);
        out.push_back(mse_val <= 0 ? 120.0
                                   : std::min(120.0, 10.0 * std::log10(max_val * max_val /
                                                                       mse_val)));
    }
    return out;
}

// ------------------------------------------------------------- robustness

struct RobustnessPoint {
    double sigma = 0;
    double top1_accuracy = 0;
    double cross_entropy = 0;
};

// Appendix-style stability sweep: perturb the conditioning registers with
// N(0, sigma^2) at evaluation time, mask at the given ratio, score masked
// positions.
template <class F>
std::vector<RobustnessPoint> robustness_sweep(const Encoder<F>& enc, const Demasker<F>& dem,
                                              const std::vector<double>& sigmas,
                                              const std::vector<Sequence>& dataset, const Vocab& v,
                                              double mask_ratio, uint64_t seed) {
    std::vector<RobustnessPoint> out;
    for (double s : sigmas) {
        CROC_CHECK(s >= 0, "robustness_sweep: sigma must be >= 0");
        RngStream rng(seed, streams::eval); // same draws for every sigma
        auto curve = masked_prediction_curve(dem, &enc, dataset, {mask_ratio}, v, rng, 32, s);
        out.push_back({s, curve[0].top1_accuracy, curve[0].cross_entropy});
    }
    return out;
}

// ------------------------------------------------------------ interpolation

struct InterpolationPoint {
    double alpha = 0;
    double gen_ppl = 0;
    double divergence = 0;
    double cer_a = 0, cer_b = 0;
};

// Linear interpolation between encoded register banks, renormalized and
// decoded with the guided loop; each alpha scored against the corpus.
template <class F>
std::vector<InterpolationPoint> interpolation_eval(
    const std::vector<std::pair<Sequence, Sequence>>& pairs, const std::vector<double>& alphas,
    const GenConfig& gen, const ModelSet<F>& models, const Vocab& v, const MaskSchedule& sched,
    const Scorer<F>& scorer, const std::vector<Sequence>& ref_corpus) {
    CROC_CHECK(!pairs.empty(), "interpolation_eval: no pairs");
    const int K = models.enc->config().K, d = models.enc->config().d;
    std::vector<InterpolationPoint> out;
    for (double a : alphas) {
        CROC_CHECK(a >= 0.0 && a <= 1.0, "interpolation_eval: alpha outside [0,1]");
        InterpolationPoint pt;
        pt.alpha = a;
        std::vector<Sequence> decoded;
        for (size_t pi = 0; pi < pairs.size(); ++pi) {
            auto za = models.enc->encode({pairs[pi].first}, v).detached();
            auto zb = models.enc->encode({pairs[pi].second}, v).detached();
            Tensor<F> mix({K, d});
            for (size_t i = 0; i < mix.numel(); ++i)
                mix.data()[i] = F((1.0 - a) * double(za.z.data()[i]) + a * double(zb.z.data()[i]));
            RegisterBank<F> bank;
            bank.z = renorm_rows(mix, F(std::sqrt(double(d))));
            bank.z = detach(bank.z);
            bank.batch = 1;
            bank.K = K;
            bank.d = d;
            bank.visible = {gen.registers_k > 0 ? gen.registers_k : K};

            auto plan = build_plan(gen.gen_length, gen.block_size, gen.nfe, gen.remask);
            RngStream rng(gen.seed + pi, streams::generate);
            auto xhat = guided_decode(*models.dem, v, sched, plan, bank, gen.temperature, rng);
            pt.cer_a += cer(v.display(pairs[pi].first), v.display(xhat));
            pt.cer_b += cer(v.display(pairs[pi].second), v.display(xhat));
            decoded.push_back(std::move(xhat));
        }
        pt.cer_a /= double(pairs.size());
        pt.cer_b /= double(pairs.size());
        pt.gen_ppl = gen_ppl(decoded, scorer, v);
        pt.divergence = ngram_divergence(decoded, ref_corpus, 2, v);
        out.push_back(pt);
    }
    return out;
}

} // namespace crocodil
