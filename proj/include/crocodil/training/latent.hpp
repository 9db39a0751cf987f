#pragma once

#include <functional>
#include <vector>

#include "crocodil/models/denoiser.hpp"
#include "crocodil/models/encoder.hpp"
#include "crocodil/numerics/adamw.hpp"
#include "crocodil/training/config.hpp"

namespace crocodil {

// Clean register banks produced by a frozen encoder, the training set of the
// continuous diffusion stage.
template <class F>
std::vector<std::vector<F>> encode_bank_dataset(const Encoder<F>& enc,
                                                const std::vector<Sequence>& corpus,
                                                const Vocab& v, int chunk = 64) {
    std::vector<std::vector<F>> banks;
    banks.reserve(corpus.size());
    const bool checks = finite_checks();
    for (size_t off = 0; off < corpus.size(); off += size_t(chunk)) {
        std::vector<Sequence> batch(corpus.begin() + long(off),
                                    corpus.begin() + long(std::min(corpus.size(), off + chunk)));
        auto bank = enc.encode(batch, v);
        const int K = bank.K, d = bank.d;
        for (int b = 0; b < bank.batch; ++b)
            banks.emplace_back(bank.z.data() + size_t(b) * K * d,
                               bank.z.data() + size_t(b + 1) * K * d);
    }
    (void)checks;
    return banks;
}

namespace detail {

// z_t = sqrt(abar(t_eff)) z0 + sqrt(1 - abar(t_eff)) eps, per-register
// effective times from the block offsets
template <class F>
Tensor<F> noise_banks(const std::vector<const F*>& z0_rows, int K, int d,
                      const std::vector<double>& ts, const LatentSchedule& ls, RngStream& rng) {
    const int B = int(z0_rows.size());
    Tensor<F> zt({B * K, d});
    for (int b = 0; b < B; ++b)
        for (int r = 0; r < K; ++r) {
            const double te = ls.effective_time(ts[size_t(b)], r);
            const double ab = LatentSchedule::abar(te);
            const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
            F* dst = zt.data() + (size_t(b) * K + r) * d;
            const F* src = z0_rows[size_t(b)] + size_t(r) * d;
            for (int c = 0; c < d; ++c) dst[c] = F(sa * double(src[c]) + sn * rng.gaussian());
        }
    return zt;
}

} // namespace detail

// Unconditional latent prior: x0-prediction MSE on noised clean banks.
template <class F = float> class PriorTrainer {
  public:
    PriorTrainer(Denoiser<F>& den, LatentSchedule ls, TrainConfig cfg)
        : den_(den), ls_(std::move(ls)), cfg_(cfg), rng_(cfg.seed, streams::prior) {
        CROC_CHECK(!den.conditional(), "PriorTrainer: needs the unconditional denoiser");
        AdamWHyper h;
        h.lr = cfg.lr;
        h.weight_decay = cfg.weight_decay;
        h.clip_norm = cfg.clip_norm;
        opt_.init(den_.registry().items(), h);
    }

    double step(const std::vector<std::vector<F>>& banks) {
        const int B = cfg_.batch;
        const int K = den_.config().K, d = den_.config().d;
        std::vector<const F*> rows;
        std::vector<double> ts;
        Tensor<F> z0({B * K, d});
        for (int b = 0; b < B; ++b) {
            const auto& bank = banks[rng_.next_below(banks.size())];
            CROC_CHECK(int(bank.size()) == K * d, "PriorTrainer: bank shape mismatch");
            std::copy(bank.begin(), bank.end(), z0.data() + size_t(b) * K * d);
            rows.push_back(z0.data() + size_t(b) * K * d);
            ts.push_back(rng_.uniform());
        }
        auto zt = detail::noise_banks(rows, K, d, ts, ls_, rng_);
        auto loss = mse(den_.forward(zt, ts), z0, F(B * K));

        for (auto& p : den_.registry().items()) p.zero_grad();
        backward(loss);
        adamw_step(den_.registry().items(), opt_);
        ++step_idx_;
        return double(loss.item());
    }

    double run(const std::vector<std::vector<F>>& banks,
               const std::function<void(int64_t, double)>& on_step = {}) {
        double tail = 0;
        int tail_n = 0;
        for (int s = 0; s < cfg_.steps; ++s) {
            double loss;
            try {
                loss = step(banks);
            } catch (const AdamAbort&) {
                continue;
            }
            if (on_step) on_step(step_idx_, loss);
            if (s + 50 >= cfg_.steps) {
                tail += loss;
                ++tail_n;
            }
        }
        return tail_n ? tail / tail_n : 0.0;
    }

    int64_t step_index() const { return step_idx_; }
    RngStream& rng() { return rng_; }
    AdamWState<F>& opt_state() { return opt_; }
    const LatentSchedule& schedule() const { return ls_; }
    void restore(int64_t step_idx, RngStream rng) {
        step_idx_ = step_idx;
        rng_ = rng;
    }

  private:
    Denoiser<F>& den_;
    LatentSchedule ls_;
    TrainConfig cfg_;
    RngStream rng_;
    AdamWState<F> opt_;
    int64_t step_idx_ = 0;
};

// Conditional latent model: denoise the clean bank while reading the frozen
// encoder's embedding of a partially masked view, masked positions blocked.
// Only the denoiser parameters move.
template <class F = float> class CondTrainer {
  public:
    CondTrainer(Denoiser<F>& den, const Encoder<F>& enc, const Vocab& v, LatentSchedule ls,
                TrainConfig cfg)
        : den_(den), enc_(enc), v_(v), ls_(std::move(ls)), cfg_(cfg),
          rng_(cfg.seed, streams::cond) {
        CROC_CHECK(den.conditional(), "CondTrainer: needs the conditional denoiser");
        AdamWHyper h;
        h.lr = cfg.lr;
        h.weight_decay = cfg.weight_decay;
        h.clip_norm = cfg.clip_norm;
        opt_.init(den_.registry().items(), h);
    }

    double step(const std::vector<Sequence>& corpus, const std::vector<std::vector<F>>& banks) {
        CROC_CHECK(corpus.size() == banks.size(), "CondTrainer: corpus/banks must be paired");
        const int B = cfg_.batch;
        const int K = den_.config().K, d = den_.config().d;
        const int n = int(corpus.front().size());

        std::vector<Sequence> xrs;
        std::vector<const F*> rows;
        std::vector<double> ss;
        Tensor<F> z0({B * K, d});
        for (int b = 0; b < B; ++b) {
            const size_t idx = rng_.next_below(corpus.size());
            const double r = rng_.uniform();
            Sequence xr = corpus[idx];
            for (auto& id : xr)
                if (rng_.uniform() < r) id = v_.mask();
            xrs.push_back(std::move(xr));
            std::copy(banks[idx].begin(), banks[idx].end(), z0.data() + size_t(b) * K * d);
            rows.push_back(z0.data() + size_t(b) * K * d);
            ss.push_back(rng_.uniform());
        }
        (void)n;

        auto cond = enc_.encode(xrs, v_, {}, /*cond_mode=*/true).detached();
        auto zs = detail::noise_banks(rows, K, d, ss, ls_, rng_);
        auto loss = mse(den_.forward(zs, ss, &cond), z0, F(B * K));

        for (auto& p : den_.registry().items()) p.zero_grad();
        backward(loss);
        adamw_step(den_.registry().items(), opt_);
        ++step_idx_;
        return double(loss.item());
    }

    double run(const std::vector<Sequence>& corpus, const std::vector<std::vector<F>>& banks,
               const std::function<void(int64_t, double)>& on_step = {}) {
        double tail = 0;
        int tail_n = 0;
        for (int s = 0; s < cfg_.steps; ++s) {
            double loss;
            try {
                loss = step(corpus, banks);
            } catch (const AdamAbort&) {
                continue;
            }
            if (on_step) on_step(step_idx_, loss);
            if (s + 50 >= cfg_.steps) {
                tail += loss;
                ++tail_n;
            }
        }
        return tail_n ? tail / tail_n : 0.0;
    }

    int64_t step_index() const { return step_idx_; }
    RngStream& rng() { return rng_; }
    AdamWState<F>& opt_state() { return opt_; }
    void restore(int64_t step_idx, RngStream rng) {
        step_idx_ = step_idx;
        rng_ = rng;
    }

  private:
    Denoiser<F>& den_;
    const Encoder<F>& enc_;
    const Vocab& v_;
    LatentSchedule ls_;
    TrainConfig cfg_;
    RngStream rng_;
    AdamWState<F> opt_;
    int64_t step_idx_ = 0;
};

} // namespace crocodil
