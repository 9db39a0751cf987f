#pragma once

#include <functional>
#include <vector>

#include "crocodil/masking/schedule.hpp"
#include "crocodil/models/demasker.hpp"
#include "crocodil/models/encoder.hpp"
#include "crocodil/numerics/adamw.hpp"
#include "crocodil/training/config.hpp"
#include "crocodil/training/sigma.hpp"

namespace crocodil {

// Joint encoder-demasker training. One step: sample t per sequence, mask,
// occasionally replace the input by the fully masked sequence, encode the
// clean sequence under a nested-dropout budget, perturb the registers at the
// calibrated noise scale, and take a weighted cross-entropy step with
// w = 1/alpha_t. The first warmup_steps updates touch encoder parameters
// only. sigma is recalibrated on a training batch once per epoch.
template <class F = float> class AcdTrainer {
  public:
    AcdTrainer(Encoder<F>& enc, Demasker<F>& dem, const Vocab& v, const MaskSchedule& sched,
               TrainConfig cfg)
        : enc_(enc), dem_(dem), v_(v), sched_(sched), cfg_(cfg),
          rng_(cfg.seed, streams::acd) {
        cfg_.validate();
        params_ = enc.registry().items();
        enc_param_count_ = params_.size();
        for (auto& t : dem.registry().items()) params_.push_back(t);
        AdamWHyper h;
        h.lr = cfg.lr;
        h.weight_decay = cfg.weight_decay;
        h.clip_norm = cfg.clip_norm;
        opt_.init(params_, h);
    }

    double step(const std::vector<Sequence>& corpus) {
        const int B = cfg_.batch;
        const int n = int(corpus.front().size());
        const int K = enc_.config().K;

        std::vector<Sequence> x0s, xts;
        std::vector<double> ts;
        std::vector<int> ks;
        for (int b = 0; b < B; ++b) {
            const auto& x0 = corpus[rng_.next_below(corpus.size())];
            const double t = rng_.uniform();
            Sequence xt = forward_mask(x0, t, sched_, v_, rng_);
            if (rng_.uniform() < cfg_.all_mask_prob) {
                xt = fully_masked(n, v_);
                ++allmask_samples_;
            }
            ++total_samples_;
            const int k = 1 + int(rng_.next_below(uint64_t(K)));
            x0s.push_back(x0);
            xts.push_back(std::move(xt));
            ts.push_back(t);
            ks.push_back(k);
        }

        auto bank = enc_.encode(x0s, v_, ks);

        const int recal = cfg_.sigma_recalibrate_every > 0
                              ? cfg_.sigma_recalibrate_every
                              : std::max<int>(1, int(corpus.size()) / B);
        if (cfg_.register_noise && cfg_.target_cs < 1.0 && step_idx_ % recal == 0)
            sigma_ = calibrate_sigma(bank.detached(), cfg_.target_cs, rng_);

        if (cfg_.register_noise) {
            Tensor<F> noise(bank.z.shape());
            for (auto& x : noise.values()) x = F(rng_.gaussian() * sigma_);
            if (sigma_ > 0) bank.z = add(bank.z, noise);
        }

        auto out = dem_.forward(xts, ts, &bank, v_);

        std::vector<int32_t> targets;
        std::vector<F> weights;
        std::vector<int> masked_count(size_t(B), 0);
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < n; ++i)
                masked_count[size_t(b)] += (xts[size_t(b)][size_t(i)] == v_.mask());
        for (int b = 0; b < B; ++b) {
            double w = 1.0 / sched_.alpha(ts[size_t(b)]);
            if (cfg_.max_loss_weight > 0) w = std::min(w, double(cfg_.max_loss_weight));
            if (cfg_.masked_only_average) w /= std::max(1, masked_count[size_t(b)]);
            for (int i = 0; i < n; ++i) {
                const bool m = xts[size_t(b)][size_t(i)] == v_.mask();
                targets.push_back(m ? x0s[size_t(b)][size_t(i)] : -1);
                weights.push_back(m ? F(w) : F(0));
            }
        }
        const F divisor = cfg_.masked_only_average ? F(B) : F(B) * F(n);
        auto loss = cross_entropy_rows(out.logits, targets, weights, divisor);

        for (auto& p : params_) p.zero_grad();
        backward(loss);

        std::vector<uint8_t> active;
        if (step_idx_ < int64_t(cfg_.warmup_steps)) {
            active.assign(params_.size(), 0);
            for (size_t i = 0; i < enc_param_count_; ++i) active[i] = 1;
        }
        adamw_step(params_, opt_, active);
        ++step_idx_;
        return double(loss.item());
    }

    // returns the mean loss of the final 50 steps
    double run(const std::vector<Sequence>& corpus,
               const std::function<void(int64_t, double)>& on_step = {}) {
        double tail = 0;
        int tail_n = 0;
        for (int s = 0; s < cfg_.steps; ++s) {
            double loss;
            try {
                loss = step(corpus);
            } catch (const AdamAbort&) {
                continue; // reported by the optimizer; parameters untouched
            }
            if (on_step) on_step(step_idx_, loss);
            if (s + 50 >= cfg_.steps) {
                tail += loss;
                ++tail_n;
            }
        }
        return tail_n ? tail / tail_n : 0.0;
    }

    double sigma() const { return sigma_; }
    int64_t step_index() const { return step_idx_; }
    int64_t allmask_samples() const { return allmask_samples_; }
    int64_t total_samples() const { return total_samples_; }
    double loss_weight(double t) const {
        double w = 1.0 / sched_.alpha(t);
        return cfg_.max_loss_weight > 0 ? std::min(w, double(cfg_.max_loss_weight)) : w;
    }
    RngStream& rng() { return rng_; }
    AdamWState<F>& opt_state() { return opt_; }
    std::vector<Tensor<F>>& params() { return params_; }
    const TrainConfig& config() const { return cfg_; }

    // resume support: restore loop state saved in a checkpoint
    void restore(int64_t step_idx, double sigma, RngStream rng) {
        step_idx_ = step_idx;
        sigma_ = sigma;
        rng_ = rng;
    }

  private:
    Encoder<F>& enc_;
    Demasker<F>& dem_;
    const Vocab& v_;
    MaskSchedule sched_;
    TrainConfig cfg_;
    RngStream rng_;
    std::vector<Tensor<F>> params_;
    size_t enc_param_count_ = 0;
    AdamWState<F> opt_;
    double sigma_ = 0.0;
    int64_t step_idx_ = 0;
    int64_t allmask_samples_ = 0;
    int64_t total_samples_ = 0;
};

} // namespace crocodil
