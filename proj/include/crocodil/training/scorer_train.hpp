#pragma once

#include <functional>
#include <set>
#include <vector>

#include "crocodil/models/scorer.hpp"
#include "crocodil/numerics/adamw.hpp"
#include "crocodil/training/config.hpp"

namespace crocodil {

// Guards the held-out contract: the scorer's training split may not share a
// single sequence with the generator's split.
inline void check_disjoint_splits(const std::vector<Sequence>& scorer_split,
                                  const std::vector<Sequence>& generator_split) {
    std::set<Sequence> seen(generator_split.begin(), generator_split.end());
    for (const auto& s : scorer_split)
        CROC_CHECK(!seen.count(s), "train_scorer: split overlap detected");
}

template <class F = float> class ScorerTrainer {
  public:
    ScorerTrainer(Scorer<F>& sco, const Vocab& v, TrainConfig cfg)
        : sco_(sco), v_(v), cfg_(cfg), rng_(cfg.seed, streams::scorer) {
        AdamWHyper h;
        h.lr = cfg.lr;
        h.weight_decay = cfg.weight_decay;
        h.clip_norm = cfg.clip_norm;
        opt_.init(sco_.registry().items(), h);
    }

    double step(const std::vector<Sequence>& corpus) {
        const int B = cfg_.batch;
        const int n = int(corpus.front().size());
        std::vector<Sequence> batch;
        for (int b = 0; b < B; ++b) batch.push_back(corpus[rng_.next_below(corpus.size())]);

        auto logits = sco_.forward(batch);
        std::vector<int32_t> targets;
        std::vector<F> weights;
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < n; ++i) {
                const bool last = (i + 1 == n);
                targets.push_back(last ? -1 : batch[size_t(b)][size_t(i + 1)]);
                weights.push_back(last ? F(0) : F(1));
            }
        auto loss = cross_entropy_rows(logits, targets, weights, F(B * (n - 1)));

        for (auto& p : sco_.registry().items()) p.zero_grad();
        backward(loss);
        adamw_step(sco_.registry().items(), opt_);
        ++step_idx_;
        return double(loss.item());
    }

    double run(const std::vector<Sequence>& corpus,
               const std::function<void(int64_t, double)>& on_step = {}) {
        double tail = 0;
        int tail_n = 0;
        for (int s = 0; s < cfg_.steps; ++s) {
            double loss;
            try {
                loss = step(corpus);
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
    Scorer<F>& sco_;
    const Vocab& v_;
    TrainConfig cfg_;
    RngStream rng_;
    AdamWState<F> opt_;
    int64_t step_idx_ = 0;
};

} // namespace crocodil
