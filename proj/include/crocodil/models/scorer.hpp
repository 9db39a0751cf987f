#pragma once

#include <vector>

#include "crocodil/corpus/vocab.hpp"
#include "crocodil/models/config.hpp"
#include "crocodil/models/transformer.hpp"

namespace crocodil {

// Small left-to-right language model used as the held-out judge behind
// generative perplexity. Trained on a split disjoint from everything the
// generators see.
template <class F> class Scorer {
  public:
    Scorer() = default;
    Scorer(const ModelConfig& cfg, const Vocab& v, RngStream& rng)
        : cfg_(cfg), vocab_logits_(v.mask()) {
        const int w = cfg.sco_width;
        emb_ = reg_.add("sco.emb", {v.mask() + 1, w}, rng);
        for (int l = 0; l < cfg.sco_layers; ++l)
            blocks_.push_back(TransformerBlock<F>::make(reg_, "sco.l" + std::to_string(l), w, rng));
        norm_f_ = reg_.add_ones("sco.norm_f", {w});
        head_ = reg_.add("sco.head", {w, vocab_logits_}, rng);
    }

    // logits over next tokens at every position: row (b, i) predicts token i+1
    Tensor<F> forward(const std::vector<Sequence>& batch) const {
        const int B = int(batch.size());
        CROC_CHECK(B > 0, "scorer: empty batch");
        const int n = int(batch[0].size());
        std::vector<int32_t> ids;
        ids.reserve(size_t(B) * n);
        for (const auto& seq : batch) {
            CROC_CHECK(int(seq.size()) == n, "scorer: ragged batch");
            for (int32_t id : seq) ids.push_back(id);
        }
        auto x = embedding(emb_, ids);
        auto pos = stream_positions(B, 0, n);
        auto angles = rope_angles<F>(pos, cfg_.sco_width / cfg_.sco_heads / 2, 0);

        std::vector<uint8_t> keep(size_t(B) * n * n, 0);
        for (int b = 0; b < B; ++b)
            for (int ti = 0; ti < n; ++ti)
                for (int tu = 0; tu <= ti; ++tu)
                    keep[size_t(b) * n * n + size_t(ti) * n + tu] = 1;

        for (const auto& blk : blocks_) {
            x = blk.self_attend(x, B, n, cfg_.sco_heads, angles, keep);
            x = blk.mlp(x);
        }
        return matmul(rmsnorm(x, norm_f_), head_);
    }

    // per-token negative log-likelihood of positions 1..n-1 (position 0 is
    // the unconditioned start and is not scored)
    std::vector<double> token_nll(const Sequence& seq) const {
        auto logits = forward({seq});
        const int n = int(seq.size());
        std::vector<double> out;
        std::vector<F> row(size_t(vocab_logits_), F(0));
        for (int i = 0; i + 1 < n; ++i) {
            const F* src = logits.data() + size_t(i) * vocab_logits_;
            std::copy(src, src + vocab_logits_, row.begin());
            softmax_rows_inplace(row);
            const int32_t target = seq[size_t(i + 1)];
            CROC_CHECK(target >= 0 && target < vocab_logits_, "scorer: target outside alphabet");
            out.push_back(-std::log(std::max(double(row[size_t(target)]), 1e-30)));
        }
        return out;
    }

    int logits_vocab() const { return vocab_logits_; }
    ParamRegistry<F>& registry() { return reg_; }
    const ParamRegistry<F>& registry() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }

  private:
    ModelConfig cfg_;
    int vocab_logits_ = 0;
    ParamRegistry<F> reg_;
    Tensor<F> emb_, norm_f_, head_;
    std::vector<TransformerBlock<F>> blocks_;
};

} // namespace crocodil
