#pragma once

#include <vector>

#include "crocodil/corpus/vocab.hpp"
#include "crocodil/models/config.hpp"
#include "crocodil/models/encoder.hpp"
#include "crocodil/models/transformer.hpp"

namespace crocodil {

// Per-position distributions over the producible alphabet (ids below the
// mask id). Unmasked positions follow the one-hot convention: probability 1
// on their own token, confidence 1.
template <class F> struct DemaskerOutput {
    Tensor<F> logits;          // [batch*n, |V|], tape-connected network output
    std::vector<F> probs;      // post-convention probabilities, same layout
    std::vector<double> confidence; // max probability per position
    int batch = 0, n = 0, vocab = 0;

    const F* prob_row(int b, int i) const { return probs.data() + (size_t(b) * n + i) * vocab; }
    double conf(int b, int i) const { return confidence[size_t(b) * n + i]; }
};

// Guided demasker. Input stream per sample:
//   [<START>, z_1 .. z_K, <END>, E(x_t)]
// with registers beyond the per-sample visible budget blocked as attention
// keys in every layer, which makes the output an exact function of the first
// k registers. Without guidance the stream is just E(x_t).
template <class F> class Demasker {
  public:
    // call counter, for NFE accounting
    mutable int64_t forward_calls = 0;

    Demasker() = default;
    Demasker(const ModelConfig& cfg, const Vocab& v, RngStream& rng)
        : cfg_(cfg), vocab_logits_(v.mask()) {
        const int w = cfg.dem_width;
        emb_ = reg_.add("dem.emb", {v.mask() + 1, w}, rng);
        start_ = reg_.add("dem.start", {1, w}, rng);
        end_ = reg_.add("dem.end", {1, w}, rng);
        w_reg_in_ = reg_.add("dem.w_reg_in", {cfg.d, w}, rng);
        if (cfg.time_embedding) {
            wt1_ = reg_.add("dem.wt1", {w, w}, rng);
            wt2_ = reg_.add("dem.wt2", {w, w}, rng);
        }
        for (int l = 0; l < cfg.dem_layers; ++l)
            blocks_.push_back(TransformerBlock<F>::make(reg_, "dem.l" + std::to_string(l), w, rng));
        norm_f_ = reg_.add_ones("dem.norm_f", {w});
        head_ = reg_.add("dem.head", {w, vocab_logits_}, rng);
    }

    DemaskerOutput<F> forward(const std::vector<Sequence>& xts, const std::vector<double>& ts,
                              const RegisterBank<F>* guidance, const Vocab& v) const {
        ++forward_calls;
        const int B = int(xts.size());
        CROC_CHECK(B > 0, "demask: empty batch");
        const int n = int(xts[0].size());
        CROC_CHECK(int(ts.size()) == B, "demask: one t per sample required");
        const bool guided = guidance != nullptr;
        if (guided) {
            CROC_CHECK(guidance->batch == B, "demask: guidance batch mismatch");
            CROC_CHECK(guidance->d == cfg_.d, "demask: register width mismatch");
        }
        const int K = guided ? guidance->K : 0;
        const int P = guided ? K + 2 : 0; // prefix rows
        const int S = P + n;

        std::vector<int32_t> ids;
        ids.reserve(size_t(B) * n);
        for (const auto& seq : xts) {
            CROC_CHECK(int(seq.size()) == n, "demask: ragged batch");
            for (int32_t id : seq) ids.push_back(id);
        }
        auto text = embedding(emb_, ids); // [B*n, w]

        if (cfg_.time_embedding) {
            Tensor<F> feats({B, cfg_.dem_width});
            for (int b = 0; b < B; ++b) {
                auto f = time_features<F>(ts[size_t(b)], cfg_.dem_width);
                std::copy(f.begin(), f.end(), feats.data() + size_t(b) * cfg_.dem_width);
            }
            auto temb = matmul(silu(matmul(feats, wt1_)), wt2_); // [B, w]
            text = add(text, repeat_rows(temb, n));
        }

        Tensor<F> x;
        if (guided) {
            auto reg_rows = matmul(guidance->z, w_reg_in_); // [B*K, w]
            auto start = broadcast_rows(start_, B);
            auto end = broadcast_rows(end_, B);
            x = interleave_blocks<F>({start, reg_rows, end, text}, {1, K, 1, n}, B);
        } else {
            x = text;
        }

        auto pos = stream_positions(B, P, n);
        const int pairs = cfg_.dem_width / cfg_.dem_heads / 2;
        auto angles =
            rope_angles<F>(pos, pairs, cfg_.local_pairs(cfg_.dem_width, cfg_.dem_heads));

        std::vector<uint8_t> keep;
        if (guided) {
            keep.assign(size_t(B) * S * S, 1);
            for (int b = 0; b < B; ++b)
                for (int j = guidance->visible[size_t(b)]; j < K; ++j)
                    for (int ti = 0; ti < S; ++ti)
                        keep[size_t(b) * S * S + size_t(ti) * S + (1 + j)] = 0;
        }

        for (const auto& blk : blocks_) {
            x = blk.self_attend(x, B, S, cfg_.dem_heads, angles, keep);
            x = blk.mlp(x);
        }
        x = rmsnorm(extract_block(x, B, S, P, n), norm_f_);

        DemaskerOutput<F> out;
        out.logits = matmul(x, head_);
        out.batch = B;
        out.n = n;
        out.vocab = vocab_logits_;
        out.probs.assign(size_t(B) * n * vocab_logits_, F(0));
        out.confidence.assign(size_t(B) * n, 1.0);
        std::vector<F> row(size_t(vocab_logits_), F(0));
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < n; ++i) {
                F* dst = out.probs.data() + (size_t(b) * n + i) * vocab_logits_;
                const int32_t tok = xts[size_t(b)][size_t(i)];
                if (tok != v.mask()) {
                    dst[tok] = F(1); // one-hot convention
                    continue;
                }
                const F* src = out.logits.data() + (size_t(b) * n + i) * vocab_logits_;
                std::copy(src, src + vocab_logits_, row.begin());
                softmax_rows_inplace(row);
                std::copy(row.begin(), row.end(), dst);
                double mx = 0;
                for (F p : row) mx = std::max(mx, double(p));
                out.confidence[size_t(b) * n + i] = mx;
            }
        return out;
    }

    // single-sequence convenience
    DemaskerOutput<F> demask(const Sequence& xt, double t, const RegisterBank<F>* guidance,
                             const Vocab& v) const {
        return forward({xt}, {t}, guidance, v);
    }

    int logits_vocab() const { return vocab_logits_; }
    ParamRegistry<F>& registry() { return reg_; }
    const ParamRegistry<F>& registry() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }

  private:
    ModelConfig cfg_;
    int vocab_logits_ = 0;
    ParamRegistry<F> reg_;
    Tensor<F> emb_, start_, end_, w_reg_in_, wt1_, wt2_, norm_f_, head_;
    std::vector<TransformerBlock<F>> blocks_;
};

} // namespace crocodil
