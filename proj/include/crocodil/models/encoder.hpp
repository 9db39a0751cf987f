#pragma once

#include <vector>

#include "crocodil/corpus/vocab.hpp"
#include "crocodil/models/config.hpp"
#include "crocodil/models/transformer.hpp"

namespace crocodil {

// Bank of K continuous registers per sample, each normalized to norm sqrt(d).
// visible[b] = k is the nested-dropout budget: consumers may read only the
// first k registers of sample b.
template <class F> struct RegisterBank {
    Tensor<F> z; // [batch*K, d]
    std::vector<int> visible;
    int batch = 0, K = 0, d = 0;

    RegisterBank<F> detached() const {
        RegisterBank<F> out = *this;
        out.z = detach(z);
        return out;
    }
};

// Register-bank encoder. Stream layout per sample: the n text tokens followed
// by K-1 learned suffix slots. Register 1 is the hidden state at the last
// valid (pre-PAD) token, registers 2..K come from the suffix slots, all
// projected to width d and rescaled to norm sqrt(d).
//
// In conditioning mode (partially masked input) masked text positions are
// blocked as attention keys in every layer and the summary is pooled from the
// last *visible* token, so the output depends on visible tokens only; if
// everything is masked the summary falls back to the first suffix slot.
template <class F> class Encoder {
  public:
    Encoder() = default;
    Encoder(const ModelConfig& cfg, const Vocab& v, RngStream& rng) : cfg_(cfg) {
        const int w = cfg.enc_width;
        emb_ = reg_.add("enc.emb", {v.mask() + 1, w}, rng);
        suffix_ = cfg.K > 1 ? reg_.add("enc.suffix", {cfg.K - 1, w}, rng)
                            : Tensor<F>();
        for (int l = 0; l < cfg.enc_layers; ++l)
            blocks_.push_back(TransformerBlock<F>::make(reg_, "enc.l" + std::to_string(l), w, rng));
        norm_f_ = reg_.add_ones("enc.norm_f", {w});
        w_reg_ = reg_.add("enc.w_reg", {w, cfg.d}, rng);
    }

    // batch of equal-length sequences; k_visible: per-sample nested-dropout
    // budget (empty = all K visible)
    RegisterBank<F> encode(const std::vector<Sequence>& batch, const Vocab& v,
                           std::vector<int> k_visible = {}, bool cond_mode = false) const {
        const int B = int(batch.size());
        CROC_CHECK(B > 0, "encode: empty batch");
        const int n = int(batch[0].size());
        const int K = cfg_.K;
        const int S = n + K - 1;
        if (k_visible.empty()) k_visible.assign(size_t(B), K);
        CROC_CHECK(int(k_visible.size()) == B, "encode: one k per sample required");
        for (int k : k_visible)
            CROC_CHECK(k >= 1 && k <= K, "encode: k out of range");

        std::vector<int32_t> ids;
        ids.reserve(size_t(B) * n);
        for (const auto& seq : batch) {
            CROC_CHECK(int(seq.size()) == n, "encode: ragged batch");
            CROC_CHECK(cond_mode || !v.has_mask(seq), "encode: masked input outside cond mode");
            for (int32_t id : seq) ids.push_back(id);
        }

        auto text = embedding(emb_, ids); // [B*n, w]
        Tensor<F> x;
        if (K > 1) {
            auto sfx = broadcast_rows(suffix_, B);
            x = interleave_blocks<F>({text, sfx}, {n, K - 1}, B);
        } else {
            x = text;
        }

        auto pos = stream_positions(B, 0, S);
        auto angles = rope_angles<F>(pos, cfg_.enc_width / cfg_.enc_heads / 2, 0);

        std::vector<uint8_t> keep;
        if (cond_mode) {
            keep.assign(size_t(B) * S * S, 1);
            for (int b = 0; b < B; ++b)
                for (int tu = 0; tu < n; ++tu)
                    if (batch[size_t(b)][size_t(tu)] == v.mask())
                        for (int ti = 0; ti < S; ++ti)
                            keep[size_t(b) * S * S + size_t(ti) * S + tu] = 0;
        }

        for (const auto& blk : blocks_) {
            x = blk.self_attend(x, B, S, cfg_.enc_heads, angles, keep);
            x = blk.mlp(x);
        }
        x = rmsnorm(x, norm_f_);

        // summary register: last valid (pre-PAD) token; in cond mode, the
        // last visible one, falling back to the first suffix slot
        std::vector<int> summary_rows(size_t(B), 0);
        for (int b = 0; b < B; ++b) {
            int idx = -1;
            for (int i = n - 1; i >= 0; --i) {
                const int32_t tok = batch[size_t(b)][size_t(i)];
                if (tok == v.pad() || tok == v.mask()) continue;
                idx = i;
                break;
            }
            if (idx < 0) {
                CROC_CHECK(K > 1, "encode: fully masked input needs suffix registers");
                idx = n; // first suffix slot
            }
            summary_rows[size_t(b)] = b * S + idx;
        }
        auto summary = matmul(gather_rows(x, summary_rows), w_reg_); // [B, d]

        Tensor<F> bank_z;
        if (K > 1) {
            auto tail = matmul(extract_block(x, B, S, n, K - 1), w_reg_); // [B*(K-1), d]
            bank_z = interleave_blocks<F>({summary, tail}, {1, K - 1}, B);
        } else {
            bank_z = summary;
        }
        bank_z = renorm_rows(bank_z, F(std::sqrt(double(cfg_.d))));

        RegisterBank<F> bank;
        bank.z = bank_z;
        bank.visible = std::move(k_visible);
        bank.batch = B;
        bank.K = K;
        bank.d = cfg_.d;
        return bank;
    }

    ParamRegistry<F>& registry() { return reg_; }
    const ParamRegistry<F>& registry() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }

  private:
    ModelConfig cfg_;
    ParamRegistry<F> reg_;
    Tensor<F> emb_, suffix_, norm_f_, w_reg_;
    std::vector<TransformerBlock<F>> blocks_;
};

} // namespace crocodil
