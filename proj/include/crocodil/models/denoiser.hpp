#pragma once

#include <vector>

#include "crocodil/models/config.hpp"
#include "crocodil/models/encoder.hpp"
#include "crocodil/models/transformer.hpp"

namespace crocodil {

// Latent denoiser over the K register tokens with x0-prediction: given a
// noised bank z_t and the base diffusion time, predict the clean bank.
// The conditional variant reads a conditioning register bank (produced by
// the encoder in blocked mode) through per-block cross-attention.
template <class F> class Denoiser {
  public:
    using value_type = F;

    mutable int64_t forward_calls = 0;

    Denoiser() = default;
    Denoiser(const ModelConfig& cfg, bool conditional, RngStream& rng)
        : cfg_(cfg), conditional_(conditional) {
        const int w = cfg.den_width;
        const std::string p = conditional ? "cnd" : "den";
        w_in_ = reg_.add(p + ".w_in", {cfg.d, w}, rng);
        pos_ = reg_.add(p + ".pos", {cfg.K, w}, rng);
        wt1_ = reg_.add(p + ".wt1", {w, w}, rng);
        wt2_ = reg_.add(p + ".wt2", {w, w}, rng);
        if (conditional) w_cond_ = reg_.add(p + ".w_cond", {cfg.d, w}, rng);
        for (int l = 0; l < cfg.den_layers; ++l)
            blocks_.push_back(
                TransformerBlock<F>::make(reg_, p + ".l" + std::to_string(l), w, rng, conditional));
        norm_f_ = reg_.add_ones(p + ".norm_f", {w});
        w_out_ = reg_.add(p + ".w_out", {w, cfg.d}, rng);
    }

    // z_t: [batch*K, d]; ts: base diffusion time per sample;
    // cond: conditioning bank (required iff conditional)
    Tensor<F> forward(Tensor<F> z_t, const std::vector<double>& ts,
                      const RegisterBank<F>* cond = nullptr) const {
        ++forward_calls;
        const int K = cfg_.K;
        CROC_CHECK(z_t.cols() == cfg_.d, "denoise: register width mismatch");
        CROC_CHECK(z_t.rows() % K == 0, "denoise: rows must be batch*K");
        const int B = z_t.rows() / K;
        CROC_CHECK(int(ts.size()) == B, "denoise: one t per sample required");
        CROC_CHECK(conditional_ == (cond != nullptr), "denoise: conditioning mismatch");
        if (cond) CROC_CHECK(cond->batch == B && cond->d == cfg_.d, "denoise: cond shape mismatch");

        auto x = add(matmul(z_t, w_in_), broadcast_rows(pos_, B));
        Tensor<F> feats({B, cfg_.den_width});
        for (int b = 0; b < B; ++b) {
            auto f = time_features<F>(ts[size_t(b)], cfg_.den_width);
            std::copy(f.begin(), f.end(), feats.data() + size_t(b) * cfg_.den_width);
        }
        auto temb = matmul(silu(matmul(feats, wt1_)), wt2_);
        x = add(x, repeat_rows(temb, K));

        Tensor<F> cond_rows;
        if (cond) cond_rows = matmul(cond->z, w_cond_);

        const std::vector<uint8_t> keep; // registers attend freely
        const std::vector<F> no_angles;  // learned positions, no rotary here
        for (const auto& blk : blocks_) {
            x = blk.self_attend(x, B, K, cfg_.den_heads, no_angles, keep);
            if (cond) x = blk.cross_attend(x, cond_rows, B, K, cond->K, cfg_.den_heads, keep);
            x = blk.mlp(x);
        }
        return matmul(rmsnorm(x, norm_f_), w_out_);
    }

    bool conditional() const { return conditional_; }
    ParamRegistry<F>& registry() { return reg_; }
    const ParamRegistry<F>& registry() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }

  private:
    ModelConfig cfg_;
    bool conditional_ = false;
    ParamRegistry<F> reg_;
    Tensor<F> w_in_, pos_, wt1_, wt2_, w_cond_, norm_f_, w_out_;
    std::vector<TransformerBlock<F>> blocks_;
};

} // namespace crocodil
