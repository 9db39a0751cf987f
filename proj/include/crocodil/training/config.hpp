#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "crocodil/harness/config.hpp"

namespace crocodil {

// Hyper-parameters for all four training procedures.
struct TrainConfig {
    float lr = 3e-4f;
    float weight_decay = 0.1f;
    int batch = 32;
    int steps = 1500;
    int warmup_steps = 200;       // encoder-only stage of the joint training
    double all_mask_prob = 0.25;  // feed the fully masked sequence this often
    double target_cs = 0.8;       // cosine-similarity target for register noise
    std::string nested_dropout = "uniform"; // k ~ U{1..K}
    double max_block_offset = 0.3;          // ramp peak for the latent schedule
    bool block_offsets = true;
    uint64_t seed = 0;
    int sigma_recalibrate_every = 0; // 0: steps per epoch is computed from data
    // stability knobs for the toy stack
    float clip_norm = 1.0f;       // 0 disables
    float max_loss_weight = 100.0f; // clamp on w = 1/alpha_t; 0 disables
    bool masked_only_average = false; // divide by masked count instead of n
    bool register_noise = true;       // the robustness augmentation switch

    void validate() const {
        CROC_CHECK(target_cs > 0.0 && target_cs <= 1.0, "TrainConfig: target_cs outside (0,1]");
        CROC_CHECK(all_mask_prob >= 0.0 && all_mask_prob <= 1.0,
                   "TrainConfig: all_mask_prob outside [0,1]");
        CROC_CHECK(batch > 0 && steps >= 0, "TrainConfig: batch/steps must be positive");
        CROC_CHECK(nested_dropout == "uniform", "TrainConfig: unknown nested-dropout law");
    }

    static TrainConfig from_config(const Config& cfg, const std::string& sec = "train") {
        TrainConfig t;
        t.lr = float(cfg.get_f64(sec, "lr", t.lr));
        t.weight_decay = float(cfg.get_f64(sec, "weight_decay", t.weight_decay));
        t.batch = int(cfg.get_i64(sec, "batch", t.batch));
        t.steps = int(cfg.get_i64(sec, "steps", t.steps));
        t.warmup_steps = int(cfg.get_i64(sec, "warmup_steps", t.warmup_steps));
        t.all_mask_prob = cfg.get_f64(sec, "all_mask_prob", t.all_mask_prob);
        t.target_cs = cfg.get_f64(sec, "target_cs", t.target_cs);
        t.nested_dropout = cfg.get_str(sec, "nested_dropout", t.nested_dropout);
        t.max_block_offset = cfg.get_f64(sec, "max_block_offset", t.max_block_offset);
        t.block_offsets = cfg.get_bool(sec, "block_offsets", t.block_offsets);
        t.seed = uint64_t(cfg.get_i64(sec, "seed", 0));
        t.sigma_recalibrate_every = int(cfg.get_i64(sec, "sigma_recalibrate_every", 0));
        t.clip_norm = float(cfg.get_f64(sec, "clip_norm", t.clip_norm));
        t.max_loss_weight = float(cfg.get_f64(sec, "max_loss_weight", t.max_loss_weight));
        t.masked_only_average = cfg.get_bool(sec, "masked_only_average", t.masked_only_average);
        t.register_noise = cfg.get_bool(sec, "register_noise", t.register_noise);
        t.validate();
        return t;
    }
};

// Continuous-diffusion schedule over the register bank: cosine abar(t) plus
// block-wise timestep offsets aligned with the nested-dropout ordering.
// Blocks partition the K registers with geometrically growing sizes
// (1, 2, 4, ...); offsets increase with the block index and shift the
// effective time, clipped to [0, 1].
struct LatentSchedule {
    std::vector<int> block_of_register; // size K
    std::vector<double> offsets;        // per block, non-decreasing

    static double abar(double t) {
        constexpr double s = 0.008;
        auto f = [](double u) {
            const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
            return c * c;
        };
        const double a = f(std::clamp(t, 0.0, 1.0)) / f(0.0);
        return std::clamp(a, 1e-8, 1.0);
    }

    static LatentSchedule geometric(int K, double max_offset = 0.3, bool enable_offsets = true) {
        LatentSchedule ls;
        int covered = 0, size = 1, block = 0;
        while (covered < K) {
            const int take = std::min(size, K - covered);
            for (int i = 0; i < take; ++i) ls.block_of_register.push_back(block);
            covered += take;
            size *= 2;
            ++block;
        }
        const int B = block;
        for (int b = 0; b < B; ++b)
            ls.offsets.push_back(enable_offsets && B > 1 ? max_offset * double(b) / double(B - 1)
                                                         : 0.0);
        return ls;
    }

    int blocks() const { return int(offsets.size()); }

    double effective_time(double t, int reg_index) const {
        const int b = block_of_register[size_t(reg_index)];
        return std::clamp(t + offsets[size_t(b)], 0.0, 1.0);
    }

    void validate() const {
        for (size_t b = 1; b < offsets.size(); ++b)
            CROC_CHECK(offsets[b] >= offsets[b - 1], "LatentSchedule: offsets must not decrease");
        double prev = 2;
        for (int i = 0; i <= 10; ++i) {
            const double a = abar(i / 10.0);
            CROC_CHECK(a < prev, "LatentSchedule: abar must decrease");
            prev = a;
        }
    }
};

} // namespace crocodil
