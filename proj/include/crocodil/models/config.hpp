#pragma once

#include "crocodil/harness/config.hpp"

namespace crocodil {

// Sizes for the three networks. Register width d and count K are shared;
// each net carries its own depth/width/head split.
struct ModelConfig {
    int seq_len = 16; // text positions seen by demasker / encoder / scorer

    int K = 8;  // register count
    int d = 64; // register width

    int dem_layers = 4, dem_width = 128, dem_heads = 4;
    int enc_layers = 2, enc_width = 128, enc_heads = 4;
    int den_layers = 4, den_width = 128, den_heads = 4;
    int sco_layers = 2, sco_width = 64, sco_heads = 4;

    // channel pairs of each head that follow the prefix-local rotary axis
    int rotary_local_pairs = -1; // -1: one quarter of the pairs
    bool time_embedding = false; // explicit t input to the demasker

    int local_pairs(int width, int heads) const {
        const int pairs = width / heads / 2;
        const int lp = rotary_local_pairs >= 0 ? rotary_local_pairs : pairs / 4;
        CROC_CHECK(lp <= pairs, "ModelConfig: rotary split exceeds channel pairs");
        return lp;
    }

    void validate() const {
        CROC_CHECK(dem_width % dem_heads == 0 && enc_width % enc_heads == 0 &&
                       den_width % den_heads == 0 && sco_width % sco_heads == 0,
                   "ModelConfig: width must be divisible by heads");
        CROC_CHECK(K >= 1 && d >= 2, "ModelConfig: need K >= 1 and d >= 2");
        local_pairs(dem_width, dem_heads);
    }

    static ModelConfig from_config(const Config& cfg) {
        ModelConfig m;
        m.seq_len = int(cfg.get_i64("model", "seq_len", cfg.get_i64("grammar", "seq_len", 16)));
        m.K = int(cfg.get_i64("model", "registers", 8));
        m.d = int(cfg.get_i64("model", "register_width", 64));
        m.dem_layers = int(cfg.get_i64("model", "dem_layers", 4));
        m.dem_width = int(cfg.get_i64("model", "dem_width", 128));
        m.dem_heads = int(cfg.get_i64("model", "dem_heads", 4));
        m.enc_layers = int(cfg.get_i64("model", "enc_layers", 2));
        m.enc_width = int(cfg.get_i64("model", "enc_width", 128));
        m.enc_heads = int(cfg.get_i64("model", "enc_heads", 4));
        m.den_layers = int(cfg.get_i64("model", "den_layers", 4));
        m.den_width = int(cfg.get_i64("model", "den_width", 128));
        m.den_heads = int(cfg.get_i64("model", "den_heads", 4));
        m.sco_layers = int(cfg.get_i64("model", "sco_layers", 2));
        m.sco_width = int(cfg.get_i64("model", "sco_width", 64));
        m.sco_heads = int(cfg.get_i64("model", "sco_heads", 4));
        m.rotary_local_pairs = int(cfg.get_i64("model", "rotary_local_pairs", -1));
        m.time_embedding = cfg.get_bool("model", "time_embedding", false);
        m.validate();
        return m;
    }

    void write_to(Config& cfg) const {
        cfg.set_i64("model", "seq_len", seq_len);
        cfg.set_i64("model", "registers", K);
        cfg.set_i64("model", "register_width", d);
        cfg.set_i64("model", "dem_layers", dem_layers);
        cfg.set_i64("model", "dem_width", dem_width);
        cfg.set_i64("model", "dem_heads", dem_heads);
        cfg.set_i64("model", "enc_layers", enc_layers);
        cfg.set_i64("model", "enc_width", enc_width);
        cfg.set_i64("model", "enc_heads", enc_heads);
        cfg.set_i64("model", "den_layers", den_layers);
        cfg.set_i64("model", "den_width", den_width);
        cfg.set_i64("model", "den_heads", den_heads);
        cfg.set_i64("model", "sco_layers", sco_layers);
        cfg.set_i64("model", "sco_width", sco_width);
        cfg.set_i64("model", "sco_heads", sco_heads);
        cfg.set_i64("model", "rotary_local_pairs", rotary_local_pairs);
        cfg.set("model", "time_embedding", time_embedding ? "true" : "false");
    }
};

} // namespace crocodil
