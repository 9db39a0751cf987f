#pragma once

#include <cmath>
#include <vector>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

// Two-axis rotary positions. Every row carries a global index in the shared
// frame; prefix rows (the register block and its boundary tokens) also carry
// a local index that resets at the prefix start. The first `local_pairs`
// channel pairs of each head follow the local axis on prefix rows; all other
// pairs, and every pair of a text row, follow the global axis.
struct RopePosition {
    int global = 0;
    int local = 0;
    bool prefix = false;
};

template <class F>
std::vector<F> rope_angles(const std::vector<RopePosition>& pos, int pairs, int local_pairs,
                           double base = 10000.0) {
    CROC_CHECK(local_pairs >= 0 && local_pairs <= pairs, "rope_angles: bad local pair count");
    std::vector<F> angles(pos.size() * size_t(pairs));
    for (size_t r = 0; r < pos.size(); ++r) {
        for (int p = 0; p < pairs; ++p) {
            const double freq = std::pow(base, -double(p) / double(pairs));
            const bool use_local = pos[r].prefix && p < local_pairs;
            const int idx = use_local ? pos[r].local : pos[r].global;
            angles[r * size_t(pairs) + size_t(p)] = F(double(idx) * freq);
        }
    }
    return angles;
}

// Positions for a [prefix_len | text_len] stream repeated per sample.
inline std::vector<RopePosition> stream_positions(int batch, int prefix_len, int text_len) {
    std::vector<RopePosition> pos;
    pos.reserve(size_t(batch) * (size_t(prefix_len) + size_t(text_len)));
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < prefix_len; ++i) pos.push_back({i, i, true});
        for (int i = 0; i < text_len; ++i) pos.push_back({prefix_len + i, 0, false});
    }
    return pos;
}

} // namespace crocodil
