#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

// Minimal edit distance (insertions, deletions, substitutions), two-row DP.
inline int64_t levenshtein(const std::string& a, const std::string& b) {
    const size_t la = a.size(), lb = b.size();
    std::vector<int64_t> prev(lb + 1, 0), cur(lb + 1, 0);
    for (size_t j = 0; j <= lb; ++j) prev[j] = int64_t(j);
    for (size_t i = 1; i <= la; ++i) {
        cur[0] = int64_t(i);
        for (size_t j = 1; j <= lb; ++j) {
            const int64_t sub = prev[j - 1] + (a[i - 1] != b[j - 1] ? 1 : 0);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[lb];
}

// Character error rate: edit distance divided by the reference length.
// Can exceed 1 for hypotheses much longer than the reference.
inline double cer(const std::string& reference, const std::string& hypothesis) {
    CROC_CHECK(!reference.empty(), "cer: empty reference");
    return double(levenshtein(reference, hypothesis)) / double(reference.size());
}

} // namespace crocodil
