#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "crocodil/corpus/vocab.hpp"

namespace crocodil {

// n-gram distribution over the BOS..EOS span of each sample (padding is
// layout, not language). Optional Laplace smoothing over the union support;
// the default of 0 keeps disjoint supports exactly disjoint.
inline std::map<std::vector<int32_t>, double> ngram_distribution(
    const std::vector<Sequence>& corpus, int order, const Vocab& v, double smoothing = 0.0) {
    CROC_CHECK(order >= 1, "ngram_distribution: order must be >= 1");
    std::map<std::vector<int32_t>, double> counts;
    double total = 0;
    for (const auto& seq : corpus) {
        int end = int(seq.size());
        for (int i = 0; i < int(seq.size()); ++i)
            if (seq[size_t(i)] == v.eos()) {
                end = i + 1;
                break;
            }
        for (int i = 0; i + order <= end; ++i) {
            std::vector<int32_t> gram(seq.begin() + i, seq.begin() + i + order);
            counts[gram] += 1.0;
            total += 1.0;
        }
    }
    CROC_CHECK(total > 0, "ngram_distribution: no n-grams (order longer than samples?)");
    if (smoothing > 0) {
        for (auto& [g, c] : counts) c += smoothing;
        total += smoothing * double(counts.size());
    }
    for (auto& [g, c] : counts) c /= total;
    return counts;
}

// Jensen-Shannon divergence between the two corpora's n-gram distributions,
// in bits; 1 exactly for disjoint supports, 0 for identical distributions.
inline double ngram_divergence(const std::vector<Sequence>& gen, const std::vector<Sequence>& ref,
                               int order, const Vocab& v, double smoothing = 0.0) {
    CROC_CHECK(!gen.empty() && !ref.empty(), "ngram_divergence: empty corpus");
    auto P = ngram_distribution(gen, order, v, smoothing);
    auto Q = ngram_distribution(ref, order, v, smoothing);
    double js = 0;
    auto half_kl = [](const std::map<std::vector<int32_t>, double>& A,
                      const std::map<std::vector<int32_t>, double>& B) {
        double kl = 0;
        for (const auto& [g, p] : A) {
            if (p <= 0) continue;
            auto it = B.find(g);
            const double q = it == B.end() ? 0.0 : it->second;
            const double m = 0.5 * (p + q);
            kl += p * std::log2(p / m);
        }
        return kl;
    };
    js = 0.5 * half_kl(P, Q) + 0.5 * half_kl(Q, P);
    return js;
}

} // namespace crocodil
