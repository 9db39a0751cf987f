#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

using Sequence = std::vector<int32_t>;

// Token inventory. The mask token sits at the top id so that model logits
// can cover the dense id range [0, mask_id) — masks are never predicted,
// and corpus generation can never produce one.
class Vocab {
  public:
    static constexpr const char* kBos = "<s>";
    static constexpr const char* kEos = "</s>";
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kMask = "[M]";

    Vocab() = default;
    explicit Vocab(const std::vector<std::string>& content_tokens) {
        tokens_.push_back(kBos);
        tokens_.push_back(kEos);
        tokens_.push_back(kPad);
        for (const auto& t : content_tokens) tokens_.push_back(t);
        tokens_.push_back(kMask);
        for (size_t i = 0; i < tokens_.size(); ++i) {
            CROC_CHECK(!index_.count(tokens_[i]), "vocab: duplicate token '" + tokens_[i] + "'");
            index_[tokens_[i]] = int32_t(i);
        }
    }

    int32_t bos() const { return 0; }
    int32_t eos() const { return 1; }
    int32_t pad() const { return 2; }
    int32_t content_begin() const { return 3; }
    int32_t mask() const { return int32_t(tokens_.size()) - 1; }

    // |V|: every producible token (mask excluded)
    int alphabet_size() const { return int(tokens_.size()) - 1; }
    int content_count() const { return alphabet_size() - 3; }

    const std::string& token(int32_t id) const { return tokens_.at(size_t(id)); }
    int32_t id(const std::string& tok) const {
        auto it = index_.find(tok);
        CROC_CHECK(it != index_.end(), "vocab: unknown token '" + tok + "'");
        return it->second;
    }
    bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

    Sequence tokenize(const std::string& text) const {
        Sequence out;
        size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && text[i] == ' ') ++i;
            size_t j = i;
            while (j < text.size() && text[j] != ' ') ++j;
            if (j > i) out.push_back(id(text.substr(i, j - i)));
            i = j;
        }
        return out;
    }

    // full form, one token per slot, identity under tokenize()
    std::string detokenize(const Sequence& seq) const {
        std::string out;
        for (size_t i = 0; i < seq.size(); ++i) {
            if (i) out += ' ';
            out += token(seq[i]);
        }
        return out;
    }

    // content only: framing and padding stripped, for human-facing metrics
    std::string display(const Sequence& seq) const {
        std::string out;
        for (int32_t id : seq) {
            if (id == bos() || id == pad()) continue;
            if (id == eos()) break;
            if (!out.empty()) out += ' ';
            out += token(id);
        }
        return out;
    }

    bool is_masked(int32_t id) const { return id == mask(); }
    bool has_mask(const Sequence& seq) const {
        for (int32_t id : seq)
            if (id == mask()) return true;
        return false;
    }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int32_t> index_;
};

} // namespace crocodil
