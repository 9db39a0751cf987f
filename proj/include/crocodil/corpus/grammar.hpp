#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "crocodil/corpus/vocab.hpp"
#include "crocodil/harness/config.hpp"
#include "crocodil/numerics/rng.hpp"

namespace crocodil {

// Exactly enumerated joint distribution over fixed-length sequences.
struct ExactJoint {
    std::vector<Sequence> support;
    std::vector<double> probs;
    int n = 0;

    void validate() const {
        CROC_CHECK(!support.empty(), "ExactJoint: empty support");
        double sum = 0;
        for (size_t i = 0; i < support.size(); ++i) {
            CROC_CHECK(int(support[i].size()) == n, "ExactJoint: ragged support");
            CROC_CHECK(probs[i] >= 0, "ExactJoint: negative probability");
            sum += probs[i];
        }
        CROC_CHECK(std::abs(sum - 1.0) <= 1e-12, "ExactJoint: probabilities do not sum to 1");
    }
};

// Pairwise agreement constraint between two content positions. `allowed`
// is a row-major C x C table over content indices (0 = forbidden pair).
struct GrammarConstraint {
    int i = 0, j = 0;
    std::vector<uint8_t> allowed;
};

// Weighted unigram productions, a weighted content-length choice, and
// pairwise agreement constraints. Sequences are laid out as
// [BOS, c_1..c_L, EOS, PAD...] when framed, or exactly L = n tokens when not.
struct GrammarSpec {
    std::vector<std::string> content;
    std::vector<double> weights;
    std::vector<std::pair<int, double>> lengths; // (content length, weight)
    std::vector<GrammarConstraint> constraints;
    int n = 16;
    bool frame = true;

    int capacity() const { return frame ? n - 2 : n; }

    void validate() const {
        CROC_CHECK(!content.empty(), "grammar: no content tokens");
        CROC_CHECK(weights.size() == content.size(), "grammar: weight per token required");
        for (double w : weights) CROC_CHECK(w > 0, "grammar: production weights must be positive");
        CROC_CHECK(!lengths.empty(), "grammar: no length choices");
        double lw = 0;
        for (auto [L, w] : lengths) {
            CROC_CHECK(L >= 1 && L <= capacity(), "grammar: content length out of range");
            CROC_CHECK(w > 0, "grammar: length weights must be positive");
            CROC_CHECK(frame || L == n, "grammar: unframed sequences must fill the whole length");
            lw += w;
        }
        const int C = int(content.size());
        for (const auto& c : constraints) {
            CROC_CHECK(c.i >= 0 && c.j >= 0 && c.i < capacity() && c.j < capacity() && c.i != c.j,
                       "grammar: constraint references out-of-range positions");
            CROC_CHECK(c.allowed.size() == size_t(C) * C, "grammar: allowed table size mismatch");
        }
    }
};

namespace detail {

struct ActiveGraph {
    int L = 0, C = 0;
    // merged allowed matrix per undirected edge, oriented (lo, hi)
    std::vector<std::pair<std::pair<int, int>, std::vector<uint8_t>>> edges;
    std::vector<std::vector<int>> adj; // edge indices per node
    bool forest = true;
};

inline ActiveGraph build_active_graph(const GrammarSpec& g, int L) {
    ActiveGraph out;
    out.L = L;
    out.C = int(g.content.size());
    std::map<std::pair<int, int>, std::vector<uint8_t>> merged;
    for (const auto& c : g.constraints) {
        if (c.i >= L || c.j >= L) continue;
        int lo = std::min(c.i, c.j), hi = std::max(c.i, c.j);
        std::vector<uint8_t> table(size_t(out.C) * out.C);
        for (int a = 0; a < out.C; ++a)
            for (int b = 0; b < out.C; ++b)
                table[size_t(a) * out.C + b] =
                    (c.i == lo) ? c.allowed[size_t(a) * out.C + b]
                                : c.allowed[size_t(b) * out.C + a];
        auto it = merged.find({lo, hi});
        if (it == merged.end()) {
            merged[{lo, hi}] = std::move(table);
        } else {
            for (size_t k = 0; k < table.size(); ++k) it->second[k] &= table[k];
        }
    }
    out.adj.resize(size_t(L));
    std::vector<int> parent(size_t(L), 0);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[size_t(x)] != x) x = parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
        return x;
    };
    for (auto& [pos, table] : merged) {
        int ei = int(out.edges.size());
        out.edges.push_back({pos, std::move(table)});
        out.adj[size_t(pos.first)].push_back(ei);
        out.adj[size_t(pos.second)].push_back(ei);
        int ra = find(pos.first), rb = find(pos.second);
        if (ra == rb)
            out.forest = false;
        else
            parent[size_t(ra)] = rb;
    }
    return out;
}

// Exact sampling on a constraint forest via bottom-up sum-product messages
// followed by a top-down conditional draw.
inline std::vector<int> sample_forest(const ActiveGraph& gr, const std::vector<double>& w,
                                      RngStream& rng) {
    const int L = gr.L, C = gr.C;
    std::vector<int> result(size_t(L), -1);
    std::vector<int> order, par_node(size_t(L), -1), par_edge(size_t(L), -1);
    std::vector<uint8_t> visited(size_t(L), 0);
    std::vector<std::vector<double>> msg(size_t(L), std::vector<double>{}); // node -> parent

    for (int root = 0; root < L; ++root) {
        if (visited[size_t(root)]) continue;
        // BFS tree
        std::vector<int> comp{root};
        visited[size_t(root)] = 1;
        for (size_t qi = 0; qi < comp.size(); ++qi) {
            int u = comp[qi];
            for (int ei : gr.adj[size_t(u)]) {
                int v = gr.edges[size_t(ei)].first.first == u ? gr.edges[size_t(ei)].first.second
                                                              : gr.edges[size_t(ei)].first.first;
                if (visited[size_t(v)]) continue;
                visited[size_t(v)] = 1;
                par_node[size_t(v)] = u;
                par_edge[size_t(v)] = ei;
                comp.push_back(v);
            }
        }
        // messages, leaves first
        for (auto it = comp.rbegin(); it != comp.rend(); ++it) {
            int u = *it;
            std::vector<double> belief(w.begin(), w.end());
            for (int v : comp)
                if (par_node[size_t(v)] == u)
                    for (int c = 0; c < C; ++c) belief[size_t(c)] *= msg[size_t(v)][size_t(c)];
            if (u == root) {
                msg[size_t(u)] = std::move(belief);
                continue;
            }
            const auto& edge = gr.edges[size_t(par_edge[size_t(u)])];
            const bool u_is_lo = edge.first.first == u;
            std::vector<double> m(size_t(C), 0.0);
            for (int cp = 0; cp < C; ++cp)
                for (int cu = 0; cu < C; ++cu) {
                    const uint8_t ok = u_is_lo ? edge.second[size_t(cu) * C + cp]
                                               : edge.second[size_t(cp) * C + cu];
                    if (ok) m[size_t(cp)] += belief[size_t(cu)];
                }
            msg[size_t(u)] = std::move(m);
        }
        // top-down draw
        for (int u : comp) {
            std::vector<double> p(w.begin(), w.end());
            for (int v : comp)
                if (par_node[size_t(v)] == u)
                    for (int c = 0; c < C; ++c) p[size_t(c)] *= msg[size_t(v)][size_t(c)];
            if (par_node[size_t(u)] >= 0) {
                const auto& edge = gr.edges[size_t(par_edge[size_t(u)])];
                const bool u_is_lo = edge.first.first == u;
                const int cp = result[size_t(par_node[size_t(u)])];
                for (int c = 0; c < C; ++c) {
                    const uint8_t ok = u_is_lo ? edge.second[size_t(c) * C + cp]
                                               : edge.second[size_t(cp) * C + c];
                    if (!ok) p[size_t(c)] = 0.0;
                }
            }
            double z = std::accumulate(p.begin(), p.end(), 0.0);
            CROC_CHECK(z > 0, "grammar: unsatisfiable constraint set");
            double r = rng.uniform() * z, acc = 0;
            int pick = C - 1;
            for (int c = 0; c < C; ++c) {
                acc += p[size_t(c)];
                if (r < acc) {
                    pick = c;
                    break;
                }
            }
            result[size_t(u)] = pick;
        }
    }
    return result;
}

} // namespace detail

inline Sequence assemble_sequence(const GrammarSpec& g, const Vocab& v,
                                  const std::vector<int>& content_ids) {
    Sequence seq;
    seq.reserve(size_t(g.n));
    if (g.frame) seq.push_back(v.bos());
    for (int c : content_ids) seq.push_back(v.content_begin() + c);
    if (g.frame) {
        seq.push_back(v.eos());
        while (int(seq.size()) < g.n) seq.push_back(v.pad());
    }
    CROC_CHECK(int(seq.size()) == g.n, "grammar: assembled sequence has wrong length");
    return seq;
}

inline Vocab make_vocab(const GrammarSpec& g) { return Vocab(g.content); }

// One i.i.d. sample. Exact when the active constraint graph is a forest
// (the shipped grammars are chains); otherwise rejection with a cap.
inline Sequence sample_sequence(const GrammarSpec& g, const Vocab& v, RngStream& rng) {
    double lw = 0;
    for (auto [L, w] : g.lengths) lw += w;
    double r = rng.uniform() * lw, acc = 0;
    int L = g.lengths.back().first;
    for (auto [len, w] : g.lengths) {
        acc += w;
        if (r < acc) {
            L = len;
            break;
        }
    }
    auto gr = detail::build_active_graph(g, L);
    if (gr.forest) return assemble_sequence(g, v, detail::sample_forest(gr, g.weights, rng));

    // cyclic constraint graph: rejection against the unconstrained product
    double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
    for (int attempt = 0; attempt < 100000; ++attempt) {
        std::vector<int> ids(size_t(L), 0);
        for (int i = 0; i < L; ++i) {
            double rr = rng.uniform() * wsum, a2 = 0;
            ids[size_t(i)] = int(g.weights.size()) - 1;
            for (size_t c = 0; c < g.weights.size(); ++c) {
                a2 += g.weights[c];
                if (rr < a2) {
                    ids[size_t(i)] = int(c);
                    break;
                }
            }
        }
        bool ok = true;
        for (const auto& e : gr.edges)
            if (!e.second[size_t(ids[size_t(e.first.first)]) * gr.C +
                          ids[size_t(e.first.second)]]) {
                ok = false;
                break;
            }
        if (ok) return assemble_sequence(g, v, ids);
    }
    throw std::runtime_error("crocodil: grammar: unsatisfiable constraint set (rejection cap)");
}

// i.i.d. dataset; every sample draws from its own substream, so the parallel
// path produces exactly the sequential result.
inline std::vector<Sequence> generate_corpus(const GrammarSpec& g, const Vocab& v, int count,
                                             const RngStream& rng, int workers = 1) {
    CROC_CHECK(count > 0, "generate_corpus: count must be positive");
    g.validate();
    std::vector<Sequence> out(size_t(count), Sequence{});
    auto fill = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            RngStream s = rng.substream(uint64_t(i));
            out[size_t(i)] = sample_sequence(g, v, s);
        }
    };
    if (workers <= 1 || count < 2 * workers) {
        fill(0, count);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (count + workers - 1) / workers;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back(fill, w * chunk, std::min(count, (w + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    return out;
}

// Full enumeration of the grammar distribution. Refuses above the cap
// rather than approximating.
inline ExactJoint enumerate_grammar(const GrammarSpec& g, const Vocab& v,
                                    size_t cap = 1000000) {
    g.validate();
    const int C = int(g.content.size());
    size_t total = 0;
    for (auto [L, w] : g.lengths) {
        double configs = std::pow(double(C), double(L));
        CROC_CHECK(configs <= 1e18, "enumerate_grammar: configuration count overflow");
        total += size_t(configs);
        CROC_CHECK(total <= cap, "enumerate_grammar: support too large to enumerate");
    }
    double lw = 0;
    for (auto [L, w] : g.lengths) lw += w;

    ExactJoint joint;
    joint.n = g.n;
    for (auto [L, wlen] : g.lengths) {
        auto gr = detail::build_active_graph(g, L);
        std::vector<int> ids(size_t(L), 0);
        std::vector<double> raw;
        std::vector<std::vector<int>> configs;
        while (true) {
            double w = 1.0;
            for (int i = 0; i < L; ++i) w *= g.weights[size_t(ids[size_t(i)])];
            for (const auto& e : gr.edges)
                if (!e.second[size_t(ids[size_t(e.first.first)]) * C + ids[size_t(e.first.second)]])
                    w = 0.0;
            if (w > 0) {
                raw.push_back(w);
                configs.push_back(ids);
            }
            int pos = L - 1;
            while (pos >= 0 && ++ids[size_t(pos)] == C) ids[size_t(pos--)] = 0;
            if (pos < 0) break;
        }
        CROC_CHECK(!raw.empty(), "enumerate_grammar: unsatisfiable constraint set");
        double z = std::accumulate(raw.begin(), raw.end(), 0.0);
        for (size_t i = 0; i < raw.size(); ++i) {
            joint.support.push_back(assemble_sequence(g, v, configs[i]));
            joint.probs.push_back((wlen / lw) * raw[i] / z);
        }
    }
    joint.validate();
    return joint;
}

// Per-position marginal token probabilities (over the full id range).
inline std::vector<std::vector<double>> position_marginals(const ExactJoint& joint,
                                                           int id_range) {
    std::vector<std::vector<double>> m(size_t(joint.n), std::vector<double>(size_t(id_range), 0.0));
    for (size_t s = 0; s < joint.support.size(); ++s)
        for (int i = 0; i < joint.n; ++i) m[size_t(i)][size_t(joint.support[s][size_t(i)])] +=
            joint.probs[s];
    return m;
}

// --------------------------------------------------------------- catalogue

// The two-sequence distribution used everywhere the exact oracles need a
// minimal coupled pair: (cat meows) and (dog barks), equally likely.
inline GrammarSpec catdog_spec() {
    GrammarSpec g;
    g.content = {"cat", "dog", "meows", "barks"};
    g.weights = {1.0, 1.0, 1.0, 1.0};
    g.n = 2;
    g.frame = false;
    g.lengths = {{2, 1.0}};
    GrammarConstraint c;
    c.i = 0;
    c.j = 1;
    c.allowed.assign(16, 0);
    c.allowed[0 * 4 + 2] = 1; // cat meows
    c.allowed[1 * 4 + 3] = 1; // dog barks
    g.constraints.push_back(c);
    return g;
}

inline ExactJoint catdog_joint() {
    GrammarSpec g = catdog_spec();
    Vocab v = make_vocab(g);
    return enumerate_grammar(g, v);
}

// Theme-coupled toy language: a hidden theme picks a token subset, adjacent
// content tokens must share it, so every position depends on every other
// at long range. Token names are two characters for character-level metrics.
inline GrammarSpec themed_grammar(int themes = 8, int tokens_per_theme = 8, int seq_len = 16,
                                  int min_content = 10, int max_content = 14) {
    GrammarSpec g;
    g.n = seq_len;
    g.frame = true;
    CROC_CHECK(max_content <= g.capacity(), "themed_grammar: content does not fit");
    for (int t = 0; t < themes; ++t)
        for (int k = 0; k < tokens_per_theme; ++k) {
            std::string name;
            name += char('a' + t % 26);
            name += char(k < 10 ? '0' + k : 'a' + (k - 10));
            g.content.push_back(name);
            g.weights.push_back(1.0 / (1.0 + 0.35 * k)); // skewed within a theme
        }
    for (int L = min_content; L <= max_content; ++L) g.lengths.push_back({L, 1.0});
    const int C = themes * tokens_per_theme;
    std::vector<uint8_t> same_theme(size_t(C) * C, 0);
    for (int a = 0; a < C; ++a)
        for (int b = 0; b < C; ++b)
            if (a / tokens_per_theme == b / tokens_per_theme) same_theme[size_t(a) * C + b] = 1;
    for (int i = 0; i + 1 < max_content; ++i) {
        GrammarConstraint c;
        c.i = i;
        c.j = i + 1;
        c.allowed = same_theme;
        g.constraints.push_back(c);
    }
    return g;
}

inline GrammarSpec grammar_from_config(const Config& cfg) {
    const std::string kind = cfg.get_str("grammar", "kind", "themed");
    if (kind == "catdog") {
        GrammarSpec g = catdog_spec();
        g.n = int(cfg.get_i64("grammar", "seq_len", g.n));
        return g;
    }
    CROC_CHECK(kind == "themed", "grammar: unknown kind '" + kind + "'");
    int seq_len = int(cfg.get_i64("grammar", "seq_len", 16));
    return themed_grammar(int(cfg.get_i64("grammar", "themes", 8)),
                          int(cfg.get_i64("grammar", "tokens_per_theme", 8)), seq_len,
                          int(cfg.get_i64("grammar", "min_content", std::max(1, seq_len - 6))),
                          int(cfg.get_i64("grammar", "max_content", seq_len - 2)));
}

// ------------------------------------------------------------- corpus files

inline void write_corpus(const std::string& path, const std::vector<Sequence>& data,
                         const Vocab& v) {
    std::ofstream out(path);
    CROC_CHECK(out.good(), "write_corpus: cannot open '" + path + "'");
    for (const auto& seq : data) out << v.detokenize(seq) << "\n";
}

inline std::vector<Sequence> read_corpus(const std::string& path, const Vocab& v) {
    std::ifstream in(path);
    CROC_CHECK(in.good(), "read_corpus: cannot open '" + path + "'");
    std::vector<Sequence> data;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        data.push_back(v.tokenize(line));
    }
    return data;
}

} // namespace crocodil
