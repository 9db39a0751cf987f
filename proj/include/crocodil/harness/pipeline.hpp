#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "crocodil/eval/metrics.hpp"
#include "crocodil/eval/prdc.hpp"
#include "crocodil/harness/checkpoint.hpp"
#include "crocodil/harness/log.hpp"
#include "crocodil/oracles/enumeration.hpp"
#include "crocodil/sampling/generate.hpp"
#include "crocodil/training/acd.hpp"
#include "crocodil/training/latent.hpp"
#include "crocodil/training/scorer_train.hpp"

namespace crocodil {

namespace fs = std::filesystem;

// Worker cap for batch-parallel stages; the reference path is sequential.
inline int max_workers() {
    if (const char* env = std::getenv("CROCODIL_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// The effective merged configuration is written next to every output.
inline void write_effective_config(const Config& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir / "config.cfg");
    out << cfg.to_text();
}

// [masking] schedule = linear (default) or a custom knot table
// "0:1.0, 0.5:0.9, 1:0.0" for ablations.
inline MaskSchedule schedule_from_config(const Config& cfg) {
    const std::string kind = cfg.get_str("masking", "schedule", "linear");
    if (kind == "linear") return MaskSchedule::linear();
    CROC_CHECK(kind == "table", "masking: unknown schedule kind '" + kind + "'");
    std::vector<std::pair<double, double>> knots;
    for (const auto& item : cfg.get_str_list("masking", "knots")) {
        const auto colon = item.find(':');
        CROC_CHECK(colon != std::string::npos, "masking: knots must be t:alpha pairs");
        knots.push_back({std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
    }
    return MaskSchedule::table(std::move(knots));
}

// ----------------------------------------------------------------- corpus

struct CorpusArtifacts {
    GrammarSpec grammar;
    Vocab vocab;
    std::vector<Sequence> train, heldout;
    uint64_t corpus_hash = 0;
};

// Generate train + heldout splits from the [grammar] section. The heldout
// split feeds the scorer and evaluation only.
inline CorpusArtifacts make_corpus(const Config& cfg) {
    CorpusArtifacts art;
    art.grammar = grammar_from_config(cfg);
    art.vocab = make_vocab(art.grammar);
    const int count = int(cfg.get_i64("corpus", "count", 4096));
    const int held = int(cfg.get_i64("corpus", "heldout", std::max(256, count / 4)));
    const uint64_t seed = uint64_t(cfg.get_i64("corpus", "seed", 0));
    auto all = generate_corpus(art.grammar, art.vocab, count + held, RngStream(seed, streams::corpus));
    art.train.assign(all.begin(), all.begin() + count);
    art.heldout.assign(all.begin() + count, all.end());
    art.corpus_hash = cfg.hash();
    return art;
}

inline void cmd_corpus(const Config& cfg, const fs::path& out_dir) {
    auto art = make_corpus(cfg);
    write_effective_config(cfg, out_dir);
    write_corpus((out_dir / "train.txt").string(), art.train, art.vocab);
    write_corpus((out_dir / "heldout.txt").string(), art.heldout, art.vocab);
    json meta{{"config_hash", cfg.hash()},
              {"seed", cfg.get_i64("corpus", "seed", 0)},
              {"train", art.train.size()},
              {"heldout", art.heldout.size()}};
    std::ofstream(out_dir / "meta.json") << meta.dump(2) << "\n";
}

// ------------------------------------------------------------ checkpoints

struct AcdStack {
    Config cfg;
    ModelConfig mcfg;
    GrammarSpec grammar;
    Vocab vocab;
    std::unique_ptr<Encoder<float>> enc;
    std::unique_ptr<Demasker<float>> dem;
    double sigma = 0;
    uint64_t corpus_hash = 0;
};

inline void save_acd(const AcdStack& stack, AcdTrainer<float>& tr, const fs::path& path) {
    Checkpoint c;
    c.config_text = stack.cfg.to_text();
    c.parent_hash = stack.corpus_hash;
    c.rng_seed = tr.rng().seed();
    c.rng_stream = tr.rng().stream_id();
    c.rng_counter = tr.rng().counter();
    c.step_count = tr.step_index();
    c.extras["sigma"] = tr.sigma();
    c.extras_u64["corpus_hash"] = stack.corpus_hash;
    pack_params(c, stack.enc->registry());
    pack_params(c, stack.dem->registry());
    pack_adam(c, "opt", tr.opt_state(), tr.params());
    c.save(path.string());
}

inline AcdStack build_acd_stack(const Config& cfg) {
    AcdStack s;
    s.cfg = cfg;
    s.mcfg = ModelConfig::from_config(cfg);
    s.grammar = grammar_from_config(cfg);
    s.vocab = make_vocab(s.grammar);
    const uint64_t init_seed = uint64_t(cfg.get_i64("train", "seed", 0));
    RngStream init(init_seed, 100);
    s.enc = std::make_unique<Encoder<float>>(s.mcfg, s.vocab, init);
    s.dem = std::make_unique<Demasker<float>>(s.mcfg, s.vocab, init);
    return s;
}

inline AcdStack load_acd(const fs::path& path) {
    Checkpoint c = Checkpoint::load(path.string());
    AcdStack s = build_acd_stack(Config::parse(c.config_text));
    unpack_params(c, s.enc->registry());
    unpack_params(c, s.dem->registry());
    s.sigma = c.extras.count("sigma") ? c.extras.at("sigma") : 0.0;
    s.corpus_hash = c.extras_u64.count("corpus_hash") ? c.extras_u64.at("corpus_hash") : 0;
    return s;
}

// [train] steps is the total budget; resuming from a checkpoint runs only
// the remainder, continuing the saved RNG stream, so an interrupted run and
// an uninterrupted one land on bit-identical parameters.
inline void cmd_train_acd(const Config& cfg_in, const std::vector<Sequence>& corpus,
                          uint64_t corpus_hash, const fs::path& out_dir,
                          const std::string& resume_path = "") {
    Config cfg = cfg_in;
    std::unique_ptr<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = std::make_unique<Checkpoint>(Checkpoint::load(resume_path));
        Config saved = Config::parse(resume->config_text);
        saved.set_i64("train", "steps", cfg.get_i64("train", "steps", 0));
        CROC_CHECK(saved.hash() == cfg.hash(),
                   "train-acd: resume checkpoint was produced by a different config");
    }
    auto stack = build_acd_stack(cfg);
    stack.corpus_hash = corpus_hash;
    write_effective_config(cfg, out_dir);
    auto tc = TrainConfig::from_config(cfg);
    AcdTrainer<float> tr(*stack.enc, *stack.dem, stack.vocab, schedule_from_config(cfg), tc);
    if (resume) {
        unpack_params(*resume, stack.enc->registry());
        unpack_params(*resume, stack.dem->registry());
        unpack_adam(*resume, "opt", tr.opt_state(), tr.params());
        tr.restore(resume->step_count, resume->extras.at("sigma"),
                   RngStream(resume->rng_seed, resume->rng_stream, resume->rng_counter));
        stack.corpus_hash = resume->extras_u64.at("corpus_hash");
    }
    JsonlLogger log((out_dir / "log.jsonl").string());
    const int64_t remaining = std::max<int64_t>(0, tc.steps - tr.step_index());
    for (int64_t s = 0; s < remaining; ++s) {
        double loss;
        try {
            loss = tr.step(corpus);
        } catch (const AdamAbort& e) {
            log.log({{"step", tr.step_index()}, {"event", "step_aborted"}, {"what", e.what()}});
            continue;
        }
        if (tr.step_index() % 25 == 0 || tr.step_index() == tc.steps)
            log.log({{"step", tr.step_index()}, {"loss", loss}, {"lr", tc.lr},
                     {"sigma", tr.sigma()}, {"wallclock", JsonlLogger::wallclock()}});
    }
    stack.sigma = tr.sigma();
    save_acd(stack, tr, out_dir / "acd.ckpt");
}

struct DenoiserStack {
    Config cfg;
    ModelConfig mcfg;
    std::unique_ptr<Denoiser<float>> den;
    LatentSchedule schedule;
    uint64_t parent_hash = 0;
    uint64_t corpus_hash = 0;
};

inline DenoiserStack build_denoiser_stack(const Config& cfg, bool conditional) {
    DenoiserStack s;
    s.cfg = cfg;
    s.mcfg = ModelConfig::from_config(cfg);
    auto tc = TrainConfig::from_config(cfg);
    s.schedule = LatentSchedule::geometric(s.mcfg.K, tc.max_block_offset, tc.block_offsets);
    RngStream init(uint64_t(cfg.get_i64("train", "seed", 0)), conditional ? 102 : 101);
    s.den = std::make_unique<Denoiser<float>>(s.mcfg, conditional, init);
    return s;
}

template <class Trainer>
void save_denoiser(const DenoiserStack& stack, Trainer& tr, const fs::path& path) {
    Checkpoint c;
    c.config_text = stack.cfg.to_text();
    c.parent_hash = stack.parent_hash;
    c.rng_seed = tr.rng().seed();
    c.rng_stream = tr.rng().stream_id();
    c.rng_counter = tr.rng().counter();
    c.step_count = tr.step_index();
    c.extras_u64["corpus_hash"] = stack.corpus_hash;
    pack_params(c, stack.den->registry());
    pack_adam(c, "opt", tr.opt_state(), stack.den->registry().items());
    c.save(path.string());
}

inline DenoiserStack load_denoiser(const fs::path& path, bool conditional) {
    Checkpoint c = Checkpoint::load(path.string());
    DenoiserStack s = build_denoiser_stack(Config::parse(c.config_text), conditional);
    unpack_params(c, s.den->registry());
    s.parent_hash = c.parent_hash;
    s.corpus_hash = c.extras_u64.count("corpus_hash") ? c.extras_u64.at("corpus_hash") : 0;
    return s;
}

inline void cmd_train_prior(const Config& cfg, const AcdStack& acd,
                            const std::vector<Sequence>& corpus, const fs::path& out_dir) {
    auto stack = build_denoiser_stack(cfg, false);
    stack.parent_hash = Config::fnv1a(acd.cfg.to_text());
    stack.corpus_hash = acd.corpus_hash;
    write_effective_config(cfg, out_dir);
    auto banks = encode_bank_dataset(*acd.enc, corpus, acd.vocab);
    PriorTrainer<float> tr(*stack.den, stack.schedule, TrainConfig::from_config(cfg));
    JsonlLogger log((out_dir / "log.jsonl").string());
    tr.run(banks, [&](int64_t step, double loss) {
        if (step % 50 == 0) log.log({{"step", step}, {"loss", loss}});
    });
    save_denoiser(stack, tr, out_dir / "prior.ckpt");
}

inline void cmd_train_cond(const Config& cfg, const AcdStack& acd,
                           const std::vector<Sequence>& corpus, const fs::path& out_dir) {
    auto stack = build_denoiser_stack(cfg, true);
    stack.parent_hash = Config::fnv1a(acd.cfg.to_text());
    stack.corpus_hash = acd.corpus_hash;
    write_effective_config(cfg, out_dir);
    auto banks = encode_bank_dataset(*acd.enc, corpus, acd.vocab);
    CondTrainer<float> tr(*stack.den, *acd.enc, acd.vocab, stack.schedule,
                          TrainConfig::from_config(cfg));
    JsonlLogger log((out_dir / "log.jsonl").string());
    tr.run(corpus, banks, [&](int64_t step, double loss) {
        if (step % 50 == 0) log.log({{"step", step}, {"loss", loss}});
    });
    save_denoiser(stack, tr, out_dir / "cond.ckpt");
}

struct ScorerStack {
    Config cfg;
    ModelConfig mcfg;
    GrammarSpec grammar;
    Vocab vocab;
    std::unique_ptr<Scorer<float>> sco;
    uint64_t corpus_hash = 0;
};

inline ScorerStack build_scorer_stack(const Config& cfg) {
    ScorerStack s;
    s.cfg = cfg;
    s.mcfg = ModelConfig::from_config(cfg);
    s.grammar = grammar_from_config(cfg);
    s.vocab = make_vocab(s.grammar);
    RngStream init(uint64_t(cfg.get_i64("train", "seed", 0)), 103);
    s.sco = std::make_unique<Scorer<float>>(s.mcfg, s.vocab, init);
    return s;
}

inline void cmd_train_scorer(const Config& cfg, const std::vector<Sequence>& heldout,
                             const std::vector<Sequence>& generator_split, uint64_t corpus_hash,
                             const fs::path& out_dir) {
    check_disjoint_splits(heldout, generator_split);
    auto stack = build_scorer_stack(cfg);
    stack.corpus_hash = corpus_hash;
    write_effective_config(cfg, out_dir);
    ScorerTrainer<float> tr(*stack.sco, stack.vocab, TrainConfig::from_config(cfg));
    JsonlLogger log((out_dir / "log.jsonl").string());
    tr.run(heldout, [&](int64_t step, double loss) {
        if (step % 50 == 0) log.log({{"step", step}, {"loss", loss}});
    });
    Checkpoint c;
    c.config_text = cfg.to_text();
    c.extras_u64["corpus_hash"] = corpus_hash;
    c.rng_seed = tr.rng().seed();
    c.rng_stream = tr.rng().stream_id();
    c.rng_counter = tr.rng().counter();
    c.step_count = tr.step_index();
    pack_params(c, stack.sco->registry());
    pack_adam(c, "opt", tr.opt_state(), stack.sco->registry().items());
    c.save((out_dir / "scorer.ckpt").string());
}

inline ScorerStack load_scorer(const fs::path& path) {
    Checkpoint c = Checkpoint::load(path.string());
    ScorerStack s = build_scorer_stack(Config::parse(c.config_text));
    unpack_params(c, s.sco->registry());
    s.corpus_hash = c.extras_u64.count("corpus_hash") ? c.extras_u64.at("corpus_hash") : 0;
    return s;
}

// -------------------------------------------------------------- generation

inline GenConfig gen_from_config(const Config& cfg, int default_len) {
    GenConfig g;
    g.gen_length = int(cfg.get_i64("generate", "gen_length", default_len));
    g.block_size = int(cfg.get_i64("generate", "block_size", g.gen_length));
    g.nfe = int(cfg.get_i64("generate", "nfe", g.gen_length));
    g.registers_k = int(cfg.get_i64("generate", "registers", 0));
    g.refresh = cfg.get_f64_list("generate", "refresh", {0.5});
    g.refresh_every_step = cfg.get_bool("generate", "refresh_every_step", false);
    g.latent_sampler = cfg.get_str("generate", "latent_sampler", "ddim");
    g.latent_steps = int(cfg.get_i64("generate", "latent_steps", 32));
    g.cond_latent_steps = int(cfg.get_i64("generate", "cond_latent_steps", 32));
    g.temperature = cfg.get_f64("generate", "temperature", 1.0);
    g.remask = cfg.get_str("generate", "remask", "random") == "confidence"
                   ? RemaskPolicy::Confidence
                   : RemaskPolicy::Random;
    g.renorm_latent = cfg.get_bool("generate", "renorm_latent", true);
    g.fixed_r_conditioning = cfg.get_bool("generate", "fixed_r_conditioning", false);
    g.seed = uint64_t(cfg.get_i64("generate", "seed", 0));
    g.validate();
    return g;
}

struct GenerationResult {
    std::vector<Sequence> samples;
    NfeReport nfe;
};

inline GenerationResult run_generation(const std::string& mode, GenConfig gen, int count,
                                       const ModelSet<float>& models, const Vocab& v,
                                       const MaskSchedule& sched) {
    GenerationResult res;
    for (int i = 0; i < count; ++i) {
        GenConfig g = gen;
        g.seed = gen.seed + uint64_t(i); // independent generations, distinct streams
        if (mode == "conthendisc")
            res.samples.push_back(con_then_disc(g, models, v, sched, &res.nfe));
        else if (mode == "conwithindisc")
            res.samples.push_back(con_within_disc(g, models, v, sched, &res.nfe));
        else
            throw std::runtime_error("crocodil: unknown generation mode '" + mode + "'");
    }
    return res;
}

inline void write_samples(const fs::path& out_dir, const std::string& name,
                          const std::vector<Sequence>& samples, const Vocab& v, const json& sidecar) {
    fs::create_directories(out_dir);
    write_corpus((out_dir / (name + ".txt")).string(), samples, v);
    std::ofstream(out_dir / (name + ".json")) << sidecar.dump(2) << "\n";
}

inline json nfe_to_json(const NfeReport& nfe) {
    return {{"demasker_calls", nfe.demasker_calls},
            {"denoiser_calls", nfe.denoiser_calls},
            {"conversion_ratio", nfe.conversion_ratio},
            {"demasker_equivalent", nfe.demasker_equivalent()}};
}

// --------------------------------------------------------------- verify

struct VerifyResult {
    bool all_green = true;
    std::vector<std::string> lines;

    void check(const std::string& name, bool ok, const std::string& detail) {
        lines.push_back(std::string(ok ? "PASS " : "FAIL ") + name + ": " + detail);
        all_green &= ok;
    }
};

// The exact-oracle suite: Theorem-style factorization on random instances,
// the coupled-pair independence gap, and factorized-sampler OOD rates.
// Needs no training, so it runs green on a fresh build.
inline VerifyResult run_verify(int instances, uint64_t seed) {
    VerifyResult res;
    auto sched = MaskSchedule::linear();

    RngStream rng(seed, 17);
    double worst = 0;
    for (int i = 0; i < instances; ++i) {
        const int n = 1 + int(rng.next_below(3));
        const int V = 2 + int(rng.next_below(3));
        const int Z = 1 + int(rng.next_below(4));
        auto m = random_ci_model(n, V, Z, rng);
        const double s = rng.uniform(0.05, 0.5), t = rng.uniform(s + 0.1, 0.95);
        worst = std::max(worst, verify_factorization(m, s, t, sched));
    }
    res.check("factorization", worst <= 1e-9,
              "max deviation " + std::to_string(worst) + " over " + std::to_string(instances) +
                  " conditionally independent joints (tolerance 1e-9)");

    const double neg = verify_factorization(correlated_model(2, 3), 0.3, 0.7, sched);
    res.check("factorization-negative-control", neg > 1e-6,
              "correlated joint deviates by " + std::to_string(neg));

    auto joint = catdog_joint();
    GrammarSpec g = catdog_spec();
    Vocab v = make_vocab(g);
    Sequence mm{v.mask(), v.mask()};
    const double gap = independence_gap(joint, mm, v.mask());
    res.check("independence-gap", std::abs(gap - std::log(2.0)) <= 1e-9,
              "fully-masked coupled pair gap = " + std::to_string(gap) + " nats (ln 2 expected)");

    RngStream ood_rng(seed, 18);
    const double ood = factorized_sampler_ood(joint, mm, v.mask(), 10000, ood_rng);
    res.check("factorized-ood", std::abs(ood - 0.5) <= 0.02,
              "parallel-sampling OOD fraction = " + std::to_string(ood) + " (0.5 +- 0.02)");

    auto post = exact_posterior(joint, mm, v.mask());
    res.check("exact-posterior", std::abs(post[0] - 0.5) <= 1e-12 &&
                                     std::abs(post[1] - 0.5) <= 1e-12,
              "fully-masked posterior is the even two-point law");
    return res;
}

} // namespace crocodil
