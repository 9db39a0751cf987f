// Command-line front end for the whole pipeline: corpus generation, the four
// trainings, autoencoding, the two hybrid samplers, metrics, the exact-oracle
// verification suite, and experiment sweeps. Flags override config-file
// values; the effective merged config is written next to every output.

#include <CLI11.hpp>

#include "crocodil/harness/experiment.hpp"
#include "crocodil/harness/pipeline.hpp"

using namespace crocodil;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    int64_t seed = -1;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* c = cmd->add_option("--config", args.config_path, "sectioned key-value config file");
    if (config_required) c->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_flag("--deterministic", args.deterministic,
                  "single-threaded reference path, bitwise reproducible");
}

Config load_config(const CommonArgs& args) {
    Config cfg = args.config_path.empty() ? Config() : Config::load(args.config_path);
    if (args.deterministic) cfg.set("run", "deterministic", "true");
    return cfg;
}

int effective_workers(const CommonArgs& args) {
    return args.deterministic ? 1 : max_workers();
}

std::vector<Sequence> load_corpus_file(const std::string& path, const Vocab& v) {
    auto data = read_corpus(path, v);
    CROC_CHECK(!data.empty(), "empty corpus file: " + path);
    return data;
}

uint64_t corpus_hash_near(const std::string& corpus_path) {
    // the corpus directory carries its config; hash travels with artifacts
    const fs::path meta = fs::path(corpus_path).parent_path() / "meta.json";
    if (!fs::exists(meta)) return 0;
    std::ifstream in(meta);
    json j;
    in >> j;
    return j.value("config_hash", uint64_t(0));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"crocodil: continuously guided masked diffusion on a toy language"};
    app.require_subcommand(1);

    try {
        // ------------------------------------------------------------ corpus
        auto* corpus_cmd = app.add_subcommand("corpus", "generate corpus + splits");
        CommonArgs corpus_args;
        add_common(corpus_cmd, corpus_args);
        corpus_cmd->callback([&] {
            Config cfg = load_config(corpus_args);
            if (corpus_args.seed >= 0) cfg.set_i64("corpus", "seed", corpus_args.seed);
            cmd_corpus(cfg, corpus_args.out_dir);
            std::printf("corpus written to %s\n", corpus_args.out_dir.c_str());
        });

        // --------------------------------------------------------- train-acd
        auto* acd_cmd = app.add_subcommand("train-acd", "joint encoder-demasker training");
        CommonArgs acd_args;
        std::string acd_corpus, acd_resume;
        int64_t acd_steps = -1;
        add_common(acd_cmd, acd_args);
        acd_cmd->add_option("--corpus", acd_corpus, "training corpus file")->required();
        acd_cmd->add_option("--steps", acd_steps, "total step budget override");
        acd_cmd->add_option("--resume", acd_resume, "checkpoint to continue from");
        acd_cmd->callback([&] {
            Config cfg = load_config(acd_args);
            if (acd_args.seed >= 0) cfg.set_i64("train", "seed", acd_args.seed);
            if (acd_steps >= 0) cfg.set_i64("train", "steps", acd_steps);
            auto stack = build_acd_stack(cfg);
            auto corpus = load_corpus_file(acd_corpus, stack.vocab);
            cmd_train_acd(cfg, corpus, corpus_hash_near(acd_corpus), acd_args.out_dir, acd_resume);
            std::printf("checkpoint written to %s/acd.ckpt\n", acd_args.out_dir.c_str());
        });

        // ------------------------------------------------- train-prior/cond
        for (const char* name : {"train-prior", "train-cond"}) {
            auto* cmd = app.add_subcommand(
                name, std::string(name) == "train-prior" ? "unconditional latent prior training"
                                                         : "conditional latent model training");
            auto args = std::make_shared<CommonArgs>();
            auto ckpt = std::make_shared<std::string>();
            auto corpus_path = std::make_shared<std::string>();
            auto steps = std::make_shared<int64_t>(-1);
            add_common(cmd, *args, false);
            cmd->add_option("--acd", *ckpt, "encoder-demasker checkpoint")->required();
            cmd->add_option("--corpus", *corpus_path, "training corpus file")->required();
            cmd->add_option("--steps", *steps, "step-count override");
            const bool conditional = std::string(name) == "train-cond";
            cmd->callback([args, ckpt, corpus_path, steps, conditional] {
                auto acd = load_acd(*ckpt);
                Config cfg = args->config_path.empty() ? acd.cfg : Config::load(args->config_path);
                if (args->seed >= 0) cfg.set_i64("train", "seed", args->seed);
                if (*steps >= 0) cfg.set_i64("train", "steps", *steps);
                auto corpus = load_corpus_file(*corpus_path, acd.vocab);
                if (conditional)
                    cmd_train_cond(cfg, acd, corpus, args->out_dir);
                else
                    cmd_train_prior(cfg, acd, corpus, args->out_dir);
                std::printf("checkpoint written to %s\n", args->out_dir.c_str());
            });
        }

        // ------------------------------------------------------ train-scorer
        auto* sco_cmd = app.add_subcommand("train-scorer", "held-out autoregressive scorer");
        CommonArgs sco_args;
        std::string sco_corpus, sco_generator_corpus;
        add_common(sco_cmd, sco_args);
        sco_cmd->add_option("--corpus", sco_corpus, "held-out corpus file")->required();
        sco_cmd->add_option("--generator-corpus", sco_generator_corpus,
                            "generator training corpus, checked for overlap");
        sco_cmd->callback([&] {
            Config cfg = load_config(sco_args);
            if (sco_args.seed >= 0) cfg.set_i64("train", "seed", sco_args.seed);
            auto stack = build_scorer_stack(cfg);
            auto heldout = load_corpus_file(sco_corpus, stack.vocab);
            std::vector<Sequence> gen_split;
            if (!sco_generator_corpus.empty())
                gen_split = load_corpus_file(sco_generator_corpus, stack.vocab);
            cmd_train_scorer(cfg, heldout, gen_split, corpus_hash_near(sco_corpus),
                             sco_args.out_dir);
            std::printf("checkpoint written to %s/scorer.ckpt\n", sco_args.out_dir.c_str());
        });

        // -------------------------------------------------------- autoencode
        auto* auto_cmd = app.add_subcommand("autoencode", "encode-decode a file of sequences");
        CommonArgs auto_args;
        std::string auto_ckpt, auto_in;
        int64_t auto_nfe = -1, auto_block = -1, auto_regs = -1;
        std::string auto_remask;
        add_common(auto_cmd, auto_args, false);
        auto_cmd->add_option("--acd", auto_ckpt, "encoder-demasker checkpoint")->required();
        auto_cmd->add_option("--in", auto_in, "input sequences, one per line")->required();
        auto_cmd->add_option("--nfe", auto_nfe, "demasker call budget");
        auto_cmd->add_option("--block-size", auto_block, "demasking block size");
        auto_cmd->add_option("--registers", auto_regs, "visible register count");
        auto_cmd->add_option("--remask", auto_remask, "random|confidence");
        auto_cmd->callback([&] {
            auto acd = load_acd(auto_ckpt);
            Config cfg = auto_args.config_path.empty() ? acd.cfg
                                                       : Config::load(auto_args.config_path);
            if (auto_nfe >= 0) cfg.set_i64("generate", "nfe", auto_nfe);
            if (auto_block >= 0) cfg.set_i64("generate", "block_size", auto_block);
            if (auto_regs >= 0) cfg.set_i64("generate", "registers", auto_regs);
            if (!auto_remask.empty()) cfg.set("generate", "remask", auto_remask);
            if (auto_args.seed >= 0) cfg.set_i64("generate", "seed", auto_args.seed);

            auto inputs = load_corpus_file(auto_in, acd.vocab);
            GenConfig gen = gen_from_config(cfg, acd.mcfg.seq_len);
            ModelSet<float> models;
            models.enc = acd.enc.get();
            models.dem = acd.dem.get();

            const fs::path out_dir = auto_args.out_dir;
            write_effective_config(cfg, out_dir);
            NfeReport nfe;
            std::vector<Sequence> recon;
            std::ofstream table(out_dir / "cer.csv");
            table << "Index,CER\n";
            double total = 0;
            const MaskSchedule sched = schedule_from_config(cfg);
            for (size_t i = 0; i < inputs.size(); ++i) {
                GenConfig g = gen;
                g.seed = gen.seed + i;
                auto xhat = autoencode(inputs[i], g, models, acd.vocab, sched, &nfe);
                const double c = cer(acd.vocab.display(inputs[i]), acd.vocab.display(xhat));
                table << i << "," << c << "\n";
                total += c;
                recon.push_back(std::move(xhat));
            }
            write_samples(out_dir, "recon", recon, acd.vocab,
                          {{"config_hash", cfg.hash()},
                           {"corpus_hash", acd.corpus_hash},
                           {"seed", gen.seed},
                           {"mean_cer", total / double(inputs.size())},
                           {"nfe", nfe_to_json(nfe)}});
            std::printf("mean CER %.4f over %zu inputs -> %s\n", total / double(inputs.size()),
                        inputs.size(), auto_args.out_dir.c_str());
        });

        // ---------------------------------------------------------- generate
        auto* gen_cmd = app.add_subcommand("generate", "ConThenDisc / ConWithinDisc synthesis");
        CommonArgs gen_args;
        std::string gen_mode = "conthendisc", gen_acd, gen_prior, gen_cond, gen_remask;
        int64_t gen_count = 16, gen_nfe = -1, gen_block = -1, gen_regs = -1;
        std::vector<double> gen_refresh;
        double gen_temp = -1;
        add_common(gen_cmd, gen_args, false);
        gen_cmd->add_option("--mode", gen_mode, "conthendisc|conwithindisc");
        gen_cmd->add_option("--acd", gen_acd, "encoder-demasker checkpoint")->required();
        gen_cmd->add_option("--prior", gen_prior, "unconditional latent checkpoint")->required();
        gen_cmd->add_option("--cond", gen_cond, "conditional latent checkpoint");
        gen_cmd->add_option("--count", gen_count, "number of samples");
        gen_cmd->add_option("--nfe", gen_nfe, "demasker call budget");
        gen_cmd->add_option("--block-size", gen_block, "demasking block size");
        gen_cmd->add_option("--registers", gen_regs, "visible register count");
        gen_cmd->add_option("--refresh", gen_refresh, "refresh fractions");
        gen_cmd->add_option("--remask", gen_remask, "random|confidence");
        gen_cmd->add_option("--temperature", gen_temp, "sampling temperature");
        gen_cmd->callback([&] {
            auto acd = load_acd(gen_acd);
            auto prior = load_denoiser(gen_prior, false);
            CROC_CHECK(prior.parent_hash == Config::fnv1a(acd.cfg.to_text()),
                       "generate: prior checkpoint was trained against a different "
                       "encoder-demasker config (config-hash mismatch)");
            std::unique_ptr<DenoiserStack> cond;
            if (!gen_cond.empty()) {
                cond = std::make_unique<DenoiserStack>(load_denoiser(gen_cond, true));
                CROC_CHECK(cond->parent_hash == Config::fnv1a(acd.cfg.to_text()),
                           "generate: conditional checkpoint config-hash mismatch");
            }
            Config cfg = gen_args.config_path.empty() ? acd.cfg
                                                      : Config::load(gen_args.config_path);
            if (gen_nfe >= 0) cfg.set_i64("generate", "nfe", gen_nfe);
            if (gen_block >= 0) cfg.set_i64("generate", "block_size", gen_block);
            if (gen_regs >= 0) cfg.set_i64("generate", "registers", gen_regs);
            if (gen_temp >= 0) cfg.set_f64("generate", "temperature", gen_temp);
            if (!gen_remask.empty()) cfg.set("generate", "remask", gen_remask);
            if (gen_args.seed >= 0) cfg.set_i64("generate", "seed", gen_args.seed);
            if (!gen_refresh.empty()) {
                std::string list;
                for (double r : gen_refresh) list += (list.empty() ? "" : ",") + std::to_string(r);
                cfg.set("generate", "refresh", list);
            }

            GenConfig gen = gen_from_config(cfg, acd.mcfg.seq_len);
            ModelSet<float> models;
            models.enc = acd.enc.get();
            models.dem = acd.dem.get();
            models.prior = prior.den.get();
            models.cond = cond ? cond->den.get() : nullptr;
            models.latent_schedule = prior.schedule;

            const MaskSchedule sched = schedule_from_config(cfg);
            auto res = run_generation(gen_mode, gen, int(gen_count), models, acd.vocab, sched);
            const fs::path out_dir = gen_args.out_dir;
            write_effective_config(cfg, out_dir);
            write_samples(out_dir, "samples", res.samples, acd.vocab,
                          {{"config_hash", cfg.hash()},
                           {"corpus_hash", acd.corpus_hash},
                           {"seed", gen.seed},
                           {"mode", gen_mode},
                           {"gen_config",
                            {{"gen_length", gen.gen_length},
                             {"block_size", gen.block_size},
                             {"nfe", gen.nfe},
                             {"registers", gen.registers_k},
                             {"refresh", gen.refresh},
                             {"latent_steps", gen.latent_steps},
                             {"temperature", gen.temperature}}},
                           {"nfe", nfe_to_json(res.nfe)}});
            std::printf("%lld samples -> %s (demasker calls %lld, denoiser calls %lld)\n",
                        (long long)gen_count, gen_args.out_dir.c_str(),
                        (long long)res.nfe.demasker_calls, (long long)res.nfe.denoiser_calls);
        });

        // -------------------------------------------------------------- eval
        auto* eval_cmd = app.add_subcommand("eval", "metrics over sample files");
        CommonArgs eval_args;
        std::string eval_metric, eval_samples, eval_ref, eval_scorer, eval_acd;
        int64_t eval_order = 2, eval_knn = 5;
        bool eval_force = false;
        add_common(eval_cmd, eval_args, false);
        eval_cmd->add_option("--metric", eval_metric, "gen-ppl|cer|ngram|prdc")->required();
        eval_cmd->add_option("--samples", eval_samples, "generated samples file")->required();
        eval_cmd->add_option("--ref", eval_ref, "reference corpus file");
        eval_cmd->add_option("--scorer", eval_scorer, "scorer checkpoint (gen-ppl)");
        eval_cmd->add_option("--acd", eval_acd, "encoder checkpoint (prdc, vocab source)");
        eval_cmd->add_option("--order", eval_order, "n-gram order");
        eval_cmd->add_option("--knn", eval_knn, "k for PRDC balls");
        eval_cmd->add_flag("--force", eval_force, "skip lineage checks");
        eval_cmd->callback([&] {
            json report;
            report["metric"] = eval_metric;
            double value = 0;

            // lineage: the sample sidecar names its corpus; reject foreign judges
            uint64_t sample_corpus = 0;
            const fs::path sidecar = fs::path(eval_samples).replace_extension(".json");
            if (fs::exists(sidecar)) {
                json sc;
                std::ifstream(sidecar) >> sc;
                sample_corpus = sc.value("corpus_hash", uint64_t(0));
                report["samples_config_hash"] = sc.value("config_hash", uint64_t(0));
                report["seed"] = sc.value("seed", 0);
            }

            if (eval_metric == "gen-ppl") {
                CROC_CHECK(!eval_scorer.empty(), "eval: gen-ppl needs --scorer");
                auto scorer = load_scorer(eval_scorer);
                if (!eval_force && sample_corpus != 0 && scorer.corpus_hash != 0)
                    CROC_CHECK(sample_corpus == scorer.corpus_hash,
                               "eval: scorer and samples come from different corpora "
                               "(use --force to override)");
                auto samples = load_corpus_file(eval_samples, scorer.vocab);
                value = gen_ppl(samples, *scorer.sco, scorer.vocab);
            } else if (eval_metric == "cer") {
                CROC_CHECK(!eval_ref.empty() && !eval_acd.empty(),
                           "eval: cer needs --ref and --acd (vocab source)");
                auto acd = load_acd(eval_acd);
                auto samples = load_corpus_file(eval_samples, acd.vocab);
                auto refs = load_corpus_file(eval_ref, acd.vocab);
                CROC_CHECK(samples.size() == refs.size(), "eval: cer needs paired files");
                for (size_t i = 0; i < samples.size(); ++i)
                    value += cer(acd.vocab.display(refs[i]), acd.vocab.display(samples[i]));
                value /= double(samples.size());
            } else if (eval_metric == "ngram") {
                CROC_CHECK(!eval_ref.empty() && !eval_acd.empty(),
                           "eval: ngram needs --ref and --acd (vocab source)");
                auto acd = load_acd(eval_acd);
                if (!eval_force && sample_corpus != 0 && acd.corpus_hash != 0)
                    CROC_CHECK(sample_corpus == acd.corpus_hash,
                               "eval: mismatched lineage (use --force)");
                value = ngram_divergence(load_corpus_file(eval_samples, acd.vocab),
                                         load_corpus_file(eval_ref, acd.vocab), int(eval_order),
                                         acd.vocab);
            } else if (eval_metric == "prdc") {
                CROC_CHECK(!eval_ref.empty() && !eval_acd.empty(),
                           "eval: prdc needs --ref and --acd");
                auto acd = load_acd(eval_acd);
                auto gen_banks = encode_bank_dataset(*acd.enc,
                                                     load_corpus_file(eval_samples, acd.vocab),
                                                     acd.vocab);
                auto ref_banks = encode_bank_dataset(*acd.enc,
                                                     load_corpus_file(eval_ref, acd.vocab),
                                                     acd.vocab);
                auto rep = prdc(ref_banks, gen_banks, acd.mcfg.K, acd.mcfg.d, int(eval_knn));
                report["precision"] = rep.mean.precision;
                report["precision_sd"] = rep.stddev.precision;
                report["recall"] = rep.mean.recall;
                report["recall_sd"] = rep.stddev.recall;
                report["density"] = rep.mean.density;
                report["coverage"] = rep.mean.coverage;
                value = rep.mean.precision;
            } else {
                throw std::runtime_error("crocodil: unknown metric '" + eval_metric + "'");
            }
            report["value"] = value;
            fs::create_directories(eval_args.out_dir);
            std::ofstream(fs::path(eval_args.out_dir) / (eval_metric + ".json"))
                << report.dump(2) << "\n";
            std::printf("%s = %.6f\n", eval_metric.c_str(), value);
        });

        // ------------------------------------------------------------ verify
        auto* verify_cmd = app.add_subcommand("verify", "exact-oracle checks, no training needed");
        int64_t verify_instances = 50;
        int64_t verify_seed = 0;
        verify_cmd->add_option("--instances", verify_instances, "random joints to test");
        verify_cmd->add_option("--seed", verify_seed, "seed");
        verify_cmd->callback([&] {
            auto res = run_verify(int(verify_instances), uint64_t(verify_seed));
            for (const auto& line : res.lines) std::printf("%s\n", line.c_str());
            if (!res.all_green) throw std::runtime_error("verify: oracle checks failed");
        });

        // ------------------------------------------------------------- sweep
        auto* sweep_cmd = app.add_subcommand("sweep", "execute an experiment plan");
        CommonArgs sweep_args;
        add_common(sweep_cmd, sweep_args);
        sweep_cmd->callback([&] {
            Config cfg = load_config(sweep_args);
            (void)effective_workers(sweep_args);
            cmd_sweep(cfg, sweep_args.out_dir);
            std::printf("sweep results in %s\n", sweep_args.out_dir.c_str());
        });

        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
