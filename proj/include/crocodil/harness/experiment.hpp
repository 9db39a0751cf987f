#pragma once

#include <iomanip>
#include <sstream>

#include "crocodil/harness/pipeline.hpp"

namespace crocodil {

// One sweep cell: a fully named point in the experiment grid with its own
// output directory.
struct SweepCell {
    std::string name;
    int block = 0, nfe = 0, registers = 0;
    double refresh = -1; // < 0: plain ConThenDisc / autoencode
    uint64_t seed = 0;
};

inline std::string cell_name(const SweepCell& c) {
    std::ostringstream s;
    s << "block" << c.block << "_nfe" << c.nfe;
    if (c.registers > 0) s << "_k" << c.registers;
    if (c.refresh >= 0) s << "_r" << int(std::lround(c.refresh * 100));
    s << "_seed" << c.seed;
    return s.str();
}

struct SweepRowOut {
    SweepCell cell;
    double gen_ppl = 0, cer_value = -1, divergence = -1;
    NfeReport nfe;
};

// Table-style CSV: one row per cell, in grid order.
inline void write_sweep_csv(const fs::path& path, const std::vector<SweepRowOut>& rows) {
    std::ofstream out(path);
    out << "Block,NFE,Gen-PPL,CER\n";
    for (const auto& r : rows) {
        out << r.cell.block << "," << r.cell.nfe << "," << std::setprecision(6) << r.gen_ppl
            << ",";
        if (r.cer_value >= 0) out << std::setprecision(6) << r.cer_value;
        out << "\n";
    }
}

// Executes the [sweep] section. Kinds:
//   autoencode  - Block x NFE grid over held-out inputs; emits the
//                 (Block, NFE, Gen-PPL, CER) table
//   generate    - Block x NFE x refresh grid with ConThenDisc at refresh < 0
//                 and ConWithinDisc otherwise; emits a comparison report
//   curve       - masked-prediction curve data (guided vs unguided if given)
//   robustness  - accuracy/CE vs register noise for a model pair
inline void cmd_sweep(const Config& cfg, const fs::path& out_dir) {
    const std::string kind = cfg.get_str("sweep", "kind", "autoencode");
    write_effective_config(cfg, out_dir);
    JsonlLogger data((out_dir / "data.jsonl").string());

    auto acd = load_acd(cfg.require_str("sweep", "acd"));
    const auto sched = schedule_from_config(cfg);
    auto inputs = read_corpus(cfg.require_str("sweep", "inputs"), acd.vocab);
    const int count = int(cfg.get_i64("sweep", "count", 32));
    CROC_CHECK(!inputs.empty(), "sweep: empty input corpus");

    std::unique_ptr<ScorerStack> scorer;
    if (cfg.has("sweep", "scorer"))
        scorer = std::make_unique<ScorerStack>(load_scorer(cfg.require_str("sweep", "scorer")));

    auto blocks = cfg.get_f64_list("sweep", "blocks", {double(acd.mcfg.seq_len)});
    auto nfes = cfg.get_f64_list("sweep", "nfes", {double(acd.mcfg.seq_len)});
    auto seeds = cfg.get_f64_list("sweep", "seeds", {1});
    const int registers = int(cfg.get_i64("sweep", "registers", 0));

    if (kind == "autoencode") {
        std::vector<SweepRowOut> rows;
        for (double bd : blocks)
            for (double fd : nfes) {
                SweepRowOut row;
                row.cell = {"", int(bd), int(fd), registers, -1, uint64_t(seeds[0])};
                row.cell.name = cell_name(row.cell);
                const fs::path cell_dir = out_dir / row.cell.name;
                fs::create_directories(cell_dir);

                GenConfig gen = gen_from_config(cfg, acd.mcfg.seq_len);
                gen.block_size = row.cell.block;
                gen.nfe = row.cell.nfe;
                gen.registers_k = registers;
                ModelSet<float> models;
                models.enc = acd.enc.get();
                models.dem = acd.dem.get();

                std::vector<Sequence> recon;
                double cer_sum = 0;
                for (int i = 0; i < count && i < int(inputs.size()); ++i) {
                    gen.seed = uint64_t(seeds[0]) + uint64_t(i);
                    auto xhat = autoencode(inputs[size_t(i)], gen, models, acd.vocab, sched,
                                           &row.nfe);
                    cer_sum += cer(acd.vocab.display(inputs[size_t(i)]), acd.vocab.display(xhat));
                    recon.push_back(std::move(xhat));
                }
                row.cer_value = cer_sum / std::min<int>(count, int(inputs.size()));
                if (scorer) row.gen_ppl = gen_ppl(recon, *scorer->sco, acd.vocab);
                write_samples(cell_dir, "recon", recon, acd.vocab,
                              {{"config_hash", cfg.hash()},
                               {"corpus_hash", acd.corpus_hash},
                               {"cell", row.cell.name},
                               {"cer", row.cer_value},
                               {"gen_ppl", row.gen_ppl},
                               {"nfe", nfe_to_json(row.nfe)}});
                data.log({{"cell", row.cell.name}, {"block", row.cell.block},
                          {"nfe", row.cell.nfe}, {"cer", row.cer_value},
                          {"gen_ppl", row.gen_ppl}});
                rows.push_back(std::move(row));
            }
        write_sweep_csv(out_dir / "table.csv", rows);
        return;
    }

    if (kind == "generate") {
        CROC_CHECK(scorer != nullptr, "sweep: generate kind needs a scorer");
        auto prior = load_denoiser(cfg.require_str("sweep", "prior"), false);
        std::unique_ptr<DenoiserStack> cond;
        if (cfg.has("sweep", "cond"))
            cond = std::make_unique<DenoiserStack>(
                load_denoiser(cfg.require_str("sweep", "cond"), true));
        auto refreshes = cfg.get_f64_list("sweep", "refreshes", {-1, 0.5});

        ModelSet<float> models;
        models.enc = acd.enc.get();
        models.dem = acd.dem.get();
        models.prior = prior.den.get();
        models.cond = cond ? cond->den.get() : nullptr;
        models.latent_schedule = prior.schedule;

        std::vector<SweepRowOut> rows;
        std::ofstream cmp(out_dir / "comparison.csv");
        cmp << "Mode,Refresh,Block,NFE,Seed,Gen-PPL,Divergence,DemaskerEquiv\n";
        for (double bd : blocks)
            for (double fd : nfes)
                for (double rf : refreshes)
                    for (double sd : seeds) {
                        if (rf >= 0 && !cond) continue;
                        SweepRowOut row;
                        row.cell = {"", int(bd), int(fd), registers, rf, uint64_t(sd)};
                        row.cell.name = cell_name(row.cell);
                        const fs::path cell_dir = out_dir / row.cell.name;

                        GenConfig gen = gen_from_config(cfg, acd.mcfg.seq_len);
                        gen.block_size = row.cell.block;
                        gen.nfe = row.cell.nfe;
                        gen.registers_k = registers;
                        gen.seed = uint64_t(sd) * 1000003;
                        gen.refresh = rf >= 0 ? std::vector<double>{rf} : std::vector<double>{};
                        const std::string mode = rf >= 0 ? "conwithindisc" : "conthendisc";

                        auto res = run_generation(mode, gen, count, models, acd.vocab, sched);
                        row.gen_ppl = gen_ppl(res.samples, *scorer->sco, acd.vocab);
                        row.divergence = ngram_divergence(res.samples, inputs, 2, acd.vocab);
                        row.nfe = res.nfe;
                        write_samples(cell_dir, "samples", res.samples, acd.vocab,
                                      {{"config_hash", cfg.hash()},
                                       {"corpus_hash", acd.corpus_hash},
                                       {"seed", sd},
                                       {"mode", mode},
                                       {"gen_ppl", row.gen_ppl},
                                       {"divergence", row.divergence},
                                       {"nfe", nfe_to_json(res.nfe)}});
                        cmp << mode << "," << (rf >= 0 ? rf : 0.0) << "," << row.cell.block << ","
                            << row.cell.nfe << "," << uint64_t(sd) << "," << row.gen_ppl << ","
                            << row.divergence << ","
                            << res.nfe.demasker_equivalent() / std::max(1, count) << "\n";
                        data.log({{"cell", row.cell.name}, {"mode", mode}, {"refresh", rf},
                                  {"gen_ppl", row.gen_ppl}, {"divergence", row.divergence}});
                        rows.push_back(std::move(row));
                    }
        write_sweep_csv(out_dir / "table.csv", rows);
        return;
    }

    if (kind == "curve") {
        auto probs = cfg.get_f64_list("sweep", "mask_probs",
                                      {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
        std::vector<Sequence> subset(inputs.begin(),
                                     inputs.begin() + std::min<size_t>(inputs.size(), size_t(count)));
        auto curve = masked_prediction_curve(*acd.dem, acd.enc.get(), subset, probs, acd.vocab,
                                             RngStream(uint64_t(seeds[0]), streams::eval));
        std::unique_ptr<AcdStack> unguided;
        std::vector<MaskedPredictionPoint> ucurve;
        if (cfg.has("sweep", "unguided")) {
            unguided = std::make_unique<AcdStack>(load_acd(cfg.require_str("sweep", "unguided")));
            ucurve = masked_prediction_curve(*unguided->dem, nullptr, subset, probs, acd.vocab,
                                             RngStream(uint64_t(seeds[0]), streams::eval));
        }
        std::ofstream out(out_dir / "curve.csv");
        out << "MaskProb,GuidedCE,GuidedAcc,UnguidedCE,UnguidedAcc\n";
        for (size_t i = 0; i < curve.size(); ++i) {
            out << curve[i].mask_prob << "," << curve[i].cross_entropy << ","
                << curve[i].top1_accuracy << ",";
            if (!ucurve.empty()) out << ucurve[i].cross_entropy << "," << ucurve[i].top1_accuracy;
            out << "\n";
            data.log({{"mask_prob", curve[i].mask_prob}, {"guided_ce", curve[i].cross_entropy},
                      {"guided_acc", curve[i].top1_accuracy}});
        }
        return;
    }

    if (kind == "psnr") {
        auto prior = load_denoiser(cfg.require_str("sweep", "prior"), false);
        std::vector<Sequence> subset(inputs.begin(),
                                     inputs.begin() + std::min<size_t>(inputs.size(), size_t(count)));
        auto banks = encode_bank_dataset(*acd.enc, subset, acd.vocab);
        auto grid = cfg.get_f64_list("sweep", "t_grid", {0.1, 0.3, 0.5, 0.7, 0.9});
        auto uncond = psnr_curve(*prior.den, banks, grid, prior.schedule,
                                 RngStream(uint64_t(seeds[0]), streams::eval));
        std::vector<double> cond_curve;
        if (cfg.has("sweep", "cond")) {
            auto cond = load_denoiser(cfg.require_str("sweep", "cond"), true);
            // conditioning views: the same inputs half-masked
            std::vector<Sequence> views = subset;
            RngStream mask_rng(uint64_t(seeds[0]), streams::eval);
            for (auto& seq : views)
                for (auto& id : seq)
                    if (mask_rng.uniform() < 0.5) id = acd.vocab.mask();
            cond_curve = psnr_curve(*cond.den, banks, grid, cond.schedule,
                                    RngStream(uint64_t(seeds[0]), streams::eval), acd.enc.get(),
                                    &views, &acd.vocab);
        }
        std::ofstream out(out_dir / "psnr.csv");
        out << "T,UnconditionalPSNR,ConditionalPSNR\n";
        for (size_t i = 0; i < grid.size(); ++i) {
            out << grid[i] << "," << uncond[i] << ",";
            if (!cond_curve.empty()) out << cond_curve[i];
            out << "\n";
            data.log({{"t", grid[i]}, {"psnr_uncond", uncond[i]}});
        }
        return;
    }

    if (kind == "interpolation") {
        CROC_CHECK(scorer != nullptr, "sweep: interpolation kind needs a scorer");
        auto alphas = cfg.get_f64_list("sweep", "alphas", {0, 0.25, 0.5, 0.75, 1.0});
        std::vector<std::pair<Sequence, Sequence>> pairs;
        RngStream pick(uint64_t(seeds[0]), streams::eval);
        for (int i = 0; i < count; ++i) {
            const auto& a = inputs[pick.next_below(inputs.size())];
            const auto& b = inputs[pick.next_below(inputs.size())];
            pairs.push_back({a, b});
        }
        ModelSet<float> models;
        models.enc = acd.enc.get();
        models.dem = acd.dem.get();
        GenConfig gen = gen_from_config(cfg, acd.mcfg.seq_len);
        auto pts =
            interpolation_eval(pairs, alphas, gen, models, acd.vocab, sched, *scorer->sco, inputs);
        std::ofstream out(out_dir / "interpolation.csv");
        out << "Alpha,Gen-PPL,Divergence,CERtoA,CERtoB\n";
        for (const auto& p : pts) {
            out << p.alpha << "," << p.gen_ppl << "," << p.divergence << "," << p.cer_a << ","
                << p.cer_b << "\n";
            data.log({{"alpha", p.alpha}, {"gen_ppl", p.gen_ppl}, {"cer_a", p.cer_a}});
        }
        return;
    }

    if (kind == "robustness") {
        auto sigmas = cfg.get_f64_list("sweep", "sigmas", {0, 0.25, 0.5, 0.75, 1.0});
        const double ratio = cfg.get_f64("sweep", "mask_ratio", 0.9);
        std::vector<Sequence> subset(inputs.begin(),
                                     inputs.begin() + std::min<size_t>(inputs.size(), size_t(count)));
        auto points = robustness_sweep(*acd.enc, *acd.dem, sigmas, subset, acd.vocab, ratio,
                                       uint64_t(seeds[0]));
        std::vector<RobustnessPoint> plain;
        std::unique_ptr<AcdStack> twin;
        if (cfg.has("sweep", "twin")) {
            twin = std::make_unique<AcdStack>(load_acd(cfg.require_str("sweep", "twin")));
            plain = robustness_sweep(*twin->enc, *twin->dem, sigmas, subset, acd.vocab, ratio,
                                     uint64_t(seeds[0]));
        }
        std::ofstream out(out_dir / "robustness.csv");
        out << "Sigma,Accuracy,CE,TwinAccuracy,TwinCE\n";
        for (size_t i = 0; i < points.size(); ++i) {
            out << points[i].sigma << "," << points[i].top1_accuracy << ","
                << points[i].cross_entropy << ",";
            if (!plain.empty()) out << plain[i].top1_accuracy << "," << plain[i].cross_entropy;
            out << "\n";
            data.log({{"sigma", points[i].sigma}, {"acc", points[i].top1_accuracy}});
        }
        return;
    }

    throw std::runtime_error("crocodil: unknown sweep kind '" + kind + "'");
}

} // namespace crocodil
