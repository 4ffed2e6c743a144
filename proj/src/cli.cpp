#include "disdis/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace disdis {

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment JSON (defaults when omitted)");
    cmd->add_option("--seed", c.seed, "overrides train.seed");
    cmd->add_option("--out", c.out, "output directory (defaults to eval.out_dir)");
}

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? parse_config("{}") : load_config(c.config);
    if (c.seed) cfg.train.seed = *c.seed;
    return cfg;
}

std::filesystem::path out_dir(const Common& c, const ExperimentConfig& cfg) {
    return c.out.empty() ? std::filesystem::path(cfg.eval.out_dir) : std::filesystem::path(c.out);
}

void print_report(const MetricReport& r) {
    std::printf("samples=%zu most_likely_ade=%.6f most_likely_fde=%.6f best_of_%d_ade=%.6f best_of_%d_fde=%.6f",
                r.n_samples, r.most_likely.ade, r.most_likely.fde, static_cast<int>(r.n), r.best_of_n.ade,
                static_cast<int>(r.n), r.best_of_n.fde);
    if (r.purity >= 0.0) std::printf(" purity=%.4f", r.purity);
    std::printf("\n");
}

int fail(ExitCode code, const char* kind, const std::string& msg) {
    std::string flat = msg;
    for (char& ch : flat) {
        if (ch == '\n') ch = ' ';
    }
    std::fprintf(stderr, "error: code=%d kind=%s msg=%s\n", static_cast<int>(code), kind, flat.c_str());
    return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"disdis: discrete-latent multimodal trajectory prediction"};
    app.require_subcommand(1);

    Common train_opts, eval_opts, pcmd_opts, synth_opts, ablate_opts, grad_opts;
    std::string eval_ckpt, pcmd_ckpt;
    std::size_t grad_batch = 8, grad_entries = 0;
    double grad_tol = 1e-5;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint.json and loss_history.csv");
    add_common(train_cmd, train_opts);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
    add_common(eval_cmd, eval_opts);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint.json (default: <out>/checkpoint.json)");
    CLI::App* pcmd_cmd = app.add_subcommand("pcmd", "print the exact PCMD curve of a checkpoint");
    add_common(pcmd_cmd, pcmd_opts);
    pcmd_cmd->add_option("--checkpoint", pcmd_ckpt, "checkpoint.json (default: <out>/checkpoint.json)");
    CLI::App* synth_cmd = app.add_subcommand("synth", "write the synthetic training set as a scene file");
    add_common(synth_cmd, synth_opts);
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "train the ablation arms and write ablation.csv");
    add_common(ablate_cmd, ablate_opts);
    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
    add_common(grad_cmd, grad_opts);
    grad_cmd->add_option("--batch", grad_batch, "samples in the checked batch")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--tolerance", grad_tol, "relative error bound");
    grad_cmd->add_option("--max-entries", grad_entries, "entries probed per parameter (0 = all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Error& e) {
        return fail(kExitConfig, "usage", e.what());
    }

    try {
        if (*train_cmd) {
            const ExperimentConfig cfg = resolve_config(train_opts);
            const std::filesystem::path dir = out_dir(train_opts, cfg);
            const Dataset ds = resolve_data(cfg);
            std::fprintf(stderr, "train windows=%zu eval windows=%zu params=%zu\n", ds.train.size(), ds.eval.size(),
                         ModelParams::init(cfg.model, cfg.train.seed).parameter_count());
            TrainState state = initial_state(cfg);
            train_epochs(cfg, ds.train, state, [](int epoch, const LossReport& r) {
                std::fprintf(stderr, "epoch %d l1=%.6f l2=%.6f l3=%.6f total=%.6f\n", epoch, r.l1_kl, r.l2_recon,
                             r.l3_contrastive, r.total);
            });
            std::filesystem::create_directories(dir);
            save_checkpoint(dir / "checkpoint.json", cfg, state);
            write_loss_history(dir / "loss_history.csv", state.history);
            std::printf("wrote %s\n", (dir / "checkpoint.json").string().c_str());
        } else if (*eval_cmd || *pcmd_cmd) {
            const Common& opts = *eval_cmd ? eval_opts : pcmd_opts;
            const ExperimentConfig cfg = resolve_config(opts);
            const std::filesystem::path dir = out_dir(opts, cfg);
            std::filesystem::path ckpt = *eval_cmd ? eval_ckpt : pcmd_ckpt;
            if (ckpt.empty()) ckpt = dir / "checkpoint.json";
            // without a trained checkpoint the freshly initialised model is evaluated
            const TrainState state = std::filesystem::exists(ckpt) || !(*eval_cmd ? eval_ckpt : pcmd_ckpt).empty()
                                         ? load_checkpoint(ckpt)
                                         : initial_state(cfg);
            const Dataset ds = resolve_data(cfg);
            const MetricReport r = evaluate(state, ds.eval, cfg, dir);
            if (*eval_cmd) {
                print_report(r);
            } else {
                std::printf("m,k,ade,fde\n");
                for (Index m = 1; m <= r.pcmd.M; ++m) {
                    std::printf("%d,%.6f,%.6f,%.6f\n", static_cast<int>(m), r.pcmd.k(m), r.pcmd.ade(m - 1),
                                r.pcmd.fde(m - 1));
                }
            }
        } else if (*synth_cmd) {
            const ExperimentConfig cfg = resolve_config(synth_opts);
            const std::filesystem::path dir = out_dir(synth_opts, cfg);
            const std::vector<TrajectorySample> samples =
                synth_generate(cfg.data.personas, cfg.data.n_per_persona, cfg.data.synth_seed, cfg.data.synth);
            std::filesystem::create_directories(dir);
            write_scene(dir / "synth.txt", samples);
            write_labels(dir / "synth_labels.txt", samples);
            std::printf("wrote %zu trajectories to %s\n", samples.size(), (dir / "synth.txt").string().c_str());
        } else if (*ablate_cmd) {
            const ExperimentConfig cfg = resolve_config(ablate_opts);
            const std::filesystem::path dir = out_dir(ablate_opts, cfg);
            std::printf("variant,ade,fde,purity\n");
            for (const AblationRow& row : run_ablation(cfg, dir)) {
                std::printf("%s,%.6f,%.6f,%.4f\n", row.variant.c_str(), row.ade, row.fde, row.purity);
            }
        } else if (*grad_cmd) {
            const ExperimentConfig cfg = resolve_config(grad_opts);
            const ad::GradCheckReport r = gradcheck(cfg, grad_batch, grad_tol, grad_entries);
            std::printf("checked=%zu max_rel_err=%.3e max_abs_err=%.3e worst=%s %s\n", r.checked, r.max_rel_err,
                        r.max_abs_err, r.worst.c_str(), r.pass ? "PASS" : "FAIL");
            return r.pass ? kExitOk : kExitFailure;
        }
    } catch (const ConfigError& e) {
        return fail(kExitConfig, "config", e.what());
    } catch (const DataError& e) {
        return fail(kExitData, "data", e.what());
    } catch (const DivergenceError& e) {
        return fail(kExitDivergence, "divergence", e.what());
    } catch (const std::exception& e) {
        return fail(kExitFailure, "failure", e.what());
    }
    return kExitOk;
}

}  // namespace disdis
