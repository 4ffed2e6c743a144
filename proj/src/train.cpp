#include "disdis/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace disdis {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t kTrainRngSalt = 0x5EED0F7A1A5ULL;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<TrajectorySample> strided_subset(std::vector<TrajectorySample> all, std::size_t cap) {
    if (cap == 0 || all.size() <= cap) return all;
    std::vector<TrajectorySample> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) out.push_back(std::move(all[i * all.size() / cap]));
    return out;
}

void accumulate(LossReport& acc, const LossReport& r) {
    acc.l1_kl += r.l1_kl;
    acc.l2_recon += r.l2_recon;
    acc.l3_contrastive += r.l3_contrastive;
    acc.total += r.total;
}

void adam_update(const TrainConfig& t, ModelParams& params, AdamState& adam, std::uint64_t step) {
    const std::vector<Parameter*> ps = params.all();
    const double c1 = 1.0 - std::pow(t.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(t.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Parameter& p = *ps[i];
        Matrix& m = adam.m[i];
        Matrix& v = adam.v[i];
        m = t.beta1 * m + (1.0 - t.beta1) * p.grad;
        v = t.beta2 * v + (1.0 - t.beta2) * p.grad.cwiseAbs2();
        p.value.array() -= t.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + t.eps);
    }
}

}  // namespace

Dataset resolve_data(const ExperimentConfig& cfg) {
    const DataConfig& d = cfg.data;
    Dataset ds;
    if (d.source == "synthetic") {
        ds.train = synth_generate(d.personas, d.n_per_persona, d.synth_seed, d.synth);
        ds.eval = synth_generate(d.personas, d.eval_n_per_persona, d.synth_seed + 1, d.synth);
    } else {
        for (const SceneFiles& scene : d.scenes) {
            const bool is_eval = d.holdout.empty() || scene.name == d.holdout;
            const bool is_train = d.holdout.empty() || scene.name != d.holdout;
            for (const std::string& file : scene.files) {
                std::filesystem::path p(file);
                if (p.is_relative()) p = cfg.base_dir / p;
                const std::vector<RawRecord> records = load_scene(p);
                WindowSummary s;
                std::vector<TrajectorySample> windows =
                    window_scene(records, scene.name + "/" + p.stem().string(), &s);
                ds.summary.tracks += s.tracks;
                ds.summary.segments += s.segments;
                ds.summary.short_segments += s.short_segments;
                ds.summary.windows += s.windows;
                for (TrajectorySample& w : windows) {
                    w = normalize(w);
                    if (is_train) ds.train.push_back(w);
                    if (is_eval) ds.eval.push_back(w);
                }
            }
        }
        sort_samples(ds.train);
        sort_samples(ds.eval);
        if (d.augment) {
            std::vector<TrajectorySample> expanded;
            expanded.reserve(ds.train.size() * 24);
            for (const TrajectorySample& s : ds.train) {
                for (TrajectorySample& r : rotate_augment(s)) expanded.push_back(std::move(r));
            }
            ds.train = std::move(expanded);
        }
    }
    ds.train = strided_subset(std::move(ds.train), d.max_train_samples);
    if (ds.train.empty()) throw DataError("no training windows after windowing");
    if (ds.eval.empty()) throw DataError("no evaluation windows after windowing");
    return ds;
}

TrainState initial_state(const ExperimentConfig& cfg) {
    TrainState s;
    s.params = ModelParams::init(cfg.model, cfg.train.seed);
    if (cfg.loss.variant == Variant::vae) {
        // fixed uniform prior
        s.params.prior_w.value.setZero();
        s.params.prior_b.value.setZero();
    }
    for (const Parameter* p : s.params.all()) {
        s.adam.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        s.adam.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
    s.rng.seed(cfg.train.seed ^ kTrainRngSalt);
    return s;
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, int epoch, std::size_t n) {
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
    const std::uint64_t base = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 1));
    for (std::size_t i = 0; i < n; ++i) keyed[i] = {splitmix64(base + i), i};
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = keyed[i].second;
    return out;
}

void train_epochs(const ExperimentConfig& cfg, std::span<const TrajectorySample> data, TrainState& state,
                  const std::function<void(int, const LossReport&)>& on_epoch) {
    const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
    std::vector<TrajectorySample> batch;
    batch.reserve(bs);
    for (; state.epoch < cfg.train.epochs; ++state.epoch) {
        const std::vector<std::size_t> order = epoch_permutation(cfg.train.seed, state.epoch, data.size());
        LossReport sum;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin + 2 <= order.size(); begin += bs) {
            const std::size_t end = std::min(order.size(), begin + bs);
            batch.clear();
            for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);
            const LossReport r = total_loss(batch, state.params, cfg.loss, state.rng);
            if (!std::isfinite(r.total)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(state.epoch + 1) + ", step " +
                                      std::to_string(state.step + 1) + " (l1=" + fmt17(r.l1_kl) +
                                      " l2=" + fmt17(r.l2_recon) + " l3=" + fmt17(r.l3_contrastive) + ")");
            }
            ++state.step;
            adam_update(cfg.train, state.params, state.adam, state.step);
            accumulate(sum, r);
            ++batches;
        }
        if (batches == 0) throw DataError("training set has fewer than two samples");
        const double inv = 1.0 / static_cast<double>(batches);
        EpochRecord rec;
        rec.step = state.step;
        rec.mean = {sum.l1_kl * inv, sum.l2_recon * inv, sum.l3_contrastive * inv, sum.total * inv};
        state.history.push_back(rec);
        if (on_epoch) on_epoch(state.epoch + 1, rec.mean);
    }
}

void train_epochs(const ExperimentConfig& cfg, std::span<const TrajectorySample> data, TrainState& state) {
    train_epochs(cfg, data, state, {});
}

TrainState train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const Dataset ds = resolve_data(cfg);
    TrainState state = initial_state(cfg);
    train_epochs(cfg, ds.train, state);
    std::filesystem::create_directories(out_dir);
    save_checkpoint(out_dir / "checkpoint.json", cfg, state);
    write_loss_history(out_dir / "loss_history.csv", state.history);
    return state;
}

void write_loss_history(const std::filesystem::path& path, std::span<const EpochRecord> history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "step,l1,l2,l3,total\n";
    for (const EpochRecord& r : history) {
        out << r.step << ',' << fmt17(r.mean.l1_kl) << ',' << fmt17(r.mean.l2_recon) << ','
            << fmt17(r.mean.l3_contrastive) << ',' << fmt17(r.mean.total) << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

MetricReport evaluate(const TrainState& checkpoint, std::span<const TrajectorySample> data, const ExperimentConfig& cfg,
                      const std::filesystem::path& out_dir) {
    if (checkpoint.params.config.K != cfg.model.K) {
        throw ConfigError("checkpoint has K=" + std::to_string(checkpoint.params.config.K) + " but config has K=" +
                          std::to_string(cfg.model.K));
    }
    MetricReport report = evaluate_metrics(checkpoint.params, data, cfg.eval.best_of_n);
    const Index M = cfg.eval.M == 0 ? cfg.model.K : cfg.eval.M;
    if (M < report.pcmd.M) {
        report.pcmd.ade.conservativeResize(M);
        report.pcmd.fde.conservativeResize(M);
        report.pcmd.M = M;
    }
    std::filesystem::create_directories(out_dir);
    write_metric_report(out_dir / "metrics.txt", report);
    write_pcmd_csv(out_dir / "pcmd.csv", report.pcmd);
    dump_latents(checkpoint.params, data, out_dir / "latents.csv");
    return report;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const Dataset ds = resolve_data(cfg);
    std::vector<std::uint64_t> seeds = cfg.train.ablation_seeds;
    if (seeds.empty()) seeds.push_back(cfg.train.seed);

    struct Arm {
        const char* name;
        ExperimentConfig cfg;
    };
    std::vector<Arm> arms;
    ExperimentConfig full = cfg;
    full.loss.variant = Variant::disdis;
    arms.push_back({"disdis", full});
    ExperimentConfig no_l3 = full;
    no_l3.loss.variant = Variant::cvae;
    arms.push_back({"w/o L3", no_l3});
    ExperimentConfig no_l2 = full;
    no_l2.loss.lambda = 0.0;
    arms.push_back({"w/o L2", no_l2});

    std::filesystem::create_directories(out_dir);
    std::ofstream runs(out_dir / "ablation_runs.csv");
    runs << "variant,seed,ade,fde,purity\n";
    std::vector<AblationRow> rows;
    for (Arm& arm : arms) {
        AblationRow row;
        row.variant = arm.name;
        double purity_sum = 0.0;
        for (std::uint64_t seed : seeds) {
            arm.cfg.train.seed = seed;
            TrainState state = initial_state(arm.cfg);
            const auto start = std::chrono::steady_clock::now();
            train_epochs(arm.cfg, ds.train, state);
            row.train_seconds.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
            const MetricReport m = evaluate_metrics(state.params, ds.eval, arm.cfg.eval.best_of_n);
            row.ade += m.most_likely.ade;
            row.fde += m.most_likely.fde;
            purity_sum += m.purity;
            row.ade_per_seed.push_back(m.most_likely.ade);
            runs << arm.name << ',' << seed << ',' << fmt17(m.most_likely.ade) << ',' << fmt17(m.most_likely.fde)
                 << ',' << fmt17(m.purity) << '\n';
        }
        const double n = static_cast<double>(seeds.size());
        row.ade /= n;
        row.fde /= n;
        row.purity = purity_sum / n;
        rows.push_back(row);
    }
    std::ofstream out(out_dir / "ablation.csv");
    out << "variant,ade,fde,purity\n";
    for (const AblationRow& r : rows) {
        out << r.variant << ',' << fmt17(r.ade) << ',' << fmt17(r.fde) << ',' << fmt17(r.purity) << '\n';
    }
    if (!out || !runs) throw std::runtime_error("cannot write ablation tables to " + out_dir.string());
    return rows;
}

ad::GradCheckReport gradcheck(const ExperimentConfig& cfg, std::size_t batch, double tolerance,
                              std::size_t max_entries_per_param) {
    const int per = static_cast<int>((batch + cfg.data.personas.size() - 1) / cfg.data.personas.size());
    const std::vector<TrajectorySample> pool = synth_generate(cfg.data.personas, per, cfg.data.synth_seed, cfg.data.synth);
    std::vector<TrajectorySample> samples;
    for (std::size_t i = 0; i < batch; ++i) samples.push_back(pool[i * pool.size() / batch]);

    ModelParams params = ModelParams::init(cfg.model, cfg.train.seed);
    const std::uint64_t seed = cfg.train.seed;
    auto loss = [&](Tape& tape) {
        ModelGraph graph(tape, params, true);
        std::mt19937_64 rng(seed);
        return build_loss(graph, samples, cfg.loss, rng).total;
    };
    std::vector<Parameter*> ps = params.all();
    // Rounding in f(p +- h) is about eps * |f| / h ~ 1e-9 here, so entries whose
    // gradient is below 1e-3 in magnitude are compared on an absolute scale.
    return ad::finite_diff_check(loss, ps, 1e-5, tolerance, 1e-3, max_entries_per_param);
}

}  // namespace disdis
