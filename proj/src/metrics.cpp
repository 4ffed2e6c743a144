#include "disdis/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

namespace disdis {

namespace {

constexpr std::size_t kEvalChunk = 32;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

PCMDCurve cummin_along(const LatentDistances& d, std::span<const Index> order) {
    PCMDCurve c;
    c.M = static_cast<Index>(order.size());
    c.ade.resize(c.M);
    c.fde.resize(c.M);
    double best_ade = std::numeric_limits<double>::infinity();
    double best_fde = std::numeric_limits<double>::infinity();
    for (Index m = 0; m < c.M; ++m) {
        best_ade = std::min(best_ade, d.ade(order[m]));
        best_fde = std::min(best_fde, d.fde(order[m]));
        c.ade(m) = best_ade;
        c.fde(m) = best_fde;
    }
    return c;
}

}  // namespace

std::vector<Index> rank_by_probability(const Eigen::RowVectorXd& probs) {
    std::vector<Index> order(static_cast<std::size_t>(probs.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return probs(a) > probs(b); });
    return order;
}

PCMDCurve pcmd_curve(const LatentDistances& d) {
    const std::vector<Index> order = rank_by_probability(d.probs);
    return cummin_along(d, order);
}

PCMDCurve mean_curve(std::span<const PCMDCurve> curves) {
    if (curves.empty()) throw std::invalid_argument("mean_curve: no curves");
    PCMDCurve out;
    out.M = curves.front().M;
    out.ade = Eigen::VectorXd::Zero(out.M);
    out.fde = Eigen::VectorXd::Zero(out.M);
    for (const PCMDCurve& c : curves) {
        if (c.M != out.M) throw std::invalid_argument("mean_curve: curves differ in M");
        out.ade += c.ade;
        out.fde += c.fde;
    }
    out.ade /= static_cast<double>(curves.size());
    out.fde /= static_cast<double>(curves.size());
    return out;
}

std::vector<LatentDistances> enumerate_latents(const ModelParams& params, std::span<const TrajectorySample> samples) {
    std::vector<LatentDistances> out;
    out.reserve(samples.size());
    const Index K = params.config.K;
    for (std::size_t begin = 0; begin < samples.size(); begin += kEvalChunk) {
        const auto chunk = samples.subspan(begin, std::min(kEvalChunk, samples.size() - begin));
        Tape tape;
        ModelGraph graph(tape, const_cast<ModelParams&>(params), false);
        Var f = graph.embed_history(chunk);
        const Matrix logits = graph.prior_logits(f).value();
        const std::vector<FutTrack> tracks = collect_trajectories(graph.decode_all(f));
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            LatentDistances d;
            d.probs = CategoricalDistribution::from_logits(logits.row(static_cast<Index>(b))).probs;
            d.ade.resize(K);
            d.fde.resize(K);
            for (Index k = 0; k < K; ++k) {
                const FutTrack& pred = tracks[b * K + k];
                d.ade(k) = ade(pred, chunk[b].fut);
                d.fde(k) = fde(pred, chunk[b].fut);
            }
            out.push_back(std::move(d));
        }
    }
    return out;
}

PCMDCurve pcmd(const ModelParams& params, const TrajectorySample& sample, Index M) {
    if (M < 1) throw std::invalid_argument("pcmd: M must be >= 1");
    if (M > params.config.K) throw std::invalid_argument("pcmd: exact mode needs M <= K");
    const LatentDistances d = enumerate_latents(params, std::span(&sample, 1)).front();
    std::vector<Index> order = rank_by_probability(d.probs);
    order.resize(static_cast<std::size_t>(M));
    return cummin_along(d, order);
}

PCMDCurve pcmd_sampled(const ModelParams& params, const TrajectorySample& sample, Index M, std::mt19937_64& rng) {
    if (M < 1) throw std::invalid_argument("pcmd: M must be >= 1");
    const LatentDistances d = enumerate_latents(params, std::span(&sample, 1)).front();
    CategoricalDistribution prior;
    prior.probs = d.probs;
    prior.logits = d.probs.array().log();
    std::vector<Index> draws(static_cast<std::size_t>(M));
    for (Index& z : draws) z = sample_z(prior, rng);
    std::stable_sort(draws.begin(), draws.end(), [&](Index a, Index b) {
        return d.probs(a) != d.probs(b) ? d.probs(a) > d.probs(b) : a < b;
    });
    return cummin_along(d, draws);
}

Displacement best_of_n_exact(const ModelParams& params, const TrajectorySample& sample, Index n) {
    if (n < 1) throw std::invalid_argument("best_of_n: n must be >= 1");
    const PCMDCurve c = pcmd(params, sample, std::min<Index>(n, params.config.K));
    return {c.ade(c.M - 1), c.fde(c.M - 1)};
}

Displacement best_of_n_sampled(const ModelParams& params, const TrajectorySample& sample, Index n,
                               std::mt19937_64& rng) {
    if (n < 1) throw std::invalid_argument("best_of_n: n must be >= 1");
    const PCMDCurve c = pcmd_sampled(params, sample, n, rng);
    return {c.ade(c.M - 1), c.fde(c.M - 1)};
}

double pattern_purity(std::span<const Index> latent, std::span<const int> labels) {
    if (latent.size() != labels.size()) throw std::invalid_argument("pattern_purity: length mismatch");
    if (latent.empty()) throw std::invalid_argument("pattern_purity: no samples");
    std::map<Index, std::map<int, std::size_t>> counts;
    for (std::size_t i = 0; i < latent.size(); ++i) ++counts[latent[i]][labels[i]];
    std::size_t agree = 0;
    for (const auto& [z, by_label] : counts) {
        std::size_t best = 0;
        for (const auto& [label, n] : by_label) best = std::max(best, n);
        agree += best;
    }
    return static_cast<double>(agree) / static_cast<double>(latent.size());
}

double pattern_purity(std::span<const Index> latent, std::span<const TrajectorySample> samples) {
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const TrajectorySample& s : samples) {
        if (!s.pattern_label) throw std::invalid_argument("pattern_purity: sample without pattern label");
        labels.push_back(*s.pattern_label);
    }
    return pattern_purity(latent, labels);
}

std::vector<Index> prior_argmax(const ModelParams& params, std::span<const TrajectorySample> samples) {
    std::vector<Index> out;
    out.reserve(samples.size());
    for (std::size_t begin = 0; begin < samples.size(); begin += kEvalChunk) {
        const auto chunk = samples.subspan(begin, std::min(kEvalChunk, samples.size() - begin));
        Tape tape;
        ModelGraph graph(tape, const_cast<ModelParams&>(params), false);
        const Matrix logits = graph.prior_logits(graph.embed_history(chunk)).value();
        for (Index b = 0; b < logits.rows(); ++b) {
            out.push_back(CategoricalDistribution::from_logits(logits.row(b)).argmax());
        }
    }
    return out;
}

MetricReport evaluate_metrics(const ModelParams& params, std::span<const TrajectorySample> samples, Index best_of_n) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    if (best_of_n < 1 || best_of_n > params.config.K) {
        throw std::invalid_argument("evaluate: best_of_n must lie in [1, K]");
    }
    const std::vector<LatentDistances> dists = enumerate_latents(params, samples);
    std::vector<PCMDCurve> curves;
    curves.reserve(dists.size());
    std::vector<Index> top;
    top.reserve(dists.size());
    for (const LatentDistances& d : dists) {
        curves.push_back(pcmd_curve(d));
        top.push_back(rank_by_probability(d.probs).front());
    }
    MetricReport r;
    r.pcmd = mean_curve(curves);
    r.n = best_of_n;
    r.n_samples = samples.size();
    r.most_likely = {r.pcmd.ade(0), r.pcmd.fde(0)};
    r.best_of_n = {r.pcmd.ade(best_of_n - 1), r.pcmd.fde(best_of_n - 1)};
    const bool labeled = std::all_of(samples.begin(), samples.end(),
                                     [](const TrajectorySample& s) { return s.pattern_label.has_value(); });
    if (labeled) r.purity = pattern_purity(top, samples);
    return r;
}

void write_pcmd_csv(const std::filesystem::path& path, const PCMDCurve& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "m,k,ade,fde\n";
    for (Index m = 1; m <= curve.M; ++m) {
        out << m << ',' << fmt17(curve.k(m)) << ',' << fmt17(curve.ade(m - 1)) << ',' << fmt17(curve.fde(m - 1))
            << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& r) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "n_samples=" << r.n_samples << '\n'
        << "most_likely_ade=" << fmt17(r.most_likely.ade) << '\n'
        << "most_likely_fde=" << fmt17(r.most_likely.fde) << '\n'
        << "best_of_n=" << r.n << '\n'
        << "best_of_n_ade=" << fmt17(r.best_of_n.ade) << '\n'
        << "best_of_n_fde=" << fmt17(r.best_of_n.fde) << '\n'
        << "pcmd_M=" << r.pcmd.M << '\n'
        << "pcmd_ade_at_M=" << fmt17(r.pcmd.ade(r.pcmd.M - 1)) << '\n'
        << "pcmd_fde_at_M=" << fmt17(r.pcmd.fde(r.pcmd.M - 1)) << '\n';
    if (r.purity >= 0.0) out << "pattern_purity=" << fmt17(r.purity) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void dump_latents(const ModelParams& params, std::span<const TrajectorySample> samples,
                  const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const Index K = params.config.K;
    out << "scene,ped,pattern_label";
    for (Index k = 0; k < K; ++k) out << ",prior_probs_" << k;
    out << '\n';
    for (std::size_t begin = 0; begin < samples.size(); begin += kEvalChunk) {
        const auto chunk = samples.subspan(begin, std::min(kEvalChunk, samples.size() - begin));
        Tape tape;
        ModelGraph graph(tape, const_cast<ModelParams&>(params), false);
        const Matrix logits = graph.prior_logits(graph.embed_history(chunk)).value();
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            const auto d = CategoricalDistribution::from_logits(logits.row(static_cast<Index>(b)));
            out << chunk[b].scene_id << ',' << chunk[b].ped_id << ',';
            if (chunk[b].pattern_label) out << *chunk[b].pattern_label;
            for (Index k = 0; k < K; ++k) out << ',' << fmt17(d.probs(k));
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace disdis
