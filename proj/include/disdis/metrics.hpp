#pragma once

#include "disdis/dataio.hpp"
#include "disdis/model.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace disdis {

namespace detail {
template <typename A, typename B>
void require_same_track_shape(const char* op, const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt) {
    if (pred.rows() != gt.rows() || pred.cols() != 2 || gt.cols() != 2 || pred.rows() == 0) {
        throw std::invalid_argument(std::string(op) + ": prediction and ground truth must be equal-length n x 2 tracks");
    }
}
}  // namespace detail

/// Mean Euclidean displacement over all timesteps.
template <typename A, typename B>
double ade(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt) {
    detail::require_same_track_shape("ade", pred, gt);
    return (pred - gt).rowwise().norm().mean();
}

/// Euclidean displacement at the final timestep.
template <typename A, typename B>
double fde(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt) {
    detail::require_same_track_shape("fde", pred, gt);
    const Eigen::Index last = pred.rows() - 1;
    return (pred.row(last) - gt.row(last)).norm();
}

/// Cumulative-minimum distance curve over the probability-sorted latents.
/// Entry m-1 holds the best ADE / FDE among the m most probable latents.
struct PCMDCurve {
    Index M = 0;
    Eigen::VectorXd ade;
    Eigen::VectorXd fde;

    double k(Index m) const { return static_cast<double>(m) / static_cast<double>(M); }
};

/// Per-latent distances for one evaluation sample.
struct LatentDistances {
    Eigen::RowVectorXd probs;  // prior probabilities of the evaluated latents
    Eigen::VectorXd ade;
    Eigen::VectorXd fde;
};

/// Order of latents by descending probability, lowest index first on ties.
std::vector<Index> rank_by_probability(const Eigen::RowVectorXd& probs);

/// Sort-and-cumulative-minimum for one sample.
PCMDCurve pcmd_curve(const LatentDistances& d);

/// Unweighted mean of per-sample curves, which must share M.
PCMDCurve mean_curve(std::span<const PCMDCurve> curves);

/// Decodes every latent of every sample with frozen weights (exact enumeration).
std::vector<LatentDistances> enumerate_latents(const ModelParams& params, std::span<const TrajectorySample> samples);

/// Exact PCMD for one sample over its top-M latents (M <= K).
PCMDCurve pcmd(const ModelParams& params, const TrajectorySample& sample, Index M);
/// Monte-Carlo PCMD: M latents drawn from the prior (with replacement), then ranked.
PCMDCurve pcmd_sampled(const ModelParams& params, const TrajectorySample& sample, Index M, std::mt19937_64& rng);

struct Displacement {
    double ade = 0.0;
    double fde = 0.0;
};

/// Best of the n most probable latents (equals the PCMD value at m = n).
Displacement best_of_n_exact(const ModelParams& params, const TrajectorySample& sample, Index n);
/// Best of n latents drawn from the prior.
Displacement best_of_n_sampled(const ModelParams& params, const TrajectorySample& sample, Index n,
                               std::mt19937_64& rng);

/// Majority-label purity of latent assignments.
double pattern_purity(std::span<const Index> latent, std::span<const int> labels);
/// Same, pulling labels from samples; throws if any sample lacks a pattern label.
double pattern_purity(std::span<const Index> latent, std::span<const TrajectorySample> samples);

struct MetricReport {
    Displacement most_likely;
    Displacement best_of_n;
    Index n = 20;
    PCMDCurve pcmd;
    std::size_t n_samples = 0;
    /// Purity of the prior argmax against pattern labels; negative when unlabeled.
    double purity = -1.0;
};

/// Exact-enumeration evaluation: PCMD over all K latents, most-likely and
/// exact-rank best-of-n.
MetricReport evaluate_metrics(const ModelParams& params, std::span<const TrajectorySample> samples, Index best_of_n);

/// Prior argmax per sample.
std::vector<Index> prior_argmax(const ModelParams& params, std::span<const TrajectorySample> samples);

void write_pcmd_csv(const std::filesystem::path& path, const PCMDCurve& curve);
void write_metric_report(const std::filesystem::path& path, const MetricReport& report);
/// CSV "scene,ped,pattern_label,prior_probs_0..K-1", one row per sample.
void dump_latents(const ModelParams& params, std::span<const TrajectorySample> samples,
                  const std::filesystem::path& path);

}  // namespace disdis
