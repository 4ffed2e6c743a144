#pragma once

#include "disdis/autodiff.hpp"
#include "disdis/model.hpp"

#include <Eigen/Core>

#include <random>
#include <span>
#include <string>

namespace disdis {

enum class Estimator { exact, reinforce };
enum class Variant { disdis, cvae, vae, infovae, view_contrastive };
enum class Baseline { none, batch_mean };
/// What the score-function estimator treats as reward for a sampled latent.
enum class Reward { neg_recon, neg_kl };

std::string to_string(Estimator e);
std::string to_string(Variant v);
std::string to_string(Baseline b);
std::string to_string(Reward r);
Estimator estimator_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);
Baseline baseline_from_string(const std::string& s);
Reward reward_from_string(const std::string& s);

struct LossConfig {
    double lambda = 1.0;
    double mu = 0.1;
    double temperature = 0.5;
    Estimator estimator = Estimator::exact;
    Variant variant = Variant::disdis;
    int reinforce_samples = 16;
    Baseline baseline = Baseline::batch_mean;
    Reward reward = Reward::neg_recon;

    /// Throws std::invalid_argument unless lambda, mu >= 0, temperature > 0, reinforce_samples >= 1.
    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

struct LossReport {
    double l1_kl = 0.0;
    double l2_recon = 0.0;
    double l3_contrastive = 0.0;
    double total = 0.0;
};

// ---- closed-form scalar versions ---------------------------------------

/// sum_k q_k (log q_k - log p_k), evaluated from the logits.
double kl_categorical(const CategoricalDistribution& q, const CategoricalDistribution& p);

/// 0.5 * sum_t ||fut_t - pred_t||^2 (unit-variance Gaussian NLL without constants).
double recon_nll(const FutTrack& pred, const FutTrack& fut);
double recon_nll(const ModelParams& params, const Eigen::RowVectorXd& f, const FutTrack& fut, Index z);

/// Exact expectation sum_k q_k * recon_nll(k).
double l2_exact(const ModelParams& params, const Eigen::RowVectorXd& f, const FutTrack& fut,
                const CategoricalDistribution& q);

/// exp(z_code . (W^T f) / temperature).
double density_ratio_h(const Eigen::RowVectorXd& z_code, const Eigen::RowVectorXd& f, const Matrix& W,
                       double temperature = 1.0);

/// mean_i -log softmax(S)_{ii} for a square similarity matrix S (already scaled).
double info_nce(const Matrix& similarities);

// ---- tape versions (batched) ----------------------------------------------

/// Per-row KL(q || p) from logits, rows x 1.
Var kl_categorical(Var q_logits, Var p_logits);
/// KL(q || uniform) per row.
Var kl_to_uniform(Var q_logits);
/// InfoNCE over in-batch candidates: s_ij = anchor_i . positive_j / temperature.
Var info_nce(Var anchors, Var positives, double temperature);
/// L3: anchors W^T f_i against the posterior-expected latent codes sum_k q_i(k) E_k.
Var l3_contrastive(Var f, Var q_probs, Var W, Var codes, double temperature);

struct MiBoundResult {
    double l3_value = 0.0;  // expected InfoNCE loss with the exact density ratio
    double mi = 0.0;        // brute-force I(x; z) in nats
    double bound = 0.0;     // -I + log N'
    bool bound_holds = false;
};

/// Exact check of L3 >= -I(z, x) + log N' on an explicit joint table p(x, z)
/// (rows x, cols z) using the density ratio h = p(z|x) / p(z). The InfoNCE
/// expectation is enumerated over the positive z ~ p(z|x) and all N'-1
/// negatives z_j ~ p(z). Throws std::invalid_argument for a joint that is not
/// a distribution (negative entries or sum off 1 by more than 1e-9).
MiBoundResult mi_bound_check(const Matrix& joint, int n_candidates);

/// Forward pieces of one batch, kept for callers that need more than the total.
struct LossTerms {
    Var total;
    LossReport report;
};

/// Builds the objective of `config.variant` for one mini-batch on `graph`'s tape:
///   disdis:           L1 + lambda L2 + mu L3
///   cvae:             L1 + lambda L2
///   vae:              KL(q || uniform) + lambda L2
///   infovae:          cvae + mu KL(mean batch posterior || uniform)
///   view_contrastive: cvae + mu InfoNCE(W^T f(x), W^T f(rotated x))
/// Per-sample terms are batch means. `rng` drives REINFORCE draws and view rotations.
LossTerms build_loss(ModelGraph& graph, std::span<const TrajectorySample> batch, const LossConfig& config,
                     std::mt19937_64& rng);

/// Evaluates the loss and leaves gradients in params (zeroed first).
LossReport total_loss(std::span<const TrajectorySample> batch, ModelParams& params, const LossConfig& config,
                      std::mt19937_64& rng);

/// Score-function surrogate for L2 on sampled latents. Its value is the Monte
/// Carlo estimate of L2; its gradient is -(1/N) sum_i grad log q(z_i) R_i with
/// respect to the posterior plus the pathwise gradient of the sampled decodes.
/// `q_logits` is B x K; n_samples latents are drawn per sample from q.
struct ReinforceTerms {
    Var surrogate;       // scalar; differentiate this
    double estimate = 0; // mean reconstruction loss over the draws
};
ReinforceTerms l2_reinforce(ModelGraph& graph, std::span<const TrajectorySample> batch, Var f, Var q_logits,
                            Var p_logits, int n_samples, Baseline baseline, Reward reward, std::mt19937_64& rng);

}  // namespace disdis
