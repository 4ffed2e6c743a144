#pragma once

#include "disdis/autodiff.hpp"
#include "disdis/dataio.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace disdis {

using ad::Index;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

struct ModelConfig {
    int K = 80;           // number of discrete latent values
    int d_f = 64;         // history embedding f
    int d_g = 32;         // future embedding (posterior branch)
    int d_c = 32;         // latent code / contrastive space
    int enc_hidden = 64;  // history and future recurrent cells
    int dec_hidden = 64;

    bool operator==(const ModelConfig&) const = default;
};

/// K-way distribution over the latent. probs is the softmax of logits.
struct CategoricalDistribution {
    Eigen::RowVectorXd logits;
    Eigen::RowVectorXd probs;

    static CategoricalDistribution from_logits(const Eigen::RowVectorXd& logits);
    Index size() const { return logits.size(); }
    /// Highest-probability index, lowest index on ties.
    Index argmax() const;
};

/// Weights of the history encoder, future encoder, prior / posterior heads,
/// latent code table, decoder and contrastive projection.
struct ModelParams {
    ModelConfig config;

    // history encoder: gated recurrent cell over displacements + tanh readout to f
    Parameter enc_wx, enc_wh, enc_bx, enc_bh, enc_out_w, enc_out_b;
    // future encoder (posterior branch), same architecture, readout to d_g
    Parameter fut_wx, fut_wh, fut_bx, fut_bh, fut_out_w, fut_out_b;
    Parameter prior_w, prior_b;          // f -> K logits
    Parameter post_w, post_b;            // [f, g] -> K logits
    Parameter latent_embed;              // K x d_c
    Parameter dec_init_f, dec_init_e, dec_init_b;
    Parameter dec_wx, dec_wh, dec_bx, dec_bh, dec_out_w, dec_out_b;
    Parameter contrastive_w;             // d_f x d_c

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    /// Parameters that only influence the posterior q(z|x,y).
    std::vector<Parameter*> posterior_only();
    std::size_t parameter_count() const;
    void zero_grad();
};

/// One gated recurrent step as a single tape node. Gate columns of wx / wh
/// are ordered [update | reset | candidate], each `hidden` wide:
///   u = sigmoid(gx_u + gh_u), r = sigmoid(gx_r + gh_r),
///   c = tanh(gx_c + r * gh_c), h' = c + u * (h - c)
/// with gx = x wx + bx and gh = h wh + bh.
Var gru_cell(Var x, Var h, Var wx, Var wh, Var bx, Var bh);

/// Result of rolling the decoder for a set of (sample, latent) rows.
struct Decoded {
    std::vector<Var> positions;  // kPredLen entries, each rows x 2, cumulative from the origin
};

/// Binds a ModelParams to one tape and builds batched forward graphs.
/// With trainable = false the weights enter the tape as constants, which
/// skips all backward bookkeeping (evaluation).
class ModelGraph {
public:
    ModelGraph(Tape& tape, ModelParams& params, bool trainable = true);

    Tape& tape() { return tape_; }
    const ModelConfig& config() const { return cfg_; }

    /// B x d_f history embeddings.
    Var embed_history(std::span<const TrajectorySample> batch);
    /// B x d_g future embeddings.
    Var embed_future(std::span<const TrajectorySample> batch);
    Var prior_logits(Var f);
    Var posterior_logits(Var f, Var g);
    /// K x d_c latent code table.
    Var latent_codes() const { return latent_embed_; }
    Var contrastive_w() const { return contrastive_w_; }

    /// Decodes row r from f.row(sample_rows[r]) and latent z[r].
    Decoded decode(Var f, std::span<const Index> sample_rows, std::span<const Index> z);
    /// Decodes every latent for every sample; row b*K + k holds (sample b, latent k).
    Decoded decode_all(Var f);

    /// 0.5 * sum_t ||target_t - pos_t||^2 per decoded row (rows x 1).
    Var recon_nll(const Decoded& d, std::span<const TrajectorySample> batch, std::span<const Index> sample_rows);

private:
    Var bind(Parameter& p);
    Var gru_step(Var x, Var h, Var wx, Var wh, Var bx, Var bh, int hidden);
    Var encode(const std::vector<Matrix>& steps, Var wx, Var wh, Var bx, Var bh, Var out_w, Var out_b,
               int hidden);

    Tape& tape_;
    ModelConfig cfg_;
    bool trainable_;
    Var enc_wx_, enc_wh_, enc_bx_, enc_bh_, enc_out_w_, enc_out_b_;
    Var fut_wx_, fut_wh_, fut_bx_, fut_bh_, fut_out_w_, fut_out_b_;
    Var prior_w_, prior_b_, post_w_, post_b_, latent_embed_;
    Var dec_init_f_, dec_init_e_, dec_init_b_;
    Var dec_wx_, dec_wh_, dec_bx_, dec_bh_, dec_out_w_, dec_out_b_;
    Var contrastive_w_;
};

/// Stacks decoded rows into per-row 12 x 2 trajectories.
std::vector<FutTrack> collect_trajectories(const Decoded& d);

// Single-sample conveniences over ModelGraph with frozen weights.

Eigen::RowVectorXd embed_history(const ModelParams& params, const ObsTrack& obs);
CategoricalDistribution prior_dist(const ModelParams& params, const Eigen::RowVectorXd& f);
CategoricalDistribution posterior_dist(const ModelParams& params, const Eigen::RowVectorXd& f, const FutTrack& fut);
/// Throws std::out_of_range for z outside [0, K).
FutTrack decode(const ModelParams& params, const Eigen::RowVectorXd& f, Index z);
FutTrack most_likely_predict(const ModelParams& params, const ObsTrack& obs);

/// Inverse-CDF draw.
Index sample_z(const CategoricalDistribution& dist, std::mt19937_64& rng);

}  // namespace disdis
