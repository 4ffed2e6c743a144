#include "disdis/objective.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

namespace disdis {

std::string to_string(Estimator e) { return e == Estimator::exact ? "exact" : "reinforce"; }

std::string to_string(Variant v) {
    switch (v) {
        case Variant::disdis: return "disdis";
        case Variant::cvae: return "cvae";
        case Variant::vae: return "vae";
        case Variant::infovae: return "infovae";
        case Variant::view_contrastive: return "view_contrastive";
    }
    return "?";
}

std::string to_string(Baseline b) { return b == Baseline::none ? "none" : "batch_mean"; }
std::string to_string(Reward r) { return r == Reward::neg_recon ? "recon" : "kl"; }

Estimator estimator_from_string(const std::string& s) {
    if (s == "exact") return Estimator::exact;
    if (s == "reinforce") return Estimator::reinforce;
    throw std::invalid_argument("unknown estimator '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
    for (Variant v : {Variant::disdis, Variant::cvae, Variant::vae, Variant::infovae, Variant::view_contrastive}) {
        if (to_string(v) == s) return v;
    }
    throw std::invalid_argument("unknown variant '" + s + "'");
}

Baseline baseline_from_string(const std::string& s) {
    if (s == "none") return Baseline::none;
    if (s == "batch_mean") return Baseline::batch_mean;
    throw std::invalid_argument("unknown baseline '" + s + "'");
}

Reward reward_from_string(const std::string& s) {
    if (s == "recon") return Reward::neg_recon;
    if (s == "kl") return Reward::neg_kl;
    throw std::invalid_argument("unknown reward '" + s + "'");
}

void LossConfig::validate() const {
    if (!(lambda >= 0.0) || !(mu >= 0.0)) throw std::invalid_argument("loss: lambda and mu must be >= 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("loss: temperature must be > 0");
    if (reinforce_samples < 1) throw std::invalid_argument("loss: reinforce_samples must be >= 1");
}

// ---- closed forms ----------------------------------------------------------

namespace {

Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
}

}  // namespace

double kl_categorical(const CategoricalDistribution& q, const CategoricalDistribution& p) {
    if (q.size() != p.size()) {
        throw std::invalid_argument("kl_categorical: K mismatch (" + std::to_string(q.size()) + " vs " +
                                    std::to_string(p.size()) + ")");
    }
    const Eigen::RowVectorXd lq = log_softmax(q.logits);
    const Eigen::RowVectorXd lp = log_softmax(p.logits);
    return (lq.array().exp() * (lq - lp).array()).sum();
}

double recon_nll(const FutTrack& pred, const FutTrack& fut) { return 0.5 * (fut - pred).squaredNorm(); }

double recon_nll(const ModelParams& params, const Eigen::RowVectorXd& f, const FutTrack& fut, Index z) {
    return recon_nll(decode(params, f, z), fut);
}

double l2_exact(const ModelParams& params, const Eigen::RowVectorXd& f, const FutTrack& fut,
                const CategoricalDistribution& q) {
    if (q.size() != params.config.K) throw std::invalid_argument("l2_exact: K mismatch");
    double acc = 0.0;
    for (Index k = 0; k < q.size(); ++k) acc += q.probs(k) * recon_nll(params, f, fut, k);
    return acc;
}

double density_ratio_h(const Eigen::RowVectorXd& z_code, const Eigen::RowVectorXd& f, const Matrix& W,
                       double temperature) {
    if (W.rows() != f.size() || W.cols() != z_code.size()) {
        throw std::invalid_argument("density_ratio_h: W must be dim(f) x dim(z_code)");
    }
    if (!(temperature > 0.0)) throw std::invalid_argument("density_ratio_h: temperature must be > 0");
    return std::exp(z_code.dot(W.transpose() * f.transpose()) / temperature);
}

double info_nce(const Matrix& s) {
    if (s.rows() != s.cols() || s.rows() < 2) {
        throw std::invalid_argument("info_nce: need a square similarity matrix with at least 2 rows");
    }
    double acc = 0.0;
    for (Index i = 0; i < s.rows(); ++i) acc -= log_softmax(s.row(i))(i);
    return acc / static_cast<double>(s.rows());
}

// ---- tape versions -------------------------------------------------------------

Var kl_categorical(Var q_logits, Var p_logits) {
    if (q_logits.cols() != p_logits.cols()) {
        throw std::invalid_argument("kl_categorical: K mismatch");
    }
    Var lq = ad::log_softmax_rows(q_logits);
    Var lp = ad::log_softmax_rows(p_logits);
    return ad::row_sum(ad::mul(ad::exp(lq), lq - lp));
}

Var kl_to_uniform(Var q_logits) {
    Tape& t = *q_logits.tape;
    return kl_categorical(q_logits, t.constant(Matrix::Zero(q_logits.rows(), q_logits.cols())));
}

Var info_nce(Var anchors, Var positives, double temperature) {
    const Index n = anchors.rows();
    if (n < 2 || positives.rows() != n) {
        throw std::invalid_argument("info_nce: batch size must be >= 2 with one positive per anchor");
    }
    Tape& t = *anchors.tape;
    Var s = ad::scale(ad::matmul(anchors, ad::transpose(positives)), 1.0 / temperature);
    Var diag = ad::sum(ad::mul(ad::log_softmax_rows(s), t.constant(Matrix::Identity(n, n))));
    return ad::scale(diag, -1.0 / static_cast<double>(n));
}

Var l3_contrastive(Var f, Var q_probs, Var W, Var codes, double temperature) {
    if (f.rows() < 2) throw std::invalid_argument("l3_contrastive: batch size must be >= 2");
    return info_nce(ad::matmul(f, W), ad::matmul(q_probs, codes), temperature);
}

MiBoundResult mi_bound_check(const Matrix& joint, int n_candidates) {
    if (joint.size() == 0 || (joint.array() < 0.0).any() || std::abs(joint.sum() - 1.0) > 1e-9) {
        throw std::invalid_argument("mi_bound_check: joint must be non-negative and sum to 1");
    }
    if (n_candidates < 1) throw std::invalid_argument("mi_bound_check: N' must be >= 1");
    const Eigen::VectorXd px = joint.rowwise().sum();
    const Eigen::RowVectorXd pz = joint.colwise().sum();
    const Index nx = joint.rows();
    const Index nz = joint.cols();

    MiBoundResult r;
    for (Index x = 0; x < nx; ++x)
        for (Index z = 0; z < nz; ++z)
            if (joint(x, z) > 0.0) r.mi += joint(x, z) * std::log(joint(x, z) / (px(x) * pz(z)));

    std::vector<Index> support;
    for (Index z = 0; z < nz; ++z)
        if (pz(z) > 0.0) support.push_back(z);
    const int n_neg = n_candidates - 1;
    if (std::pow(static_cast<double>(support.size()), n_neg) > 1e7) {
        throw std::invalid_argument("mi_bound_check: negative-tuple enumeration too large");
    }

    // h(z, x) = p(z|x) / p(z)
    auto h = [&](Index x, Index z) { return joint(x, z) / (px(x) * pz(z)); };

    std::vector<std::size_t> odo(static_cast<std::size_t>(n_neg), 0);
    double loss = 0.0;
    for (Index x = 0; x < nx; ++x) {
        if (px(x) <= 0.0) continue;
        for (Index zp : support) {
            const double w_pos = joint(x, zp);
            if (w_pos <= 0.0) continue;
            const double h_pos = h(x, zp);
            std::fill(odo.begin(), odo.end(), 0);
            while (true) {
                double w = w_pos;
                double denom = h_pos;
                for (std::size_t j : odo) {
                    w *= pz(support[j]);
                    denom += h(x, support[j]);
                }
                loss -= w * std::log(h_pos / denom);
                std::size_t d = 0;
                while (d < odo.size() && ++odo[d] == support.size()) odo[d++] = 0;
                if (d == odo.size()) break;
            }
        }
    }
    r.l3_value = loss;
    r.bound = -r.mi + std::log(static_cast<double>(n_candidates));
    r.bound_holds = r.l3_value >= r.bound - 1e-12;
    return r;
}

ReinforceTerms l2_reinforce(ModelGraph& graph, std::span<const TrajectorySample> batch, Var f, Var q_logits,
                            Var p_logits, int n_samples, Baseline baseline, Reward reward, std::mt19937_64& rng) {
    if (n_samples < 1) throw std::invalid_argument("l2_reinforce: n_samples must be >= 1");
    Tape& tape = graph.tape();
    const Index B = q_logits.rows();
    const Index K = q_logits.cols();
    const Index N = B * n_samples;

    // Draw latents, then decode each distinct (sample, latent) pair once.
    std::vector<Index> draw_row(static_cast<std::size_t>(N));
    std::vector<Index> draw_z(static_cast<std::size_t>(N));
    for (Index b = 0; b < B; ++b) {
        const auto q = CategoricalDistribution::from_logits(q_logits.value().row(b));
        for (int i = 0; i < n_samples; ++i) {
            draw_row[b * n_samples + i] = b;
            draw_z[b * n_samples + i] = sample_z(q, rng);
        }
    }
    std::map<std::pair<Index, Index>, Index> unique;
    std::vector<Index> u_row;
    std::vector<Index> u_z;
    std::vector<Index> draw_to_unique(static_cast<std::size_t>(N));
    for (Index i = 0; i < N; ++i) {
        auto [it, fresh] = unique.try_emplace({draw_row[i], draw_z[i]}, static_cast<Index>(u_row.size()));
        if (fresh) {
            u_row.push_back(draw_row[i]);
            u_z.push_back(draw_z[i]);
        }
        draw_to_unique[i] = it->second;
    }
    const Decoded dec = graph.decode(f, u_row, u_z);
    Var nll_unique = graph.recon_nll(dec, batch, u_row);
    Var nll = ad::gather_rows(nll_unique, draw_to_unique);
    Var pathwise = ad::mean(nll);

    // Flattened log q and log p at the drawn (row, latent) cells.
    std::vector<Index> flat(static_cast<std::size_t>(N));
    for (Index i = 0; i < N; ++i) flat[i] = draw_row[i] * K + draw_z[i];
    Var log_q = ad::gather_rows(ad::reshape(ad::log_softmax_rows(q_logits), B * K, 1), flat);

    Eigen::VectorXd R(N);
    if (reward == Reward::neg_recon) {
        R = -nll.value().col(0);
    } else {
        const Matrix lp = ad::log_softmax_rows(tape.constant(p_logits.value())).value();
        for (Index i = 0; i < N; ++i) R(i) = -(log_q.value()(i, 0) - lp(draw_row[i], draw_z[i]));
    }
    if (baseline == Baseline::batch_mean) R.array() -= R.mean();

    // d/dphi of sum_i c_i log q(z_i) with c_i = -R_i / N; the offset keeps the value at zero.
    Matrix coeff = -R / static_cast<double>(N);
    const double offset = log_q.value().col(0).dot(coeff.col(0));
    Var score = ad::sub(ad::sum(ad::mul(log_q, tape.constant(coeff))), tape.constant(Matrix::Constant(1, 1, offset)));

    ReinforceTerms out;
    out.surrogate = pathwise + score;
    out.estimate = pathwise.scalar();
    return out;
}

LossTerms build_loss(ModelGraph& graph, std::span<const TrajectorySample> batch, const LossConfig& config,
                     std::mt19937_64& rng) {
    config.validate();
    if (batch.empty()) throw std::invalid_argument("build_loss: empty batch");
    Tape& tape = graph.tape();
    const Index B = static_cast<Index>(batch.size());
    const Index K = graph.config().K;

    Var f = graph.embed_history(batch);
    Var g = graph.embed_future(batch);
    Var q_logits = graph.posterior_logits(f, g);
    Var p_logits = config.variant == Variant::vae ? tape.constant(Matrix::Zero(B, K)) : graph.prior_logits(f);
    Var l1 = ad::mean(kl_categorical(q_logits, p_logits));
    Var q = ad::softmax_rows(q_logits);

    Var l2;
    if (config.estimator == Estimator::exact) {
        const Decoded dec = graph.decode_all(f);
        std::vector<Index> rows(static_cast<std::size_t>(B * K));
        for (Index i = 0; i < B * K; ++i) rows[i] = i / K;
        Var nll = ad::reshape(graph.recon_nll(dec, batch, rows), B, K);
        l2 = ad::mean(ad::row_sum(ad::mul(q, nll)));
    } else {
        l2 = l2_reinforce(graph, batch, f, q_logits, p_logits, config.reinforce_samples, config.baseline,
                          config.reward, rng)
                 .surrogate;
    }

    Var l3;
    bool has_l3 = false;
    switch (config.variant) {
        case Variant::disdis:
            l3 = l3_contrastive(f, q, graph.contrastive_w(), graph.latent_codes(), config.temperature);
            has_l3 = true;
            break;
        case Variant::infovae: {
            Var q_bar = ad::scale(ad::matmul(tape.constant(Matrix::Ones(1, B)), q), 1.0 / static_cast<double>(B));
            l3 = ad::sum(kl_to_uniform(ad::log(q_bar)));
            has_l3 = true;
            break;
        }
        case Variant::view_contrastive: {
            std::uniform_int_distribution<int> turn(1, 23);
            std::vector<TrajectorySample> views(batch.begin(), batch.end());
            for (TrajectorySample& v : views) v = rotate(v, turn(rng) * std::numbers::pi / 12.0);
            Var f_view = graph.embed_history(views);
            Var W = graph.contrastive_w();
            l3 = info_nce(ad::matmul(f, W), ad::matmul(f_view, W), config.temperature);
            has_l3 = true;
            break;
        }
        case Variant::cvae:
        case Variant::vae:
            break;
    }

    Var total = l1;
    if (config.lambda > 0.0) total = total + ad::scale(l2, config.lambda);
    if (has_l3 && config.mu > 0.0) total = total + ad::scale(l3, config.mu);

    LossTerms out;
    out.total = total;
    out.report.l1_kl = l1.scalar();
    out.report.l2_recon = l2.scalar();
    out.report.l3_contrastive = has_l3 ? l3.scalar() : 0.0;
    out.report.total = total.scalar();
    return out;
}

LossReport total_loss(std::span<const TrajectorySample> batch, ModelParams& params, const LossConfig& config,
                      std::mt19937_64& rng) {
    params.zero_grad();
    Tape tape;
    ModelGraph graph(tape, params, true);
    LossTerms terms = build_loss(graph, batch, config, rng);
    tape.backward(terms.total);
    return terms.report;
}

}  // namespace disdis
