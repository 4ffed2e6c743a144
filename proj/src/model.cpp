#include "disdis/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace disdis {

CategoricalDistribution CategoricalDistribution::from_logits(const Eigen::RowVectorXd& logits) {
    CategoricalDistribution d;
    d.logits = logits;
    Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
    d.probs = e / e.sum();
    return d;
}

Index CategoricalDistribution::argmax() const {
    Index best = 0;
    for (Index k = 1; k < probs.size(); ++k) {
        if (probs(k) > probs(best)) best = k;
    }
    return best;
}

namespace {

Matrix uniform_init(Index rows, Index cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    // row-major fill so the draw order matches the semantic layout
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = u(rng);
    return m;
}

Parameter weight(const char* name, Index fan_in, Index fan_out, std::mt19937_64& rng) {
    return Parameter(name, uniform_init(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
}

Parameter bias(const char* name, Index n) { return Parameter(name, Matrix::Zero(1, n)); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.K < 2 || cfg.d_f < 1 || cfg.d_g < 1 || cfg.d_c < 1 || cfg.enc_hidden < 1 || cfg.dec_hidden < 1) {
        throw std::invalid_argument("ModelParams::init: K must be >= 2 and all sizes positive");
    }
    std::mt19937_64 rng(seed);
    const Index H = cfg.enc_hidden;
    const Index D = cfg.dec_hidden;
    ModelParams p;
    p.config = cfg;
    p.enc_wx = weight("enc_wx", 2, 3 * H, rng);
    p.enc_wh = weight("enc_wh", H, 3 * H, rng);
    p.enc_bx = bias("enc_bx", 3 * H);
    p.enc_bh = bias("enc_bh", 3 * H);
    p.enc_out_w = weight("enc_out_w", H, cfg.d_f, rng);
    p.enc_out_b = bias("enc_out_b", cfg.d_f);
    p.fut_wx = weight("fut_wx", 2, 3 * H, rng);
    p.fut_wh = weight("fut_wh", H, 3 * H, rng);
    p.fut_bx = bias("fut_bx", 3 * H);
    p.fut_bh = bias("fut_bh", 3 * H);
    p.fut_out_w = weight("fut_out_w", H, cfg.d_g, rng);
    p.fut_out_b = bias("fut_out_b", cfg.d_g);
    p.prior_w = weight("prior_w", cfg.d_f, cfg.K, rng);
    p.prior_b = bias("prior_b", cfg.K);
    p.post_w = weight("post_w", cfg.d_f + cfg.d_g, cfg.K, rng);
    p.post_b = bias("post_b", cfg.K);
    p.latent_embed = Parameter("latent_embed", uniform_init(cfg.K, cfg.d_c, 1.0, rng));
    p.dec_init_f = weight("dec_init_f", cfg.d_f, D, rng);
    p.dec_init_e = weight("dec_init_e", cfg.d_c, D, rng);
    p.dec_init_b = bias("dec_init_b", D);
    p.dec_wx = weight("dec_wx", 2, 3 * D, rng);
    p.dec_wh = weight("dec_wh", D, 3 * D, rng);
    p.dec_bx = bias("dec_bx", 3 * D);
    p.dec_bh = bias("dec_bh", 3 * D);
    p.dec_out_w = weight("dec_out_w", D, 2, rng);
    p.dec_out_b = bias("dec_out_b", 2);
    p.contrastive_w = weight("contrastive_w", cfg.d_f, cfg.d_c, rng);
    return p;
}

std::vector<Parameter*> ModelParams::all() {
    return {&enc_wx,     &enc_wh,     &enc_bx,     &enc_bh,      &enc_out_w,  &enc_out_b,    &fut_wx,
            &fut_wh,     &fut_bx,     &fut_bh,     &fut_out_w,   &fut_out_b,  &prior_w,      &prior_b,
            &post_w,     &post_b,     &latent_embed, &dec_init_f, &dec_init_e, &dec_init_b,  &dec_wx,
            &dec_wh,     &dec_bx,     &dec_bh,     &dec_out_w,   &dec_out_b,  &contrastive_w};
}

std::vector<const Parameter*> ModelParams::all() const {
    auto v = const_cast<ModelParams*>(this)->all();
    return {v.begin(), v.end()};
}

std::vector<Parameter*> ModelParams::posterior_only() {
    return {&fut_wx, &fut_wh, &fut_bx, &fut_bh, &fut_out_w, &fut_out_b, &post_w, &post_b};
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const Parameter* p : all()) n += static_cast<std::size_t>(p->size());
    return n;
}

void ModelParams::zero_grad() {
    for (Parameter* p : all()) p->zero_grad();
}

Var gru_cell(Var x, Var h, Var wx, Var wh, Var bx, Var bh) {
    const Matrix& xv = x.value();
    const Matrix& hv = h.value();
    const Index n = hv.rows();
    const Index H = hv.cols();
    if (xv.rows() != n || wx.rows() != xv.cols() || wh.rows() != H || wx.cols() != 3 * H || wh.cols() != 3 * H ||
        bx.rows() != 1 || bx.cols() != 3 * H || bh.rows() != 1 || bh.cols() != 3 * H) {
        throw ad::ShapeError("gru_cell: incompatible shapes x " + std::to_string(xv.rows()) + "x" +
                             std::to_string(xv.cols()) + ", h " + std::to_string(n) + "x" + std::to_string(H) +
                             ", wx " + std::to_string(wx.rows()) + "x" + std::to_string(wx.cols()));
    }
    Matrix gx = xv * wx.value();
    gx.rowwise() += bx.value().row(0);
    Matrix gh = hv * wh.value();
    gh.rowwise() += bh.value().row(0);
    Matrix u = (-(gx.leftCols(H) + gh.leftCols(H)).array()).exp().matrix();
    u = (1.0 + u.array()).inverse().matrix();
    Matrix r = (-(gx.middleCols(H, H) + gh.middleCols(H, H)).array()).exp().matrix();
    r = (1.0 + r.array()).inverse().matrix();
    Matrix ghc = gh.rightCols(H);
    Matrix c = (gx.rightCols(H).array() + r.array() * ghc.array()).tanh().matrix();
    Matrix out = c + (u.array() * (hv - c).array()).matrix();
    Tape& tape = *x.tape;
    return tape.record(std::move(out), {x, h, wx, wh, bx, bh},
                       [x, h, wx, wh, bx, bh, u = std::move(u), r = std::move(r), c = std::move(c),
                        ghc = std::move(ghc)](Tape& t, std::size_t self) {
                           const Matrix& G = t.adjoint(self);
                           const Matrix& hv = t.value(h);
                           const Index H = hv.cols();
                           Matrix dgx(G.rows(), 3 * H);
                           Matrix dgh(G.rows(), 3 * H);
                           auto da_u = dgx.leftCols(H).array();
                           da_u = G.array() * (hv - c).array() * u.array() * (1.0 - u.array());
                           auto dn = dgx.rightCols(H).array();
                           dn = G.array() * (1.0 - u.array()) * (1.0 - c.array().square());
                           dgx.middleCols(H, H).array() = dn * ghc.array() * r.array() * (1.0 - r.array());
                           dgh.leftCols(2 * H) = dgx.leftCols(2 * H);
                           dgh.rightCols(H).array() = dn * r.array();
                           if (t.needs_grad(wx)) t.accumulate(wx.id, t.value(x).transpose() * dgx);
                           if (t.needs_grad(bx)) t.accumulate(bx.id, dgx.colwise().sum());
                           if (t.needs_grad(wh)) t.accumulate(wh.id, hv.transpose() * dgh);
                           if (t.needs_grad(bh)) t.accumulate(bh.id, dgh.colwise().sum());
                           if (t.needs_grad(x)) t.accumulate(x.id, dgx * t.value(wx).transpose());
                           if (t.needs_grad(h)) {
                               Matrix dh = dgh * t.value(wh).transpose();
                               dh.array() += G.array() * u.array();
                               t.accumulate(h.id, dh);
                           }
                       });
}

ModelGraph::ModelGraph(Tape& tape, ModelParams& params, bool trainable)
    : tape_(tape), cfg_(params.config), trainable_(trainable) {
    enc_wx_ = bind(params.enc_wx);
    enc_wh_ = bind(params.enc_wh);
    enc_bx_ = bind(params.enc_bx);
    enc_bh_ = bind(params.enc_bh);
    enc_out_w_ = bind(params.enc_out_w);
    enc_out_b_ = bind(params.enc_out_b);
    fut_wx_ = bind(params.fut_wx);
    fut_wh_ = bind(params.fut_wh);
    fut_bx_ = bind(params.fut_bx);
    fut_bh_ = bind(params.fut_bh);
    fut_out_w_ = bind(params.fut_out_w);
    fut_out_b_ = bind(params.fut_out_b);
    prior_w_ = bind(params.prior_w);
    prior_b_ = bind(params.prior_b);
    post_w_ = bind(params.post_w);
    post_b_ = bind(params.post_b);
    latent_embed_ = bind(params.latent_embed);
    dec_init_f_ = bind(params.dec_init_f);
    dec_init_e_ = bind(params.dec_init_e);
    dec_init_b_ = bind(params.dec_init_b);
    dec_wx_ = bind(params.dec_wx);
    dec_wh_ = bind(params.dec_wh);
    dec_bx_ = bind(params.dec_bx);
    dec_bh_ = bind(params.dec_bh);
    dec_out_w_ = bind(params.dec_out_w);
    dec_out_b_ = bind(params.dec_out_b);
    contrastive_w_ = bind(params.contrastive_w);
}

Var ModelGraph::bind(Parameter& p) { return trainable_ ? tape_.param(p) : tape_.constant(p.value); }

Var ModelGraph::gru_step(Var x, Var h, Var wx, Var wh, Var bx, Var bh, int hidden) {
    if (wh.rows() != hidden) throw ad::ShapeError("gru_step: hidden size does not match recurrent weights");
    return gru_cell(x, h, wx, wh, bx, bh);
}

Var ModelGraph::encode(const std::vector<Matrix>& steps, Var wx, Var wh, Var bx, Var bh, Var out_w, Var out_b,
                       int hidden) {
    const Index rows = steps.front().rows();
    Var h = tape_.constant(Matrix::Zero(rows, hidden));
    for (const Matrix& x : steps) h = gru_step(tape_.constant(x), h, wx, wh, bx, bh, hidden);
    return ad::tanh(ad::add(ad::matmul(h, out_w), out_b));
}

Var ModelGraph::embed_history(std::span<const TrajectorySample> batch) {
    const Index B = static_cast<Index>(batch.size());
    std::vector<Matrix> steps(kObsLen, Matrix::Zero(B, 2));
    for (Index b = 0; b < B; ++b) {
        const ObsTrack& o = batch[b].obs;
        for (int t = 1; t < kObsLen; ++t) steps[t].row(b) = o.row(t) - o.row(t - 1);
    }
    return encode(steps, enc_wx_, enc_wh_, enc_bx_, enc_bh_, enc_out_w_, enc_out_b_, cfg_.enc_hidden);
}

Var ModelGraph::embed_future(std::span<const TrajectorySample> batch) {
    const Index B = static_cast<Index>(batch.size());
    std::vector<Matrix> steps(kPredLen, Matrix::Zero(B, 2));
    for (Index b = 0; b < B; ++b) {
        const TrajectorySample& s = batch[b];
        Eigen::RowVector2d prev = s.obs.row(kObsLen - 1);
        for (int t = 0; t < kPredLen; ++t) {
            steps[t].row(b) = s.fut.row(t) - prev;
            prev = s.fut.row(t);
        }
    }
    return encode(steps, fut_wx_, fut_wh_, fut_bx_, fut_bh_, fut_out_w_, fut_out_b_, cfg_.enc_hidden);
}

Var ModelGraph::prior_logits(Var f) { return ad::add(ad::matmul(f, prior_w_), prior_b_); }

Var ModelGraph::posterior_logits(Var f, Var g) {
    return ad::add(ad::matmul(ad::concat_cols(f, g), post_w_), post_b_);
}

Decoded ModelGraph::decode(Var f, std::span<const Index> sample_rows, std::span<const Index> z) {
    if (sample_rows.size() != z.size()) throw std::invalid_argument("decode: row and latent lists differ in length");
    for (Index k : z) {
        if (k < 0 || k >= cfg_.K) {
            throw std::out_of_range("decode: latent index " + std::to_string(k) + " outside [0, " +
                                    std::to_string(cfg_.K) + ")");
        }
    }
    const int D = cfg_.dec_hidden;
    Var from_f = ad::gather_rows(ad::matmul(f, dec_init_f_), sample_rows);
    Var from_z = ad::gather_rows(ad::matmul(latent_embed_, dec_init_e_), z);
    Var h = ad::tanh(ad::add(from_f + from_z, dec_init_b_));

    Decoded out;
    out.positions.reserve(kPredLen);
    Var step = tape_.constant(Matrix::Zero(static_cast<Index>(z.size()), 2));
    Var pos = step;
    for (int t = 0; t < kPredLen; ++t) {
        h = gru_step(step, h, dec_wx_, dec_wh_, dec_bx_, dec_bh_, D);
        step = ad::add(ad::matmul(h, dec_out_w_), dec_out_b_);
        pos = t == 0 ? step : pos + step;
        out.positions.push_back(pos);
    }
    return out;
}

Decoded ModelGraph::decode_all(Var f) {
    const Index B = f.rows();
    const Index K = cfg_.K;
    std::vector<Index> rows(static_cast<std::size_t>(B * K));
    std::vector<Index> z(rows.size());
    for (Index b = 0; b < B; ++b) {
        for (Index k = 0; k < K; ++k) {
            rows[b * K + k] = b;
            z[b * K + k] = k;
        }
    }
    return decode(f, rows, z);
}

Var ModelGraph::recon_nll(const Decoded& d, std::span<const TrajectorySample> batch,
                          std::span<const Index> sample_rows) {
    const Index n = static_cast<Index>(sample_rows.size());
    Var acc;
    for (int t = 0; t < kPredLen; ++t) {
        Matrix target(n, 2);
        for (Index r = 0; r < n; ++r) target.row(r) = batch[sample_rows[r]].fut.row(t);
        Var sq = ad::row_sum(ad::square(d.positions[t] - tape_.constant(std::move(target))));
        acc = t == 0 ? sq : acc + sq;
    }
    return ad::scale(acc, 0.5);
}

std::vector<FutTrack> collect_trajectories(const Decoded& d) {
    const Index n = d.positions.front().rows();
    std::vector<FutTrack> out(static_cast<std::size_t>(n));
    for (int t = 0; t < kPredLen; ++t) {
        const Matrix& p = d.positions[t].value();
        for (Index r = 0; r < n; ++r) out[r].row(t) = p.row(r);
    }
    return out;
}

namespace {
// Frozen graphs only read parameter values.
ModelParams& unfrozen(const ModelParams& p) { return const_cast<ModelParams&>(p); }
}  // namespace

Eigen::RowVectorXd embed_history(const ModelParams& params, const ObsTrack& obs) {
    Tape tape;
    ModelGraph g(tape, unfrozen(params), false);
    TrajectorySample s;
    s.obs = obs;
    return g.embed_history(std::span(&s, 1)).value();
}

CategoricalDistribution prior_dist(const ModelParams& params, const Eigen::RowVectorXd& f) {
    Tape tape;
    ModelGraph g(tape, unfrozen(params), false);
    return CategoricalDistribution::from_logits(g.prior_logits(tape.constant(f)).value());
}

CategoricalDistribution posterior_dist(const ModelParams& params, const Eigen::RowVectorXd& f, const FutTrack& fut) {
    Tape tape;
    ModelGraph g(tape, unfrozen(params), false);
    TrajectorySample s;
    s.fut = fut;
    Var gv = g.embed_future(std::span(&s, 1));
    return CategoricalDistribution::from_logits(g.posterior_logits(tape.constant(f), gv).value());
}

FutTrack decode(const ModelParams& params, const Eigen::RowVectorXd& f, Index z) {
    Tape tape;
    ModelGraph g(tape, unfrozen(params), false);
    const Index row = 0;
    return collect_trajectories(g.decode(tape.constant(f), std::span(&row, 1), std::span(&z, 1))).front();
}

FutTrack most_likely_predict(const ModelParams& params, const ObsTrack& obs) {
    const Eigen::RowVectorXd f = embed_history(params, obs);
    return decode(params, f, prior_dist(params, f).argmax());
}

Index sample_z(const CategoricalDistribution& dist, std::mt19937_64& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double cdf = 0.0;
    Index last_positive = 0;
    for (Index k = 0; k < dist.probs.size(); ++k) {
        if (dist.probs(k) <= 0.0) continue;
        cdf += dist.probs(k);
        last_positive = k;
        if (u < cdf) return k;
    }
    return last_positive;
}

}  // namespace disdis
