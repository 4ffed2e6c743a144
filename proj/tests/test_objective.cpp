#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace disdis;
using disdis::testing::random_matrix;
using disdis::testing::tiny_model;

namespace {

CategoricalDistribution from_probs(std::initializer_list<double> p) {
    Eigen::RowVectorXd logits(static_cast<Index>(p.size()));
    Index i = 0;
    for (double v : p) logits(i++) = std::log(v);
    return CategoricalDistribution::from_logits(logits);
}

double brute_force_mi(const Matrix& joint) {
    double mi = 0.0;
    for (Index x = 0; x < joint.rows(); ++x) {
        for (Index z = 0; z < joint.cols(); ++z) {
            if (joint(x, z) <= 0.0) continue;
            mi += joint(x, z) * std::log(joint(x, z) / (joint.row(x).sum() * joint.col(z).sum()));
        }
    }
    return mi;
}

std::vector<TrajectorySample> batch_of(int n, std::uint64_t seed) {
    auto all = synth_generate(default_personas(), (n + 3) / 4, seed);
    all.resize(static_cast<std::size_t>(n));
    return all;
}

std::vector<Matrix> grads_of(ModelParams& p) {
    std::vector<Matrix> out;
    for (Parameter* q : p.all()) out.push_back(q->grad);
    return out;
}

}  // namespace

TEST_CASE("categorical KL closed forms") {
    CHECK(std::abs(kl_categorical(from_probs({0.5, 0.5}), from_probs({0.25, 0.75})) -
                   (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0))) < 1e-9);
    CHECK(std::abs(kl_categorical(from_probs({0.5, 0.5}), from_probs({0.25, 0.75})) - 0.14384) < 1e-5);
    CHECK(std::abs(kl_categorical(from_probs({0.9, 0.1}), from_probs({0.1, 0.9})) -
                   (0.9 * std::log(9.0) + 0.1 * std::log(1.0 / 9.0))) < 1e-9);
    CHECK(std::abs(kl_categorical(from_probs({0.9, 0.1}), from_probs({0.1, 0.9})) - 1.7578) < 1e-4);
    const auto q = from_probs({0.2, 0.3, 0.5});
    CHECK(std::abs(kl_categorical(q, q)) < 1e-12);
    CHECK_THROWS_AS(kl_categorical(q, from_probs({0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("KL is non-negative and the tape version agrees with the scalar one") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const Matrix ql = random_matrix(1, 6, rng, -8, 8);
        const Matrix pl = random_matrix(1, 6, rng, -8, 8);
        const double kl = kl_categorical(CategoricalDistribution::from_logits(ql.row(0)),
                                         CategoricalDistribution::from_logits(pl.row(0)));
        CHECK(kl >= -1e-12);
        Tape t;
        CHECK(std::abs(kl_categorical(t.constant(ql), t.constant(pl)).scalar() - kl) < 1e-12);
    }
}

TEST_CASE("reconstruction NLL closed forms") {
    FutTrack gt = FutTrack::Random();
    CHECK(recon_nll(gt, gt) == 0.0);
    FutTrack shifted = gt;
    shifted.col(0).array() += 1.0;
    CHECK(std::abs(recon_nll(shifted, gt) - 6.0) < 1e-9);
    FutTrack further = gt;
    further.col(0).array() += 2.0;
    CHECK(recon_nll(further, gt) > recon_nll(shifted, gt));
}

TEST_CASE("exact L2 is the q-weighted sum of per-latent reconstructions") {
    const ModelParams p = ModelParams::init(tiny_model(4), 3);
    const auto s = batch_of(1, 1).front();
    const Eigen::RowVectorXd f = embed_history(p, s.obs);
    std::vector<double> nll;
    for (Index k = 0; k < 4; ++k) nll.push_back(recon_nll(decode(p, f, k), s.fut));
    const auto q = from_probs({0.1, 0.2, 0.3, 0.4});
    CHECK(std::abs(l2_exact(p, f, s.fut, q) - (0.1 * nll[0] + 0.2 * nll[1] + 0.3 * nll[2] + 0.4 * nll[3])) < 1e-9);
    Eigen::RowVectorXd onehot_logits = Eigen::RowVectorXd::Constant(4, -800.0);
    onehot_logits(2) = 0.0;
    CHECK(l2_exact(p, f, s.fut, CategoricalDistribution::from_logits(onehot_logits)) == nll[2]);
    CHECK(recon_nll(p, f, s.fut, 1) == nll[1]);
}

TEST_CASE("density ratio closed forms") {
    Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(3);
    f(0) = 1.0;
    const Matrix I = Matrix::Identity(3, 3);
    CHECK(density_ratio_h(Eigen::RowVectorXd::Zero(3), f, I) == 1.0);
    CHECK(std::abs(density_ratio_h(f, f, I, 1.0) - std::exp(1.0)) < 1e-12);
    std::mt19937_64 rng(4);
    const Matrix W = random_matrix(3, 2, rng);
    const Eigen::RowVectorXd z = random_matrix(1, 2, rng).row(0);
    const Eigen::RowVectorXd g = random_matrix(1, 3, rng).row(0);
    const double h1 = density_ratio_h(z, g, W, 1.0);
    for (double t : {0.1, 0.5, 2.0}) CHECK(std::abs(density_ratio_h(z, g, W, t) - std::pow(h1, 1.0 / t)) < 1e-9 * std::pow(h1, 1.0 / t));
    CHECK_THROWS_AS(density_ratio_h(z, g, W, 0.0), std::invalid_argument);
}

TEST_CASE("InfoNCE closed forms") {
    CHECK(std::abs(info_nce(Matrix::Identity(2, 2)) - std::log(1.0 + std::exp(-1.0))) < 1e-12);
    CHECK(std::abs(info_nce(Matrix::Identity(2, 2)) - 0.3133) < 1e-4);
    CHECK(std::abs(info_nce(Matrix::Constant(2, 2, 0.7)) - std::log(2.0)) < 1e-12);
    CHECK(std::abs(info_nce(Matrix::Constant(5, 5, -1.3)) - std::log(5.0)) < 1e-12);
    CHECK(info_nce(50.0 * Matrix::Identity(3, 3)) < 1e-20);
    CHECK_THROWS_AS(info_nce(Matrix::Identity(1, 1)), std::invalid_argument);

    // tape version with anchors/positives producing the identity similarity at temperature 1
    Tape t;
    Var a = t.constant(Matrix::Identity(2, 2));
    CHECK(std::abs(info_nce(a, a, 1.0).scalar() - std::log(1.0 + std::exp(-1.0))) < 1e-12);
    Var one = t.constant(Matrix::Ones(1, 2));
    CHECK_THROWS_AS(l3_contrastive(one, one, t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Identity(2, 2)), 1.0),
                    std::invalid_argument);
}

TEST_CASE("L3 is non-negative, bounded by log N' plus margin, and matches its scalar form") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = 2 + trial % 6;
        const double temp = 0.5;
        const Matrix f = random_matrix(n, 4, rng);
        const Matrix qlog = random_matrix(n, 5, rng);
        const Matrix W = random_matrix(4, 3, rng);
        const Matrix E = random_matrix(5, 3, rng);
        Tape t;
        Var q = ad::softmax_rows(t.constant(qlog));
        const double l3 = l3_contrastive(t.constant(f), q, t.constant(W), t.constant(E), temp).scalar();
        const Matrix S = (f * W) * (q.value() * E).transpose() / temp;
        CHECK(std::abs(l3 - info_nce(S)) < 1e-12);
        CHECK(l3 >= 0.0);
        // max-margin bound: -log softmax_ii <= log N' + max_j (s_ij - s_ii)
        double bound = 0.0;
        for (Index i = 0; i < n; ++i) bound += (S.row(i).array() - S(i, i)).maxCoeff();
        CHECK(l3 <= std::log(static_cast<double>(n)) + bound / static_cast<double>(n) + 1e-12);
    }
}

TEST_CASE("MI bound: independent, diagonal and random joints") {
    const Matrix independent = Matrix::Constant(4, 4, 1.0 / 16);
    const MiBoundResult ind = mi_bound_check(independent, 4);
    CHECK(std::abs(ind.mi) < 1e-12);
    CHECK(std::abs(ind.l3_value - std::log(4.0)) < 1e-12);
    CHECK(ind.bound_holds);

    const Matrix diagonal = 0.25 * Matrix::Identity(4, 4);
    const MiBoundResult diag = mi_bound_check(diagonal, 4);
    CHECK(std::abs(diag.mi - std::log(4.0)) < 1e-12);
    CHECK(std::abs(diag.bound) < 1e-12);
    // negatives hit the positive's class m ~ Binomial(3, 1/4) times; loss = E log(1 + m)
    double expected = 0.0;
    const double binom[] = {1, 3, 3, 1};
    for (int m = 0; m <= 3; ++m) expected += binom[m] * std::pow(0.25, m) * std::pow(0.75, 3 - m) * std::log(1.0 + m);
    CHECK(std::abs(diag.l3_value - expected) < 1e-12);
    CHECK(diag.bound_holds);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Matrix j(4, 4);
        for (Index i = 0; i < j.size(); ++i) j(i) = std::pow(u(rng), 3.0);
        j /= j.sum();
        for (int n : {2, 3, 4}) {
            const MiBoundResult r = mi_bound_check(j, n);
            CHECK(std::abs(r.mi - brute_force_mi(j)) < 1e-12);
            if (!r.bound_holds) ++violations;
        }
    }
    CHECK(violations == 0);

    CHECK_THROWS_AS(mi_bound_check(Matrix::Constant(2, 2, 0.3), 2), std::invalid_argument);
    Matrix neg = Matrix::Constant(2, 2, 0.25);
    neg(0, 0) = -0.25;
    neg(0, 1) = 0.75;
    CHECK_THROWS_AS(mi_bound_check(neg, 2), std::invalid_argument);
}

TEST_CASE("loss configuration validation and names") {
    LossConfig c;
    CHECK_NOTHROW(c.validate());
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = LossConfig{};
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = LossConfig{};
    c.mu = -0.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = LossConfig{};
    c.reinforce_samples = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    for (Variant v : {Variant::disdis, Variant::cvae, Variant::vae, Variant::infovae, Variant::view_contrastive}) {
        CHECK(variant_from_string(to_string(v)) == v);
    }
    CHECK(estimator_from_string("reinforce") == Estimator::reinforce);
    CHECK(baseline_from_string("none") == Baseline::none);
    CHECK(reward_from_string(to_string(Reward::neg_kl)) == Reward::neg_kl);
    CHECK_THROWS_AS(variant_from_string("gan"), std::invalid_argument);
}

TEST_CASE("loss report totals follow the variant composition") {
    const auto batch = batch_of(6, 2);
    for (Variant v : {Variant::disdis, Variant::cvae, Variant::vae, Variant::infovae, Variant::view_contrastive}) {
        ModelParams p = ModelParams::init(tiny_model(5), 1);
        LossConfig c;
        c.variant = v;
        c.lambda = 0.7;
        c.mu = 0.3;
        std::mt19937_64 rng(1);
        const LossReport r = total_loss(batch, p, c, rng);
        INFO(to_string(v));
        CHECK(r.l1_kl >= 0.0);
        CHECK(std::abs(r.total - (r.l1_kl + c.lambda * r.l2_recon + c.mu * r.l3_contrastive)) < 1e-12 * std::abs(r.total));
        if (v == Variant::cvae || v == Variant::vae) CHECK(r.l3_contrastive == 0.0);
        else CHECK(r.l3_contrastive > 0.0);
    }
}

TEST_CASE("disdis with mu = 0 is bit-identical to cvae") {
    const auto batch = batch_of(8, 3);
    ModelParams a = ModelParams::init(tiny_model(6), 2);
    ModelParams b = ModelParams::init(tiny_model(6), 2);
    LossConfig ca;
    ca.mu = 0.0;
    LossConfig cb;
    cb.variant = Variant::cvae;
    std::mt19937_64 ra(1), rb(1);
    const LossReport x = total_loss(batch, a, ca, ra);
    const LossReport y = total_loss(batch, b, cb, rb);
    CHECK(x.total == y.total);
    CHECK(grads_of(a) == grads_of(b));
}

TEST_CASE("cvae with a frozen uniform prior head equals vae") {
    const auto batch = batch_of(8, 4);
    ModelParams a = ModelParams::init(tiny_model(6), 3);
    a.prior_w.value.setZero();
    a.prior_b.value.setZero();
    ModelParams b = a;
    LossConfig ca;
    ca.variant = Variant::cvae;
    LossConfig cb;
    cb.variant = Variant::vae;
    std::mt19937_64 ra(1), rb(1);
    const LossReport x = total_loss(batch, a, ca, ra);
    const LossReport y = total_loss(batch, b, cb, rb);
    CHECK(x.total == y.total);
    CHECK(x.l1_kl == y.l1_kl);
    const auto ga = a.all();
    const auto gb = b.all();
    for (std::size_t i = 0; i < ga.size(); ++i) {
        if (ga[i]->name == "prior_w" || ga[i]->name == "prior_b") continue;
        INFO(ga[i]->name);
        CHECK(ga[i]->grad == gb[i]->grad);
    }
}

TEST_CASE("lambda = 0 leaves decoder gradients at zero for every mu") {
    const auto batch = batch_of(6, 5);
    for (double mu : {0.0, 0.1, 2.0}) {
        ModelParams p = ModelParams::init(tiny_model(5), 4);
        LossConfig c;
        c.lambda = 0.0;
        c.mu = mu;
        std::mt19937_64 rng(1);
        total_loss(batch, p, c, rng);
        for (Parameter* q : {&p.dec_init_f, &p.dec_init_e, &p.dec_init_b, &p.dec_wx, &p.dec_wh, &p.dec_bx, &p.dec_bh,
                             &p.dec_out_w, &p.dec_out_b}) {
            INFO(q->name << " mu=" << mu);
            CHECK(q->grad.isZero(0.0));
        }
    }
}

TEST_CASE("every variant's objective passes the gradient check") {
    const auto batch = batch_of(5, 6);
    for (Variant v : {Variant::disdis, Variant::cvae, Variant::vae, Variant::infovae, Variant::view_contrastive}) {
        ModelParams p = ModelParams::init(tiny_model(5), 11);
        LossConfig c;
        c.variant = v;
        c.mu = 0.5;
        ad::LossFn loss = [&](Tape& t) {
            ModelGraph g(t, p, true);
            std::mt19937_64 rng(5);
            return build_loss(g, batch, c, rng).total;
        };
        std::vector<Parameter*> ps = p.all();
        const auto r = ad::finite_diff_check(loss, ps, 1e-5, 1e-5, 1e-3);
        INFO(to_string(v) << " max_rel_err=" << r.max_rel_err << " at " << r.worst);
        CHECK(r.pass);
    }
}

TEST_CASE("score-function estimator: two latents with rewards (0, -c)") {
    // Latent 0 decodes the target exactly, so R = -nll = (0, -c) with c = nll(1).
    ModelParams p = ModelParams::init(tiny_model(2), 21);
    TrajectorySample s = batch_of(1, 9).front();
    const Eigen::RowVectorXd f0 = embed_history(p, s.obs);
    s.fut = decode(p, f0, 0);
    const double c = recon_nll(decode(p, f0, 1), s.fut);
    REQUIRE(c > 0.0);
    const std::vector<TrajectorySample> batch{s};

    const int calls = 200;
    const int per_call = 1000;
    std::mt19937_64 rng(31);
    Eigen::MatrixXd means(calls, 2);
    for (int i = 0; i < calls; ++i) {
        Tape t;
        ModelGraph g(t, p, false);
        Var f = g.embed_history(batch);
        Var logits = t.variable(Matrix::Zero(1, 2));
        const ReinforceTerms r = l2_reinforce(g, batch, f, logits, logits, per_call, Baseline::none,
                                              Reward::neg_recon, rng);
        t.backward(r.surrogate);
        // gradient of E[R] is minus the gradient of the loss surrogate, rescaled to R = (1, 0)
        means.row(i) = -t.adjoint(logits).row(0) / c;
    }
    const Eigen::RowVector2d mean = means.colwise().mean();
    const Eigen::RowVector2d sd =
        ((means.rowwise() - mean).array().square().colwise().sum() / (calls - 1)).sqrt();
    const Eigen::RowVector2d se = sd / std::sqrt(static_cast<double>(calls));
    const Eigen::RowVector2d exact(0.25, -0.25);
    for (int k = 0; k < 2; ++k) {
        INFO("k=" << k << " mean=" << mean(k) << " se=" << se(k));
        CHECK(std::abs(mean(k) - exact(k)) <= 3.0 * se(k));
    }
}

TEST_CASE("score-function estimator with a constant reward has zero gradient") {
    ModelParams p = ModelParams::init(tiny_model(4), 22);
    const auto batch = batch_of(3, 10);
    Tape t;
    ModelGraph g(t, p, false);
    Var f = g.embed_history(batch);
    std::mt19937_64 rng(1);
    Var logits = t.variable(random_matrix(3, 4, rng));
    // reward -(log q - log p) with p = q is identically zero
    const ReinforceTerms r = l2_reinforce(g, batch, f, logits, logits, 64, Baseline::none, Reward::neg_kl, rng);
    t.backward(r.surrogate);
    CHECK(t.adjoint(logits).isZero(0.0));
}

TEST_CASE("REINFORCE gradient points along the exact posterior gradient on a frozen model") {
    ModelParams p = ModelParams::init(tiny_model(5), 23);
    const auto batch = batch_of(2, 11);
    const std::vector<Parameter*> phi = p.posterior_only();
    auto flat_grad = [&] {
        Eigen::VectorXd g(0);
        for (const Parameter* q : phi) {
            Eigen::VectorXd part = Eigen::Map<const Eigen::VectorXd>(q->grad.data(), q->grad.size());
            Eigen::VectorXd joined(g.size() + part.size());
            joined << g, part;
            g = joined;
        }
        return g;
    };
    // exact gradient of the enumerated L2 w.r.t. the posterior parameters
    p.zero_grad();
    {
        Tape t;
        ModelGraph g(t, p, true);
        Var f = g.embed_history(batch);
        Var q = ad::softmax_rows(g.posterior_logits(f, g.embed_future(batch)));
        std::vector<Index> rows;
        for (Index b = 0; b < 2; ++b)
            for (Index k = 0; k < 5; ++k) rows.push_back(b);
        Var nll = ad::reshape(g.recon_nll(g.decode_all(f), batch, rows), 2, 5);
        t.backward(ad::mean(ad::row_sum(ad::mul(q, nll))));
    }
    const Eigen::VectorXd exact = flat_grad();

    std::mt19937_64 rng(77);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(exact.size());
    const int calls = 100;
    for (int i = 0; i < calls; ++i) {
        p.zero_grad();
        Tape t;
        ModelGraph g(t, p, true);
        Var f = g.embed_history(batch);
        Var ql = g.posterior_logits(f, g.embed_future(batch));
        t.backward(l2_reinforce(g, batch, f, ql, ql, 1000, Baseline::none, Reward::neg_recon, rng).surrogate);
        acc += flat_grad();
    }
    acc /= calls;
    const double cosine = acc.dot(exact) / (acc.norm() * exact.norm());
    INFO("cosine=" << cosine);
    CHECK(cosine >= 0.99);
}
