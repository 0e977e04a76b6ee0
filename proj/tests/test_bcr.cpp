#include <doctest.h>

#include "oracles.hpp"

#include <rotmarg/bcr.hpp>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <numbers>

using namespace rotmarg;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ProjectionDraw<double> identity_draw(Index p)
{
    ProjectionDraw<double> d;
    d.basis = MatrixXd::Identity(p, p);
    return d;
}

double log_mvn(const VectorXd& y, const MatrixXd& C)
{
    const Eigen::LDLT<MatrixXd> ldlt(C);
    const double logdet = ldlt.vectorD().array().log().sum();
    return -0.5 * (y.size() * std::log(2 * std::numbers::pi) + logdet + y.dot(ldlt.solve(y)));
}

} // namespace

TEST_CASE("ternary entries follow the stated probabilities")
{
    auto rng = make_stream(1, {});
    const double theta = 0.3;
    const MatrixXd M = draw_ternary_matrix<double>(400, 100, theta, rng);
    const double mag = std::sqrt(1 / theta);
    int neg = 0, pos = 0, zero = 0;
    for (Index i = 0; i < M.size(); ++i) {
        const double v = M.data()[i];
        if (v == -mag) ++neg;
        else if (v == mag) ++pos;
        else if (v == 0) ++zero;
    }
    CHECK(neg + pos + zero == M.size());
    const double N = double(M.size());
    CHECK(neg / N == doctest::Approx(theta * theta).epsilon(0.05));
    CHECK(pos / N == doctest::Approx((1 - theta) * (1 - theta)).epsilon(0.02));
    CHECK(zero / N == doctest::Approx(2 * theta * (1 - theta)).epsilon(0.03));
}

TEST_CASE("Gram-Schmidt gives an orthonormal basis of the same span")
{
    auto rng = make_stream(2, {});
    MatrixXd M = draw_ternary_matrix<double>(30, 6, 0.5, rng);
    REQUIRE(has_full_column_rank(M));
    const MatrixXd orig = M;
    orthonormalize_columns(M);
    CHECK((M.transpose() * M - MatrixXd::Identity(6, 6)).norm() < 1e-13);
    // projection of the original columns onto span(M) recovers them
    CHECK((M * (M.transpose() * orig) - orig).norm() < 1e-11);

    MatrixXd bad(5, 3);
    bad << 1, 2, 3, 1, 2, 3, 0, 0, 0, 1, 2, 3, 2, 4, 6;
    CHECK_FALSE(has_full_column_rank(bad));
    CHECK_FALSE(has_full_column_rank(MatrixXd(MatrixXd::Zero(4, 2))));
    CHECK_FALSE(has_full_column_rank(MatrixXd(MatrixXd::Ones(2, 3))));
}

TEST_CASE("sample_projection is seeded and orthonormal")
{
    BcrConfig cfg;
    cfg.m = 4;
    auto r1 = make_stream(7, {3});
    auto r2 = make_stream(7, {3});
    const auto a = sample_projection<double>(10, cfg, r1);
    const auto b = sample_projection<double>(10, cfg, r2);
    CHECK(a.basis == b.basis);
    CHECK(a.theta >= 0.1);
    CHECK(a.theta <= 0.9);
    CHECK((a.basis.transpose() * a.basis - MatrixXd::Identity(4, 4)).norm() < 1e-13);
    cfg.m = 11;
    CHECK_THROWS_AS(sample_projection<double>(10, cfg, r1), ConfigError);
}

TEST_CASE("resolve_bcr_config fills kappa and clamps m")
{
    BcrConfig c;
    auto r = resolve_bcr_config(c, 0.25, 3.0, 12, 100);
    CHECK(r.kappa == 3.0);
    CHECK(r.m == 5);
    r = resolve_bcr_config(c, 0.9, 3.0, 4, 100);
    CHECK(r.m == 4);
    c.m = 50;
    r = resolve_bcr_config(c, 0.1, 1.0, 80, 20);
    CHECK(r.m == 20);
}

TEST_CASE("identity projection reproduces the conjugate ridge predictive")
{
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto pr = oracle::random_problem(15, 6, seed);
        const VectorXd x_new = oracle::random_problem(1, 6, seed + 1000).X.row(0).transpose();
        BcrConfig cfg;
        cfg.kappa = 0.5 + 0.1 * double(seed);
        cfg.m = 6;
        const double sigma2 = 0.4 + 0.05 * double(seed);
        const auto got = bcr_single_predictive<double>(pr.y, pr.X, x_new, identity_draw(6), cfg, sigma2);
        const auto ref = oracle::ridge_predictive_dual(pr.y, pr.X, x_new, cfg.kappa, sigma2);
        CHECK(std::abs(got.mu - ref.mu) < 1e-10);
        CHECK(std::abs(got.tau2 - ref.tau2) < 1e-10);
    }
}

TEST_CASE("known-noise log weight is the compressed marginal likelihood")
{
    auto pr = oracle::random_problem(12, 7, 3);
    BcrConfig cfg;
    cfg.kappa = 1.3;
    cfg.m = 3;
    auto rng = make_stream(4, {});
    const auto draw = sample_projection<double>(7, cfg, rng);
    const MatrixXd Z = pr.X * draw.basis;
    const double sigma2 = 0.7;
    const double ref = log_mvn(pr.y, cfg.kappa * Z * Z.transpose() + sigma2 * MatrixXd::Identity(12, 12));
    CHECK(bcr_log_weight<double>(pr.y, pr.X, draw, cfg, sigma2) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("sigma2-marginalized predictive and weight match integration over sigma2")
{
    auto pr = oracle::random_problem(10, 5, 9, 0.7);
    const VectorXd x_new = oracle::random_problem(1, 5, 99).X.row(0).transpose();
    BcrConfig cfg;
    cfg.kappa = 2.0;
    cfg.m = 3;
    cfg.marginalize_sigma2 = true;
    cfg.ig_shape = 3;
    cfg.ig_scale = 1;
    auto rng = make_stream(5, {});
    const auto draw = sample_projection<double>(5, cfg, rng);
    const MatrixXd Z = pr.X * draw.basis;
    const VectorXd h = draw.basis.transpose() * x_new;
    const double g = cfg.kappa / (cfg.ig_scale / (cfg.ig_shape - 1));
    const int n = 10;
    const MatrixXd K = g * Z * Z.transpose() + MatrixXd::Identity(n, n);

    // p(y, s2) = N(y | 0, s2 K) IG(s2 | a0, b0), integrated on a log scale
    auto log_joint = [&](double s2) {
        const double a0 = cfg.ig_shape, b0 = cfg.ig_scale;
        const double log_ig = a0 * std::log(b0) - std::lgamma(a0) - (a0 + 1) * std::log(s2) - b0 / s2;
        return log_mvn(pr.y, s2 * K) + log_ig;
    };
    const double shift = log_joint(0.5);
    boost::math::quadrature::tanh_sinh<double> ts;
    auto moment = [&](int k) {
        return ts.integrate([&](double t) {
            const double s2 = std::exp(t);
            return std::pow(s2, k) * std::exp(log_joint(s2) - shift) * s2;
        }, -12.0, 6.0);
    };
    const double z0 = moment(0);
    const double e_s2 = moment(1) / z0;

    // given s2 the predictive is N(mu, s2 (1 + h' G^-1 h)) with mu free of s2
    const MatrixXd G = Z.transpose() * Z + MatrixXd::Identity(3, 3) / g;
    const double quad = h.dot(G.ldlt().solve(h));
    const double mu_ref = h.dot(G.ldlt().solve(Z.transpose() * pr.y));

    const auto got = bcr_single_predictive<double>(pr.y, pr.X, x_new, draw, cfg, 0.0);
    CHECK(got.mu == doctest::Approx(mu_ref).epsilon(1e-12));
    CHECK(got.tau2 == doctest::Approx(e_s2 * (1 + quad)).epsilon(1e-8));
    CHECK(bcr_log_weight<double>(pr.y, pr.X, draw, cfg, 0.0) == doctest::Approx(shift + std::log(z0)).epsilon(1e-9));
}

TEST_CASE("model averaging uses softmax weights")
{
    std::vector<GaussianPredictive<double>> comps{{1.0, 2.0}, {3.0, 1.0}};
    std::vector<double> lw{std::log(1.0), std::log(3.0)};
    std::vector<double> w;
    const auto avg = model_average<double>(comps, lw, false, &w);
    CHECK(w[0] == doctest::Approx(0.25));
    CHECK(avg.mu == doctest::Approx(0.25 * 1 + 0.75 * 3));
    CHECK(avg.tau2 == doctest::Approx(0.25 * 2 + 0.75 * 1));
    const auto full = model_average<double>(comps, lw, true);
    CHECK(full.tau2 == doctest::Approx(0.25 * 2 + 0.75 * 1 + 0.25 * 1.5 * 1.5 + 0.75 * 0.5 * 0.5));
    // huge log weights do not overflow
    std::vector<double> big{1e4, 1e4 + std::log(3.0)};
    CHECK(model_average<double>(comps, big, false).mu == doctest::Approx(avg.mu));
}

TEST_CASE("BCR predictive: determinism, per-projection substreams and degenerate cases")
{
    auto pr = oracle::random_problem(30, 8, 12);
    const VectorXd x_new = oracle::random_problem(1, 8, 13).X.row(0).transpose();
    BcrConfig cfg;
    cfg.kappa = 1;
    cfg.m = 3;
    cfg.K = 6;
    cfg.seed = 17;
    const auto a = bcr_predictive_detailed<double>(pr.y, pr.X, x_new, cfg, 0.5);
    const auto b = bcr_predictive_detailed<double>(pr.y, pr.X, x_new, cfg, 0.5);
    CHECK(a.predictive.mu == b.predictive.mu);
    CHECK(a.predictive.tau2 == b.predictive.tau2);
    double wsum = 0;
    for (double w : a.weights) wsum += w;
    CHECK(wsum == doctest::Approx(1.0));

    // draw k is independent of K
    cfg.K = 2;
    const auto c = bcr_predictive_detailed<double>(pr.y, pr.X, x_new, cfg, 0.5);
    CHECK(c.draws[1].basis == a.draws[1].basis);
    CHECK(c.components[1].mu == a.components[1].mu);

    cfg.seed = 18;
    CHECK(bcr_predictive<double>(pr.y, pr.X, x_new, cfg, 0.5).mu != a.predictive.mu);

    const auto none = bcr_predictive<double>(pr.y, MatrixXd(30, 0), VectorXd(0), cfg, 0.5);
    CHECK(none.mu == 0);
    CHECK(none.tau2 == 0.5);
    cfg.K = 0;
    CHECK_THROWS_AS(bcr_predictive<double>(pr.y, pr.X, x_new, cfg, 0.5), ConfigError);
}
