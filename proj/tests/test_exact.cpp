#include <doctest.h>

#include "oracles.hpp"

#include <rotmarg/exact.hpp>
#include <rotmarg/model.hpp>

#include <chrono>
#include <cmath>

using namespace rotmarg;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dataset<double> dataset(const oracle::Problem& pr) { return Dataset<double>::from_raw(pr.y, pr.X); }

} // namespace

TEST_CASE("ModelIndicator bookkeeping")
{
    const auto m = ModelIndicator::from_mask(0b10110, 5);
    CHECK(m.count() == 3);
    CHECK(m.count(1) == 2);
    CHECK(m.count(0) == 3);
    CHECK(m.active() == std::vector<Index>{1, 2, 4});
}

TEST_CASE("log evidence: low-rank and dense routes agree with a 50-digit oracle")
{
    auto pr = oracle::random_problem(15, 5, 21);
    const auto d = dataset(pr);
    const SpikeSlabPrior<double> prior{0.3, 1.7, 0.6};
    for (std::uint64_t mask : {0u, 1u, 6u, 13u, 31u}) {
        const auto g = ModelIndicator::from_mask(mask, 5);
        std::vector<int> act;
        for (auto a : g.active()) act.push_back(static_cast<int>(a));
        const double ref = static_cast<double>(oracle::log_evidence_big(pr.y, pr.X, act, prior.psi, prior.sigma2));
        const double lr = model_log_evidence(d, g, prior, EvidenceMethod::low_rank);
        const double de = model_log_evidence(d, g, prior, EvidenceMethod::dense);
        CHECK(lr == doctest::Approx(ref).epsilon(1e-12));
        CHECK(de == doctest::Approx(ref).epsilon(1e-12));
    }
    const auto ev = model_evidence(d, ModelIndicator::from_mask(0b101, 5), prior);
    CHECK(ev.log_prior_weight == doctest::Approx(2 * std::log(0.3) + 3 * std::log(0.7)));
}

TEST_CASE("log evidence with more active features than rows")
{
    auto pr = oracle::random_problem(6, 9, 8);
    const auto d = dataset(pr);
    const SpikeSlabPrior<double> prior{0.5, 2.0, 0.3};
    const auto g = ModelIndicator::from_mask(0x1ff, 9);
    std::vector<int> act{0, 1, 2, 3, 4, 5, 6, 7, 8};
    const double ref = static_cast<double>(oracle::log_evidence_big(pr.y, pr.X, act, prior.psi, prior.sigma2));
    CHECK(model_log_evidence(d, g, prior) == doctest::Approx(ref).epsilon(1e-11));
    CHECK(model_log_evidence(d, g, prior, EvidenceMethod::low_rank) == doctest::Approx(ref).epsilon(1e-10));
}

TEST_CASE("exact posterior matches brute-force enumeration")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto pr = oracle::random_problem(20, 6, seed);
        const SpikeSlabPrior<double> prior{0.25, 3.0, 1.0};
        const auto post = exact_posterior(dataset(pr), prior);
        const VectorXd ref = oracle::brute_force_inclusion(pr.y, pr.X, prior.lambda, prior.psi, prior.sigma2);
        CHECK((post.inclusion - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("exact slab moments match per-model dense posteriors")
{
    auto pr = oracle::random_problem(14, 4, 5);
    const SpikeSlabPrior<double> prior{0.4, 1.5, 0.8};
    const auto post = exact_posterior(dataset(pr), prior);
    const int n = 14, p = 4;
    VectorXd w_in = VectorXd::Zero(p), m1 = VectorXd::Zero(p), m2 = VectorXd::Zero(p);
    double total = 0;
    for (int mask = 0; mask < 16; ++mask) {
        std::vector<int> act;
        for (int c = 0; c < p; ++c) if ((mask >> c) & 1) act.push_back(c);
        const double lw = static_cast<double>(oracle::log_evidence_big(pr.y, pr.X, act, prior.psi, prior.sigma2)) +
                          act.size() * std::log(prior.lambda) + (p - act.size()) * std::log1p(-prior.lambda);
        const double w = std::exp(lw + 20);
        total += w;
        if (act.empty()) continue;
        MatrixXd Xg(n, act.size());
        for (std::size_t c = 0; c < act.size(); ++c) Xg.col(c) = pr.X.col(act[c]);
        // beta_g | y ~ N(psi Xg' Phi^-1 y, psi I - psi^2 Xg' Phi^-1 Xg)
        const MatrixXd Phi = prior.psi * Xg * Xg.transpose() + prior.sigma2 * MatrixXd::Identity(n, n);
        const Eigen::LDLT<MatrixXd> ldlt(Phi);
        const VectorXd mean = prior.psi * Xg.transpose() * ldlt.solve(pr.y);
        const MatrixXd cov = prior.psi * MatrixXd::Identity(act.size(), act.size()) -
                             prior.psi * prior.psi * Xg.transpose() * ldlt.solve(Xg);
        for (std::size_t c = 0; c < act.size(); ++c) {
            w_in(act[c]) += w;
            m1(act[c]) += w * mean(c);
            m2(act[c]) += w * (cov(c, c) + mean(c) * mean(c));
        }
    }
    for (int c = 0; c < p; ++c) {
        const double sm = m1(c) / w_in(c);
        CHECK(post.inclusion(c) == doctest::Approx(w_in(c) / total).epsilon(1e-10));
        CHECK(post.slab_mean(c) == doctest::Approx(sm).epsilon(1e-9));
        CHECK(post.slab_var(c) == doctest::Approx(m2(c) / w_in(c) - sm * sm).epsilon(1e-8));
        CHECK(post.mean(c) == doctest::Approx(m1(c) / total).epsilon(1e-9));
    }
}

TEST_CASE("exact enumeration is capped")
{
    auto pr = oracle::random_problem(30, 21, 1);
    CHECK_THROWS_AS(exact_inclusion_probs(dataset(pr), SpikeSlabPrior<double>{}), ConfigError);
}

TEST_CASE("exact enumeration survives strongly separated models")
{
    auto pr = oracle::random_problem(50, 6, 2, 0.01, 0.6);
    pr.y *= 1e3;
    const auto p = exact_inclusion_probs(dataset(pr), SpikeSlabPrior<double>{0.1, 1e6, 1e-2});
    CHECK(p.allFinite());
    CHECK(p.minCoeff() >= 0);
    CHECK(p.maxCoeff() <= 1);
}

TEST_CASE("exact rotated predictive combined per component reproduces enumeration")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto pr = oracle::random_problem(25, 6, 100 + seed);
        const auto d = dataset(pr);
        const SpikeSlabPrior<double> prior{0.3, 2.0, 0.9};
        const auto post = exact_posterior(d, prior);
        for (Index j = 0; j < 6; ++j) {
            const auto rot = rotate_for_index(d, j);
            const auto mix = exact_rotated_predictive(rot, prior);
            CHECK(mix.size() == 32);
            CHECK(mix.log_weights.array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
            const auto res = combine_marginal(rot, mix, prior);
            CHECK(std::abs(res.inclusion_prob - post.inclusion(j)) < 1e-10);
            CHECK(std::abs(res.slab_mean - post.slab_mean(j)) < 1e-9);
            CHECK(std::abs(res.slab_var - post.slab_var(j)) < 1e-9);
        }
    }
}

TEST_CASE("p = 12 enumeration runs well under the desk-scale budget")
{
    auto pr = oracle::random_problem(100, 12, 3);
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = exact_inclusion_probs(dataset(pr), SpikeSlabPrior<double>{0.25, 10, 1});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(p.size() == 12);
    CHECK(secs < 5.0);
}
