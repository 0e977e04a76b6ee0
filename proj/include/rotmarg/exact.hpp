#pragma once
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>
#include <rotmarg/gaussian.hpp>
#include <rotmarg/model.hpp>
#include <rotmarg/types.hpp>

namespace rotmarg {

// Hard cap on enumerated dimension: 2^20 model evaluations.
inline constexpr Index exact_max_features = 20;

/// Inclusion pattern gamma over p coefficients.
struct ModelIndicator
{
    std::vector<bool> gamma;

    static ModelIndicator from_mask(std::uint64_t mask, Index p)
    {
        ModelIndicator m;
        m.gamma.resize(p);
        for (Index k = 0; k < p; ++k) m.gamma[k] = (mask >> k) & 1U;
        return m;
    }

    Index size() const { return static_cast<Index>(gamma.size()); }

    /// Number of included coefficients, skipping position `skip` if given.
    Index count(Index skip = -1) const
    {
        Index k = 0;
        for (Index i = 0; i < size(); ++i) k += (i != skip && gamma[i]);
        return k;
    }

    std::vector<Index> active() const
    {
        std::vector<Index> idx;
        for (Index i = 0; i < size(); ++i) if (gamma[i]) idx.push_back(i);
        return idx;
    }
};

/// Evidence of one model split into its likelihood and prior parts.
template <class ValueType>
struct ModelEvidence
{
    ValueType log_evidence = 0;
    ValueType log_prior_weight = 0;
};

enum class EvidenceMethod
{
    automatic,  // low rank whenever |gamma| < n
    dense,      // Cholesky of the n x n marginal covariance
    low_rank,   // determinant lemma and Woodbury through the k x k Gram block
};

namespace detail {

template <class ValueType>
mat_type<ValueType> select_columns(const mat_type<ValueType>& X, const std::vector<Index>& idx)
{
    mat_type<ValueType> out(X.rows(), static_cast<Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) out.col(c) = X.col(idx[c]);
    return out;
}

template <class ValueType>
ValueType dense_log_evidence(const vec_type<ValueType>& y, const mat_type<ValueType>& Xg,
                             ValueType psi, ValueType sigma2)
{
    using value_t = ValueType;
    using std::log;
    const Index n = y.size();
    mat_type<value_t> Phi = sigma2 * mat_type<value_t>::Identity(n, n);
    if (Xg.cols() > 0) Phi.noalias() += psi * Xg * Xg.transpose();
    Eigen::LLT<mat_type<value_t>> llt(Phi);
    if (llt.info() != Eigen::Success) {
        const auto d = Phi.diagonal();
        throw NumericalError("marginal covariance is not positive definite (diagonal range " +
                             std::to_string(static_cast<double>(d.minCoeff())) + " .. " +
                             std::to_string(static_cast<double>(d.maxCoeff())) + ")");
    }
    const vec_type<value_t> w = llt.matrixL().solve(y);
    const value_t logdet = value_t(2) * llt.matrixLLT().diagonal().array().log().sum();
    return value_t(-0.5) * (value_t(n) * log(value_t(2) * std::numbers::pi_v<value_t>) + logdet + w.squaredNorm());
}

} // namespace detail

/// Conjugate quantities for a model restricted to an active set, all
/// computed from the precomputed Gram matrix X'X and X'y. With
/// A = X_g'X_g + (sigma2/psi) I:
///   log N(y | 0, psi X_g X_g' + sigma2 I) via det(I + psi/sigma2 X_g'X_g),
///   E[beta_g | y] = A^{-1} X_g'y,  Cov[beta_g | y] = sigma2 A^{-1}.
template <class ValueType>
class GramModelKernel
{
public:
    using value_t = ValueType;
    using vec_t = vec_type<value_t>;
    using mat_t = mat_type<value_t>;

    struct Fit
    {
        value_t log_evidence = 0;
        vec_t beta_mean;                 // posterior mean of the active coefficients
        Eigen::LLT<mat_t> chol;          // factor of A
    };

    GramModelKernel(const mat_t& X, const vec_t& y, value_t psi, value_t sigma2)
        : gram_(X.transpose() * X),
          xty_(X.transpose() * y),
          yty_(y.squaredNorm()),
          n_(X.rows()),
          psi_(psi),
          sigma2_(sigma2)
    {}

    Fit fit(const std::vector<Index>& active) const
    {
        using std::log;
        const Index k = static_cast<Index>(active.size());
        Fit f;
        const value_t base = value_t(n_) * log(value_t(2) * std::numbers::pi_v<value_t> * sigma2_);
        if (k == 0) {
            f.log_evidence = value_t(-0.5) * (base + yty_ / sigma2_);
            f.beta_mean.resize(0);
            return f;
        }
        mat_t A(k, k);
        vec_t b(k);
        for (Index r = 0; r < k; ++r) {
            b(r) = xty_(active[r]);
            for (Index c = 0; c < k; ++c) A(r, c) = gram_(active[r], active[c]);
        }
        A.diagonal().array() += sigma2_ / psi_;
        f.chol.compute(A);
        if (f.chol.info() != Eigen::Success) {
            throw NumericalError("Gram block of a " + std::to_string(k) + "-feature model is not positive definite");
        }
        f.beta_mean = f.chol.solve(b);
        const value_t logdet_A = value_t(2) * f.chol.matrixLLT().diagonal().array().log().sum();
        const value_t logdet = logdet_A + value_t(k) * log(psi_ / sigma2_);
        const value_t quad = (yty_ - b.dot(f.beta_mean)) / sigma2_;
        f.log_evidence = value_t(-0.5) * (base + logdet + quad);
        return f;
    }

    value_t sigma2() const { return sigma2_; }

private:
    mat_t gram_;
    vec_t xty_;
    value_t yty_;
    Index n_;
    value_t psi_;
    value_t sigma2_;
};

/// log N(y | 0, psi X_g X_g' + sigma2 I_n).
template <class ValueType>
ValueType model_log_evidence(const Dataset<ValueType>& data, const ModelIndicator& gamma,
                             const SpikeSlabPrior<ValueType>& prior,
                             EvidenceMethod method = EvidenceMethod::automatic)
{
    if (gamma.size() != data.p()) throw ConfigError("model indicator length does not match the number of features");
    const auto active = gamma.active();
    const Index k = static_cast<Index>(active.size());
    if (method == EvidenceMethod::automatic) {
        method = k < data.n() ? EvidenceMethod::low_rank : EvidenceMethod::dense;
    }
    const auto Xg = detail::select_columns(data.X, active);
    if (method == EvidenceMethod::dense) {
        return detail::dense_log_evidence<ValueType>(data.y, Xg, prior.psi, prior.sigma2);
    }
    GramModelKernel<ValueType> kernel(Xg, data.y, prior.psi, prior.sigma2);
    std::vector<Index> all(k);
    for (Index i = 0; i < k; ++i) all[i] = i;
    return kernel.fit(all).log_evidence;
}

/// Evidence split for one model under prior weight lambda^k (1-lambda)^(p-k).
template <class ValueType>
ModelEvidence<ValueType> model_evidence(const Dataset<ValueType>& data, const ModelIndicator& gamma,
                                        const SpikeSlabPrior<ValueType>& prior)
{
    const Index k = gamma.count();
    ModelEvidence<ValueType> e;
    e.log_evidence = model_log_evidence(data, gamma, prior);
    e.log_prior_weight = ValueType(k) * log_prob(prior.lambda) + ValueType(data.p() - k) * log_complement(prior.lambda);
    return e;
}

/// Exact posterior summaries from full enumeration.
template <class ValueType>
struct ExactPosterior
{
    vec_type<ValueType> inclusion;    // p(gamma_j = 1 | y)
    vec_type<ValueType> mean;         // E[beta_j | y]
    vec_type<ValueType> slab_mean;    // E[beta_j | y, gamma_j = 1]
    vec_type<ValueType> slab_var;     // Var[beta_j | y, gamma_j = 1]
    ValueType log_normalizer = 0;     // log sum_gamma N(y|0,Phi_gamma) prior(gamma)
};

namespace detail {

inline void check_enumeration_cap(Index p)
{
    if (p > exact_max_features) {
        throw ConfigError("exact enumeration is limited to " + std::to_string(exact_max_features) +
                          " features (got " + std::to_string(p) + "); use the BCR or AMP backend instead");
    }
}

// Running weighted sums sum_i exp(w_i) x_i kept relative to a shared
// running maximum of the log weights.
template <class ValueType>
class ScaledAccumulator
{
public:
    explicit ScaledAccumulator(Index p) : num_(vec_type<ValueType>::Zero(p)), m1_(num_), m2_(num_) {}

    void rescale_to(ValueType new_max)
    {
        using std::exp;
        if (new_max <= max_) return;
        if (max_ != -std::numeric_limits<ValueType>::infinity()) {
            const ValueType f = exp(max_ - new_max);
            den_ *= f;
            num_ *= f;
            m1_ *= f;
            m2_ *= f;
        }
        max_ = new_max;
    }

    ValueType max_ = -std::numeric_limits<ValueType>::infinity();
    ValueType den_ = 0;
    vec_type<ValueType> num_, m1_, m2_;
};

} // namespace detail

/// Enumerates all 2^p models in mask order, accumulating per-coefficient
/// inclusion mass and conditional slab moments in one pass (memory O(p)).
template <class ValueType>
ExactPosterior<ValueType> exact_posterior(const Dataset<ValueType>& data, const SpikeSlabPrior<ValueType>& prior)
{
    using value_t = ValueType;
    using std::exp;
    using std::log;
    const Index p = data.p();
    detail::check_enumeration_cap(p);
    prior.validate();

    GramModelKernel<value_t> kernel(data.X, data.y, prior.psi, prior.sigma2);
    const value_t log_in = log_prob(prior.lambda);
    const value_t log_out = log_complement(prior.lambda);

    detail::ScaledAccumulator<value_t> acc(p);
    std::vector<Index> active;
    active.reserve(p);
    const std::uint64_t n_models = std::uint64_t(1) << p;
    for (std::uint64_t mask = 0; mask < n_models; ++mask) {
        active.clear();
        for (Index k = 0; k < p; ++k) if ((mask >> k) & 1U) active.push_back(k);
        const Index k = static_cast<Index>(active.size());
        const auto fit = kernel.fit(active);
        const value_t log_w = fit.log_evidence + value_t(k) * log_in + value_t(p - k) * log_out;
        acc.rescale_to(log_w);
        const value_t w = exp(log_w - acc.max_);
        acc.den_ += w;
        if (k == 0) continue;
        const mat_type<value_t> inv = fit.chol.solve(mat_type<value_t>::Identity(k, k));
        for (Index r = 0; r < k; ++r) {
            const Index jj = active[r];
            const value_t b = fit.beta_mean(r);
            acc.num_(jj) += w;
            acc.m1_(jj) += w * b;
            acc.m2_(jj) += w * (b * b + prior.sigma2 * inv(r, r));
        }
    }

    ExactPosterior<value_t> out;
    out.log_normalizer = acc.max_ + log(acc.den_);
    out.inclusion = acc.num_ / acc.den_;
    out.mean = acc.m1_ / acc.den_;
    out.slab_mean.resize(p);
    out.slab_var.resize(p);
    for (Index jj = 0; jj < p; ++jj) {
        out.slab_mean(jj) = acc.m1_(jj) / acc.num_(jj);
        const value_t second = acc.m2_(jj) / acc.num_(jj);
        out.slab_var(jj) = std::max(value_t(0), second - out.slab_mean(jj) * out.slab_mean(jj));
    }
    return out;
}

template <class ValueType>
vec_type<ValueType> exact_inclusion_probs(const Dataset<ValueType>& data, const SpikeSlabPrior<ValueType>& prior)
{
    return exact_posterior(data, prior).inclusion;
}

/// Gaussian mixture sum_c w_c N(mean_c, var_c), weights kept in log space
/// and normalized.
template <class ValueType>
struct GaussianMixture
{
    vec_type<ValueType> log_weights;
    vec_type<ValueType> means;
    vec_type<ValueType> variances;

    Index size() const { return means.size(); }

    /// Single Gaussian with the mixture's mean and variance.
    GaussianPredictive<ValueType> moment_match() const
    {
        using std::exp;
        ValueType mu = 0, second = 0;
        for (Index c = 0; c < size(); ++c) {
            const ValueType w = exp(log_weights(c));
            mu += w * means(c);
            second += w * (variances(c) + means(c) * means(c));
        }
        return {mu, std::max(second - mu * mu, ValueType(0))};
    }
};

/// Exact predictive of the held-out rotated response given y_tilde,
/// enumerating the 2^(p-1) nuisance models.
template <class ValueType>
GaussianMixture<ValueType> exact_rotated_predictive(const RotatedProblem<ValueType>& rot,
                                                    const SpikeSlabPrior<ValueType>& prior)
{
    using value_t = ValueType;
    const Index q = rot.X_tilde.cols();
    detail::check_enumeration_cap(q);

    GramModelKernel<value_t> kernel(rot.X_tilde, rot.y_tilde, prior.psi, prior.sigma2);
    const value_t log_in = log_prob(prior.lambda);
    const value_t log_out = log_complement(prior.lambda);

    const std::uint64_t n_models = std::uint64_t(1) << q;
    GaussianMixture<value_t> mix;
    mix.log_weights.resize(static_cast<Index>(n_models));
    mix.means.resize(static_cast<Index>(n_models));
    mix.variances.resize(static_cast<Index>(n_models));

    LogSumExp<value_t> total;
    std::vector<Index> active;
    for (std::uint64_t mask = 0; mask < n_models; ++mask) {
        active.clear();
        for (Index k = 0; k < q; ++k) if ((mask >> k) & 1U) active.push_back(k);
        const Index k = static_cast<Index>(active.size());
        const auto fit = kernel.fit(active);
        const Index c = static_cast<Index>(mask);
        mix.log_weights(c) = fit.log_evidence + value_t(k) * log_in + value_t(q - k) * log_out;
        total.add(mix.log_weights(c));
        if (k == 0) {
            mix.means(c) = 0;
            mix.variances(c) = prior.sigma2;
            continue;
        }
        vec_type<value_t> xg(k);
        for (Index r = 0; r < k; ++r) xg(r) = rot.x_tilde_new(active[r]);
        mix.means(c) = xg.dot(fit.beta_mean);
        mix.variances(c) = prior.sigma2 * xg.dot(fit.chol.solve(xg)) + prior.sigma2;
    }
    mix.log_weights.array() -= total.value();
    return mix;
}

/// Marginal for coefficient j when the predictive is a Gaussian mixture:
/// p(beta_j | y) ~ sum_c w_c N(z - a beta_j | mu_c, tau2_c) pi(beta_j).
/// The slab part is itself a mixture and is reported by its moments.
template <class ValueType>
MarginalResult<ValueType> combine_marginal(const RotatedProblem<ValueType>& rot,
                                           const GaussianMixture<ValueType>& mix,
                                           const SpikeSlabPrior<ValueType>& prior)
{
    using value_t = ValueType;
    using std::exp;
    const value_t a2psi = rot.a * rot.a * prior.psi;

    LogSumExp<value_t> slab, spike;
    vec_type<value_t> log_slab_c(mix.size());
    for (Index c = 0; c < mix.size(); ++c) {
        const value_t lw = mix.log_weights(c);
        log_slab_c(c) = lw + log_normal_pdf(rot.z, mix.means(c), a2psi + mix.variances(c));
        slab.add(log_slab_c(c));
        spike.add(lw + log_normal_pdf(rot.z, mix.means(c), mix.variances(c)));
    }
    const value_t log_slab = log_prob(prior.lambda) + slab.value();
    const value_t log_spike = log_complement(prior.lambda) + spike.value();

    value_t m1 = 0, m2 = 0;
    for (Index c = 0; c < mix.size(); ++c) {
        const value_t w = exp(log_slab_c(c) - slab.value());
        const value_t tot = a2psi + mix.variances(c);
        const value_t mc = rot.a * prior.psi * (rot.z - mix.means(c)) / tot;
        const value_t vc = prior.psi * mix.variances(c) / tot;
        m1 += w * mc;
        m2 += w * (vc + mc * mc);
    }

    MarginalResult<value_t> out;
    out.index_j = rot.index_j;
    out.inclusion_prob = std::clamp(exp(log_slab - log_add_exp(log_slab, log_spike)), value_t(0), value_t(1));
    out.slab_mean = m1;
    out.slab_var = std::max(value_t(0), m2 - m1 * m1);
    return out;
}

} // namespace rotmarg
