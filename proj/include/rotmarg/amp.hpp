#pragma once
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <rotmarg/gaussian.hpp>
#include <rotmarg/types.hpp>

namespace rotmarg {

struct AmpConfig
{
    int max_iter = 200;
    double tol = 1e-8;          // relative l2 change of m
    double damping = 0.5;       // weight on the new message, in (0, 1]
    bool tune_lambda = true;    // em_tune updates lambda as well as sigma2
    int em_max_rounds = 50;
    double em_tol = 1e-6;
    std::uint64_t seed = 0;     // iteration is deterministic; kept for run manifests
    double sigma2_floor = 1e-8;
    double divergence_factor = 1e6;

    void validate() const
    {
        if (!(damping > 0 && damping <= 1)) throw ConfigError("AMP damping must lie in (0, 1]");
        if (!(tol > 0)) throw ConfigError("AMP tolerance must be positive");
        if (max_iter < 1) throw ConfigError("AMP needs max_iter >= 1");
        if (em_max_rounds < 1) throw ConfigError("EM needs at least one round");
        if (!(em_tol > 0)) throw ConfigError("EM tolerance must be positive");
    }
};

template <class ValueType>
struct DenoiseResult
{
    ValueType mean = 0;
    ValueType var = 0;
    ValueType incl = 0;
};

/// Posterior moments of beta ~ (1-lambda) delta_0 + lambda N(0, psi)
/// observed as r = beta + N(0, s2). lambda may sit on either endpoint.
template <class ValueType>
DenoiseResult<ValueType> spike_slab_denoise(ValueType r, ValueType s2, ValueType lambda, ValueType psi)
{
    using std::exp;
    const ValueType log_slab = log_prob(lambda) + log_normal_pdf(r, ValueType(0), psi + s2);
    const ValueType log_spike = log_complement(lambda) + log_normal_pdf(r, ValueType(0), s2);
    DenoiseResult<ValueType> out;
    out.incl = std::clamp(exp(log_slab - log_add_exp(log_slab, log_spike)), ValueType(0), ValueType(1));
    const ValueType slab_mean = psi * r / (psi + s2);
    const ValueType slab_var = psi * s2 / (psi + s2);
    out.mean = out.incl * slab_mean;
    // E[b^2] - E[b]^2 rearranged to stay nonnegative
    out.var = out.incl * slab_var + out.incl * (ValueType(1) - out.incl) * slab_mean * slab_mean;
    return out;
}

template <class ValueType>
DenoiseResult<ValueType> spike_slab_denoise(ValueType r, ValueType s2, const SpikeSlabPrior<ValueType>& prior)
{
    return spike_slab_denoise(r, s2, prior.lambda, prior.psi);
}

/// Snapshot of the message-passing iteration. m, v, incl are the
/// denoiser outputs (posterior means, variances and inclusion
/// probabilities of the coefficients); tau_t2 is the noise level of the
/// decoupled scalar observations r_j = beta_j + N(0, tau_t2).
template <class ValueType>
struct AmpState
{
    vec_type<ValueType> m;
    vec_type<ValueType> v;
    vec_type<ValueType> incl;
    vec_type<ValueType> r;          // decoupled observations fed to the denoiser
    vec_type<ValueType> residual;   // y - X m
    ValueType tau_t2 = 1;
    int iteration = 0;
    ValueType damping = 1;
    bool converged = false;
};

namespace detail {

// Thin spectral factorization X = U S V' kept as (V, s^2), from whichever
// Gram matrix is smaller. Solves (gw X'X + g2 I) x = b in O(p r).
template <class ValueType>
class SpectralSolver
{
public:
    using value_t = ValueType;
    using vec_t = vec_type<value_t>;
    using mat_t = mat_type<value_t>;

    explicit SpectralSolver(const mat_t& X) : p_(X.cols())
    {
        using std::sqrt;
        if (X.cols() == 0 || X.rows() == 0) {
            V_.resize(p_, 0);
            s2_.resize(0);
        } else if (X.cols() <= X.rows()) {
            Eigen::SelfAdjointEigenSolver<mat_t> eig(X.transpose() * X);
            if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of X'X failed");
            V_ = eig.eigenvectors();
            s2_ = eig.eigenvalues().cwiseMax(value_t(0));
        } else {
            Eigen::SelfAdjointEigenSolver<mat_t> eig(X * X.transpose());
            if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of XX' failed");
            const vec_t ev = eig.eigenvalues().cwiseMax(value_t(0));
            const value_t top = ev.size() ? ev.maxCoeff() : value_t(0);
            Index r = 0;
            for (Index i = 0; i < ev.size(); ++i) r += ev(i) > value_t(1e-12) * top;
            V_.resize(p_, r);
            s2_.resize(r);
            Index c = 0;
            for (Index i = 0; i < ev.size(); ++i) {
                if (!(ev(i) > value_t(1e-12) * top)) continue;
                V_.col(c) = X.transpose() * eig.eigenvectors().col(i) / sqrt(ev(i));
                s2_(c) = ev(i);
                ++c;
            }
        }
    }

    Index rank() const { return s2_.size(); }

    /// x = (gw X'X + g2 I)^{-1} b; also returns tr((gw X'X + g2 I)^{-1}).
    vec_t solve(const vec_t& b, value_t gw, value_t g2, value_t& trace) const
    {
        const vec_t d = (gw * s2_.array() + g2).inverse().matrix();
        const vec_t c = V_.transpose() * b;
        vec_t x = (b - V_ * c) / g2;
        x.noalias() += V_ * d.cwiseProduct(c);
        trace = d.sum() + value_t(p_ - rank()) / g2;
        return x;
    }

private:
    Index p_;
    mat_t V_;
    vec_t s2_;
};

template <class ValueType>
AmpState<ValueType> amp_iterate(const vec_type<ValueType>& y, const mat_type<ValueType>& X,
                                const SpectralSolver<ValueType>& solver, const vec_type<ValueType>& xty,
                                const SpikeSlabPrior<ValueType>& prior, const AmpConfig& config)
{
    using value_t = ValueType;
    using vec_t = vec_type<value_t>;
    if (!(prior.sigma2 > 0)) throw ConfigError("AMP needs a positive noise variance");

    const Index p = X.cols();
    AmpState<value_t> st;
    st.damping = value_t(config.damping);
    if (p == 0) {
        st.m.resize(0);
        st.v.resize(0);
        st.incl.resize(0);
        st.r.resize(0);
        st.residual = y;
        st.tau_t2 = prior.sigma2;
        st.converged = true;
        return st;
    }

    const value_t min_prec = value_t(1e-12);
    const value_t max_prec = value_t(1e12);
    auto clamp_prec = [&](value_t g) { return std::clamp(g, min_prec, max_prec); };

    const value_t gw = value_t(1) / prior.sigma2;

    // Prior moments as the first message into the LMMSE stage.
    const value_t prior_var = std::max(prior.lambda * prior.psi, value_t(1e-300));
    vec_t r2 = vec_t::Zero(p);
    value_t g2 = clamp_prec(value_t(1) / prior_var);

    st.m = vec_t::Zero(p);
    st.v = vec_t::Constant(p, prior.lambda * prior.psi);
    st.incl = vec_t::Constant(p, prior.lambda);
    value_t first_tau = 0;

    for (int it = 1; it <= config.max_iter; ++it) {
        // LMMSE stage and its extrinsic output.
        value_t trace = 0;
        const vec_t b = gw * xty + g2 * r2;
        const vec_t x2 = solver.solve(b, gw, g2, trace);
        const value_t eta2 = value_t(p) / trace;
        const value_t g1 = clamp_prec(eta2 - g2);
        st.r = (eta2 * x2 - g2 * r2) / g1;

        // Denoiser stage.
        const vec_t m_prev = st.m;
        const value_t s2 = value_t(1) / g1;
        for (Index j = 0; j < p; ++j) {
            const auto d = spike_slab_denoise(st.r(j), s2, prior);
            st.m(j) = d.mean;
            st.v(j) = d.var;
            st.incl(j) = d.incl;
        }
        st.tau_t2 = s2;
        st.iteration = it;
        if (it == 1) first_tau = s2;
        if (!std::isfinite(static_cast<double>(s2)) || s2 > value_t(config.divergence_factor) * first_tau ||
            !st.m.allFinite()) {
            throw NumericalError("AMP diverged at iteration " + std::to_string(it) +
                                 " (tau_t2 = " + std::to_string(static_cast<double>(s2)) +
                                 ", initial " + std::to_string(static_cast<double>(first_tau)) + ")");
        }

        const value_t change = (st.m - m_prev).norm() / std::max(st.m.norm(), value_t(1e-12));
        if (it > 1 && change < value_t(config.tol)) {
            st.converged = true;
            break;
        }

        // Extrinsic message back to the LMMSE stage, damped.
        const value_t mean_v = st.v.mean();
        const value_t eta1 = value_t(1) / std::max(mean_v, value_t(1) / max_prec);
        const value_t g2_new = clamp_prec(eta1 - g1);
        const vec_t r2_new = (eta1 * st.m - g1 * st.r) / g2_new;
        const value_t rho = value_t(config.damping);
        if (it == 1) {
            r2 = r2_new;
            g2 = g2_new;
        } else {
            r2 = rho * r2_new + (value_t(1) - rho) * r2;
            g2 = clamp_prec(rho * g2_new + (value_t(1) - rho) * g2);
        }
    }
    st.residual = y - X * st.m;
    return st;
}

} // namespace detail

/// Sum-product approximate message passing for y = X beta + N(0, sigma2 I)
/// under the spike-and-slab prior, in its vector form: an LMMSE stage and
/// a componentwise denoiser exchange Gaussian messages (r, 1/gamma), each
/// stage removing its own contribution (the Onsager correction) before
/// passing the message on. Messages sent back to the LMMSE stage are damped.
///
/// The LMMSE stage sees the data only through X'X and X'y, so when the
/// columns are orthonormal it returns r = X'y with noise sigma2 exactly and
/// the denoiser output is the exact marginal posterior.
template <class ValueType>
AmpState<ValueType> amp_run(const vec_type<ValueType>& y, const mat_type<ValueType>& X,
                            const SpikeSlabPrior<ValueType>& prior, const AmpConfig& config)
{
    config.validate();
    if (X.rows() != y.size()) throw ConfigError("AMP inputs are not conformable");
    const detail::SpectralSolver<ValueType> solver(X);
    return detail::amp_iterate(y, X, solver, vec_type<ValueType>(X.transpose() * y), prior, config);
}

/// mu = x_new' m and tau2 = x_new' diag(v) x_new + sigma2, summed in index order.
template <class ValueType>
GaussianPredictive<ValueType> amp_predictive(const AmpState<ValueType>& state, const vec_type<ValueType>& x_new,
                                             ValueType sigma2)
{
    if (x_new.size() != state.m.size()) throw ConfigError("x_new does not match the AMP state dimension");
    ValueType mu = 0, spread = 0;
    for (Index j = 0; j < x_new.size(); ++j) {
        mu += x_new(j) * state.m(j);
        spread += x_new(j) * x_new(j) * state.v(j);
    }
    return {mu, spread + sigma2};
}

template <class ValueType>
struct EmResult
{
    SpikeSlabPrior<ValueType> prior;
    AmpState<ValueType> state;
    int rounds = 0;
    bool converged = false;
    bool aborted = false;
    std::string diagnostic;
};

/// Alternates amp_run with the updates
///   lambda <- mean_j incl_j          (clamped to [1/p', 1 - 1/p']; only if tune_lambda)
///   sigma2 <- (|y - X m|^2 + sum_j |x_j|^2 v_j) / n'
/// until both change by less than em_tol (relative). psi is held fixed.
/// The returned state is recomputed at the returned hyperparameters.
/// If AMP diverges, the last stable hyperparameters and state are returned
/// with `aborted` set.
template <class ValueType>
EmResult<ValueType> em_tune(const vec_type<ValueType>& y, const mat_type<ValueType>& X,
                            const SpikeSlabPrior<ValueType>& prior0, const AmpConfig& config)
{
    using value_t = ValueType;
    using std::abs;
    const Index p = X.cols();
    const Index n = X.rows();
    const value_t floor = value_t(config.sigma2_floor);

    EmResult<value_t> res;
    auto current = prior0;
    current.sigma2 = std::max(current.sigma2, floor);
    res.prior = current;
    const vec_type<value_t> col_norm2 = X.colwise().squaredNorm().transpose();
    config.validate();
    if (X.rows() != y.size()) throw ConfigError("AMP inputs are not conformable");
    const detail::SpectralSolver<value_t> solver(X);
    const vec_type<value_t> xty = X.transpose() * y;

    bool have_state = false;
    for (int round = 1; round <= config.em_max_rounds; ++round) {
        AmpState<value_t> st;
        try {
            st = detail::amp_iterate(y, X, solver, xty, current, config);
        } catch (const NumericalError& e) {
            if (!have_state) throw;
            res.aborted = true;
            res.diagnostic = e.what();
            return res;
        }
        res.prior = current;
        res.state = std::move(st);
        have_state = true;
        res.rounds = round;

        auto next = current;
        if (config.tune_lambda && p >= 2) {
            const value_t lo = value_t(1) / value_t(p);
            next.lambda = std::clamp(res.state.incl.mean(), lo, value_t(1) - lo);
        }
        const value_t rss = (y - X * res.state.m).squaredNorm();
        const value_t spread = p > 0 ? col_norm2.dot(res.state.v) : value_t(0);
        next.sigma2 = std::max(floor, (rss + spread) / value_t(n));

        const value_t change = std::max(abs(next.lambda - current.lambda) / current.lambda,
                                        abs(next.sigma2 - current.sigma2) / current.sigma2);
        current = next;
        if (change < value_t(config.em_tol)) {
            res.converged = true;
            break;
        }
    }
    try {
        res.state = detail::amp_iterate(y, X, solver, xty, current, config);
        res.prior = current;
    } catch (const NumericalError& e) {
        res.aborted = true;
        res.diagnostic = e.what();
    }
    return res;
}

} // namespace rotmarg
