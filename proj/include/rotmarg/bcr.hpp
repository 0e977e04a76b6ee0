#pragma once
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>
#include <rotmarg/gaussian.hpp>
#include <rotmarg/random.hpp>
#include <rotmarg/types.hpp>

namespace rotmarg {

/// Bayesian compressed regression settings. `kappa <= 0` and `m <= 0` mean
/// "resolve from the prior" (kappa = psi, m = ceil(lambda p') + 2), which
/// resolve_bcr_config does.
struct BcrConfig
{
    double kappa = 0;
    int m = 0;
    int K = 10;
    std::uint64_t seed = 0;
    bool marginalize_sigma2 = false;
    double ig_shape = 3;
    double ig_scale = 1;
    bool full_mixture_variance = false;
    int max_rank_retries = 100;

    void validate() const
    {
        if (!(kappa > 0)) throw ConfigError("BCR prior variance kappa must be positive");
        if (m < 1) throw ConfigError("BCR projection dimension m must be at least 1");
        if (K < 1) throw ConfigError("BCR needs at least one projection (K >= 1)");
        if (marginalize_sigma2 && !(ig_shape > 1)) {
            throw ConfigError("inverse-gamma shape must exceed 1 when marginalizing sigma2");
        }
        if (marginalize_sigma2 && !(ig_scale > 0)) throw ConfigError("inverse-gamma scale must be positive");
    }
};

/// Fills in kappa and m for a problem with p_prime predictors and n rows.
template <class ValueType>
BcrConfig resolve_bcr_config(BcrConfig config, ValueType lambda, ValueType psi, Index p_prime, Index n)
{
    using std::ceil;
    if (!(config.kappa > 0)) config.kappa = static_cast<double>(psi);
    if (config.m <= 0) config.m = static_cast<int>(ceil(static_cast<double>(lambda) * double(p_prime))) + 2;
    const Index cap = std::max<Index>(1, std::min<Index>(p_prime, n));
    config.m = static_cast<int>(std::clamp<Index>(config.m, 1, cap));
    return config;
}

/// One random compression: theta and the orthonormalized p' x m basis.
template <class ValueType>
struct ProjectionDraw
{
    ValueType theta = 0.5;
    mat_type<ValueType> basis;
    ValueType log_weight = 0;
};

/// Entries iid from {-sqrt(1/theta), +sqrt(1/theta), 0} with probabilities
/// (theta^2, (1-theta)^2, 2 theta (1-theta)).
template <class ValueType>
mat_type<ValueType> draw_ternary_matrix(Index rows, Index cols, ValueType theta, rng_type& rng)
{
    using std::sqrt;
    const ValueType mag = sqrt(ValueType(1) / theta);
    const double p_neg = static_cast<double>(theta * theta);
    const double p_pos = static_cast<double>((1 - theta) * (1 - theta));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    mat_type<ValueType> M(rows, cols);
    for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) {
            const double u = unif(rng);
            M(r, c) = u < p_neg ? -mag : (u < p_neg + p_pos ? mag : ValueType(0));
        }
    }
    return M;
}

/// Modified Gram-Schmidt with one reorthogonalization pass; assumes
/// full column rank.
template <class ValueType>
void orthonormalize_columns(mat_type<ValueType>& M)
{
    for (Index c = 0; c < M.cols(); ++c) {
        for (int pass = 0; pass < 2; ++pass) {
            for (Index k = 0; k < c; ++k) {
                const ValueType r = M.col(k).dot(M.col(c));
                M.col(c) -= r * M.col(k);
            }
        }
        M.col(c) /= M.col(c).norm();
    }
}

template <class ValueType>
bool has_full_column_rank(const mat_type<ValueType>& M)
{
    using std::abs;
    if (M.cols() > M.rows()) return false;
    const ValueType scale = M.colwise().norm().maxCoeff();
    if (!(scale > ValueType(0))) return false;
    Eigen::ColPivHouseholderQR<mat_type<ValueType>> qr(M);
    const auto& R = qr.matrixQR();
    for (Index i = 0; i < M.cols(); ++i) {
        if (!(abs(R(i, i)) > ValueType(1e-10) * scale)) return false;
    }
    return true;
}

/// Draws theta ~ U(0.1, 0.9) and a ternary p' x m matrix, redrawing the
/// whole matrix until it has full column rank, then orthonormalizes.
template <class ValueType>
ProjectionDraw<ValueType> sample_projection(Index p_prime, const BcrConfig& config, rng_type& rng)
{
    if (config.m > p_prime) {
        throw ConfigError("projection dimension m=" + std::to_string(config.m) +
                          " exceeds the number of predictors " + std::to_string(p_prime));
    }
    std::uniform_real_distribution<double> theta_dist(0.1, 0.9);
    ProjectionDraw<ValueType> draw;
    draw.theta = ValueType(theta_dist(rng));
    for (int attempt = 0; attempt <= config.max_rank_retries; ++attempt) {
        draw.basis = draw_ternary_matrix<ValueType>(p_prime, config.m, draw.theta, rng);
        if (has_full_column_rank(draw.basis)) {
            orthonormalize_columns(draw.basis);
            return draw;
        }
    }
    throw NumericalError("could not draw a full-rank projection after " +
                         std::to_string(config.max_rank_retries) + " retries");
}

namespace detail {

// Conjugate fit of y ~ N(Z alpha, sigma2 I) with Z = X Theta. Known-noise
// mode: alpha ~ N(0, kappa I). Marginalized mode: alpha | s2 ~ N(0, g s2 I),
// s2 ~ IG(a0, b0), with g = kappa / E[s2] so both modes share the scale.
template <class ValueType>
struct CompressedFit
{
    using value_t = ValueType;
    using vec_t = vec_type<value_t>;
    using mat_t = mat_type<value_t>;

    Eigen::LLT<mat_t> chol;     // of G = Z'Z + ridge I
    vec_t alpha_mean;           // G^{-1} Z'y
    value_t ridge = 0;
    value_t logdet_G = 0;
    value_t yty = 0;
    value_t explained = 0;      // y'Z G^{-1} Z'y
    Index n = 0;
    Index m = 0;

    CompressedFit(const vec_t& y, const mat_t& X, const mat_t& basis, value_t ridge_)
        : ridge(ridge_), n(y.size()), m(basis.cols())
    {
        const mat_t Z = X * basis;
        mat_t G = Z.transpose() * Z;
        G.diagonal().array() += ridge;
        chol.compute(G);
        if (chol.info() != Eigen::Success) {
            throw NumericalError("compressed normal equations are not positive definite");
        }
        const vec_t zty = Z.transpose() * y;
        alpha_mean = chol.solve(zty);
        logdet_G = value_t(2) * chol.matrixLLT().diagonal().array().log().sum();
        yty = y.squaredNorm();
        explained = zty.dot(alpha_mean);
    }
};

template <class ValueType>
ValueType marginal_scale(const BcrConfig& config, ValueType sigma2)
{
    if (!config.marginalize_sigma2) return ValueType(config.kappa) / sigma2;
    const ValueType prior_mean = ValueType(config.ig_scale) / ValueType(config.ig_shape - 1);
    return ValueType(config.kappa) / prior_mean;
}

template <class ValueType>
GaussianPredictive<ValueType> fit_predictive(const CompressedFit<ValueType>& fit, const mat_type<ValueType>& basis,
                                             const vec_type<ValueType>& x_new, const BcrConfig& config,
                                             ValueType sigma2)
{
    const vec_type<ValueType> h = basis.transpose() * x_new;
    const ValueType quad = h.dot(fit.chol.solve(h));
    GaussianPredictive<ValueType> out;
    out.mu = h.dot(fit.alpha_mean);
    if (!config.marginalize_sigma2) {
        out.tau2 = sigma2 * quad + sigma2;
    } else {
        // Student-t predictive with 2 a_n degrees of freedom, matched by
        // its mean and variance.
        const ValueType a_n = ValueType(config.ig_shape) + ValueType(fit.n) / 2;
        const ValueType b_n = ValueType(config.ig_scale) + (fit.yty - fit.explained) / 2;
        out.tau2 = b_n / (a_n - 1) * (ValueType(1) + quad);
    }
    return out;
}

template <class ValueType>
ValueType fit_log_weight(const CompressedFit<ValueType>& fit, const BcrConfig& config, ValueType sigma2)
{
    using std::lgamma;
    using std::log;
    const ValueType n = ValueType(fit.n);
    const ValueType log2pi = log(ValueType(2) * std::numbers::pi_v<ValueType>);
    const ValueType g = marginal_scale(config, sigma2);
    // log det(I + g Z'Z) = log det(G) + m log g, with G = Z'Z + I/g
    const ValueType logdet = fit.logdet_G + ValueType(fit.m) * log(g);
    if (!config.marginalize_sigma2) {
        const ValueType quad = (fit.yty - fit.explained) / sigma2;
        return ValueType(-0.5) * (n * log2pi + n * log(sigma2) + logdet + quad);
    }
    const ValueType a0 = ValueType(config.ig_shape);
    const ValueType b0 = ValueType(config.ig_scale);
    const ValueType a_n = a0 + n / 2;
    const ValueType b_n = b0 + (fit.yty - fit.explained) / 2;
    return ValueType(-0.5) * (n * log2pi + logdet) + a0 * log(b0) - a_n * log(b_n) + lgamma(a_n) - lgamma(a0);
}

} // namespace detail

/// Predictive N(mu_k, tau2_k) of the held-out response for one projection.
/// Known-noise mode: mu_k = h' G^{-1} Z'y and tau2_k = sigma2 h' G^{-1} h + sigma2,
/// with Z = X Theta, h = Theta' x_new, G = Z'Z + (sigma2/kappa) I.
template <class ValueType>
GaussianPredictive<ValueType> bcr_single_predictive(const vec_type<ValueType>& y, const mat_type<ValueType>& X,
                                                    const vec_type<ValueType>& x_new,
                                                    const ProjectionDraw<ValueType>& draw,
                                                    const BcrConfig& config, ValueType sigma2)
{
    const ValueType ridge = ValueType(1) / detail::marginal_scale(config, sigma2);
    detail::CompressedFit<ValueType> fit(y, X, draw.basis, ridge);
    return detail::fit_predictive(fit, draw.basis, x_new, config, sigma2);
}

/// Log marginal likelihood of y ~ N(X Theta alpha, sigma2 I), alpha ~ N(0, kappa I),
/// i.e. log N(y | 0, kappa Z Z' + sigma2 I) through the m x m determinant lemma.
template <class ValueType>
ValueType bcr_log_weight(const vec_type<ValueType>& y, const mat_type<ValueType>& X,
                         const ProjectionDraw<ValueType>& draw, const BcrConfig& config, ValueType sigma2)
{
    const ValueType ridge = ValueType(1) / detail::marginal_scale(config, sigma2);
    detail::CompressedFit<ValueType> fit(y, X, draw.basis, ridge);
    return detail::fit_log_weight(fit, config, sigma2);
}

/// Weighted average of component predictives with weights softmax(log_weights).
/// The variance is sum_k w_k tau2_k unless `full_mixture` adds the spread
/// of the component means.
template <class ValueType>
GaussianPredictive<ValueType> model_average(std::span<const GaussianPredictive<ValueType>> components,
                                            std::span<const ValueType> log_weights, bool full_mixture,
                                            std::vector<ValueType>* weights_out = nullptr)
{
    using std::exp;
    LogSumExp<ValueType> total;
    for (auto lw : log_weights) total.add(lw);
    const ValueType norm = total.value();
    std::vector<ValueType> w(components.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = exp(log_weights[k] - norm);

    GaussianPredictive<ValueType> out{0, 0};
    for (std::size_t k = 0; k < w.size(); ++k) {
        out.mu += w[k] * components[k].mu;
        out.tau2 += w[k] * components[k].tau2;
    }
    if (full_mixture) {
        for (std::size_t k = 0; k < w.size(); ++k) {
            const ValueType d = components[k].mu - out.mu;
            out.tau2 += w[k] * d * d;
        }
    }
    if (weights_out) *weights_out = std::move(w);
    return out;
}

template <class ValueType>
struct BcrResult
{
    GaussianPredictive<ValueType> predictive;
    std::vector<GaussianPredictive<ValueType>> components;
    std::vector<ValueType> log_weights;
    std::vector<ValueType> weights;     // normalized
    std::vector<ProjectionDraw<ValueType>> draws;
};

/// Model-averaged BCR predictive over K projections. Draw k uses substream
/// (config.seed, k), so draws do not depend on evaluation order.
template <class ValueType>
BcrResult<ValueType> bcr_predictive_detailed(const vec_type<ValueType>& y, const mat_type<ValueType>& X,
                                             const vec_type<ValueType>& x_new, const BcrConfig& config,
                                             ValueType sigma2)
{
    using value_t = ValueType;
    if (X.rows() != y.size() || X.cols() != x_new.size()) throw ConfigError("BCR inputs are not conformable");
    const Index p_prime = X.cols();
    BcrResult<value_t> res;

    if (p_prime == 0) {
        // No nuisance predictors: the predictive is the noise itself.
        res.components.push_back({0, sigma2});
        if (config.marginalize_sigma2) {
            const value_t a_n = value_t(config.ig_shape) + value_t(y.size()) / 2;
            const value_t b_n = value_t(config.ig_scale) + y.squaredNorm() / 2;
            res.components.back().tau2 = b_n / (a_n - 1);
        }
        res.log_weights.push_back(0);
        res.weights.push_back(1);
        res.predictive = res.components.back();
        return res;
    }

    config.validate();
    const value_t ridge = value_t(1) / detail::marginal_scale(config, sigma2);
    for (int k = 0; k < config.K; ++k) {
        auto rng = make_stream(config.seed, {static_cast<std::uint64_t>(k)});
        auto draw = sample_projection<value_t>(p_prime, config, rng);
        detail::CompressedFit<value_t> fit(y, X, draw.basis, ridge);
        res.components.push_back(detail::fit_predictive(fit, draw.basis, x_new, config, sigma2));
        draw.log_weight = detail::fit_log_weight(fit, config, sigma2);
        res.log_weights.push_back(draw.log_weight);
        res.draws.push_back(std::move(draw));
    }
    res.predictive = model_average<value_t>(res.components, res.log_weights, config.full_mixture_variance, &res.weights);
    return res;
}

template <class ValueType>
GaussianPredictive<ValueType> bcr_predictive(const vec_type<ValueType>& y, const mat_type<ValueType>& X,
                                             const vec_type<ValueType>& x_new, const BcrConfig& config,
                                             ValueType sigma2)
{
    return bcr_predictive_detailed(y, X, x_new, config, sigma2).predictive;
}

} // namespace rotmarg
