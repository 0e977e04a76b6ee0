#pragma once
#include <Eigen/Core>
#include <cmath>
#include <string>
#include <rotmarg/error.hpp>

namespace rotmarg {

using Index = Eigen::Index;

template <class Scalar_, int Rows_ = Eigen::Dynamic>
using vec_type = Eigen::Matrix<Scalar_, Rows_, 1>;

template <class Scalar_, int Rows_ = Eigen::Dynamic, int Cols_ = Eigen::Dynamic>
using mat_type = Eigen::Matrix<Scalar_, Rows_, Cols_, Eigen::ColMajor>;

/// Regression data y = X beta + eps together with the moments removed by
/// standardization (identity when `standardized` is false).
template <class Scalar_ = double>
struct Dataset
{
    using value_t = Scalar_;
    using vec_t = vec_type<value_t>;
    using mat_t = mat_type<value_t>;

    vec_t y;
    mat_t X;
    vec_t column_means;
    vec_t column_scales;
    value_t y_mean = 0;
    value_t y_scale = 1;
    bool standardized = false;

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    /// Wraps raw data, checking shapes and finiteness.
    static Dataset from_raw(vec_t y, mat_t X)
    {
        if (y.size() != X.rows()) {
            throw DataError("response has " + std::to_string(y.size()) +
                            " rows but design has " + std::to_string(X.rows()));
        }
        if (X.rows() < 2) throw DataError("need at least 2 observations");
        if (X.cols() < 1) throw DataError("need at least 1 feature");
        if (!y.allFinite()) throw DataError("response contains non-finite values");
        for (Index k = 0; k < X.cols(); ++k) {
            if (!X.col(k).allFinite()) {
                throw DataError("feature column " + std::to_string(k) + " contains non-finite values");
            }
        }
        Dataset d;
        d.y = std::move(y);
        d.X = std::move(X);
        d.column_means = vec_t::Zero(d.X.cols());
        d.column_scales = vec_t::Ones(d.X.cols());
        return d;
    }
};

/// iid spike-and-slab prior beta_j ~ (1 - lambda) delta_0 + lambda N(0, psi)
/// with Gaussian noise variance sigma2.
template <class Scalar_ = double>
struct SpikeSlabPrior
{
    using value_t = Scalar_;

    value_t lambda = 0.5;
    value_t psi = 1;
    value_t sigma2 = 1;

    void validate() const
    {
        if (!(lambda > 0 && lambda < 1)) throw ConfigError("prior inclusion probability must lie in (0,1)");
        if (!(psi > 0)) throw ConfigError("slab variance psi must be positive");
        if (!(sigma2 > 0)) throw ConfigError("noise variance sigma2 must be positive");
    }
};

/// Data rotated so that coefficient j enters only through the scalar
/// z = q1' y, with q1 = x_j / |x_j|; the remaining n-1 coordinates
/// y_tilde = Q2' y do not involve beta_j.
template <class Scalar_ = double>
struct RotatedProblem
{
    using value_t = Scalar_;
    using vec_t = vec_type<value_t>;
    using mat_t = mat_type<value_t>;

    Index index_j = 0;
    value_t a = 0;              // |x_j|
    value_t z = 0;              // q1' y
    vec_t y_tilde;              // Q2' y, length n-1
    mat_t X_tilde;              // Q2' X_(-j), (n-1) x (p-1)
    vec_t x_tilde_new;          // q1' X_(-j), length p-1
};

/// Gaussian stand-in N(mu, tau2) for the predictive of the rotated
/// held-out response.
template <class Scalar_ = double>
struct GaussianPredictive
{
    Scalar_ mu = 0;
    Scalar_ tau2 = 1;
};

/// Approximate marginal posterior (1 - lambda_j) delta_0 + lambda_j N(m_j, psi_j).
template <class Scalar_ = double>
struct MarginalResult
{
    Index index_j = 0;
    Scalar_ inclusion_prob = 0;
    Scalar_ slab_mean = 0;
    Scalar_ slab_var = 0;
    bool converged = true;
    std::string diagnostic;
};

} // namespace rotmarg
