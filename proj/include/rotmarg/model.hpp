#pragma once
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <rotmarg/gaussian.hpp>
#include <rotmarg/types.hpp>

namespace rotmarg {

/// Centers every column of X and y and scales to unit sample standard
/// deviation (denominator n-1). An already standardized dataset is
/// returned unchanged.
template <class ValueType>
Dataset<ValueType> standardize(const Dataset<ValueType>& data)
{
    using std::abs;
    using std::sqrt;
    using value_t = ValueType;

    if (data.standardized) return data;

    const Index n = data.n();
    const Index p = data.p();
    if (n < 2) throw DataError("need at least 2 observations to standardize");

    auto moments = [n](const auto& col, value_t& mean, value_t& sd) {
        mean = col.mean();
        sd = sqrt((col.array() - mean).square().sum() / value_t(n - 1));
    };
    auto is_constant = [](value_t mean, value_t sd) {
        return !(sd > value_t(1e-12) * std::max(value_t(1), abs(mean)));
    };

    Dataset<ValueType> out;
    out.X.resize(n, p);
    out.column_means.resize(p);
    out.column_scales.resize(p);
    for (Index k = 0; k < p; ++k) {
        value_t mean, sd;
        moments(data.X.col(k), mean, sd);
        if (is_constant(mean, sd)) {
            throw DataError("feature column " + std::to_string(k) + " is constant and cannot be standardized");
        }
        out.X.col(k) = (data.X.col(k).array() - mean) / sd;
        out.column_means(k) = mean;
        out.column_scales(k) = sd;
    }
    value_t ym, ys;
    moments(data.y, ym, ys);
    if (is_constant(ym, ys)) throw DataError("response is constant and cannot be standardized");
    out.y = (data.y.array() - ym) / ys;
    out.y_mean = ym;
    out.y_scale = ys;
    out.standardized = true;
    return out;
}

/// Householder reflection H = I - 2 v v' / v'v with H e1 = -sign(q1_0) q1.
/// Columns 2..n of H give an orthonormal completion Q2 of q1, so that
/// Q2 Q2' = I - q1 q1'. The sign choice avoids cancellation in v.
template <class ValueType>
class HouseholderCompletion
{
public:
    using value_t = ValueType;
    using vec_t = vec_type<value_t>;
    using mat_t = mat_type<value_t>;

    explicit HouseholderCompletion(const vec_t& q1)
        : v_(q1)
    {
        const value_t s = q1(0) >= value_t(0) ? value_t(1) : value_t(-1);
        v_(0) += s;
        beta_ = value_t(2) / v_.squaredNorm();
    }

    Index size() const { return v_.size(); }

    /// Q2' u, a vector of length n-1.
    template <class Derived>
    vec_t apply_q2t(const Eigen::MatrixBase<Derived>& u) const
    {
        const value_t c = beta_ * v_.dot(u);
        return (u - c * v_).tail(size() - 1);
    }

    /// Q2' U column by column, an (n-1) x k matrix.
    template <class Derived>
    mat_t apply_q2t_cols(const Eigen::MatrixBase<Derived>& U) const
    {
        const auto c = (beta_ * (v_.transpose() * U)).eval();
        mat_t out = U.bottomRows(size() - 1);
        out.noalias() -= v_.tail(size() - 1) * c;
        return out;
    }

    /// Dense n x (n-1) completion; intended for checks, O(n^2) memory.
    mat_t q2() const
    {
        mat_t H = mat_t::Identity(size(), size());
        H.noalias() -= beta_ * v_ * v_.transpose();
        return H.rightCols(size() - 1);
    }

private:
    vec_t v_;
    value_t beta_;
};

/// Rotates the data so that coefficient j decouples from the others.
/// The completion is a Householder reflection, fully determined by x_j;
/// `seed` is accepted for randomized completions and currently unused.
template <class ValueType>
RotatedProblem<ValueType> rotate_for_index(const Dataset<ValueType>& data, Index j, std::uint64_t seed = 0)
{
    (void)seed;
    using value_t = ValueType;
    using vec_t = vec_type<value_t>;
    using mat_t = mat_type<value_t>;

    const Index n = data.n();
    const Index p = data.p();
    if (j < 0 || j >= p) {
        throw ConfigError("coefficient index " + std::to_string(j) + " out of range [0," + std::to_string(p) + ")");
    }
    const value_t a = data.X.col(j).norm();
    if (!(a > value_t(0)) || !std::isfinite(static_cast<double>(a))) {
        throw DataError("feature column " + std::to_string(j) + " has zero norm");
    }
    const vec_t q1 = data.X.col(j) / a;

    mat_t X_rest(n, p - 1);
    if (j > 0) X_rest.leftCols(j) = data.X.leftCols(j);
    if (j < p - 1) X_rest.rightCols(p - 1 - j) = data.X.rightCols(p - 1 - j);

    HouseholderCompletion<value_t> house(q1);

    RotatedProblem<value_t> rot;
    rot.index_j = j;
    rot.a = a;
    rot.z = q1.dot(data.y);
    rot.y_tilde = house.apply_q2t(data.y);
    rot.x_tilde_new = X_rest.transpose() * q1;
    rot.X_tilde = house.apply_q2t_cols(X_rest);
    return rot;
}

/// Combines the scalar observation z = a beta_j + e, e ~ N(mu, tau2),
/// with the spike-and-slab prior. All densities in log space.
template <class ValueType>
MarginalResult<ValueType> combine_marginal(
    const RotatedProblem<ValueType>& rot,
    const GaussianPredictive<ValueType>& pred,
    const SpikeSlabPrior<ValueType>& prior)
{
    using value_t = ValueType;
    using std::exp;
    if (!(pred.tau2 > value_t(0))) throw NumericalError("predictive variance must be positive");

    const value_t a2psi = rot.a * rot.a * prior.psi;
    const value_t slab_total = a2psi + pred.tau2;
    const value_t log_slab = log_prob(prior.lambda) + log_normal_pdf(rot.z, pred.mu, slab_total);
    const value_t log_spike = log_complement(prior.lambda) + log_normal_pdf(rot.z, pred.mu, pred.tau2);

    MarginalResult<value_t> out;
    out.index_j = rot.index_j;
    out.inclusion_prob = std::clamp(exp(log_slab - log_add_exp(log_slab, log_spike)), value_t(0), value_t(1));
    out.slab_mean = rot.a * prior.psi * (rot.z - pred.mu) / slab_total;
    out.slab_var = prior.psi * pred.tau2 / slab_total;
    return out;
}

} // namespace rotmarg
