#pragma once
#include <cmath>
#include <limits>
#include <numbers>

namespace rotmarg {

template <class T>
inline T log_normal_pdf(T x, T mean, T var)
{
    using std::log;
    const T d = x - mean;
    return T(-0.5) * (log(T(2) * std::numbers::pi_v<T>) + log(var) + d * d / var);
}

/// log(exp(a) + exp(b)); either argument may be -inf.
template <class T>
inline T log_add_exp(T a, T b)
{
    using std::exp;
    using std::log1p;
    if (a == -std::numeric_limits<T>::infinity()) return b;
    if (b == -std::numeric_limits<T>::infinity()) return a;
    return a > b ? a + log1p(exp(b - a)) : b + log1p(exp(a - b));
}

/// Streaming log-sum-exp. Result depends on insertion order only through
/// rounding, so callers that need bit-reproducibility must fix the order.
template <class T>
class LogSumExp
{
public:
    void add(T x)
    {
        using std::exp;
        if (x == -std::numeric_limits<T>::infinity()) return;
        if (x > max_) {
            sum_ = sum_ * exp(max_ - x) + T(1);
            max_ = x;
        } else {
            sum_ += exp(x - max_);
        }
    }

    void merge(const LogSumExp& other)
    {
        using std::exp;
        if (other.sum_ == T(0)) return;
        if (other.max_ > max_) {
            sum_ = sum_ * exp(max_ - other.max_) + other.sum_;
            max_ = other.max_;
        } else {
            sum_ += other.sum_ * exp(other.max_ - max_);
        }
    }

    T value() const
    {
        using std::log;
        if (sum_ == T(0)) return -std::numeric_limits<T>::infinity();
        return max_ + log(sum_);
    }

private:
    T max_ = -std::numeric_limits<T>::infinity();
    T sum_ = 0;
};

/// log(lambda) and log(1 - lambda) with the endpoints mapped to -inf.
template <class T>
inline T log_prob(T lambda)
{
    using std::log;
    return lambda <= T(0) ? -std::numeric_limits<T>::infinity() : log(lambda);
}

template <class T>
inline T log_complement(T lambda)
{
    using std::log1p;
    return lambda >= T(1) ? -std::numeric_limits<T>::infinity() : log1p(-lambda);
}

} // namespace rotmarg
