#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>
#include <rotmarg/amp.hpp>
#include <rotmarg/bcr.hpp>
#include <rotmarg/model.hpp>
#include <rotmarg/parallel.hpp>
#include <rotmarg/random.hpp>

namespace rotmarg {

enum class Backend
{
    bcr,
    amp,
};

inline const char* backend_name(Backend b) { return b == Backend::bcr ? "bcr" : "amp"; }

struct MarginalOptions
{
    Backend backend = Backend::amp;
    BcrConfig bcr;
    AmpConfig amp;
    // Unknown sigma2 and lambda. Both backends iterate the shared
    // lambda <- mean_j lambda_j; BCR integrates sigma2 out under the
    // inverse-gamma prior, AMP estimates it by EM on each rotated problem.
    bool tune = false;
    bool allow_unstandardized = false;
    int threads = 1;
    int tune_max_rounds = 50;
    double tune_tol = 1e-6;
};

template <class ValueType>
struct MarginalsReport
{
    std::vector<MarginalResult<ValueType>> results;
    SpikeSlabPrior<ValueType> prior;    // lambda behind the reported results
    int tune_rounds = 0;
};

namespace detail {

template <class ValueType>
MarginalResult<ValueType> failed_result(Index j, const std::string& why)
{
    MarginalResult<ValueType> r;
    r.index_j = j;
    r.inclusion_prob = r.slab_mean = r.slab_var = std::numeric_limits<ValueType>::quiet_NaN();
    r.converged = false;
    r.diagnostic = why;
    return r;
}

template <class ValueType>
struct ScalarPart
{
    RotatedProblem<ValueType> rot;    // only index_j, a, z are kept
    GaussianPredictive<ValueType> pred;
    bool ok = false;
    std::string diagnostic;
};

template <class ValueType>
MarginalResult<ValueType> amp_marginal(const Dataset<ValueType>& data, Index j, const SpikeSlabPrior<ValueType>& prior,
                                       const MarginalOptions& opts)
{
    const auto rot = rotate_for_index(data, j);
    if (opts.tune) {
        AmpConfig cfg = opts.amp;
        cfg.tune_lambda = false;
        const auto em = em_tune(rot.y_tilde, rot.X_tilde, prior, cfg);
        const auto pred = amp_predictive(em.state, rot.x_tilde_new, em.prior.sigma2);
        auto res = combine_marginal(rot, pred, em.prior);
        res.converged = em.converged && em.state.converged && !em.aborted;
        if (em.aborted) res.diagnostic = em.diagnostic;
        else if (!res.converged) res.diagnostic = "sigma2 estimation or AMP did not converge";
        return res;
    }
    const auto st = amp_run(rot.y_tilde, rot.X_tilde, prior, opts.amp);
    auto res = combine_marginal(rot, amp_predictive(st, rot.x_tilde_new, prior.sigma2), prior);
    res.converged = st.converged;
    if (!st.converged) res.diagnostic = "AMP reached max_iter without converging";
    return res;
}

template <class ValueType>
ScalarPart<ValueType> bcr_part(const Dataset<ValueType>& data, Index j, const SpikeSlabPrior<ValueType>& prior,
                               const BcrConfig& base)
{
    ScalarPart<ValueType> part;
    auto rot = rotate_for_index(data, j);
    auto cfg = resolve_bcr_config(base, prior.lambda, prior.psi, rot.X_tilde.cols(), rot.X_tilde.rows());
    cfg.seed = stream_seed(base.seed, {static_cast<std::uint64_t>(j)});
    part.pred = bcr_predictive(rot.y_tilde, rot.X_tilde, rot.x_tilde_new, cfg, prior.sigma2);
    part.rot.index_j = rot.index_j;
    part.rot.a = rot.a;
    part.rot.z = rot.z;
    part.ok = true;
    return part;
}

} // namespace detail

/// One approximate marginal per coefficient: rotate for j, approximate the
/// rotated predictive with the chosen backend, combine with the prior.
/// Each index depends only on its own rotated data, so the loop runs in
/// parallel and the output does not depend on the thread count.
/// A numerical failure at one index is reported in that index's result.
template <class ValueType>
MarginalsReport<ValueType> approximate_all_marginals_report(const Dataset<ValueType>& data,
                                                            const SpikeSlabPrior<ValueType>& prior,
                                                            const MarginalOptions& opts)
{
    using value_t = ValueType;
    prior.validate();
    if (!data.standardized && !opts.allow_unstandardized) {
        throw ConfigError("dataset is not standardized; standardize it or opt out explicitly");
    }
    const Index p = data.p();
    MarginalsReport<value_t> report;
    report.prior = prior;
    report.results.resize(p);

    if (opts.backend == Backend::amp) opts.amp.validate();
    auto current = prior;

    auto amp_round = [&] {
        parallel_for(static_cast<std::size_t>(p), opts.threads, [&](std::size_t j) {
            try {
                report.results[j] = detail::amp_marginal(data, Index(j), current, opts);
            } catch (const NumericalError& e) {
                report.results[j] = detail::failed_result<value_t>(Index(j), e.what());
            }
        });
    };

    BcrConfig base = opts.bcr;
    if (opts.tune) base.marginalize_sigma2 = true;
    std::vector<detail::ScalarPart<value_t>> parts;
    std::vector<int> part_m;
    auto bcr_round = [&] {
        if (parts.empty()) {
            parts.resize(p);
            part_m.assign(p, -1);
        }
        // Predictives depend on lambda only through an automatic m.
        parallel_for(static_cast<std::size_t>(p), opts.threads, [&](std::size_t j) {
            const int m = resolve_bcr_config(base, current.lambda, current.psi, p - 1, data.n() - 1).m;
            if (part_m[j] == m) return;
            part_m[j] = m;
            try {
                parts[j] = detail::bcr_part(data, Index(j), current, base);
            } catch (const NumericalError& e) {
                parts[j] = {};
                parts[j].diagnostic = e.what();
            }
        });
        for (Index j = 0; j < p; ++j) {
            report.results[j] = parts[j].ok ? combine_marginal(parts[j].rot, parts[j].pred, current)
                                            : detail::failed_result<value_t>(j, parts[j].diagnostic);
        }
    };

    const int rounds = opts.tune ? opts.tune_max_rounds : 1;
    for (int round = 1; round <= rounds; ++round) {
        report.tune_rounds = round;
        if (opts.backend == Backend::amp) amp_round();
        else bcr_round();
        report.prior = current;
        if (!opts.tune || p < 2) break;
        value_t sum = 0;
        Index used = 0;
        for (const auto& r : report.results) {
            if (!std::isfinite(r.inclusion_prob)) continue;
            sum += r.inclusion_prob;
            ++used;
        }
        if (used == 0) break;
        const value_t lo = value_t(1) / value_t(p);
        const value_t next = std::clamp(sum / value_t(used), lo, value_t(1) - lo);
        const value_t change = std::abs(next - current.lambda) / current.lambda;
        if (change < value_t(opts.tune_tol)) break;
        current.lambda = next;
    }
    return report;
}

template <class ValueType>
std::vector<MarginalResult<ValueType>> approximate_all_marginals(const Dataset<ValueType>& data,
                                                                 const SpikeSlabPrior<ValueType>& prior,
                                                                 const MarginalOptions& opts)
{
    return approximate_all_marginals_report(data, prior, opts).results;
}

} // namespace rotmarg
