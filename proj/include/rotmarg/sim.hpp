#pragma once
#include <cstdint>
#include <string>
#include <vector>
#include <json.hpp>
#include <rotmarg/amp.hpp>
#include <rotmarg/bcr.hpp>
#include <rotmarg/random.hpp>
#include <rotmarg/types.hpp>

namespace rotmarg::sim {

using vec_t = vec_type<double>;
using mat_t = mat_type<double>;

/// Sigma_ij = rho^|i-j|.
mat_t ar1_covariance(Index p, double rho);

/// n rows drawn iid from N(0, Sigma) with AR(1) correlation rho, using the
/// recursion x_k = rho x_{k-1} + sqrt(1 - rho^2) e_k (the banded Cholesky
/// factor of Sigma).
mat_t gen_design(Index n, Index p, double rho, rng_type& rng);

/// Noise variance giving beta' Sigma beta / sigma2 = snr.
double calibrate_noise(const mat_t& design_cov, const vec_t& beta, double snr);

struct BoxCell
{
    double rho = 0;
    double snr = 1;
};

/// Parameters of a simulation study. Field names double as the keys of the
/// JSON configuration file.
struct SimConfig
{
    std::string study = "mse";          // "mse" or "boxplot"
    Index n = 100;
    Index p = 12;
    std::vector<double> beta_true;
    std::vector<double> rho_grid;       // mse study
    double snr = 2;                     // mse study
    std::vector<BoxCell> cells;         // boxplot study: (rho, snr) pairs
    int replicates = 100;
    double psi_rule = 10;               // psi = psi_rule * sigma2
    double lambda0 = -1;                // <= 0: nonzeros / p
    std::vector<std::string> methods = {"bcr", "amp"};
    BcrConfig bcr;
    AmpConfig amp;
    std::uint64_t seed = 1;

    void validate() const;
    double resolved_lambda0() const;
};

SimConfig fig1_config();
SimConfig fig23_config();

/// Parses a configuration object; unknown keys raise ConfigError naming them.
SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimConfig& c);

struct MseRecord
{
    double rho = 0;
    int replicate = 0;
    std::string method;
    double mse = 0;
    bool failed = false;
    int nonconverged = 0;
    std::string diagnostic;
};

struct MseSummary
{
    double rho = 0;
    std::string method;
    double mean_mse = 0;
    double p20 = 0;
    double p80 = 0;
    int used = 0;
    int failures = 0;
};

struct BoxStats
{
    double median = 0;
    double q1 = 0;
    double q3 = 0;
    double whisker_lo = 0;
    double whisker_hi = 0;
};

struct BoxSeries
{
    double rho = 0;
    double snr = 0;
    std::string method;
    int feature = 0;
    bool true_signal = false;
    std::vector<double> samples;
    BoxStats stats;
};

struct CellSummary
{
    double rho = 0;
    double snr = 0;
    std::string method;
    double extreme_fraction = 0;    // share of estimates outside [0.05, 0.95]
    int used = 0;
    int failures = 0;
};

struct SimResult
{
    std::string study;
    std::vector<MseRecord> records;
    std::vector<MseSummary> summary;
    std::vector<BoxSeries> box;
    std::vector<CellSummary> cells;
};

/// Linear-interpolation quantile of sorted data (the usual "type 7").
double quantile_sorted(const std::vector<double>& sorted, double q);

/// Median, quartiles and whiskers at the most extreme points within
/// 1.5 IQR of the quartiles.
BoxStats box_stats(std::vector<double> samples);

/// Exact-vs-approximate MSE of inclusion probabilities over a grid of
/// design correlations, with sigma2, lambda and psi known.
SimResult run_mse_study(const SimConfig& config, int threads = 1);

/// Inclusion-probability distributions with sigma2 and lambda tuned from
/// standardized data, one series per (cell, method, feature).
SimResult run_boxplot_study(const SimConfig& config, int threads = 1);

nlohmann::json to_json(const SimResult& r);
std::string mse_summary_csv(const SimResult& r);
std::string box_summary_csv(const SimResult& r);
std::string summary_table(const SimResult& r);

} // namespace rotmarg::sim
