#include <rotmarg/sim.hpp>

#include <rotmarg/csv.hpp>
#include <rotmarg/exact.hpp>
#include <rotmarg/marginals.hpp>
#include <rotmarg/model.hpp>
#include <rotmarg/parallel.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace rotmarg::sim {

mat_t ar1_covariance(Index p, double rho)
{
    mat_t S(p, p);
    for (Index i = 0; i < p; ++i)
        for (Index k = 0; k < p; ++k) S(i, k) = std::pow(rho, double(std::abs(i - k)));
    return S;
}

mat_t gen_design(Index n, Index p, double rho, rng_type& rng)
{
    if (!(rho >= 0 && rho < 1)) throw ConfigError("design correlation must lie in [0, 1)");
    std::normal_distribution<double> normal(0.0, 1.0);
    const double innov = std::sqrt(1 - rho * rho);
    mat_t X(n, p);
    for (Index i = 0; i < n; ++i) {
        double prev = 0;
        for (Index k = 0; k < p; ++k) {
            const double e = normal(rng);
            prev = k == 0 ? e : rho * prev + innov * e;
            X(i, k) = prev;
        }
    }
    return X;
}

double calibrate_noise(const mat_t& design_cov, const vec_t& beta, double snr)
{
    if (!(snr > 0)) throw ConfigError("signal-to-noise ratio must be positive");
    const double signal = beta.dot(design_cov * beta);
    if (!(signal > 0)) throw ConfigError("signal variance is zero; cannot calibrate the noise");
    return signal / snr;
}

double SimConfig::resolved_lambda0() const
{
    if (lambda0 > 0) return lambda0;
    const auto nz = std::count_if(beta_true.begin(), beta_true.end(), [](double b) { return b != 0; });
    return double(nz) / double(p);
}

void SimConfig::validate() const
{
    if (study != "mse" && study != "boxplot") throw ConfigError("study must be \"mse\" or \"boxplot\"");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    if (n < 2 || p < 1) throw ConfigError("need n >= 2 and p >= 1");
    if (static_cast<Index>(beta_true.size()) != p) throw ConfigError("beta_true must have p entries");
    if (p > exact_max_features) throw ConfigError("p exceeds the exact-oracle cap of 20");
    if (!(psi_rule > 0)) throw ConfigError("psi_rule must be positive");
    const double l0 = resolved_lambda0();
    if (!(l0 > 0 && l0 < 1)) throw ConfigError("lambda0 must lie in (0, 1)");
    for (const auto& m : methods) {
        if (m != "bcr" && m != "amp" && m != "oracle") throw ConfigError("unknown method '" + m + "'");
    }
    if (methods.empty()) throw ConfigError("methods must not be empty");
    if (study == "mse") {
        if (rho_grid.empty()) throw ConfigError("rho_grid must not be empty");
        for (double r : rho_grid) if (!(r >= 0 && r < 1)) throw ConfigError("every rho must lie in [0, 1)");
        if (!(snr > 0)) throw ConfigError("snr must be positive");
    } else {
        if (cells.empty()) throw ConfigError("cells must not be empty");
        for (const auto& c : cells) {
            if (!(c.rho >= 0 && c.rho < 1)) throw ConfigError("every rho must lie in [0, 1)");
            if (!(c.snr > 0)) throw ConfigError("every snr must be positive");
        }
    }
    if (bcr.K < 1) throw ConfigError("bcr.K must be at least 1");
    amp.validate();
}

SimConfig fig1_config()
{
    SimConfig c;
    c.study = "mse";
    c.n = 100;
    c.p = 12;
    c.beta_true = {3, 1.5, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    c.rho_grid = {0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    c.snr = 2;
    c.replicates = 100;
    c.psi_rule = 10;
    c.lambda0 = 3.0 / 12.0;
    c.bcr.m = 5;
    c.bcr.K = 10;
    c.seed = 20150101;
    return c;
}

SimConfig fig23_config()
{
    SimConfig c;
    c.study = "boxplot";
    c.n = 100;
    c.p = 7;
    c.beta_true = {3, 1.5, 2, 0, 0, 0, 0};
    c.cells = {{0, 1}, {0.2, 1}, {0.5, 10}, {0.7, 10}, {0.8, 10}};
    c.replicates = 200;
    c.psi_rule = 10;
    c.lambda0 = 3.0 / 7.0;
    c.bcr.K = 10;
    c.seed = 20150202;
    return c;
}

// ---------------------------------------------------------------- JSON

namespace {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out, std::set<std::string>& seen)
{
    if (!j.contains(key)) return;
    seen.insert(key);
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
    }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& seen, const std::string& where)
{
    std::vector<std::string> unknown;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!seen.count(it.key())) unknown.push_back(it.key());
    }
    if (unknown.empty()) return;
    std::string msg = "unknown configuration key(s)" + (where.empty() ? std::string() : " in '" + where + "'") + ":";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
}

BcrConfig bcr_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ConfigError("'bcr' must be an object");
    BcrConfig b;
    std::set<std::string> seen;
    take(j, "kappa", b.kappa, seen);
    take(j, "m", b.m, seen);
    take(j, "K", b.K, seen);
    take(j, "marginalize_sigma2", b.marginalize_sigma2, seen);
    take(j, "ig_shape", b.ig_shape, seen);
    take(j, "ig_scale", b.ig_scale, seen);
    take(j, "full_mixture_variance", b.full_mixture_variance, seen);
    take(j, "max_rank_retries", b.max_rank_retries, seen);
    reject_unknown(j, seen, "bcr");
    return b;
}

AmpConfig amp_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ConfigError("'amp' must be an object");
    AmpConfig a;
    std::set<std::string> seen;
    take(j, "max_iter", a.max_iter, seen);
    take(j, "tol", a.tol, seen);
    take(j, "damping", a.damping, seen);
    take(j, "em_max_rounds", a.em_max_rounds, seen);
    take(j, "em_tol", a.em_tol, seen);
    take(j, "sigma2_floor", a.sigma2_floor, seen);
    reject_unknown(j, seen, "amp");
    return a;
}

} // namespace

SimConfig sim_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    SimConfig c;
    if (j.value("study", std::string("mse")) == "boxplot") c = fig23_config();
    else c = fig1_config();
    std::set<std::string> seen;
    take(j, "study", c.study, seen);
    take(j, "n", c.n, seen);
    take(j, "p", c.p, seen);
    take(j, "beta_true", c.beta_true, seen);
    take(j, "rho_grid", c.rho_grid, seen);
    take(j, "snr", c.snr, seen);
    take(j, "replicates", c.replicates, seen);
    take(j, "psi_rule", c.psi_rule, seen);
    take(j, "lambda0", c.lambda0, seen);
    take(j, "methods", c.methods, seen);
    take(j, "seed", c.seed, seen);
    if (j.contains("cells")) {
        seen.insert("cells");
        c.cells.clear();
        for (const auto& cell : j.at("cells")) {
            if (!cell.is_array() || cell.size() != 2) throw ConfigError("each cell must be a [rho, snr] pair");
            c.cells.push_back({cell[0].get<double>(), cell[1].get<double>()});
        }
    }
    if (j.contains("bcr")) {
        seen.insert("bcr");
        c.bcr = bcr_from_json(j.at("bcr"));
    }
    if (j.contains("amp")) {
        seen.insert("amp");
        c.amp = amp_from_json(j.at("amp"));
    }
    reject_unknown(j, seen, "");
    c.validate();
    return c;
}

nlohmann::json to_json(const SimConfig& c)
{
    nlohmann::json j;
    j["study"] = c.study;
    j["n"] = c.n;
    j["p"] = c.p;
    j["beta_true"] = c.beta_true;
    j["replicates"] = c.replicates;
    j["psi_rule"] = c.psi_rule;
    j["lambda0"] = c.resolved_lambda0();
    j["methods"] = c.methods;
    j["seed"] = c.seed;
    if (c.study == "mse") {
        j["rho_grid"] = c.rho_grid;
        j["snr"] = c.snr;
    } else {
        auto cells = nlohmann::json::array();
        for (const auto& cell : c.cells) cells.push_back({cell.rho, cell.snr});
        j["cells"] = cells;
    }
    j["bcr"] = {{"kappa", c.bcr.kappa},
                {"m", c.bcr.m},
                {"K", c.bcr.K},
                {"marginalize_sigma2", c.bcr.marginalize_sigma2},
                {"ig_shape", c.bcr.ig_shape},
                {"ig_scale", c.bcr.ig_scale},
                {"full_mixture_variance", c.bcr.full_mixture_variance},
                {"max_rank_retries", c.bcr.max_rank_retries}};
    j["amp"] = {{"max_iter", c.amp.max_iter},
                {"tol", c.amp.tol},
                {"damping", c.amp.damping},
                {"em_max_rounds", c.amp.em_max_rounds},
                {"em_tol", c.amp.em_tol},
                {"sigma2_floor", c.amp.sigma2_floor}};
    return j;
}

// ---------------------------------------------------------- statistics

double quantile_sorted(const std::vector<double>& s, double q)
{
    if (s.empty()) return std::nan("");
    const double h = q * double(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - double(lo)) * (s[hi] - s[lo]);
}

BoxStats box_stats(std::vector<double> samples)
{
    BoxStats b;
    if (samples.empty()) {
        b.median = b.q1 = b.q3 = b.whisker_lo = b.whisker_hi = std::nan("");
        return b;
    }
    std::sort(samples.begin(), samples.end());
    b.median = quantile_sorted(samples, 0.5);
    b.q1 = quantile_sorted(samples, 0.25);
    b.q3 = quantile_sorted(samples, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr;
    const double hi_fence = b.q3 + 1.5 * iqr;
    b.whisker_lo = *std::find_if(samples.begin(), samples.end(), [&](double x) { return x >= lo_fence; });
    b.whisker_hi = *std::find_if(samples.rbegin(), samples.rend(), [&](double x) { return x <= hi_fence; });
    return b;
}

// -------------------------------------------------------------- studies

namespace {

struct Replicate
{
    Dataset<double> data;
    double sigma2 = 0;
    double signal_var = 0;
};

Replicate simulate_replicate(const SimConfig& c, double rho, double snr, rng_type& rng)
{
    const vec_t beta = Eigen::Map<const vec_t>(c.beta_true.data(), c.p);
    const mat_t cov = ar1_covariance(c.p, rho);
    Replicate rep;
    mat_t X = gen_design(c.n, c.p, rho, rng);
    rep.sigma2 = calibrate_noise(cov, beta, snr);
    rep.signal_var = beta.dot(cov * beta);
    std::normal_distribution<double> noise(0.0, std::sqrt(rep.sigma2));
    vec_t y = X * beta;
    for (Index i = 0; i < c.n; ++i) y(i) += noise(rng);
    rep.data = Dataset<double>::from_raw(std::move(y), std::move(X));
    return rep;
}

MarginalOptions method_options(const SimConfig& c, const std::string& method, std::uint64_t bcr_seed)
{
    MarginalOptions opts;
    opts.backend = method == "bcr" ? Backend::bcr : Backend::amp;
    opts.bcr = c.bcr;
    opts.bcr.seed = bcr_seed;
    opts.amp = c.amp;
    opts.threads = 1;
    return opts;
}

// Runs one method and returns its inclusion probabilities; `failed` is set
// when any index produced no estimate.
vec_t run_method(const SimConfig& c, const std::string& method, const Dataset<double>& data,
                 const SpikeSlabPrior<double>& prior, bool tune, std::uint64_t bcr_seed, const vec_t& oracle,
                 bool& failed, int& nonconverged, std::string& diagnostic)
{
    failed = false;
    nonconverged = 0;
    if (method == "oracle") return oracle;
    auto opts = method_options(c, method, bcr_seed);
    opts.tune = tune;
    opts.allow_unstandardized = true;
    vec_t out(data.p());
    try {
        const auto res = approximate_all_marginals(data, prior, opts);
        for (Index j = 0; j < data.p(); ++j) {
            out(j) = res[j].inclusion_prob;
            if (!std::isfinite(out(j))) {
                failed = true;
                diagnostic = res[j].diagnostic;
            }
            if (!res[j].converged) ++nonconverged;
        }
    } catch (const NumericalError& e) {
        failed = true;
        diagnostic = e.what();
    }
    return out;
}

} // namespace

SimResult run_mse_study(const SimConfig& c, int threads)
{
    c.validate();
    const std::size_t n_rho = c.rho_grid.size();
    const std::size_t reps = static_cast<std::size_t>(c.replicates);
    const std::size_t n_methods = c.methods.size();
    const double lambda0 = c.resolved_lambda0();

    std::vector<MseRecord> records(n_rho * reps * n_methods);
    parallel_for(n_rho * reps, threads, [&](std::size_t job) {
        const std::size_t ci = job / reps;
        const std::size_t r = job % reps;
        const double rho = c.rho_grid[ci];
        auto rng = make_stream(c.seed, {1, ci, r});
        const auto rep = simulate_replicate(c, rho, c.snr, rng);
        SpikeSlabPrior<double> prior{lambda0, c.psi_rule * rep.sigma2, rep.sigma2};
        const vec_t exact = exact_inclusion_probs(rep.data, prior);
        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            MseRecord& rec = records[job * n_methods + mi];
            rec.rho = rho;
            rec.replicate = static_cast<int>(r);
            rec.method = c.methods[mi];
            const vec_t est = run_method(c, rec.method, rep.data, prior, false, stream_seed(c.seed, {2, ci, r}),
                                         exact, rec.failed, rec.nonconverged, rec.diagnostic);
            rec.mse = rec.failed ? std::nan("") : (est - exact).squaredNorm() / double(c.p);
        }
    });

    SimResult out;
    out.study = "mse";
    out.records = records;
    for (std::size_t ci = 0; ci < n_rho; ++ci) {
        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            MseSummary s;
            s.rho = c.rho_grid[ci];
            s.method = c.methods[mi];
            std::vector<double> vals;
            for (std::size_t r = 0; r < reps; ++r) {
                const auto& rec = records[(ci * reps + r) * n_methods + mi];
                if (rec.failed) ++s.failures;
                else vals.push_back(rec.mse);
            }
            s.used = static_cast<int>(vals.size());
            std::sort(vals.begin(), vals.end());
            double sum = 0;
            for (double v : vals) sum += v;
            s.mean_mse = vals.empty() ? std::nan("") : sum / double(vals.size());
            s.p20 = quantile_sorted(vals, 0.2);
            s.p80 = quantile_sorted(vals, 0.8);
            out.summary.push_back(s);
        }
    }
    return out;
}

SimResult run_boxplot_study(const SimConfig& c, int threads)
{
    c.validate();
    const std::size_t n_cells = c.cells.size();
    const std::size_t reps = static_cast<std::size_t>(c.replicates);
    const std::size_t n_methods = c.methods.size();
    const double lambda0 = c.resolved_lambda0();
    const double sigma2_init = c.bcr.ig_scale / (c.bcr.ig_shape - 1);

    struct Slot
    {
        vec_t est;
        bool failed = false;
    };
    std::vector<Slot> slots(n_cells * reps * n_methods);
    parallel_for(n_cells * reps, threads, [&](std::size_t job) {
        const std::size_t ci = job / reps;
        const std::size_t r = job % reps;
        const auto& cell = c.cells[ci];
        auto rng = make_stream(c.seed, {3, ci, r});
        const auto rep = simulate_replicate(c, cell.rho, cell.snr, rng);
        const auto data = standardize(rep.data);
        // psi follows the psi = psi_rule * sigma2 rule in standardized units;
        // sigma2 itself starts from the inverse-gamma prior mean and is tuned.
        const double sigma2_std = rep.sigma2 / (rep.signal_var + rep.sigma2);
        SpikeSlabPrior<double> prior{lambda0, c.psi_rule * sigma2_std, sigma2_init};
        vec_t oracle;
        if (std::find(c.methods.begin(), c.methods.end(), "oracle") != c.methods.end()) {
            oracle = exact_inclusion_probs(data, SpikeSlabPrior<double>{lambda0, c.psi_rule * sigma2_std, sigma2_std});
        }
        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            Slot& slot = slots[job * n_methods + mi];
            int nonconv = 0;
            std::string diag;
            slot.est = run_method(c, c.methods[mi], data, prior, true, stream_seed(c.seed, {4, ci, r}), oracle,
                                  slot.failed, nonconv, diag);
        }
    });

    SimResult out;
    out.study = "boxplot";
    for (std::size_t ci = 0; ci < n_cells; ++ci) {
        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            CellSummary cs;
            cs.rho = c.cells[ci].rho;
            cs.snr = c.cells[ci].snr;
            cs.method = c.methods[mi];
            std::vector<BoxSeries> series(c.p);
            std::size_t extreme = 0, total = 0;
            for (std::size_t r = 0; r < reps; ++r) {
                const Slot& slot = slots[(ci * reps + r) * n_methods + mi];
                if (slot.failed) {
                    ++cs.failures;
                    continue;
                }
                ++cs.used;
                for (Index j = 0; j < c.p; ++j) {
                    const double v = slot.est(j);
                    series[j].samples.push_back(v);
                    extreme += (v < 0.05 || v > 0.95);
                    ++total;
                }
            }
            cs.extreme_fraction = total ? double(extreme) / double(total) : std::nan("");
            out.cells.push_back(cs);
            for (Index j = 0; j < c.p; ++j) {
                auto& s = series[j];
                s.rho = cs.rho;
                s.snr = cs.snr;
                s.method = cs.method;
                s.feature = static_cast<int>(j);
                s.true_signal = c.beta_true[j] != 0;
                s.stats = box_stats(s.samples);
                out.box.push_back(std::move(s));
            }
        }
    }
    return out;
}

// --------------------------------------------------------------- output

nlohmann::json to_json(const SimResult& r)
{
    nlohmann::json j;
    j["study"] = r.study;
    if (r.study == "mse") {
        auto recs = nlohmann::json::array();
        for (const auto& x : r.records) {
            nlohmann::json o = {{"rho", x.rho}, {"replicate", x.replicate}, {"method", x.method},
                                {"failed", x.failed}, {"nonconverged", x.nonconverged}};
            o["mse"] = x.failed ? nlohmann::json(nullptr) : nlohmann::json(x.mse);
            if (!x.diagnostic.empty()) o["diagnostic"] = x.diagnostic;
            recs.push_back(o);
        }
        j["records"] = recs;
        auto sum = nlohmann::json::array();
        for (const auto& s : r.summary) {
            sum.push_back({{"rho", s.rho}, {"method", s.method}, {"mean_mse", s.mean_mse}, {"p20", s.p20},
                           {"p80", s.p80}, {"used", s.used}, {"failures", s.failures}});
        }
        j["summary"] = sum;
    } else {
        auto cells = nlohmann::json::array();
        for (const auto& c : r.cells) {
            cells.push_back({{"rho", c.rho}, {"snr", c.snr}, {"method", c.method},
                             {"extreme_fraction", c.extreme_fraction}, {"used", c.used}, {"failures", c.failures}});
        }
        j["cells"] = cells;
        auto box = nlohmann::json::array();
        for (const auto& b : r.box) {
            box.push_back({{"rho", b.rho}, {"snr", b.snr}, {"method", b.method}, {"feature", b.feature},
                           {"true_signal", b.true_signal}, {"median", b.stats.median}, {"q1", b.stats.q1},
                           {"q3", b.stats.q3}, {"whisker_lo", b.stats.whisker_lo},
                           {"whisker_hi", b.stats.whisker_hi}, {"samples", b.samples}});
        }
        j["box"] = box;
    }
    return j;
}

std::string mse_summary_csv(const SimResult& r)
{
    std::ostringstream os;
    os << "rho,method,mean_mse,p20,p80,used,failures\n";
    for (const auto& s : r.summary) {
        os << format_double(s.rho) << ',' << s.method << ',' << format_double(s.mean_mse) << ','
           << format_double(s.p20) << ',' << format_double(s.p80) << ',' << s.used << ',' << s.failures << '\n';
    }
    return os.str();
}

std::string box_summary_csv(const SimResult& r)
{
    std::ostringstream os;
    os << "rho,snr,method,feature,true_signal,median,q1,q3,whisker_lo,whisker_hi,extreme_fraction\n";
    std::map<std::pair<std::pair<double, double>, std::string>, double> extreme;
    for (const auto& c : r.cells) extreme[{{c.rho, c.snr}, c.method}] = c.extreme_fraction;
    for (const auto& b : r.box) {
        os << format_double(b.rho) << ',' << format_double(b.snr) << ',' << b.method << ',' << b.feature << ','
           << (b.true_signal ? 1 : 0) << ',' << format_double(b.stats.median) << ',' << format_double(b.stats.q1)
           << ',' << format_double(b.stats.q3) << ',' << format_double(b.stats.whisker_lo) << ','
           << format_double(b.stats.whisker_hi) << ',' << format_double(extreme[{{b.rho, b.snr}, b.method}]) << '\n';
    }
    return os.str();
}

std::string summary_table(const SimResult& r)
{
    std::ostringstream os;
    char line[160];
    if (r.study == "mse") {
        std::snprintf(line, sizeof line, "%6s  %-7s %12s %12s %12s %6s\n", "rho", "method", "mean_mse", "p20", "p80",
                      "failed");
        os << line;
        for (const auto& s : r.summary) {
            std::snprintf(line, sizeof line, "%6.2f  %-7s %12.3e %12.3e %12.3e %6d\n", s.rho, s.method.c_str(),
                          s.mean_mse, s.p20, s.p80, s.failures);
            os << line;
        }
    } else {
        std::snprintf(line, sizeof line, "%6s %6s  %-7s %10s  %s\n", "rho", "snr", "method", "extreme",
                      "median inclusion by feature");
        os << line;
        for (const auto& c : r.cells) {
            std::snprintf(line, sizeof line, "%6.2f %6.1f  %-7s %10.3f ", c.rho, c.snr, c.method.c_str(),
                          c.extreme_fraction);
            os << line;
            for (const auto& b : r.box) {
                if (b.rho == c.rho && b.snr == c.snr && b.method == c.method) {
                    std::snprintf(line, sizeof line, " %5.3f", b.stats.median);
                    os << line;
                }
            }
            os << '\n';
        }
    }
    return os.str();
}

} // namespace rotmarg::sim
