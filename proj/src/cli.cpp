#include <rotmarg/cli.hpp>

#include <rotmarg/csv.hpp>
#include <rotmarg/digest.hpp>
#include <rotmarg/exact.hpp>
#include <rotmarg/marginals.hpp>
#include <rotmarg/model.hpp>
#include <rotmarg/sim.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace rotmarg::cli {

namespace fs = std::filesystem;

std::string manifest_digest(const nlohmann::json& resolved)
{
    return sha256_hex(resolved.dump());
}

namespace {

struct DataArgs
{
    std::string input;
    std::string response;
    std::string out_dir = ".";
    double lambda = 0.1;
    double psi = 1.0;
    double sigma2 = 0.5;
    bool no_standardize = false;
    int threads = 1;
};

struct FitArgs
{
    std::string backend = "bcr";
    bool tune = false;
    int m = 0;
    int K = 10;
    double kappa = 0;
    std::uint64_t seed = 1;
    int max_iter = 200;
    double damping = 0.5;
};

struct SimArgs
{
    std::string config;
    std::string out_dir = ".";
    int threads = 1;
    std::int64_t seed = -1;
    int replicates = -1;
};

void add_data_options(CLI::App* cmd, DataArgs& a)
{
    cmd->add_option("input", a.input, "CSV file with a header row")->required();
    cmd->add_option("--response", a.response, "response column: header name or zero-based index (default: first)");
    cmd->add_option("--out-dir", a.out_dir, "directory for result files");
    cmd->add_option("--lambda", a.lambda, "prior inclusion probability");
    cmd->add_option("--psi", a.psi, "slab variance");
    cmd->add_option("--sigma2", a.sigma2, "noise variance");
    cmd->add_flag("--no-standardize", a.no_standardize, "use the columns as given");
    cmd->add_option("--threads", a.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
}

void write_file(const fs::path& path, const std::string& body)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << body;
    if (!out) throw DataError("failed writing " + path.string());
}

std::string digest_trailer(const std::string& digest) { return "# manifest_digest=" + digest + "\n"; }

void write_manifest(const fs::path& dir, const std::string& command, const nlohmann::json& resolved,
                    const std::string& digest, std::uint64_t seed, const std::vector<std::string>& outputs,
                    double seconds, const nlohmann::json& extra)
{
    nlohmann::json m;
    m["command"] = command;
    m["resolved"] = resolved;
    m["seed"] = seed;
    m["digest"] = digest;
    m["output_dir"] = dir.string();
    m["outputs"] = outputs;
    m["wall_clock_seconds"] = seconds;
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

double elapsed(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct LoadedData
{
    RegressionInput input;
    Dataset<double> data;
    std::string sha256;
};

LoadedData load(const DataArgs& a)
{
    LoadedData d;
    d.sha256 = file_sha256(a.input);
    d.input = to_regression_input(read_csv_file(a.input), a.response);
    d.data = a.no_standardize ? d.input.data : standardize(d.input.data);
    return d;
}

nlohmann::json data_block(const DataArgs& a, const LoadedData& d)
{
    return {{"input_sha256", d.sha256},
            {"response", d.input.response_name},
            {"n", d.data.n()},
            {"p", d.data.p()},
            {"standardize", !a.no_standardize},
            {"lambda", a.lambda},
            {"psi", a.psi},
            {"sigma2", a.sigma2}};
}

struct Row
{
    double incl, mean, var;
    bool converged;
};

std::string results_csv(const std::vector<std::string>& names, const std::vector<Row>& rows, const std::string& backend,
                        const std::string& digest)
{
    std::ostringstream os;
    os << "feature,lambda_j,m_j,psi_j,converged,backend\n";
    for (std::size_t j = 0; j < rows.size(); ++j) {
        std::string name = names[j];
        if (name.find_first_of(",\"\n") != std::string::npos) {
            std::string q = "\"";
            for (char c : name) q += c == '"' ? std::string("\"\"") : std::string(1, c);
            name = q + "\"";
        }
        os << name << ',' << format_double(rows[j].incl) << ',' << format_double(rows[j].mean) << ','
           << format_double(rows[j].var) << ',' << (rows[j].converged ? 1 : 0) << ',' << backend << '\n';
    }
    os << digest_trailer(digest);
    return os.str();
}

int cmd_fit(const DataArgs& a, const FitArgs& f, std::ostream& out, std::ostream& err)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto d = load(a);
    const SpikeSlabPrior<double> prior{a.lambda, a.psi, a.sigma2};
    prior.validate();

    MarginalOptions opts;
    opts.backend = f.backend == "amp" ? Backend::amp : Backend::bcr;
    opts.tune = f.tune;
    opts.allow_unstandardized = a.no_standardize;
    opts.threads = a.threads;
    opts.bcr.m = f.m;
    opts.bcr.K = f.K;
    opts.bcr.kappa = f.kappa;
    opts.bcr.seed = f.seed;
    opts.amp.max_iter = f.max_iter;
    opts.amp.damping = f.damping;
    opts.amp.seed = f.seed;
    if (opts.backend == Backend::bcr && f.K < 1) throw ConfigError("--K must be at least 1");

    nlohmann::json resolved = {{"command", "fit"}, {"data", data_block(a, d)}, {"backend", f.backend},
                               {"tune", f.tune}, {"seed", f.seed}};
    if (opts.backend == Backend::bcr) {
        resolved["bcr"] = {{"m", f.m}, {"K", f.K}, {"kappa", f.kappa}};
    } else {
        resolved["amp"] = {{"max_iter", f.max_iter}, {"damping", f.damping}, {"tol", opts.amp.tol}};
    }
    const std::string digest = manifest_digest(resolved);

    const auto report = approximate_all_marginals_report(d.data, prior, opts);
    std::vector<Row> rows;
    nlohmann::json diagnostics = nlohmann::json::array();
    bool failed = false;
    for (const auto& r : report.results) {
        rows.push_back({r.inclusion_prob, r.slab_mean, r.slab_var, r.converged});
        if (!std::isfinite(r.inclusion_prob)) failed = true;
        if (!r.diagnostic.empty()) {
            diagnostics.push_back({{"feature", d.input.feature_names[r.index_j]}, {"message", r.diagnostic}});
        }
    }

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    write_file(dir / "inclusion_probs.csv", results_csv(d.input.feature_names, rows, f.backend, digest));
    nlohmann::json extra = {{"diagnostics", diagnostics}};
    if (f.tune) {
        extra["tuned_lambda"] = report.prior.lambda;
        extra["tune_rounds"] = report.tune_rounds;
    }
    write_manifest(dir, "fit", resolved, digest, f.seed, {"inclusion_probs.csv"}, elapsed(t0), extra);

    for (const auto& dg : diagnostics) {
        err << "warning: " << dg["feature"].get<std::string>() << ": " << dg["message"].get<std::string>() << '\n';
    }
    out << "wrote " << (dir / "inclusion_probs.csv").string() << " (" << rows.size() << " features, backend "
        << f.backend << ")\n";
    if (failed) {
        err << "error: the backend failed for at least one feature; see manifest.json\n";
        return exit_numerical;
    }
    return exit_ok;
}

int cmd_oracle(const DataArgs& a, std::ostream& out, std::ostream&)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto d = load(a);
    if (d.data.p() > exact_max_features) {
        throw ConfigError("exact enumeration is limited to " + std::to_string(exact_max_features) + " features (got " +
                          std::to_string(d.data.p()) + "); use `fit` with --backend bcr or amp instead");
    }
    const SpikeSlabPrior<double> prior{a.lambda, a.psi, a.sigma2};
    prior.validate();
    const nlohmann::json resolved = {{"command", "oracle"}, {"data", data_block(a, d)}};
    const std::string digest = manifest_digest(resolved);

    const auto post = exact_posterior(d.data, prior);
    std::vector<Row> rows;
    for (Index j = 0; j < d.data.p(); ++j) rows.push_back({post.inclusion(j), post.slab_mean(j), post.slab_var(j), true});

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    write_file(dir / "inclusion_probs.csv", results_csv(d.input.feature_names, rows, "exact", digest));
    write_manifest(dir, "oracle", resolved, digest, 0, {"inclusion_probs.csv"}, elapsed(t0),
                   {{"log_normalizer", post.log_normalizer}});
    out << "wrote " << (dir / "inclusion_probs.csv").string() << " (" << rows.size() << " features, exact)\n";
    return exit_ok;
}

int cmd_simulate(const SimArgs& a, std::ostream& out, std::ostream&)
{
    const auto t0 = std::chrono::steady_clock::now();
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot open configuration " + a.config);
    nlohmann::json raw;
    try {
        raw = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("configuration " + a.config + " is not valid JSON: " + e.what());
    }
    if (raw.is_object()) {
        if (a.seed >= 0) raw["seed"] = static_cast<std::uint64_t>(a.seed);
        if (a.replicates >= 0) raw["replicates"] = a.replicates;
    }
    const auto config = sim::sim_config_from_json(raw);

    const nlohmann::json resolved = {{"command", "simulate"}, {"config", sim::to_json(config)}};
    const std::string digest = manifest_digest(resolved);

    const auto result = config.study == "mse" ? sim::run_mse_study(config, a.threads)
                                              : sim::run_boxplot_study(config, a.threads);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    auto json = sim::to_json(result);
    json["manifest_digest"] = digest;
    const std::string csv_name = config.study == "mse" ? "mse_summary.csv" : "box_summary.csv";
    const std::string csv = config.study == "mse" ? sim::mse_summary_csv(result) : sim::box_summary_csv(result);
    const std::string table = sim::summary_table(result);
    write_file(dir / "sim_result.json", json.dump(1) + "\n");
    write_file(dir / csv_name, csv + digest_trailer(digest));
    write_file(dir / "summary.txt", table + digest_trailer(digest));
    write_manifest(dir, "simulate", resolved, digest, config.seed, {"sim_result.json", csv_name, "summary.txt"},
                   elapsed(t0), nlohmann::json::object());
    out << table;
    return exit_ok;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Approximate marginal inclusion probabilities for spike-and-slab regression"};
    app.require_subcommand(1);

    DataArgs fit_data, oracle_data;
    FitArgs fit;
    SimArgs sim_args;

    auto* fit_cmd = app.add_subcommand("fit", "approximate inclusion probabilities with BCR or AMP");
    add_data_options(fit_cmd, fit_data);
    fit_cmd->add_option("--backend", fit.backend, "bcr or amp")->check(CLI::IsMember({"bcr", "amp"}));
    fit_cmd->add_flag("--tune", fit.tune, "estimate sigma2 and lambda from the data");
    fit_cmd->add_option("--m", fit.m, "BCR projection dimension (0: ceil(lambda p') + 2)");
    fit_cmd->add_option("--K", fit.K, "BCR number of projections");
    fit_cmd->add_option("--kappa", fit.kappa, "BCR compressed prior variance (0: psi)");
    fit_cmd->add_option("--seed", fit.seed, "random seed");
    fit_cmd->add_option("--max-iter", fit.max_iter, "AMP iteration cap");
    fit_cmd->add_option("--damping", fit.damping, "AMP damping weight in (0, 1]");

    auto* oracle_cmd = app.add_subcommand("oracle", "exact inclusion probabilities by enumeration (p <= 20)");
    add_data_options(oracle_cmd, oracle_data);

    auto* sim_cmd = app.add_subcommand("simulate", "run a simulation study from a JSON configuration");
    sim_cmd->add_option("--config", sim_args.config, "JSON configuration")->required();
    sim_cmd->add_option("--out-dir", sim_args.out_dir, "directory for result files");
    sim_cmd->add_option("--threads", sim_args.threads, "worker threads")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim_args.seed, "override the configured seed");
    sim_cmd->add_option("--replicates", sim_args.replicates, "override the configured replicate count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*fit_cmd) return cmd_fit(fit_data, fit, out, err);
        if (*oracle_cmd) return cmd_oracle(oracle_data, out, err);
        return cmd_simulate(sim_args, out, err);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return exit_data;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << '\n';
        return exit_numerical;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return exit_data;
    }
}

} // namespace rotmarg::cli
