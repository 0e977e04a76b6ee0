#include <doctest.h>

#include "oracles.hpp"

#include <rotmarg/cli.hpp>
#include <rotmarg/exact.hpp>
#include <rotmarg/model.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace rotmarg;
namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("rotmarg_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct Run
{
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args)
{
    args.insert(args.begin(), "rotmarg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write_csv(const fs::path& p, const VectorXd& y, const MatrixXd& X)
{
    std::ofstream out(p);
    out << "y";
    for (Index c = 0; c < X.cols(); ++c) out << ",x" << c;
    out << '\n';
    out.precision(17);
    for (Index i = 0; i < y.size(); ++i) {
        out << y(i);
        for (Index c = 0; c < X.cols(); ++c) out << ',' << X(i, c);
        out << '\n';
    }
}

// lambda_j column of inclusion_probs.csv, skipping the header and the trailer
std::vector<double> inclusion_column(const fs::path& csv)
{
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    std::vector<double> v;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto a = line.find(',');
        v.push_back(std::stod(line.substr(a + 1, line.find(',', a + 1) - a - 1)));
    }
    return v;
}

std::string trailer_digest(const std::string& body)
{
    const std::string key = "# manifest_digest=";
    const auto pos = body.rfind(key);
    REQUIRE(pos != std::string::npos);
    return body.substr(pos + key.size(), 64);
}

} // namespace

TEST_CASE("toy fit is byte-identical across runs and thread counts")
{
    const auto dir = scratch("toy");
    {
        std::ofstream(dir / "toy.csv") << "y,a,b\n1.0,0.5,-1\n2.0,1.5,0.25\n-0.5,-1,2\n";
    }
    const std::string in = (dir / "toy.csv").string();
    const std::vector<std::string> common{"fit", in, "--m", "2", "--K", "1", "--seed", "7", "--out-dir"};
    auto args = common;
    args.push_back((dir / "r1").string());
    REQUIRE(run(args).code == 0);
    args.back() = (dir / "r2").string();
    REQUIRE(run(args).code == 0);
    args.back() = (dir / "r3").string();
    args.insert(args.end(), {"--threads", "4"});
    REQUIRE(run(args).code == 0);
    const auto a = slurp(dir / "r1" / "inclusion_probs.csv");
    CHECK(a == slurp(dir / "r2" / "inclusion_probs.csv"));
    CHECK(a == slurp(dir / "r3" / "inclusion_probs.csv"));
    CHECK(a.rfind("feature,lambda_j,m_j,psi_j,converged,backend\n", 0) == 0);
    CHECK(inclusion_column(dir / "r1" / "inclusion_probs.csv").size() == 2);
}

TEST_CASE("digest in outputs matches the manifest's resolved block")
{
    const auto dir = scratch("digest");
    auto pr = oracle::random_problem(30, 4, 2);
    write_csv(dir / "d.csv", pr.y, pr.X);
    for (const char* backend : {"bcr", "amp"}) {
        const auto out = dir / backend;
        REQUIRE(run({"fit", (dir / "d.csv").string(), "--backend", backend, "--out-dir", out.string()}).code == 0);
        const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
        const std::string digest = cli::manifest_digest(manifest["resolved"]);
        CHECK(manifest["digest"] == digest);
        CHECK(trailer_digest(slurp(out / "inclusion_probs.csv")) == digest);
    }
    REQUIRE(run({"oracle", (dir / "d.csv").string(), "--out-dir", (dir / "o").string()}).code == 0);
    const auto manifest = nlohmann::json::parse(slurp(dir / "o" / "manifest.json"));
    CHECK(trailer_digest(slurp(dir / "o" / "inclusion_probs.csv")) == cli::manifest_digest(manifest["resolved"]));
}

TEST_CASE("single-feature fit reproduces the two-model posterior")
{
    const auto dir = scratch("p1");
    auto pr = oracle::random_problem(25, 1, 4, 0.8, 1.0);
    write_csv(dir / "d.csv", pr.y, pr.X);
    const double lambda = 0.3, psi = 2.0, sigma2 = 0.7;
    for (const char* backend : {"bcr", "amp"}) {
        const auto out = dir / backend;
        REQUIRE(run({"fit", (dir / "d.csv").string(), "--no-standardize", "--backend", backend, "--lambda", "0.3",
                     "--psi", "2", "--sigma2", "0.7", "--out-dir", out.string()})
                    .code == 0);
        // log N(y|0, psi x x' + s2 I) - log N(y|0, s2 I) via the rank-one determinant and inverse
        const VectorXd x = pr.X.col(0);
        const double xx = x.squaredNorm(), xy = x.dot(pr.y);
        const double log_bf = -0.5 * std::log1p(psi * xx / sigma2) +
                              0.5 * psi * xy * xy / (sigma2 * (sigma2 + psi * xx));
        const double ref = 1 / (1 + (1 - lambda) / lambda * std::exp(-log_bf));
        const auto got = inclusion_column(out / "inclusion_probs.csv");
        REQUIRE(got.size() == 1);
        CHECK(std::abs(got[0] - ref) < 1e-6);
    }
}

TEST_CASE("fit with a full projection stays close to the oracle")
{
    const auto dir = scratch("close");
    auto pr = oracle::random_problem(60, 6, 9, 1.0, 0.4);
    write_csv(dir / "d.csv", pr.y, pr.X);
    REQUIRE(run({"oracle", (dir / "d.csv").string(), "--lambda", "0.3", "--out-dir", (dir / "o").string()}).code == 0);
    const auto ex = inclusion_column(dir / "o" / "inclusion_probs.csv");
    for (const char* backend : {"bcr", "amp"}) {
        const auto out = dir / backend;
        REQUIRE(run({"fit", (dir / "d.csv").string(), "--lambda", "0.3", "--backend", backend, "--m", "5", "--out-dir",
                     out.string()})
                    .code == 0);
        const auto got = inclusion_column(out / "inclusion_probs.csv");
        REQUIRE(got.size() == ex.size());
        double mse = 0;
        for (std::size_t j = 0; j < ex.size(); ++j) mse += (got[j] - ex[j]) * (got[j] - ex[j]);
        CHECK(mse / double(ex.size()) < 0.05);
    }
}

TEST_CASE("exit codes")
{
    const auto dir = scratch("codes");
    {
        std::ofstream(dir / "only_y.csv") << "y\n1\n2\n3\n";
        std::ofstream(dir / "ragged.csv") << "y,a\n1,2\n3\n";
        std::ofstream(dir / "text.csv") << "y,a\n1,2\n3,abc\n";
        std::ofstream(dir / "bad.json") << R"({"study": "mse", "replicatez": 3})";
        std::ofstream(dir / "zero.json") << R"({"study": "mse", "replicates": 0})";
    }
    CHECK(run({"fit", (dir / "only_y.csv").string(), "--out-dir", (dir / "o").string()}).code == cli::exit_usage);
    CHECK(run({"fit", (dir / "ragged.csv").string(), "--out-dir", (dir / "o").string()}).code == cli::exit_data);
    const auto text = run({"fit", (dir / "text.csv").string(), "--out-dir", (dir / "o").string()});
    CHECK(text.code == cli::exit_data);
    CHECK(text.err.find("abc") != std::string::npos);
    CHECK(run({"fit", (dir / "missing.csv").string()}).code == cli::exit_data);
    CHECK(run({"fit"}).code == cli::exit_usage);
    CHECK(run({"fit", (dir / "ragged.csv").string(), "--backend", "lasso"}).code == cli::exit_usage);
    CHECK(run({"frobnicate"}).code == cli::exit_usage);
    CHECK(run({"--help"}).code == cli::exit_ok);

    const auto unknown = run({"simulate", "--config", (dir / "bad.json").string(), "--out-dir", (dir / "s").string()});
    CHECK(unknown.code == cli::exit_usage);
    CHECK(unknown.err.find("replicatez") != std::string::npos);
    CHECK(run({"simulate", "--config", (dir / "zero.json").string()}).code == cli::exit_usage);

    auto pr = oracle::random_problem(30, 21, 3);
    write_csv(dir / "wide.csv", pr.y, pr.X);
    const auto wide = run({"oracle", (dir / "wide.csv").string(), "--out-dir", (dir / "o").string()});
    CHECK(wide.code == cli::exit_usage);
    CHECK(wide.err.find("fit") != std::string::npos);
}

TEST_CASE("simulate is deterministic across thread counts")
{
    const auto dir = scratch("sim");
    {
        std::ofstream(dir / "c.json") << R"({"study": "mse", "n": 40, "p": 6, "beta_true": [2, 0, 1, 0, 0, 0],
            "rho_grid": [0, 0.5], "replicates": 2, "seed": 5, "bcr": {"m": 3, "K": 4}})";
    }
    const std::string cfg = (dir / "c.json").string();
    REQUIRE(run({"simulate", "--config", cfg, "--out-dir", (dir / "a").string()}).code == 0);
    REQUIRE(run({"simulate", "--config", cfg, "--threads", "3", "--out-dir", (dir / "b").string()}).code == 0);
    for (const char* f : {"sim_result.json", "mse_summary.csv", "summary.txt"}) {
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    const auto manifest = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    CHECK(trailer_digest(slurp(dir / "a" / "mse_summary.csv")) == cli::manifest_digest(manifest["resolved"]));
    REQUIRE(run({"simulate", "--config", cfg, "--seed", "6", "--out-dir", (dir / "c").string()}).code == 0);
    CHECK(slurp(dir / "a" / "sim_result.json") != slurp(dir / "c" / "sim_result.json"));
}

TEST_CASE("the installed binary runs end to end")
{
    const auto dir = scratch("binary");
    auto pr = oracle::random_problem(20, 3, 5);
    write_csv(dir / "d.csv", pr.y, pr.X);
    const std::string cmd = std::string(ROTMARG_CLI_PATH) + " fit " + (dir / "d.csv").string() + " --out-dir " +
                            (dir / "o").string() + " > " + (dir / "log").string() + " 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(dir / "o" / "inclusion_probs.csv"));
    const std::string bad = std::string(ROTMARG_CLI_PATH) + " oracle " + (dir / "nope.csv").string() + " > /dev/null 2>&1";
    const int status = std::system(bad.c_str());
    CHECK(WEXITSTATUS(status) == 2);
}
