#pragma once
#include <ostream>
#include <string>
#include <json.hpp>

namespace rotmarg::cli {

enum ExitCode : int
{
    exit_ok = 0,
    exit_usage = 1,
    exit_data = 2,
    exit_numerical = 3,
};

/// Digest of a manifest's "resolved" block: SHA-256 of its compact dump.
/// Output files carry this value; recomputing it from manifest.json is the
/// integrity check.
std::string manifest_digest(const nlohmann::json& resolved);

/// Entry point shared by the binary and the tests. Subcommands: fit,
/// oracle, simulate.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace rotmarg::cli
