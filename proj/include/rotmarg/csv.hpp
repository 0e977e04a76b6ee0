#pragma once
#include <string>
#include <string_view>
#include <vector>
#include <rotmarg/types.hpp>

namespace rotmarg {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

/// Header plus rows of raw cells. Quoted fields ("a,b", doubled quotes)
/// are supported; every row must have as many cells as the header.
struct CsvTable
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv_file(const std::string& path);

/// Response column plus numeric features.
struct RegressionInput
{
    std::string response_name;
    std::vector<std::string> feature_names;
    Dataset<double> data;
};

/// Picks the response by header name, or by zero-based index when
/// `response` is an integer that names no column; empty selects column 0.
/// Every other column is a feature. Empty, NA and non-numeric cells are
/// rejected with their row and column.
RegressionInput to_regression_input(const CsvTable& table, const std::string& response);

} // namespace rotmarg
