#include <rotmarg/csv.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace rotmarg {

std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_record(std::string_view text, std::size_t& pos, std::size_t line)
{
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    bool was_quoted = false;
    while (pos < text.size()) {
        const char c = text[pos];
        if (quoted) {
            if (c == '"') {
                if (pos + 1 < text.size() && text[pos + 1] == '"') {
                    cell.push_back('"');
                    pos += 2;
                    continue;
                }
                quoted = false;
                ++pos;
                continue;
            }
            cell.push_back(c);
            ++pos;
            continue;
        }
        if (c == '"' && cell.empty() && !was_quoted) {
            quoted = was_quoted = true;
            ++pos;
            continue;
        }
        if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
            was_quoted = false;
            ++pos;
            continue;
        }
        if (c == '\r' || c == '\n') {
            if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
            ++pos;
            break;
        }
        cell.push_back(c);
        ++pos;
    }
    if (quoted) throw DataError("unterminated quoted field on line " + std::to_string(line));
    cells.push_back(std::move(cell));
    return cells;
}

bool blank(std::string_view s)
{
    return s.find_first_not_of(" \t") == std::string_view::npos;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

} // namespace

CsvTable parse_csv(std::string_view text)
{
    if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
    CsvTable t;
    std::size_t pos = 0;
    std::size_t line = 1;
    bool have_header = false;
    while (pos < text.size()) {
        const std::size_t start = pos;
        auto cells = split_record(text, pos, line);
        const auto raw = text.substr(start, pos - start);
        ++line;
        if (cells.size() == 1 && blank(cells[0]) && raw.find('"') == std::string_view::npos) continue;
        if (!have_header) {
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw DataError("row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                            " cells but the header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (!have_header) throw DataError("CSV input is empty");
    return t;
}

CsvTable read_csv_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open input file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

RegressionInput to_regression_input(const CsvTable& table, const std::string& response)
{
    const std::size_t cols = table.header.size();
    std::size_t resp = 0;
    bool found = response.empty();
    for (std::size_t c = 0; c < cols && !found; ++c) {
        if (trim(table.header[c]) == response) {
            resp = c;
            found = true;
        }
    }
    if (!found) {
        std::size_t idx = 0;
        const auto res = std::from_chars(response.data(), response.data() + response.size(), idx);
        if (res.ec == std::errc() && res.ptr == response.data() + response.size() && idx < cols) {
            resp = idx;
            found = true;
        }
    }
    if (!found) throw DataError("response column '" + response + "' not found in header");
    if (cols < 2) throw ConfigError("input has no feature columns");
    if (table.rows.size() < 2) throw DataError("input needs at least 2 data rows");

    const Index n = static_cast<Index>(table.rows.size());
    const Index p = static_cast<Index>(cols - 1);
    vec_type<double> y(n);
    mat_type<double> X(n, p);
    for (Index r = 0; r < n; ++r) {
        Index f = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const std::string cell = trim(table.rows[r][c]);
            double value = 0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(value)) {
                throw DataError("row " + std::to_string(r + 1) + ", column '" + trim(table.header[c]) +
                                "': " + (cell.empty() ? std::string("missing value") : "non-numeric value '" + cell + "'"));
            }
            if (c == resp) {
                y(r) = value;
            } else {
                X(r, f++) = value;
            }
        }
    }

    RegressionInput out;
    out.response_name = trim(table.header[resp]);
    for (std::size_t c = 0; c < cols; ++c) {
        if (c != resp) out.feature_names.push_back(trim(table.header[c]));
    }
    out.data = Dataset<double>::from_raw(std::move(y), std::move(X));
    return out;
}

} // namespace rotmarg
