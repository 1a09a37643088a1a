#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ntk::csv {

using Row = std::vector<std::string>;

struct Table {
    Row header;
    std::vector<Row> rows;

    // Index of a header column; throws DataError when absent.
    std::size_t column(std::string_view name) const;
};

// 17 significant digits, '.' decimal separator; "nan"/"inf"/"-inf" otherwise.
std::string real(double v);
std::string integer(std::int64_t v);

// RFC-4180: CRLF line endings, fields quoted when they contain a comma, quote,
// CR or LF; embedded quotes doubled.
void write(const std::filesystem::path& path, const Table& table);
Table read(const std::filesystem::path& path);

double parse_real(const std::string& field);

}  // namespace ntk::csv
