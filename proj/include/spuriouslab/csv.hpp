#pragma once

#include <string>
#include <vector>

namespace splab {

// 12-significant-digit rendering used by every CSV this tool writes.
std::string csv_num(double v);

// Parsed CSV with a header row. Fields in this tool never contain commas or
// quotes, so splitting on ',' is exact.
struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const;  // -1 when absent
    // Throws ConfigError naming the file when the column is missing.
    int require_col(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace splab
