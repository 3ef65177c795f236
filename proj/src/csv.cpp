#include "spuriouslab/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "spuriouslab/error.hpp"

namespace splab {

std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

int CsvTable::col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int CsvTable::require_col(const std::string& name) const {
    int i = col(name);
    if (i < 0) throw ConfigError(path + ": missing column '" + name + "'");
    return i;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    CsvTable table;
    table.path = path;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    table.header = split_fields(line);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields = split_fields(line);
        if (fields.size() != table.header.size())
            throw ConfigError(path + ": row with " + std::to_string(fields.size()) +
                              " fields, expected " + std::to_string(table.header.size()));
        table.rows.push_back(std::move(fields));
    }
    return table;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    std::ostringstream buf;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) buf << ',';
        buf << header[i];
    }
    buf << '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw IoError(path + ": row width mismatch while writing");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) buf << ',';
            buf << row[i];
        }
        buf << '\n';
    }
    out << buf.str();
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace splab
