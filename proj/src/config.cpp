#include "spuriouslab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spuriouslab/error.hpp"

namespace splab {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
}

bool valid_ident(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    }
    return true;
}

// Strips a trailing comment that is not inside a double-quoted string.
std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (c == '"') in_str = !in_str;
        if (c == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

ConfigFile::Value parse_scalar(const std::string& origin, int line, const std::string& text) {
    ConfigFile::Value v;
    v.line = line;
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
        v.kind = ConfigFile::Value::Kind::String;
        v.str = text.substr(1, text.size() - 2);
        if (v.str.find('"') != std::string::npos)
            fail(origin, line, "string values may not contain embedded quotes");
        return v;
    }
    if (text == "true" || text == "false") {
        v.kind = ConfigFile::Value::Kind::Bool;
        v.flag = (text == "true");
        return v;
    }
    double num = 0.0;
    if (parse_number(text, num)) {
        v.kind = ConfigFile::Value::Kind::Number;
        v.num = num;
        return v;
    }
    fail(origin, line, "unrecognized value '" + text + "'");
}

ConfigFile::Value parse_value(const std::string& origin, int line, const std::string& text) {
    if (text.empty()) fail(origin, line, "missing value");
    if (text.front() != '[') return parse_scalar(origin, line, text);
    if (text.back() != ']') fail(origin, line, "unterminated array");
    std::string body = text.substr(1, text.size() - 2);
    ConfigFile::Value v;
    v.line = line;
    v.kind = ConfigFile::Value::Kind::NumberList;
    std::vector<std::string> parts;
    std::string cur;
    bool in_str = false;
    for (char c : body) {
        if (c == '"') in_str = !in_str;
        if (c == ',' && !in_str) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (in_str) fail(origin, line, "unterminated string in array");
    if (!trim(cur).empty() || !parts.empty()) parts.push_back(cur);
    bool first = true;
    bool strings = false;
    for (const std::string& raw : parts) {
        std::string item = trim(raw);
        if (item.empty()) fail(origin, line, "empty array element");
        ConfigFile::Value elem = parse_scalar(origin, line, item);
        if (elem.kind == ConfigFile::Value::Kind::Bool)
            fail(origin, line, "boolean array elements are not supported");
        bool is_str = elem.kind == ConfigFile::Value::Kind::String;
        if (first) {
            strings = is_str;
            first = false;
        } else if (is_str != strings) {
            fail(origin, line, "arrays must be all numbers or all strings");
        }
        if (is_str)
            v.strs.push_back(elem.str);
        else
            v.nums.push_back(elem.num);
    }
    v.kind = strings ? ConfigFile::Value::Kind::StringList : ConfigFile::Value::Kind::NumberList;
    return v;
}

const char* kind_name(ConfigFile::Value::Kind k) {
    switch (k) {
        case ConfigFile::Value::Kind::String: return "string";
        case ConfigFile::Value::Kind::Number: return "number";
        case ConfigFile::Value::Kind::Bool: return "boolean";
        case ConfigFile::Value::Kind::NumberList: return "number array";
        case ConfigFile::Value::Kind::StringList: return "string array";
    }
    return "?";
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(origin, lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_ident(section)) fail(origin, lineno, "invalid section name");
            cfg.sections_[section];
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(origin, lineno, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!valid_ident(key)) fail(origin, lineno, "invalid key '" + key + "'");
        if (section.empty()) fail(origin, lineno, "key outside any [section]");
        auto& table = cfg.sections_[section];
        if (table.count(key))
            fail(origin, lineno, "duplicate key '" + section + "." + key + "'");
        table[key] = parse_value(origin, lineno, value);
    }
    return cfg;
}

bool ConfigFile::has_section(const std::string& section) const {
    return sections_.count(section) > 0;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
}

const ConfigFile::Value& ConfigFile::lookup(const std::string& section,
                                            const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end() || !it->second.count(key))
        throw ConfigError(origin_ + ": missing required key '" + section + "." + key + "'");
    return it->second.at(key);
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key) const {
    const Value& v = lookup(section, key);
    if (v.kind != Value::Kind::String)
        throw ConfigError(origin_ + ": '" + section + "." + key + "' must be a string, got " +
                          kind_name(v.kind));
    return v.str;
}

std::string ConfigFile::get_string_or(const std::string& section, const std::string& key,
                                      const std::string& fallback) const {
    return has(section, key) ? get_string(section, key) : fallback;
}

double ConfigFile::get_number(const std::string& section, const std::string& key) const {
    const Value& v = lookup(section, key);
    if (v.kind != Value::Kind::Number)
        throw ConfigError(origin_ + ": '" + section + "." + key + "' must be a number, got " +
                          kind_name(v.kind));
    return v.num;
}

double ConfigFile::get_number_or(const std::string& section, const std::string& key,
                                 double fallback) const {
    return has(section, key) ? get_number(section, key) : fallback;
}

std::int64_t ConfigFile::get_int(const std::string& section, const std::string& key) const {
    double v = get_number(section, key);
    double r = std::nearbyint(v);
    if (v != r || std::abs(v) > 9.0e18)
        throw ConfigError(origin_ + ": '" + section + "." + key + "' must be an integer");
    return static_cast<std::int64_t>(r);
}

std::int64_t ConfigFile::get_int_or(const std::string& section, const std::string& key,
                                    std::int64_t fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key) const {
    const Value& v = lookup(section, key);
    if (v.kind != Value::Kind::Bool)
        throw ConfigError(origin_ + ": '" + section + "." + key + "' must be true or false");
    return v.flag;
}

bool ConfigFile::get_bool_or(const std::string& section, const std::string& key,
                             bool fallback) const {
    return has(section, key) ? get_bool(section, key) : fallback;
}

std::vector<double> ConfigFile::get_number_list(const std::string& section,
                                                const std::string& key) const {
    const Value& v = lookup(section, key);
    if (v.kind == Value::Kind::Number) return {v.num};
    if (v.kind != Value::Kind::NumberList)
        throw ConfigError(origin_ + ": '" + section + "." + key + "' must be a number array");
    return v.nums;
}

std::vector<std::int64_t> ConfigFile::get_int_list(const std::string& section,
                                                   const std::string& key) const {
    std::vector<double> nums = get_number_list(section, key);
    std::vector<std::int64_t> out;
    out.reserve(nums.size());
    for (double v : nums) {
        double r = std::nearbyint(v);
        if (v != r || std::abs(v) > 9.0e18)
            throw ConfigError(origin_ + ": '" + section + "." + key +
                              "' must contain only integers");
        out.push_back(static_cast<std::int64_t>(r));
    }
    return out;
}

std::vector<std::string> ConfigFile::sections() const {
    std::vector<std::string> out;
    out.reserve(sections_.size());
    for (const auto& [name, table] : sections_) out.push_back(name);
    return out;
}

std::vector<std::string> ConfigFile::keys(const std::string& section) const {
    std::vector<std::string> out;
    auto it = sections_.find(section);
    if (it == sections_.end()) return out;
    for (const auto& [key, value] : it->second) out.push_back(key);
    return out;
}

void ConfigFile::require_known_keys(const std::string& section,
                                    const std::vector<std::string>& allowed) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) return;
    for (const auto& [key, value] : it->second) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(origin_ + ":" + std::to_string(value.line) + ": unknown key '" +
                              section + "." + key + "'");
    }
}

}  // namespace splab
