#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace splab {

// Declarative config files: [section] headers and key = value lines, where a
// value is a quoted string, number, true/false, or a flat [a, b, c] array of
// numbers or strings. '#' starts a comment. Grammar: docs/config_format.md.
class ConfigFile {
public:
    struct Value {
        enum class Kind { String, Number, Bool, NumberList, StringList };
        Kind kind = Kind::String;
        std::string str;
        double num = 0.0;
        bool flag = false;
        std::vector<double> nums;
        std::vector<std::string> strs;
        int line = 0;
    };

    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<config>");

    bool has_section(const std::string& section) const;
    bool has(const std::string& section, const std::string& key) const;

    // Required getters throw ConfigError naming section.key; the *_or forms
    // fall back to the given default when the key is absent.
    std::string get_string(const std::string& section, const std::string& key) const;
    std::string get_string_or(const std::string& section, const std::string& key,
                              const std::string& fallback) const;
    double get_number(const std::string& section, const std::string& key) const;
    double get_number_or(const std::string& section, const std::string& key,
                         double fallback) const;
    // Integer getters reject fractional values.
    std::int64_t get_int(const std::string& section, const std::string& key) const;
    std::int64_t get_int_or(const std::string& section, const std::string& key,
                            std::int64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key) const;
    bool get_bool_or(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_number_list(const std::string& section, const std::string& key) const;
    std::vector<std::int64_t> get_int_list(const std::string& section,
                                           const std::string& key) const;

    std::vector<std::string> sections() const;
    std::vector<std::string> keys(const std::string& section) const;

    // Rejects keys outside the allowed set for a section (catches typos).
    void require_known_keys(const std::string& section,
                            const std::vector<std::string>& allowed) const;

private:
    const Value& lookup(const std::string& section, const std::string& key) const;
    std::string origin_;
    std::map<std::string, std::map<std::string, Value>> sections_;
};

}  // namespace splab
