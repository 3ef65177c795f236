#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "spuriouslab/config.hpp"
#include "spuriouslab/error.hpp"

using namespace splab;

namespace {

ConfigFile parse(const std::string& text) { return ConfigFile::parse_string(text, "test"); }

std::string temp_path(const std::string& name) {
    return std::string("/tmp/splab_config_test_") + name;
}

}  // namespace

TEST_CASE("config parses sections, scalars, and arrays") {
    ConfigFile cfg = parse(
        "# full-line comment\n"
        "[task]\n"
        "core = \"parity\"  # inline comment\n"
        "lambda = 0.9\r\n"
        "noise = 5\n"
        "enabled = true\n"
        "title = \"a # not a comment\"\n"
        "\n"
        "[sweep]\n"
        "lambdas = [0.6, 0.75, 0.9]\n"
        "seeds = [1, 2, 3]\n"
        "names = [\"a\", \"b\"]\n"
        "single = 7\n");

    CHECK(cfg.has_section("task"));
    CHECK(!cfg.has_section("train"));
    CHECK(cfg.has("task", "core"));
    CHECK(!cfg.has("task", "absent"));
    CHECK(cfg.get_string("task", "core") == "parity");
    CHECK(cfg.get_number("task", "lambda") == 0.9);
    CHECK(cfg.get_int("task", "noise") == 5);
    CHECK(cfg.get_bool("task", "enabled"));
    CHECK(cfg.get_string("task", "title") == "a # not a comment");
    CHECK(cfg.get_number_list("sweep", "lambdas") == std::vector<double>{0.6, 0.75, 0.9});
    CHECK(cfg.get_int_list("sweep", "seeds") == std::vector<std::int64_t>{1, 2, 3});
    // A bare number is accepted where a list is expected.
    CHECK(cfg.get_number_list("sweep", "single") == std::vector<double>{7.0});
    CHECK(cfg.sections() == std::vector<std::string>{"sweep", "task"});
    CHECK(cfg.keys("sweep") == std::vector<std::string>{"lambdas", "names", "seeds", "single"});
}

TEST_CASE("config syntax errors carry file and line") {
    auto check_message = [](const std::string& text, const std::string& needle) {
        try {
            parse(text);
            FAIL_CHECK("expected ConfigError for: " << text);
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("test") != std::string::npos);
            CHECK(msg.find(needle) != std::string::npos);
        }
    };
    check_message("[task\ncore = \"x\"\n", "unterminated section");
    check_message("core = \"x\"\n", "outside any [section]");
    check_message("[task]\ncore\n", "expected key = value");
    check_message("[task]\ncore = \n", "missing value");
    check_message("[task]\ncore = what\n", "unrecognized value");
    check_message("[task]\nx = 1\nx = 2\n", "duplicate key");
    check_message("[task]\nx = [1, 2\n", "unterminated array");
    check_message("[task]\nx = [1, \"a\"]\n", "all numbers or all strings");
    check_message("[task]\nx = [true]\n", "boolean array");
    check_message("[task]\nx = [1, , 2]\n", "empty array element");
    check_message("[ta sk]\nx = 1\n", "invalid section");
    check_message("[task]\nbad-key = 1\n", "invalid key");
    check_message("[task]\nx = \"a\"b\"\n", "embedded quotes");
}

TEST_CASE("typed getters reject mismatched kinds") {
    ConfigFile cfg = parse("[a]\nnum = 1.5\nstr = \"x\"\nflag = true\nlist = [1, 2]\n");
    CHECK_THROWS_AS(cfg.get_string("a", "num"), ConfigError);
    CHECK_THROWS_AS(cfg.get_number("a", "str"), ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("a", "num"), ConfigError);
    CHECK_THROWS_AS(cfg.get_int("a", "num"), ConfigError);  // fractional
    CHECK_THROWS_AS(cfg.get_number_list("a", "str"), ConfigError);
    ConfigFile frac = parse("[a]\nxs = [1, 2.5]\n");
    CHECK_THROWS_AS(frac.get_int_list("a", "xs"), ConfigError);

    // Missing required keys name section.key.
    try {
        cfg.get_number("a", "gone");
        FAIL_CHECK("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("a.gone") != std::string::npos);
    }
}

TEST_CASE("fallback getters use defaults only when absent") {
    ConfigFile cfg = parse("[a]\nnum = 2\nflag = false\n");
    CHECK(cfg.get_number_or("a", "num", 9.0) == 2.0);
    CHECK(cfg.get_number_or("a", "gone", 9.0) == 9.0);
    CHECK(cfg.get_int_or("a", "gone", 4) == 4);
    CHECK(cfg.get_bool_or("a", "flag", true) == false);
    CHECK(cfg.get_bool_or("a", "gone", true) == true);
    CHECK(cfg.get_string_or("a", "gone", "dflt") == "dflt");
    // Present but mistyped still throws rather than silently falling back.
    CHECK_THROWS_AS(cfg.get_string_or("a", "num", "dflt"), ConfigError);
}

TEST_CASE("unknown keys are rejected with their line number") {
    ConfigFile cfg = parse("[train]\nepochs = 3\nepoch = 4\n");
    try {
        cfg.require_known_keys("train", {"epochs", "seed"});
        FAIL_CHECK("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("train.epoch") != std::string::npos);
        CHECK(msg.find(":3") != std::string::npos);
    }
    // Absent sections are fine; the caller decides what is required.
    cfg.require_known_keys("absent", {"x"});
}

TEST_CASE("config files parse from disk") {
    const std::string path = temp_path("parse.toml");
    {
        std::ofstream out(path);
        out << "[a]\nx = 3\n";
    }
    ConfigFile cfg = ConfigFile::parse_file(path);
    CHECK(cfg.get_int("a", "x") == 3);
    std::remove(path.c_str());
    CHECK_THROWS_AS(ConfigFile::parse_file("/nonexistent/config.toml"), ConfigError);
}
