#include <fdnet/config.hpp>

#include <catch2/catch_amalgamated.hpp>

using namespace fdn;

TEST_CASE("config parses sections, scalars, and lists") {
  const std::string text = R"(# run configuration
[run]
seed = 42
out_dir = "runs/exp1"   # trailing comment

[model]
widths = [16, 32, 64]
lr_drops = [0.3, 0.6]
denoise = nonlocal-gaussian
subsample = true
names = ["a", "b"]
)";
  Config cfg = Config::parse(text);
  CHECK(cfg.get_int("run", "seed", 0) == 42);
  CHECK(cfg.get_string("run", "out_dir", "") == "runs/exp1");
  CHECK(cfg.get_int_list("model", "widths", {}) ==
        std::vector<std::int64_t>{16, 32, 64});
  CHECK(cfg.get_double_list("model", "lr_drops", {}) ==
        std::vector<double>{0.3, 0.6});
  CHECK(cfg.get_string("model", "denoise", "") == "nonlocal-gaussian");
  CHECK(cfg.get_bool("model", "subsample", false));
  CHECK(cfg.get_string_list("model", "names", {}) ==
        std::vector<std::string>{"a", "b"});
  CHECK(cfg.get_int("model", "missing", 7) == 7);
}

TEST_CASE("config errors carry line numbers") {
  auto expect_line = [](const std::string& text, const std::string& needle) {
    try {
      Config::parse(text);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_line("[run]\nkey_without_value\n", "line 2");
  expect_line("key = 1\n", "line 1");          // outside any section
  expect_line("[run]\na = 1\na = 2\n", "line 3");
  expect_line("[run]\nx = [1, \"a\"]\n", "line 2");
  expect_line("[run\nseed = 1\n", "line 1");
}

TEST_CASE("schema validation rejects unknown keys with their line") {
  Config cfg = Config::parse("[run]\nseed = 1\ntypo_key = 2\n");
  try {
    cfg.check_schema({{"run", {"seed"}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("run.typo_key") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
  }
  Config bad_section = Config::parse("[whatever]\nx = 1\n");
  CHECK_THROWS_AS(bad_section.check_schema({{"run", {"seed"}}}), ConfigError);
}

TEST_CASE("typed getters enforce value types") {
  Config cfg = Config::parse("[a]\nx = \"str\"\ny = 1.5\n");
  CHECK_THROWS_AS(cfg.get_int("a", "x", 0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("a", "y", false), ConfigError);
  CHECK(cfg.get_double("a", "y", 0) == 1.5);
  CHECK_THROWS_AS(cfg.require_string("a", "zzz"), ConfigError);
}
