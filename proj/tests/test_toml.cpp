#include "expertforge/toml.hpp"

#include <gtest/gtest.h>

using namespace expertforge;

TEST(Toml, ScalarsAndTables) {
  auto j = toml::parse(R"(
# comment
name = "two-regime"
nodes = 2000
snr = 0.4
directed = false

[expert]
depth = 2
filter = "sym"
)");
  EXPECT_EQ(j["name"], "two-regime");
  EXPECT_EQ(j["nodes"], 2000);
  EXPECT_DOUBLE_EQ(j["snr"].get<double>(), 0.4);
  EXPECT_EQ(j["directed"], false);
  EXPECT_EQ(j["expert"]["depth"], 2);
  EXPECT_EQ(j["expert"]["filter"], "sym");
}

TEST(Toml, ArraysIncludingMultiline) {
  auto j = toml::parse(R"(
seeds = [0, 1, 2, 3, 4]
dropouts = [
  0.1,
  0.9,  # tail values
]
)");
  ASSERT_EQ(j["seeds"].size(), 5u);
  EXPECT_EQ(j["seeds"][3], 3);
  ASSERT_EQ(j["dropouts"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["dropouts"][1].get<double>(), 0.9);
}

TEST(Toml, ArrayOfTables) {
  auto j = toml::parse(R"(
[[blocks]]
fraction = 0.5
p_in = 0.9

[[blocks]]
fraction = 0.5
p_in = 0.1
)");
  ASSERT_TRUE(j["blocks"].is_array());
  ASSERT_EQ(j["blocks"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["blocks"][0]["p_in"].get<double>(), 0.9);
  EXPECT_DOUBLE_EQ(j["blocks"][1]["p_in"].get<double>(), 0.1);
}

TEST(Toml, DottedKeysAndNestedTables) {
  auto j = toml::parse(R"(
expert.depth = 3
[suite.output]
dir = "results"
)");
  EXPECT_EQ(j["expert"]["depth"], 3);
  EXPECT_EQ(j["suite"]["output"]["dir"], "results");
}

TEST(Toml, NegativeAndExponentNumbers) {
  auto j = toml::parse("a = -3\nb = 1e-4\nc = -2.5E2\nbig = 1_000\n");
  EXPECT_EQ(j["a"], -3);
  EXPECT_DOUBLE_EQ(j["b"].get<double>(), 1e-4);
  EXPECT_DOUBLE_EQ(j["c"].get<double>(), -250.0);
  EXPECT_EQ(j["big"], 1000);
}

TEST(Toml, StringEscapes) {
  auto j = toml::parse(R"(path = "a\tb\nc"
lit = 'no \escapes'
)");
  EXPECT_EQ(j["path"], "a\tb\nc");
  EXPECT_EQ(j["lit"], "no \\escapes");
}

TEST(Toml, ErrorsCarryLineNumbers) {
  try {
    toml::parse("ok = 1\nbroken = \n", "suite.toml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("suite.toml:2"), std::string::npos);
  }
}

TEST(Toml, DuplicateKeyRejected) {
  EXPECT_THROW(toml::parse("a = 1\na = 2\n"), ConfigError);
}

TEST(Toml, UnterminatedConstructsRejected) {
  EXPECT_THROW(toml::parse("a = \"oops\n"), ConfigError);
  EXPECT_THROW(toml::parse("a = [1, 2\n"), ConfigError);
  EXPECT_THROW(toml::parse("[table\n"), ConfigError);
}

TEST(Toml, MissingFileRejected) {
  EXPECT_THROW(toml::parse_file("/nonexistent/suite.toml"), ConfigError);
}
