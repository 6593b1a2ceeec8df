#include <gtest/gtest.h>

#include "itac/config.hpp"

using namespace itac;

TEST(Toml, ScalarsArraysAndSections) {
  const auto doc = parse_toml(R"(
# comment
version = 1
name = "a \"quoted\" value"   # trailing comment
[s]
i = -42
f = 1.5e-3
big = 1_000
flag = true
list = ["x", 2, 3.5]
)");
  EXPECT_EQ(std::get<std::int64_t>(doc.at("version").v), 1);
  EXPECT_EQ(std::get<std::string>(doc.at("name").v), "a \"quoted\" value");
  EXPECT_EQ(std::get<std::int64_t>(doc.at("s.i").v), -42);
  EXPECT_DOUBLE_EQ(std::get<double>(doc.at("s.f").v), 1.5e-3);
  EXPECT_EQ(std::get<std::int64_t>(doc.at("s.big").v), 1000);
  EXPECT_TRUE(std::get<bool>(doc.at("s.flag").v));
  EXPECT_EQ(std::get<std::vector<TomlValue>>(doc.at("s.list").v).size(), 3u);
  EXPECT_EQ(doc.at("s.list").line, 10);
}

TEST(Toml, MalformedInput) {
  EXPECT_THROW(parse_toml("a = \"open\n"), ConfigError);
  EXPECT_THROW(parse_toml("[sec\n"), ConfigError);
  EXPECT_THROW(parse_toml("a 1\n"), ConfigError);
  EXPECT_THROW(parse_toml("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(parse_toml("a = [1, 2\n"), ConfigError);
  EXPECT_THROW(parse_toml("a = 1 2\n"), ConfigError);
  EXPECT_THROW(parse_toml("a = nope\n"), ConfigError);
}

TEST(Config, BundledFileLoads) {
  const auto c = load_config_file(std::string(ITAC_FIXTURE_DIR) + "/pipeline.toml");
  EXPECT_EQ(c.pca_components, 6);
  EXPECT_EQ(c.dfm_factors, 4);
  EXPECT_DOUBLE_EQ(c.dfm.series_length, 1.2);
  EXPECT_EQ(c.ann.hidden_layers, 32);
  EXPECT_EQ(c.ann.neurons, 64);
  EXPECT_EQ(c.rnn.hidden_layers, 24);
  EXPECT_EQ(c.rnn.neurons, 32);
  EXPECT_EQ(c.rnn.batch_size, 4);
  EXPECT_EQ(c.plan.train_end, (YearMonth{2014, 8}));
  EXPECT_EQ(c.plan.validation_end, (YearMonth{2022, 5}));
  EXPECT_EQ(c.data.stage_one_candidates.size(), 4u);
  EXPECT_EQ(c.resolve(c.data.panel), std::filesystem::path(ITAC_FIXTURE_DIR) / "panel.csv");
  EXPECT_EQ(c.grids.at("rnn").dimensions.size(), 3u);
  EXPECT_EQ(c.evaluate.alternative, Alternative::greater);
}

TEST(Config, DefaultGridRanges) {
  const auto g = PipelineConfig::default_grids();
  const auto pca = expand(g.at("pca"));
  EXPECT_EQ(pca.size(), 11u);
  EXPECT_EQ(pca.front().get("components"), 2);
  EXPECT_EQ(pca.back().get("components"), 12);
  const auto batch = g.at("rnn").dimensions[2].values();
  EXPECT_EQ(batch, (std::vector<double>{6, 23, 91}));
  for (const auto& [m, spec] : g) EXPECT_NO_THROW(expand(spec)) << m;
}

TEST(Config, RejectsUnknownKeysWithLine) {
  try {
    load_config(parse_toml("version = 1\n[pca]\ncomponent = 3\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("pca.component"), std::string::npos);
  }
  EXPECT_THROW(load_config(parse_toml("version = 1\n[nosuch]\nx = 1\n")), ConfigError);
}

TEST(Config, VersionIsRequired) {
  EXPECT_THROW(load_config(parse_toml("seed = 3\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 2\n")), ConfigError);
  EXPECT_NO_THROW(load_config(parse_toml("version = 1\n")));
}

TEST(Config, TypeAndRangeErrors) {
  EXPECT_THROW(load_config(parse_toml("version = 1\n[pca]\ncomponents = \"six\"\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 1\n[ann]\nhidden_layers = 65\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 1\n[rnn]\nhidden_layers = 49\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 1\n[ann]\nactivation = \"gelu\"\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 1\n[plan]\ntrain_end = \"2014-8\"\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 1\n[grid.pca]\ncomponents = [\"cubic\", 2, 12]\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 1\n[grid.svm]\nc = [\"linear\", 1, 2]\n")), ConfigError);
  EXPECT_THROW(load_config(parse_toml("version = 1\n[evaluate]\nmethod = \"svm\"\n")), ConfigError);
}

TEST(Config, GridOverrideReplacesDefault) {
  const auto c = load_config(parse_toml("version = 1\n[grid.pca]\ncomponents = [\"integer\", 3, 5]\n"));
  EXPECT_EQ(expand(c.grids.at("pca")).size(), 3u);
  EXPECT_EQ(c.grids.at("dfm").dimensions.size(), 2u);
}

TEST(Config, LayerReadingSelectable) {
  const auto c = load_config(parse_toml("version = 1\n[ann]\nlayer_reading = \"width\"\nhidden_layers = 64\n"));
  EXPECT_EQ(c.ann.layer_reading, LayerReading::width);
  EXPECT_EQ(hidden_sizes(c.ann.hidden_layers, c.ann.neurons, c.ann.layer_reading), (std::vector<int>{64, 64}));
}
