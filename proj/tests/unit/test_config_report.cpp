#include <doctest.h>

#include "dftuq/config.hpp"
#include "dftuq/errors.hpp"
#include "dftuq/report.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dftuq;
using nlohmann::json;

TEST_CASE("config parsing") {
  SUBCASE("defaults") {
    const auto cfg = RunConfig::from_json(json::object());
    CHECK(cfg.protocol.outer_iterations == 3);
    CHECK(cfg.protocol.inner_iterations == 50);
    CHECK(cfg.uq.draws == 200);
    CHECK(cfg.families.empty());
  }
  SUBCASE("families start from tuned values") {
    const auto cfg = RunConfig::from_json({{"families", {"knn", {{"name", "svr_wide"}, {"family", "svr"}, {"grid", {{"C", {0.5, 1, 2}}}}}}}});
    REQUIRE(cfg.families.size() == 2);
    CHECK(cfg.families[0].grid.size() == 1);
    CHECK(cfg.families[1].name == "svr_wide");
    CHECK(cfg.families[1].grid.size() == 3);
  }
  SUBCASE("invalid documents") {
    CHECK_THROWS_AS(RunConfig::from_json({{"protocol", {{"fractions", {{"train", 1.5}, {"test", 0.2}}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"uq", {{"draws", 1}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"uq", {{"models", {"knn"}}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"families", {"nope"}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"families", {"knn", "knn"}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"sweep", {{"fractions", {0.5, 0.3}}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"data", "a.csv"}, {"synthetic", {{"rows", 10}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"families", {{{"family", "knn"}, {"grid", {{"leaf_size", {3}}}}}}}}),
                    ConfigError);
  }
  SUBCASE("presets and overrides") {
    auto cfg = RunConfig::from_json(json::object());
    cfg.apply_preset("ci");
    CHECK(cfg.protocol.outer_iterations == 1);
    CHECK(cfg.protocol.inner_iterations == 5);
    cfg.apply_preset("full");
    CHECK(cfg.protocol.outer_iterations * cfg.protocol.inner_iterations == 150);
    CHECK_THROWS_AS(cfg.apply_preset("huge"), ConfigError);
    cfg.set_seed(11);
    CHECK(cfg.protocol.seed == 11);
    CHECK_THROWS_AS(cfg.set_workers(0), ConfigError);
  }
  SUBCASE("relative paths resolve against the config file") {
    const auto dir = std::filesystem::temp_directory_path() / "dftuq_cfg_test";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "run.json") << R"({"data": "m.csv", "synthetic": null})";
    CHECK_THROWS_AS(RunConfig::load(dir / "run.json"), ConfigError);
    std::ofstream(dir / "run.json") << R"({"data": "m.csv"})";
    CHECK(RunConfig::load(dir / "run.json").data.value() == dir / "m.csv");
    std::ofstream(dir / "broken.json") << "{";
    CHECK_THROWS_AS(RunConfig::load(dir / "broken.json"), ConfigError);
    CHECK_THROWS_AS(RunConfig::load(dir / "missing.json"), ConfigError);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("synthetic table") {
    const auto cfg = RunConfig::from_json({{"synthetic", {{"rows", 40}, {"seed", 3}}}});
    CHECK(cfg.load_table().rows() == 40);
    CHECK_THROWS_AS(RunConfig::from_json(json::object()).load_table(), ConfigError);
  }
}

namespace {

EvalReport fake_report(std::string label, std::vector<double> rmses) {
  EvalReport r;
  r.label = std::move(label);
  for (std::size_t i = 0; i < rmses.size(); ++i) {
    IterationResult it;
    it.id = i;
    it.test_rmse = rmses[i];
    it.train_rmse = rmses[i] / 2;
    it.chosen = {{"n_neighbors", 3}};
    r.iterations.push_back(it);
  }
  r.test = RmseSummary::of(rmses);
  return r;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST_CASE("report writers") {
  const std::vector<EvalReport> reports = {fake_report("knn", {0.25, 0.75}), fake_report("svr", {0.0625})};

  std::ostringstream cmp;
  write_comparison_csv(cmp, reports);
  CHECK(first_line(cmp.str()) ==
        "model,average_rmse_mm,maximum_rmse_mm,minimum_rmse_mm,standard_deviation_mm,prediction_range_mm,iterations,"
        "failed");
  CHECK(cmp.str().find("\nknn,0.5,0.75,0.25,") != std::string::npos);

  std::ostringstream its;
  write_iterations_csv(its, reports[0]);
  CHECK(first_line(its.str()) == "id,outer,inner,train_rmse_mm,test_rmse_mm,failed,params");

  const auto text = summary_text(reports);
  CHECK(text.find("500.000 um") != std::string::npos);
  CHECK(text.find("0.5 mm") != std::string::npos);

  const auto doc = to_json(reports[0]);
  CHECK(doc.at("test_rmse").at("average_mm") == 0.5);
  CHECK(doc.at("iterations").size() == 2);

  SweepReport sweep;
  sweep.rows.push_back({0.5, RmseSummary::of(std::vector<double>{0.1}), RmseSummary::of(std::vector<double>{0.2}), 0});
  std::ostringstream sw;
  write_sweep_csv(sw, sweep);
  CHECK(first_line(sw.str()) ==
        "fraction,train_rmse_mean_mm,train_rmse_std_mm,test_rmse_mean_mm,test_rmse_std_mm,iterations,failed");

  UqTrendReport trend;
  trend.rows.push_back({0.5, {{0, 0.05, 0.01, 0.051, 0.06}}, 0.05, 0.01, 0.06, 0.0, 0.0});
  std::ostringstream tr;
  write_uq_trend_csv(tr, trend);
  CHECK(first_line(tr.str()) == "fraction,seed,aleatoric_mm,epistemic_mm,total_mm,test_rmse_mm");
  CHECK(tr.str().find("\n0.5,0,0.05,0.01,0.051,0.06") != std::string::npos);
}

TEST_CASE("summary statistics") {
  const std::vector<double> one = {0.04};
  const auto s = RmseSummary::of(one);
  CHECK(s.stddev == 0.0);
  CHECK(s.prediction_range == 0.0);
  const std::vector<double> three = {1.0, 2.0, 4.0};
  const auto t = RmseSummary::of(three);
  CHECK(t.stddev == doctest::Approx(std::sqrt(7.0 / 3.0)));
  CHECK(t.prediction_range == 3.0);
  CHECK(RmseSummary::of(std::vector<double>{}).count == 0);
}

TEST_CASE("hashing and manifests") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");

  RunManifest m;
  m.command = "evaluate";
  m.seed = 3;
  m.outputs = {"a.json"};
  const auto doc = m.to_json();
  CHECK(doc.at("command") == "evaluate");
  CHECK(doc.at("outputs").size() == 1);
  CHECK(utc_timestamp().back() == 'Z');
  CHECK(dump_json(json{{"a", 1}}).back() == '\n');
}
