// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "attrguard/errors.hpp"
#include "attrguard/experiment.hpp"

using namespace attrguard;
using namespace attrguard::harness;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("attrguard_harness_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// A configuration small enough to run the whole pipeline in a few seconds.
json small_config() {
  return json{{"seed", 5},
              {"data", {{"d", 16}, {"core_indices", {0, 1, 2, 3}}, {"spurious_indices", {9, 13}},
                        {"n_train", 400}, {"n_test", 120}, {"n_monitor", 80}}},
              {"model", {{"hidden", {8}}, {"pretrain_epochs", 3}}},
              {"refinement", {{"max_iters", 2}, {"epochs_per_iter", 2}, {"calibration_size", 20},
                              {"instability_repeats", 2}}},
              {"lime", {{"n_samples", 60}}},
              {"corruption", {{"severities", {1, 3}}}},
              {"certifier", {{"n_points", 8}, {"search_steps", 10}, {"restarts", 2}, {"resolution", 0.01}}},
              {"explain", {{"indices", {0, 1}}}}};
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

bool parses_finite(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size() && std::isfinite(v);
}

}  // namespace

TEST_CASE("minimal config is fully defaulted") {
  const auto dir = scratch("cfg");
  const auto path = dir / "min.json";
  std::ofstream(path) << R"({"seed":0})";
  const auto cfg = parse_config(path);
  CHECK(cfg.seed == 0);
  CHECK(cfg.data.n_train == 4000);
  CHECK(cfg.data.n_test == 2000);
  CHECK(cfg.attacks.eps == std::vector<double>{0.04, 0.08, 0.12});
  CHECK(cfg.refinement.params.lambda == 0.1);
  const json echo = config_to_json(cfg);
  CHECK(echo.contains("certifier"));
  CHECK(echo["refinement"]["thresholds"]["tau"] == 90.0);
  // The echo parses back to the same echo.
  CHECK(config_to_json(config_from_json(echo)) == echo);
}

TEST_CASE("config errors name the offending key") {
  auto expect_key = [](const json& j, const std::string& key) {
    try {
      (void)config_from_json(j);
      FAIL("expected a config error for " << key);
    } catch (const ConfigError& e) {
      CHECK(e.key_path() == key);
    }
  };
  expect_key(json{{"refinement", {{"lambda", -0.5}}}}, "refinement.lambda");
  expect_key(json{{"attacks", {{"eps", {0.1, 0.05}}}}}, "attacks.eps");
  expect_key(json{{"bogus", 1}}, "bogus");
  expect_key(json{{"model", {{"hidden", "wide"}}}}, "model.hidden");
  expect_key(json{{"certifier", {{"q", "7"}}}}, "certifier.q");

  const auto dir = scratch("cfgerr");
  CHECK_THROWS_AS(parse_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{\"seed\": ";
  CHECK_THROWS_AS(parse_config(dir / "broken.json"), ConfigError);
}

TEST_CASE("stage seeds differ by stage and follow the master seed") {
  ExperimentConfig a, b;
  b.seed = 1;
  CHECK(stage_seed(a, "data") != stage_seed(a, "lime"));
  CHECK(stage_seed(a, "data") != stage_seed(b, "data"));
  CHECK(stage_seed(a, "data") == stage_seed(ExperimentConfig{}, "data"));
}

TEST_CASE("small pipeline: outputs, round trip and determinism") {
  const auto cfg = config_from_json(small_config());
  const auto rep = run_experiment(cfg);
  REQUIRE_MESSAGE(rep.complete, rep.doc.value("error", json()).dump());
  const json& doc = rep.doc;
  CHECK(doc["schema"] == 1);
  for (const char* k : {"baseline", "refined", "refinement", "control", "bound_claim", "timing", "seeds"}) {
    CHECK_MESSAGE(doc.contains(k), k);
  }
  for (const char* m : {"baseline", "refined"}) {
    CHECK(doc[m]["attack_sweep"].size() == 6);
    CHECK(doc[m]["corruption"]["cells"].size() == 10);
    CHECK(doc[m]["bounds"]["records"].size() == 8);
    CHECK(doc[m]["explanations"].size() == 2);
  }

  const auto dir = scratch("emit");
  emit_report(rep, dir / "report.json", dir);
  save_models(rep, dir);

  std::ifstream in(dir / "report.json");
  const json back = json::parse(in);
  CHECK(back == doc);

  const auto sweep = read_csv(dir / "attack_sweep.csv");
  REQUIRE(!sweep.empty());
  CHECK(sweep[0] == std::vector<std::string>{"eps", "attack", "model", "accuracy"});
  CHECK(sweep.size() - 1 == cfg.attacks.eps.size() * 2 * 2);
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    REQUIRE(sweep[i].size() == 4);
    CHECK(parses_finite(sweep[i][0]));
    CHECK(parses_finite(sweep[i][3]));
  }
  const auto grid = read_csv(dir / "corruption_grid.csv");
  CHECK(grid.size() - 1 == 5 * 2 * 2);
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(parses_finite(grid[i][5]));
  CHECK(std::filesystem::exists(dir / "bounds_baseline.csv"));
  CHECK(std::filesystem::exists(dir / "refinement_trace.csv"));
  CHECK(std::filesystem::exists(dir / "baseline.json"));
  CHECK(std::filesystem::exists(dir / "refined.json"));

  const auto again = run_experiment(cfg);
  CHECK(canonical_report(again.doc) == canonical_report(doc));
  CHECK(canonical_report(doc).find("\"timing\"") == std::string::npos);
}

TEST_CASE("disabled refinement leaves the refined sections equal to the baseline") {
  json j = small_config();
  j["refinement"]["enabled"] = false;
  j["certifier"]["with_empirical"] = false;
  const auto rep = run_experiment(config_from_json(j));
  REQUIRE(rep.complete);
  CHECK(*rep.refined == *rep.baseline);
  for (const char* sec : {"clean_accuracy", "attack_sweep", "spurious", "corruption", "bounds", "explanations"}) {
    CHECK_MESSAGE(rep.doc["baseline"][sec] == rep.doc["refined"][sec], sec);
  }
  CHECK_FALSE(rep.doc.contains("control"));
}

TEST_CASE("explain indices are checked against the test split") {
  json j = small_config();
  j["explain"]["indices"] = {100000};
  try {
    (void)run_experiment(config_from_json(j));
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.key_path() == "explain.indices");
  }
}

TEST_CASE("runtime failures are reported, not thrown") {
  json j = small_config();
  j["lime"]["n_samples"] = 5;  // too few samples for 16 groups
  const auto rep = run_experiment(config_from_json(j));
  CHECK_FALSE(rep.complete);
  CHECK(rep.doc["complete"] == false);
  CHECK(rep.doc["error"].is_string());
}
