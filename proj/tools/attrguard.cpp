// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

// attrguard: run / explain / certify / attack-sweep.
// Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "attrguard/errors.hpp"
#include "attrguard/experiment.hpp"
#include "attrguard/parallel.hpp"
#include "attrguard/refinement.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
namespace h = attrguard::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::string out;
  std::size_t threads = 0;
  std::optional<std::uint64_t> seed;
};

h::ExperimentConfig load(const Common& c) {
  h::ExperimentConfig cfg = c.config.empty() ? h::config_from_json(json::object()) : h::parse_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output.dir = c.out;
  return cfg;
}

void write_json(const json& j, const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("error writing " + path.string());
}

attrguard::nn::ModelState model_for(const h::ExperimentConfig& cfg, const h::Prepared& p, const std::string& path) {
  if (!path.empty()) return attrguard::nn::load_model(path);
  return h::train_baseline(cfg, p);
}

int cmd_run(const Common& c) {
  const auto cfg = load(c);
  const auto rep = h::run_experiment(cfg);
  const fs::path dir = cfg.output.dir;
  h::emit_report(rep, dir / "report.json", dir);
  if (cfg.output.save_models) h::save_models(rep, dir / "models");
  if (!rep.complete) {
    std::cerr << "attrguard: run incomplete: " << rep.doc["error"].get<std::string>() << '\n';
    return kExitRuntime;
  }
  std::cout << "wrote " << (dir / "report.json").string() << '\n';
  return kExitOk;
}

int cmd_explain(const Common& c, const std::string& model_path, const std::vector<std::size_t>& indices) {
  auto cfg = load(c);
  if (!indices.empty()) cfg.explain.indices = indices;
  const auto p = h::prepare(cfg);
  const auto model = model_for(cfg, p, model_path);
  const json doc{{"schema", h::kSchema}, {"version", h::kVersion}, {"explanations", h::explain_section(cfg, p, model)}};
  const fs::path out = fs::path(cfg.output.dir) / "explanations.json";
  write_json(doc, out);
  std::cout << "wrote " << out.string() << '\n';
  return kExitOk;
}

int cmd_certify(const Common& c, const std::string& model_path) {
  const auto cfg = load(c);
  const auto p = h::prepare(cfg);
  const auto model = model_for(cfg, p, model_path);
  std::optional<attrguard::refine::Detection> det;
  if (cfg.certifier.spurious == "detected") {
    if (!p.planted_core) throw attrguard::ConfigError("certifier.spurious", "detected mode needs planted data");
    const auto calibration = attrguard::refine::calibration_subset(p.train, p.refinement);
    det = attrguard::refine::detect_spurious(model, calibration, attrguard::spurious::OracleRelevance{*p.planted_core},
                                             p.refinement, 1);
  }
  const json doc{{"schema", h::kSchema},
                 {"version", h::kVersion},
                 {"bounds", h::certifier_section(cfg, p, model, det ? &det->set : nullptr)}};
  const fs::path out = fs::path(cfg.output.dir) / "bounds.json";
  write_json(doc, out);
  std::cout << "wrote " << out.string() << '\n';
  return kExitOk;
}

int cmd_attack_sweep(const Common& c, const std::string& model_path) {
  const auto cfg = load(c);
  const auto p = h::prepare(cfg);
  const auto model = model_for(cfg, p, model_path);
  json doc{{"schema", h::kSchema},
           {"version", h::kVersion},
           {"clean_accuracy", attrguard::attacks::eval(model, p.test, attrguard::attacks::AttackSpec::clean()).accuracy},
           {"attack_sweep", h::attack_sweep_section(cfg, model, p.test)}};
  if (cfg.corruption.enabled) doc["corruption"] = h::corruption_section(cfg, model, p.test);
  const fs::path out = fs::path(cfg.output.dir) / "attack_sweep.json";
  write_json(doc, out);
  std::ofstream csv(fs::path(cfg.output.dir) / "attack_sweep.csv", std::ios::binary);
  csv << "eps,attack,model,accuracy\n";
  for (const auto& r : doc["attack_sweep"]) {
    csv << attrguard::data::format_double(r["eps"].get<double>()) << ',' << r["attack"].get<std::string>()
        << ",model," << attrguard::data::format_double(r["accuracy"].get<double>()) << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write attack_sweep.csv in " + cfg.output.dir);
  std::cout << "wrote " << out.string() << '\n';
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Experiment config (JSON)");
  sub->add_option("--out", c.out, "Output directory (overrides output.dir)");
  sub->add_option("--threads", c.threads, "Worker thread cap (results do not depend on it)");
  sub->add_option("--seed", c.seed, "Master seed override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribution-guided refinement, attacks and robustness bounds"};
  app.require_subcommand(1);
  Common common;
  std::string model_path;
  std::vector<std::size_t> indices;

  auto* run = app.add_subcommand("run", "Full baseline-vs-refined pipeline");
  add_common(run, common);
  auto* explain = app.add_subcommand("explain", "Dump LIME attributions for test indices");
  add_common(explain, common);
  explain->add_option("--model", model_path, "Saved model (default: train the baseline)");
  explain->add_option("--indices", indices, "Test indices to explain");
  auto* certify = app.add_subcommand("certify", "Distortion bounds for a saved model");
  add_common(certify, common);
  certify->add_option("--model", model_path, "Saved model (default: train the baseline)");
  auto* sweep = app.add_subcommand("attack-sweep", "FGSM/PGD sweep and corruption grid for a saved model");
  add_common(sweep, common);
  sweep->add_option("--model", model_path, "Saved model (default: train the baseline)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  if (common.threads > 0) attrguard::set_max_threads(common.threads);

  try {
    if (*run) return cmd_run(common);
    if (*explain) return cmd_explain(common, model_path, indices);
    if (*certify) return cmd_certify(common, model_path);
    if (*sweep) return cmd_attack_sweep(common, model_path);
  } catch (const attrguard::ConfigError& e) {
    std::cerr << "attrguard: config error at " << e.key_path() << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "attrguard: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
