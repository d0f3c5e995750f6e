// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attrguard/attacks.hpp"
#include "attrguard/datagen.hpp"
#include "attrguard/lime.hpp"
#include "attrguard/model.hpp"
#include "attrguard/norms.hpp"
#include "attrguard/refinement.hpp"
#include "attrguard/spurious.hpp"

namespace attrguard::harness {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchema = 1;

struct DataConfig {
  std::string source = "planted";  // "planted" or "files"
  data::PlantedSpec planted;
  std::size_t n_train = 4000;
  std::size_t n_test = 2000;
  std::size_t n_monitor = 500;
  std::string train_path;
  std::string test_path;
  std::string monitor_path;  // files mode; empty reuses the training split
};

struct ModelConfig {
  std::vector<std::size_t> hidden{32};
  std::size_t pretrain_epochs = 20;
  double lr = 0.05;
  std::size_t batch_size = 32;
};

struct ReferenceConfig {
  std::string kind = "oracle";  // "oracle" or "robust_sibling"
  double sibling_eps = 0.4;
  std::size_t sibling_epochs = 20;
};

struct LimeSection {
  std::size_t n_samples = 0;   // 0 = max(200, 4 * groups)
  double kernel_width = 0.0;   // 0 = 0.75 * sqrt(d) * rms feature std
  double ridge = 1e-6;
  std::size_t group_size = 1;
  std::string baseline = "mean";  // "mean" or "zero"
};

struct AttackSection {
  std::vector<double> eps{0.04, 0.08, 0.12};
  std::size_t pgd_steps = 10;
  double pgd_step_size = 0.0;  // 0 = 2.5 * eps / steps
  bool pgd_random_start = true;
};

struct CorruptionSection {
  bool enabled = true;
  std::vector<data::CorruptionKind> kinds{std::begin(data::kAllCorruptions), std::end(data::kAllCorruptions)};
  std::vector<int> severities{1, 2, 3, 4, 5};
};

struct CertifierSection {
  bool enabled = true;
  std::size_t n_points = 100;
  Norm q = Norm::l1;
  std::string spurious = "empty";  // "empty" or "detected"
  bool with_empirical = true;
  double resolution = 1e-3;
  double eps_max = 4.0;
  std::size_t search_steps = 50;
  std::size_t restarts = 5;
  double tolerance = 1e-9;
};

struct ControlSection {
  bool enabled = true;  // lambda = 0 refinement with identical seeds
};

struct ExplainSection {
  std::vector<std::size_t> indices{0, 1, 2, 3, 4};
};

struct OutputSection {
  std::string dir = "out";
  bool save_models = true;
};

struct RefinementSection {
  bool enabled = true;
  refine::RefinementConfig params;  // lime and seed are filled from the lime section and master seed
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  ReferenceConfig reference;
  RefinementSection refinement;
  LimeSection lime;
  AttackSection attacks;
  CorruptionSection corruption;
  CertifierSection certifier;
  ControlSection control;
  ExplainSection explain;
  OutputSection output;
};

/// Throws ConfigError (with key path) on unknown keys, wrong types or invalid values.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig parse_config(const std::filesystem::path& path);
/// Complete echo with every default filled in; config_from_json accepts it back.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

std::uint64_t stage_seed(const ExperimentConfig& cfg, const char* stage);

struct Prepared {
  data::DatasetSplit train;
  data::DatasetSplit test;
  data::DatasetSplit monitor;
  std::optional<spurious::IndexSet> planted_spurious;
  std::optional<spurious::IndexSet> planted_core;
  lime::LimeConfig lime;
  refine::RefinementConfig refinement;
};

Prepared prepare(const ExperimentConfig& cfg);
nn::ModelState train_baseline(const ExperimentConfig& cfg, const Prepared& p);

struct ExperimentReport {
  nlohmann::json doc;  // includes a top-level "timing" object
  std::optional<nn::ModelState> baseline;
  std::optional<nn::ModelState> refined;
  std::vector<nn::ModelState> checkpoints;
  bool complete = true;
};

ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Sweep / grid / bound / explanation sections for a single model.
nlohmann::json attack_sweep_section(const ExperimentConfig& cfg, const nn::ModelState& model,
                                    const data::DatasetSplit& test);
nlohmann::json corruption_section(const ExperimentConfig& cfg, const nn::ModelState& model,
                                  const data::DatasetSplit& test);
nlohmann::json certifier_section(const ExperimentConfig& cfg, const Prepared& p, const nn::ModelState& model,
                                 const spurious::SpuriousSet* detected);
nlohmann::json explain_section(const ExperimentConfig& cfg, const Prepared& p, const nn::ModelState& model);

/// Writes report.json into json_path and CSV files into csv_dir. Errors carry the offending path.
void emit_report(const ExperimentReport& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_dir);
/// baseline.json, refined.json and checkpoint_iter<k>.json.
void save_models(const ExperimentReport& report, const std::filesystem::path& dir);

/// Report text with the timing field removed, for determinism comparisons.
std::string canonical_report(const nlohmann::json& doc);

}  // namespace attrguard::harness
