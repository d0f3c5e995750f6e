// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "attrguard/datagen.hpp"
#include "attrguard/model.hpp"
#include "attrguard/norms.hpp"

namespace attrguard::attacks {

enum class AttackKind { none, fgsm, pgd };

std::string_view to_string(AttackKind kind);
AttackKind parse_attack(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::none;
  double eps = 0.0;
  std::size_t steps = 10;
  double step_size = 0.0;  // <= 0 selects 2.5 * eps / steps
  bool random_start = true;
  std::uint64_t seed = 0;
  Norm norm = Norm::linf;  // pgd threat model; fgsm is always l-inf

  void validate() const;
  double effective_step_size() const;

  static AttackSpec clean() { return {}; }
  static AttackSpec make_fgsm(double eps) { return {AttackKind::fgsm, eps, 1, 0.0, false, 0, Norm::linf}; }
  static AttackSpec make_pgd(double eps, std::uint64_t seed, std::size_t steps = 10) {
    return {AttackKind::pgd, eps, steps, 0.0, true, seed, Norm::linf};
  }
};

/// Projected gradient ascent on the cross-entropy at the true label. Each
/// step is projected back onto the eps-ball around x and the domain box.
Vector pgd(const nn::ModelState& model, std::span<const double> x, std::size_t y, const AttackSpec& spec);

/// Dispatches on spec.kind; `none` returns x.
Vector perturb(const nn::ModelState& model, std::span<const double> x, std::size_t y, const AttackSpec& spec);

struct EvalResult {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::vector<std::size_t> per_class_correct;
  std::vector<std::size_t> per_class_total;
};

/// Attacks every point (per-point seed mixed from spec.seed and the index) and
/// counts argmax hits.
EvalResult eval(const nn::ModelState& model, const data::DatasetSplit& split, const AttackSpec& spec);

struct GridCell {
  data::CorruptionKind kind;
  int severity;
  EvalResult result;
};

struct CorruptionGrid {
  std::vector<data::CorruptionKind> kinds;
  std::vector<int> severities;
  std::vector<GridCell> cells;  // kind-major
  AttackSpec attack;

  /// Mean accuracy over severities for one kind (a Table-style row).
  double kind_accuracy(data::CorruptionKind kind) const;
  std::vector<double> kind_rows() const;
  /// Mean of kind rows.
  double mean() const;
  /// Population standard deviation of kind rows.
  double stddev() const;
};

CorruptionGrid eval_corruption_grid(const nn::ModelState& model, const data::DatasetSplit& test,
                                    std::span<const data::CorruptionKind> kinds, std::span<const int> severities,
                                    const AttackSpec& spec, std::uint64_t corruption_seed);

struct SearchConfig {
  Norm norm = Norm::linf;
  double resolution = 1e-3;
  double eps_max = 4.0;  // half the domain width
  std::size_t steps = 50;
  std::size_t restarts = 5;
  std::uint64_t seed = 0;
};

/// Smallest eps (to within resolution) at which PGD flips the prediction at x;
/// 0 if x is already misclassified, nullopt if eps_max does not succeed.
std::optional<double> min_perturbation_search(const nn::ModelState& model, std::span<const double> x, std::size_t y,
                                              const SearchConfig& cfg);

}  // namespace attrguard::attacks
