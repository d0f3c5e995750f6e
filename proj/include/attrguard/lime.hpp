// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "attrguard/datagen.hpp"
#include "attrguard/model.hpp"
#include "attrguard/tensor.hpp"

namespace attrguard::lime {

using Mask = std::vector<std::uint8_t>;

struct LimeConfig {
  std::size_t n_samples = 200;
  double kernel_width = 1.0;  // sigma
  Vector baseline;            // per-feature fill for masked features; length d
  double ridge = 1e-6;
  std::size_t group_size = 1;
  std::uint64_t seed = 0;

  std::size_t num_groups(std::size_t d) const { return (d + group_size - 1) / group_size; }
  /// Throws InputError unless the config is usable for inputs of length d.
  void validate(std::size_t d) const;

  /// Defaults: baseline = training feature means, N = max(200, 4 * groups),
  /// sigma = 0.75 * sqrt(d) * rms feature std.
  static LimeConfig defaults_for(const data::DatasetSplit& train, std::uint64_t seed, std::size_t group_size = 1);
};

struct Perturbation {
  Mask mask;  // one entry per group, 1 = kept
  Vector z;
};

struct Attribution {
  double beta0 = 0.0;
  Vector beta;        // per feature, group coefficient broadcast to its members
  Vector group_beta;  // per group
  double r2 = 0.0;
};

/// Sample 0 keeps every group; the rest keep each group independently with probability 1/2.
std::vector<Perturbation> sample_perturbations(std::span<const double> x, const LimeConfig& cfg);

/// Fills masked groups of x with the baseline.
Vector apply_group_mask(std::span<const double> x, const Mask& mask, std::span<const double> baseline,
                        std::size_t group_size);

/// exp(-||x - z||^2 / sigma^2).
double kernel_weight(std::span<const double> x, std::span<const double> z, double sigma);

/// Weighted ridge fit of targets on the binary group masks (intercept unpenalized).
/// Throws DegenerateDesignError when the design is rank deficient and ridge == 0.
Attribution fit_surrogate(std::span<const Perturbation> samples, std::span<const double> targets,
                          std::span<const double> weights, double ridge, std::size_t group_size);

/// Explains the predicted-class logit of the model at x.
Attribution explain(const nn::ModelState& model, std::span<const double> x, const LimeConfig& cfg);

/// Population variance of each beta_j over explain() runs seeded seed+1 .. seed+repeats.
Vector attribution_variance(const nn::ModelState& model, std::span<const double> x, std::size_t repeats,
                            const LimeConfig& cfg);

}  // namespace attrguard::lime
