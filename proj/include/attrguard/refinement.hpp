// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrguard/datagen.hpp"
#include "attrguard/fgsm.hpp"
#include "attrguard/lime.hpp"
#include "attrguard/model.hpp"
#include "attrguard/spurious.hpp"

namespace attrguard::refine {

struct ConvergenceConfig {
  double tol = 0.005;  // monitor FGSM accuracy, as a fraction
  std::size_t patience = 2;
};

enum class RegMode { analytic, finite_difference };

struct RefinementConfig {
  double lambda = 0.1;
  double alpha = 1.0;
  double eps_adv = 0.4;  // 0.05 * domain width
  double lr = 0.1;
  std::size_t epochs_per_iter = 10;
  std::size_t batch_size = 32;
  std::size_t max_iters = 5;
  ConvergenceConfig convergence;
  spurious::Thresholds thresholds;
  lime::LimeConfig lime;  // its baseline also fills masked inputs (empty = zeros)
  std::size_t instability_repeats = 5;
  std::size_t calibration_size = 100;
  RegMode reg_mode = RegMode::analytic;
  std::uint64_t seed = 0;

  void validate() const;
};

/// x (.) m with masked positions replaced by the baseline (baseline 0 gives the literal product).
Vector mask_input(std::span<const double> x, std::span<const std::uint8_t> keep_mask, std::span<const double> baseline);

/// (1/|F|) sum_{j in F} mean_batch (d f_y / d x_j)^2 with y the true label. Exactly 0 for empty F.
double sensitivity_reg(const nn::ModelState& model, const data::DatasetSplit& split,
                       std::span<const std::size_t> batch, const spurious::IndexSet& spurious);

struct RegValueGrad {
  double value = 0.0;
  nn::GradientBundle grad;  // parameter gradient only; input_grad left zero
};

/// Regularizer and its parameter gradient. Analytic mode differentiates the
/// input-gradient chain of the ReLU net (second order); finite-difference mode
/// perturbs each parameter and is meant only for debugging.
RegValueGrad sensitivity_reg_grad(const nn::ModelState& model, const data::DatasetSplit& split,
                                  std::span<const std::size_t> batch, const spurious::IndexSet& spurious,
                                  RegMode mode = RegMode::analytic);

struct CompositeLoss {
  double total = 0.0;
  double task = 0.0;
  double adv = 0.0;
  double reg = 0.0;
  nn::GradientBundle grad;
};

/// task + alpha * adv + lambda * reg on masked inputs; FGSM starts from the
/// masked input and is treated as a constant (no gradient through its construction).
CompositeLoss composite_loss(const nn::ModelState& model, const data::DatasetSplit& split,
                             std::span<const std::size_t> batch, const spurious::SpuriousSet& spurious,
                             const RefinementConfig& cfg);

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Seeded permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Plain mini-batch SGD on mean cross-entropy.
nn::ModelState standard_train(nn::ModelState model, const data::DatasetSplit& train, const TrainConfig& tc);

/// Mini-batch SGD on composite_loss for cfg.epochs_per_iter epochs. Appends the
/// per-epoch mean composite loss to loss_curve if given. Throws TrainingError on
/// a non-finite loss.
nn::ModelState train_epochs(nn::ModelState model, const data::DatasetSplit& train,
                            const spurious::SpuriousSet& spurious, const RefinementConfig& cfg, std::uint64_t seed,
                            std::size_t iteration, std::vector<double>* loss_curve = nullptr);

/// Seeded calibration subset of the training split used for spurious detection.
data::DatasetSplit calibration_subset(const data::DatasetSplit& train, const RefinementConfig& cfg);

struct Detection {
  spurious::FeatureStats stats;
  spurious::SpuriousSet set;
  std::optional<double> mean_alignment;
};

/// Statistics and spurious set for `model` on the calibration subset, with the
/// LIME seed of the given iteration. refine() calls this once per iteration.
Detection detect_spurious(const nn::ModelState& model, const data::DatasetSplit& calibration,
                          const spurious::Reference& reference, const RefinementConfig& cfg, std::size_t iteration);

/// Seed used by refine() for the training epochs of a given iteration (1-based).
std::uint64_t iteration_seed(std::uint64_t seed, std::size_t iteration);

struct IterationRecord {
  std::size_t iteration = 0;
  spurious::IndexSet spurious;
  double clean_acc = 0.0;
  double fgsm_acc = 0.0;
  double pgd_acc = 0.0;
  std::optional<double> mean_alignment;
  std::vector<double> loss_curve;
};

struct RefinementResult {
  nn::ModelState model;  // best monitor-FGSM checkpoint
  std::vector<IterationRecord> trace;
  std::vector<spurious::SpuriousSet> sets;
  std::vector<nn::ModelState> checkpoints;
  std::size_t best_iteration = 0;
  bool converged = false;
  bool complete = true;
  std::string error;
};

/// Iterates: collect stats -> identify spurious features -> retrain with the
/// composite loss -> evaluate on the monitor split. Stops after max_iters or
/// once monitor FGSM accuracy moves by less than tol for `patience` consecutive
/// iterations.
RefinementResult refine(const nn::ModelState& initial, const data::DatasetSplit& train,
                        const data::DatasetSplit& monitor, const spurious::Reference& reference,
                        const RefinementConfig& cfg);

/// Mean over inputs and flagged features of (d f_y / d x_j)^2, y the true label.
double mean_squared_feature_gradient(const nn::ModelState& model, const data::DatasetSplit& split,
                                     const spurious::IndexSet& features);

}  // namespace attrguard::refine
