// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "attrguard/datagen.hpp"
#include "attrguard/lime.hpp"
#include "attrguard/model.hpp"

namespace attrguard::spurious {

using IndexSet = std::vector<std::size_t>;  // sorted, unique

/// Thresholds for the irrelevance / sensitivity / instability tests. In
/// percentile mode tau, eps_sens and delta are percentiles (0..100) of the
/// corresponding statistic across features, and tau_ref a percentile of the
/// reference attributions.
struct Thresholds {
  double tau = 90.0;
  double eps_sens = 90.0;
  double delta = 90.0;
  double tau_ref = 50.0;
  bool percentile_mode = true;

  void validate() const;
};

struct FeatureStats {
  Vector mean_abs_attr;
  Vector mean_abs_attr_ref;
  Vector mean_sensitivity;
  Vector mean_instability;
  std::size_t n_calibration = 0;

  // Per calibration input: LIME beta and predicted-class input gradient.
  std::vector<Vector> attributions;
  std::vector<Vector> gradients;
};

/// Reference relevance is either known (planted ground truth) or read off a
/// more trustworthy model's LIME attributions.
struct OracleRelevance {
  IndexSet relevant;
};
using Reference = std::variant<OracleRelevance, std::reference_wrapper<const nn::ModelState>>;

FeatureStats collect_stats(const nn::ModelState& model, const Reference& reference,
                           const data::DatasetSplit& calibration, const lime::LimeConfig& cfg,
                           std::size_t instability_repeats);

// The flag tests read thresholds as absolute values.
IndexSet flag_irrelevant(const FeatureStats& stats, const Thresholds& th);
IndexSet flag_sensitive(const FeatureStats& stats, const Thresholds& th);
IndexSet flag_unstable(const FeatureStats& stats, const Thresholds& th);

/// Linear-interpolation percentile (q in [0, 100]) of the values.
double percentile(std::span<const double> values, double q);

/// Converts percentile-mode thresholds into absolute ones for these stats.
Thresholds resolve_thresholds(const FeatureStats& stats, const Thresholds& th);

struct SpuriousSet {
  IndexSet indices;
  IndexSet irrelevant;
  IndexSet sensitive;
  IndexSet unstable;
  lime::Mask mask;          // training mask: 0 on spurious features, 1 elsewhere
  Thresholds resolved;      // absolute thresholds actually applied

  /// Complement of `mask`: 1 on spurious features.
  lime::Mask spurious_indicator() const;
  static SpuriousSet empty(std::size_t d);
  static SpuriousSet from_indices(IndexSet indices, std::size_t d);
};

SpuriousSet identify_spurious(const FeatureStats& stats, const Thresholds& th);

struct DetectionScore {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t true_positives = 0;
};

/// Precision/recall of flagged indices against a ground-truth set. Empty
/// flagged set has precision 1 by convention.
DetectionScore score_detection(const IndexSet& flagged, const IndexSet& truth);

}  // namespace attrguard::spurious
