// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "attrguard/attacks.hpp"
#include "attrguard/datagen.hpp"
#include "attrguard/lime.hpp"
#include "attrguard/model.hpp"
#include "attrguard/norms.hpp"

namespace attrguard::cert {

/// |beta_j| / sum |beta|. Throws DegenerateAttributionError on an all-zero beta.
Vector normalized_attribution(std::span<const double> beta);

/// Cosine similarity. Throws UndefinedAlignmentError if either argument has zero norm.
double alignment(std::span<const double> grad, std::span<const double> a);

/// || grad (.) (1 - spurious_indicator) ||_q, where spurious_indicator is 1 on
/// spurious features (the complement of the training keep-mask).
double effective_lipschitz(std::span<const double> grad, std::span<const std::uint8_t> spurious_indicator, Norm q);

struct DistortionBound {
  std::size_t predicted = 0;
  std::size_t runner_up = 0;
  double margin = 0.0;     // f_y - f_runner_up
  double l_eff = 0.0;      // effective Lipschitz constant at the minimizing class
  double delta_min = 0.0;  // +inf when unbounded
  bool unbounded = false;
};

struct BoundPair {
  /// margin_j / || (grad f_y - grad f_j) masked ||_q, minimized over j != y.
  DistortionBound pairwise;
  /// min_j margin_j / || grad f_y masked ||_q.
  DistortionBound as_written;
  /// max |d f_y / d x_j| over flagged features; audits the small-gradient premise.
  double max_masked_gradient = 0.0;
};

BoundPair distortion_lower_bound(const nn::ModelState& model, std::span<const double> x,
                                 std::span<const std::uint8_t> spurious_indicator, Norm q);

/// eps * || grad_x (f_y - f_j) ||_q with q the dual of p and y the predicted class.
double first_order_sensitivity_bound(const nn::ModelState& model, std::span<const double> x, std::size_t j,
                                     double eps, Norm p);

struct BoundRecord {
  std::size_t index = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  std::size_t runner_up = 0;
  double margin = 0.0;
  double l_eff = 0.0;
  double delta_min = 0.0;  // pairwise
  double delta_min_as_written = 0.0;
  bool unbounded = false;
  double max_masked_gradient = 0.0;
  std::optional<double> alignment;
  std::optional<double> delta_emp;  // nullopt when not run or no attack found
  bool empirical_run = false;
  bool empirical_found = false;
  std::optional<bool> sound;
};

struct BoundReport {
  Norm q = Norm::l1;
  std::vector<BoundRecord> records;
  double mean_delta_min = 0.0;             // pairwise, over bounded records
  double mean_delta_min_as_written = 0.0;  // over bounded records
  std::size_t n_unbounded = 0;
  std::size_t n_sound = 0;
  std::size_t n_checked = 0;
  std::vector<std::size_t> violations;  // record positions with sound == false
  std::optional<double> mean_alignment;
};

struct CertifyOptions {
  Norm q = Norm::l1;
  bool with_empirical = false;
  attacks::SearchConfig search;  // norm is overridden with dual(q)
  const lime::LimeConfig* lime = nullptr;
  double tolerance = 1e-9;
};

BoundReport certify_split(const nn::ModelState& model, const data::DatasetSplit& split,
                          std::span<const std::uint8_t> spurious_indicator, const CertifyOptions& opts);

}  // namespace attrguard::cert
