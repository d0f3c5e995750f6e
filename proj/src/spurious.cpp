// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/spurious.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attrguard/errors.hpp"
#include "attrguard/parallel.hpp"
#include "attrguard/seed.hpp"

namespace attrguard::spurious {

void Thresholds::validate() const {
  for (double v : {tau, eps_sens, delta, tau_ref}) {
    if (!(v >= 0.0)) throw InputError("thresholds must be non-negative");
    if (percentile_mode && v > 100.0) throw InputError("percentile thresholds must lie in [0, 100]");
  }
}

FeatureStats collect_stats(const nn::ModelState& model, const Reference& reference,
                           const data::DatasetSplit& calibration, const lime::LimeConfig& cfg,
                           std::size_t instability_repeats) {
  if (calibration.n == 0) throw InputError("calibration set is empty");
  const std::size_t d = calibration.d;
  const std::size_t n = calibration.n;

  struct PerInput {
    Vector beta, beta_ref, grad, var;
  };
  std::vector<PerInput> per(n);
  const auto* ref_model = std::get_if<std::reference_wrapper<const nn::ModelState>>(&reference);

  parallel_for(n, [&](std::size_t i) {
    const auto x = calibration.row(i);
    lime::LimeConfig c = cfg;
    c.seed = mix_seed(cfg.seed, i);
    PerInput& out = per[i];
    out.beta = lime::explain(model, x, c).beta;
    out.var = lime::attribution_variance(model, x, instability_repeats, c);
    out.grad = nn::logit_gradient(model, x, nn::predict(model, x));
    if (ref_model) out.beta_ref = lime::explain(ref_model->get(), x, c).beta;
  });

  FeatureStats s;
  s.n_calibration = n;
  s.mean_abs_attr.assign(d, 0.0);
  s.mean_abs_attr_ref.assign(d, 0.0);
  s.mean_sensitivity.assign(d, 0.0);
  s.mean_instability.assign(d, 0.0);
  for (const auto& p : per) {
    for (std::size_t j = 0; j < d; ++j) {
      s.mean_abs_attr[j] += std::abs(p.beta[j]);
      s.mean_sensitivity[j] += std::abs(p.grad[j]);
      s.mean_instability[j] += p.var[j];
      if (ref_model) s.mean_abs_attr_ref[j] += std::abs(p.beta_ref[j]);
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    s.mean_abs_attr[j] *= inv;
    s.mean_sensitivity[j] *= inv;
    s.mean_instability[j] *= inv;
    s.mean_abs_attr_ref[j] *= inv;
  }
  if (const auto* oracle = std::get_if<OracleRelevance>(&reference)) {
    for (auto j : oracle->relevant) {
      if (j >= d) throw InputError("oracle relevant index out of range");
      s.mean_abs_attr_ref[j] = 1.0;
    }
  }
  for (auto& p : per) {
    s.attributions.push_back(std::move(p.beta));
    s.gradients.push_back(std::move(p.grad));
  }
  return s;
}

namespace {

void check_stats(const FeatureStats& s) {
  const std::size_t d = s.mean_abs_attr.size();
  if (d == 0 || s.mean_abs_attr_ref.size() != d || s.mean_sensitivity.size() != d || s.mean_instability.size() != d) {
    throw InputError("feature stats vectors are missing or have mismatched lengths");
  }
}

template <typename Pred>
IndexSet select(std::size_t d, Pred pred) {
  IndexSet out;
  for (std::size_t j = 0; j < d; ++j) {
    if (pred(j)) out.push_back(j);
  }
  return out;
}

}  // namespace

IndexSet flag_irrelevant(const FeatureStats& s, const Thresholds& th) {
  check_stats(s);
  return select(s.mean_abs_attr.size(),
                [&](std::size_t j) { return s.mean_abs_attr[j] > th.tau && s.mean_abs_attr_ref[j] <= th.tau_ref; });
}

IndexSet flag_sensitive(const FeatureStats& s, const Thresholds& th) {
  check_stats(s);
  return select(s.mean_sensitivity.size(), [&](std::size_t j) {
    return s.mean_sensitivity[j] > th.eps_sens && s.mean_abs_attr_ref[j] <= th.tau_ref;
  });
}

IndexSet flag_unstable(const FeatureStats& s, const Thresholds& th) {
  check_stats(s);
  return select(s.mean_instability.size(), [&](std::size_t j) { return s.mean_instability[j] > th.delta; });
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw InputError("percentile of an empty set");
  if (q < 0.0 || q > 100.0) throw InputError("percentile must lie in [0, 100]");
  Vector v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

Thresholds resolve_thresholds(const FeatureStats& s, const Thresholds& th) {
  th.validate();
  if (!th.percentile_mode) return th;
  check_stats(s);
  Thresholds abs;
  abs.percentile_mode = false;
  abs.tau = percentile(s.mean_abs_attr, th.tau);
  abs.eps_sens = percentile(s.mean_sensitivity, th.eps_sens);
  abs.delta = percentile(s.mean_instability, th.delta);
  abs.tau_ref = percentile(s.mean_abs_attr_ref, th.tau_ref);
  return abs;
}

lime::Mask SpuriousSet::spurious_indicator() const {
  lime::Mask ind(mask.size());
  for (std::size_t j = 0; j < mask.size(); ++j) ind[j] = mask[j] ? 0 : 1;
  return ind;
}

SpuriousSet SpuriousSet::empty(std::size_t d) {
  SpuriousSet s;
  s.mask.assign(d, 1);
  s.resolved.percentile_mode = false;
  return s;
}

SpuriousSet SpuriousSet::from_indices(IndexSet indices, std::size_t d) {
  SpuriousSet s = empty(d);
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  for (auto j : indices) {
    if (j >= d) throw InputError("spurious index " + std::to_string(j) + " out of range");
    s.mask[j] = 0;
  }
  s.indices = std::move(indices);
  return s;
}

SpuriousSet identify_spurious(const FeatureStats& stats, const Thresholds& th) {
  check_stats(stats);
  const Thresholds abs = resolve_thresholds(stats, th);
  const std::size_t d = stats.mean_abs_attr.size();
  SpuriousSet out = SpuriousSet::empty(d);
  out.resolved = abs;
  out.irrelevant = flag_irrelevant(stats, abs);
  out.sensitive = flag_sensitive(stats, abs);
  out.unstable = flag_unstable(stats, abs);
  IndexSet all;
  for (const auto* set : {&out.irrelevant, &out.sensitive, &out.unstable}) all.insert(all.end(), set->begin(), set->end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  for (auto j : all) out.mask[j] = 0;
  out.indices = std::move(all);
  return out;
}

DetectionScore score_detection(const IndexSet& flagged, const IndexSet& truth) {
  DetectionScore s;
  for (auto j : flagged) {
    if (std::find(truth.begin(), truth.end(), j) != truth.end()) ++s.true_positives;
  }
  s.precision = flagged.empty() ? 1.0 : static_cast<double>(s.true_positives) / static_cast<double>(flagged.size());
  s.recall = truth.empty() ? 1.0 : static_cast<double>(s.true_positives) / static_cast<double>(truth.size());
  return s;
}

}  // namespace attrguard::spurious
