// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/certifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "attrguard/errors.hpp"
#include "attrguard/parallel.hpp"
#include "attrguard/seed.hpp"

namespace attrguard::cert {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Vector normalized_attribution(std::span<const double> beta) {
  double total = 0.0;
  for (double b : beta) total += std::abs(b);
  if (!(total > 0.0)) throw DegenerateAttributionError("attribution vector has zero L1 mass");
  Vector a(beta.size());
  for (std::size_t j = 0; j < beta.size(); ++j) a[j] = std::abs(beta[j]) / total;
  return a;
}

double alignment(std::span<const double> grad, std::span<const double> a) {
  if (grad.size() != a.size()) throw InputError("alignment length mismatch");
  const double ng = norm(grad, Norm::l2);
  const double na = norm(a, Norm::l2);
  if (!(ng > 0.0) || !(na > 0.0)) throw UndefinedAlignmentError("alignment undefined for a zero-norm vector");
  double dot = 0.0;
  for (std::size_t j = 0; j < grad.size(); ++j) dot += grad[j] * a[j];
  return std::clamp(dot / (ng * na), -1.0, 1.0);
}

double effective_lipschitz(std::span<const double> grad, std::span<const std::uint8_t> spurious_indicator, Norm q) {
  if (grad.size() != spurious_indicator.size()) throw InputError("effective_lipschitz length mismatch");
  Vector kept(grad.begin(), grad.end());
  for (std::size_t j = 0; j < kept.size(); ++j) {
    if (spurious_indicator[j]) kept[j] = 0.0;
  }
  return norm(kept, q);
}

BoundPair distortion_lower_bound(const nn::ModelState& model, std::span<const double> x,
                                 std::span<const std::uint8_t> spurious_indicator, Norm q) {
  const Vector logits = nn::forward(model, x);
  const std::size_t y = nn::argmax(logits);
  const auto jac = nn::logit_jacobian(model, x);

  BoundPair out;
  for (std::size_t j = 0; j < spurious_indicator.size(); ++j) {
    if (spurious_indicator[j]) out.max_masked_gradient = std::max(out.max_masked_gradient, std::abs(jac[y][j]));
  }

  auto& pw = out.pairwise;
  auto& aw = out.as_written;
  pw.predicted = aw.predicted = y;
  pw.delta_min = aw.delta_min = kInf;
  pw.margin = aw.margin = kInf;
  const double l_fy = effective_lipschitz(jac[y], spurious_indicator, q);
  aw.l_eff = l_fy;

  Vector diff(x.size());
  bool have_pair = false;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == y) continue;
    const double margin = logits[y] - logits[j];
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = jac[y][i] - jac[j][i];
    const double l_pair = effective_lipschitz(diff, spurious_indicator, q);
    const double ratio = margin <= 0.0 ? 0.0 : (l_pair > 0.0 ? margin / l_pair : kInf);
    if (!have_pair || ratio < pw.delta_min) {
      have_pair = true;
      pw.delta_min = ratio;
      pw.runner_up = j;
      pw.margin = margin;
      pw.l_eff = l_pair;
    }
    if (margin < aw.margin) {
      aw.margin = margin;
      aw.runner_up = j;
    }
  }
  aw.delta_min = aw.margin <= 0.0 ? 0.0 : (l_fy > 0.0 ? aw.margin / l_fy : kInf);
  pw.unbounded = std::isinf(pw.delta_min);
  aw.unbounded = std::isinf(aw.delta_min);
  return out;
}

double first_order_sensitivity_bound(const nn::ModelState& model, std::span<const double> x, std::size_t j,
                                     double eps, Norm p) {
  if (j >= model.num_classes()) throw InputError("class index out of range");
  if (!(eps >= 0.0)) throw InputError("eps must be non-negative");
  const auto jac = nn::logit_jacobian(model, x);
  const std::size_t y = nn::predict(model, x);
  Vector diff(x.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = jac[y][i] - jac[j][i];
  return eps * norm(diff, dual(p));
}

BoundReport certify_split(const nn::ModelState& model, const data::DatasetSplit& split,
                          std::span<const std::uint8_t> spurious_indicator, const CertifyOptions& opts) {
  if (spurious_indicator.size() != split.d) throw InputError("spurious indicator length does not match d");
  BoundReport rep;
  rep.q = opts.q;
  rep.records.resize(split.n);

  parallel_for(split.n, [&](std::size_t i) {
    const auto x = split.row(i);
    BoundRecord& r = rep.records[i];
    r.index = i;
    r.label = split.labels[i];
    const BoundPair b = distortion_lower_bound(model, x, spurious_indicator, opts.q);
    r.predicted = b.pairwise.predicted;
    r.runner_up = b.pairwise.runner_up;
    r.margin = b.pairwise.margin;
    r.l_eff = b.pairwise.l_eff;
    r.max_masked_gradient = b.max_masked_gradient;
    if (r.predicted != r.label) {
      // Already wrong: nothing to certify.
      r.delta_min = 0.0;
      r.delta_min_as_written = 0.0;
    } else {
      r.delta_min = b.pairwise.delta_min;
      r.delta_min_as_written = b.as_written.delta_min;
      r.unbounded = b.pairwise.unbounded;
    }
    if (opts.lime) {
      lime::LimeConfig c = *opts.lime;
      c.seed = mix_seed(opts.lime->seed, i);
      try {
        const auto attr = lime::explain(model, x, c);
        const auto g = nn::logit_gradient(model, x, r.predicted);
        r.alignment = alignment(g, normalized_attribution(attr.beta));
      } catch (const DegenerateAttributionError&) {
      } catch (const UndefinedAlignmentError&) {
      }
    }
    if (opts.with_empirical) {
      attacks::SearchConfig s = opts.search;
      s.norm = dual(opts.q);
      s.seed = mix_seed(opts.search.seed, i);
      r.empirical_run = true;
      const auto found = attacks::min_perturbation_search(model, x, r.label, s);
      r.empirical_found = found.has_value();
      r.delta_emp = found;
      if (found) {
        r.sound = *found >= r.delta_min - opts.tolerance;
      } else {
        // No attack up to eps_max: consistent with any bound.
        r.sound = true;
      }
    }
  });

  double sum = 0.0, sum_aw = 0.0, sum_align = 0.0;
  std::size_t bounded = 0, bounded_aw = 0, n_align = 0;
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& r = rep.records[i];
    if (r.unbounded) {
      ++rep.n_unbounded;
    } else {
      sum += r.delta_min;
      ++bounded;
    }
    if (std::isfinite(r.delta_min_as_written)) {
      sum_aw += r.delta_min_as_written;
      ++bounded_aw;
    }
    if (r.alignment) {
      sum_align += *r.alignment;
      ++n_align;
    }
    if (r.sound) {
      ++rep.n_checked;
      if (*r.sound) {
        ++rep.n_sound;
      } else {
        rep.violations.push_back(i);
      }
    }
  }
  rep.mean_delta_min = bounded ? sum / static_cast<double>(bounded) : 0.0;
  rep.mean_delta_min_as_written = bounded_aw ? sum_aw / static_cast<double>(bounded_aw) : 0.0;
  if (n_align) rep.mean_alignment = sum_align / static_cast<double>(n_align);
  return rep;
}

}  // namespace attrguard::cert
