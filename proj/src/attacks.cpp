// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "attrguard/errors.hpp"
#include "attrguard/fgsm.hpp"
#include "attrguard/parallel.hpp"
#include "attrguard/seed.hpp"

namespace attrguard::attacks {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
  }
  return "unknown";
}

AttackKind parse_attack(std::string_view name) {
  for (auto k : {AttackKind::none, AttackKind::fgsm, AttackKind::pgd}) {
    if (to_string(k) == name) return k;
  }
  throw InputError("unknown attack '" + std::string(name) + "'");
}

void AttackSpec::validate() const {
  if (!(eps >= 0.0)) throw InputError("attack eps must be non-negative");
  if (kind == AttackKind::pgd) {
    if (steps < 1) throw InputError("pgd needs steps >= 1");
    if (step_size < 0.0 || !std::isfinite(step_size)) throw InputError("pgd step_size must be positive");
  }
}

double AttackSpec::effective_step_size() const {
  return step_size > 0.0 ? step_size : 2.5 * eps / static_cast<double>(steps);
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void project(std::span<double> adv, std::span<const double> x, double eps, Norm p) {
  if (p == Norm::linf) {
    for (std::size_t j = 0; j < adv.size(); ++j) {
      adv[j] = data::kDomain.clamp(std::clamp(adv[j], x[j] - eps, x[j] + eps));
    }
    return;
  }
  if (p != Norm::l2) throw InputError("pgd supports only l2 and inf threat models");
  double n2 = 0.0;
  for (std::size_t j = 0; j < adv.size(); ++j) n2 += (adv[j] - x[j]) * (adv[j] - x[j]);
  const double n = std::sqrt(n2);
  const double shrink = n > eps ? eps / n : 1.0;
  for (std::size_t j = 0; j < adv.size(); ++j) adv[j] = data::kDomain.clamp(x[j] + shrink * (adv[j] - x[j]));
}

// Runs PGD; when stop_on_flip is set, returns as soon as the argmax leaves y.
Vector run_pgd(const nn::ModelState& model, std::span<const double> x, std::size_t y, const AttackSpec& spec,
               bool stop_on_flip, bool* flipped) {
  spec.validate();
  Vector adv(x.begin(), x.end());
  if (flipped) *flipped = false;
  if (spec.random_start && spec.eps > 0.0) {
    std::mt19937_64 rng(spec.seed);
    if (spec.norm == Norm::linf) {
      std::uniform_real_distribution<double> u(-spec.eps, spec.eps);
      for (auto& v : adv) v += u(rng);
    } else {
      std::normal_distribution<double> g(0.0, 1.0);
      Vector dir(adv.size());
      for (auto& v : dir) v = g(rng);
      const double n = norm(dir, Norm::l2);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double radius = spec.eps * std::pow(u(rng), 1.0 / static_cast<double>(adv.size()));
      for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += n > 0.0 ? radius * dir[j] / n : 0.0;
    }
    project(adv, x, spec.eps, spec.norm);
  }
  const double step = spec.effective_step_size();
  for (std::size_t s = 0; s < spec.steps; ++s) {
    if (stop_on_flip && nn::predict(model, adv) != y) {
      *flipped = true;
      return adv;
    }
    const Vector g = nn::backward(model, adv, y).input_grad;
    if (spec.norm == Norm::linf) {
      for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += step * sign(g[j]);
    } else {
      const double gn = norm(g, Norm::l2);
      if (gn > 0.0) {
        for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += step * g[j] / gn;
      }
    }
    project(adv, x, spec.eps, spec.norm);
  }
  if (stop_on_flip) *flipped = nn::predict(model, adv) != y;
  return adv;
}

}  // namespace

Vector pgd(const nn::ModelState& model, std::span<const double> x, std::size_t y, const AttackSpec& spec) {
  if (spec.kind != AttackKind::pgd) throw InputError("pgd called with a non-pgd attack spec");
  return run_pgd(model, x, y, spec, false, nullptr);
}

Vector perturb(const nn::ModelState& model, std::span<const double> x, std::size_t y, const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::none: return Vector(x.begin(), x.end());
    case AttackKind::fgsm: return refine::fgsm(model, x, y, spec.eps);
    case AttackKind::pgd: return pgd(model, x, y, spec);
  }
  throw InputError("unknown attack kind");
}

EvalResult eval(const nn::ModelState& model, const data::DatasetSplit& split, const AttackSpec& spec) {
  spec.validate();
  if (split.d != model.input_dim()) throw InputError("eval: split dimension does not match model");
  std::vector<std::uint8_t> hit(split.n, 0);
  parallel_for(split.n, [&](std::size_t i) {
    AttackSpec s = spec;
    s.seed = mix_seed(spec.seed, i);
    const Vector adv = perturb(model, split.row(i), split.labels[i], s);
    hit[i] = nn::predict(model, adv) == split.labels[i] ? 1 : 0;
  });
  EvalResult r;
  r.n = split.n;
  r.per_class_correct.assign(split.num_classes, 0);
  r.per_class_total.assign(split.num_classes, 0);
  for (std::size_t i = 0; i < split.n; ++i) {
    ++r.per_class_total[split.labels[i]];
    if (hit[i]) {
      ++r.correct;
      ++r.per_class_correct[split.labels[i]];
    }
  }
  r.accuracy = split.n ? static_cast<double>(r.correct) / static_cast<double>(split.n) : 0.0;
  return r;
}

double CorruptionGrid::kind_accuracy(data::CorruptionKind kind) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& c : cells) {
    if (c.kind == kind) {
      sum += c.result.accuracy;
      ++count;
    }
  }
  if (count == 0) throw InputError("corruption kind not present in grid");
  return sum / static_cast<double>(count);
}

std::vector<double> CorruptionGrid::kind_rows() const {
  std::vector<double> rows;
  for (auto k : kinds) rows.push_back(kind_accuracy(k));
  return rows;
}

double CorruptionGrid::mean() const {
  const auto rows = kind_rows();
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (double r : rows) s += r;
  return s / static_cast<double>(rows.size());
}

double CorruptionGrid::stddev() const {
  const auto rows = kind_rows();
  if (rows.empty()) return 0.0;
  const double m = mean();
  double s = 0.0;
  for (double r : rows) s += (r - m) * (r - m);
  return std::sqrt(s / static_cast<double>(rows.size()));
}

CorruptionGrid eval_corruption_grid(const nn::ModelState& model, const data::DatasetSplit& test,
                                    std::span<const data::CorruptionKind> kinds, std::span<const int> severities,
                                    const AttackSpec& spec, std::uint64_t corruption_seed) {
  CorruptionGrid grid;
  grid.kinds.assign(kinds.begin(), kinds.end());
  grid.severities.assign(severities.begin(), severities.end());
  grid.attack = spec;
  for (auto kind : kinds) {
    const std::uint64_t kind_seed = derive_seed(corruption_seed, to_string(kind));
    for (int sev : severities) {
      const auto corrupted = data::corrupt(test, {kind, sev}, mix_seed(kind_seed, static_cast<std::uint64_t>(sev)));
      grid.cells.push_back({kind, sev, eval(model, corrupted, spec)});
    }
  }
  return grid;
}

std::optional<double> min_perturbation_search(const nn::ModelState& model, std::span<const double> x, std::size_t y,
                                              const SearchConfig& cfg) {
  if (!(cfg.resolution > 0.0) || !(cfg.eps_max > 0.0)) throw InputError("search needs positive resolution and eps_max");
  if (nn::predict(model, x) != y) return 0.0;
  auto success = [&](double eps) {
    for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.restarts); ++r) {
      AttackSpec spec{AttackKind::pgd, eps, cfg.steps, 0.0, r > 0, mix_seed(cfg.seed, r), cfg.norm};
      bool flipped = false;
      run_pgd(model, x, y, spec, true, &flipped);
      if (flipped) return true;
    }
    return false;
  };
  if (!success(cfg.eps_max)) return std::nullopt;
  double lo = 0.0, hi = cfg.eps_max;
  while (hi - lo > cfg.resolution) {
    const double mid = 0.5 * (lo + hi);
    if (success(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace attrguard::attacks
