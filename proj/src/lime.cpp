// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/lime.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "attrguard/errors.hpp"

namespace attrguard::lime {

void LimeConfig::validate(std::size_t d) const {
  if (group_size == 0) throw InputError("lime group_size must be >= 1");
  if (!(kernel_width > 0.0)) throw InputError("lime kernel width must be positive");
  if (!(ridge >= 0.0)) throw InputError("lime ridge must be non-negative");
  if (baseline.size() != d) {
    throw InputError("lime baseline has length " + std::to_string(baseline.size()) + ", expected " + std::to_string(d));
  }
  if (n_samples < num_groups(d) + 2) {
    throw InputError("lime needs at least groups + 2 = " + std::to_string(num_groups(d) + 2) + " samples");
  }
}

LimeConfig LimeConfig::defaults_for(const data::DatasetSplit& train, std::uint64_t seed, std::size_t group_size) {
  LimeConfig cfg;
  cfg.group_size = group_size;
  cfg.seed = seed;
  cfg.baseline = train.feature_means();
  cfg.n_samples = std::max<std::size_t>(200, 4 * cfg.num_groups(train.d));
  const Vector stds = train.feature_stds();
  double ms = 0.0;
  for (double s : stds) ms += s * s;
  const double rms = std::sqrt(ms / static_cast<double>(stds.size()));
  cfg.kernel_width = 0.75 * std::sqrt(static_cast<double>(train.d)) * (rms > 0.0 ? rms : 1.0);
  return cfg;
}

Vector apply_group_mask(std::span<const double> x, const Mask& mask, std::span<const double> baseline,
                        std::size_t group_size) {
  Vector z(x.begin(), x.end());
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (!mask[j / group_size]) z[j] = baseline[j];
  }
  return z;
}

std::vector<Perturbation> sample_perturbations(std::span<const double> x, const LimeConfig& cfg) {
  cfg.validate(x.size());
  const std::size_t groups = cfg.num_groups(x.size());
  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution keep(0.5);
  std::vector<Perturbation> out;
  out.reserve(cfg.n_samples);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    Mask m(groups, 1);
    if (s > 0) {
      for (auto& b : m) b = keep(rng) ? 1 : 0;
    }
    Vector z = apply_group_mask(x, m, cfg.baseline, cfg.group_size);
    out.push_back({std::move(m), std::move(z)});
  }
  return out;
}

double kernel_weight(std::span<const double> x, std::span<const double> z, double sigma) {
  if (!(sigma > 0.0)) throw InputError("kernel width must be positive");
  if (x.size() != z.size()) throw InputError("kernel_weight length mismatch");
  double d2 = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) d2 += (x[j] - z[j]) * (x[j] - z[j]);
  return std::exp(-d2 / (sigma * sigma));
}

Attribution fit_surrogate(std::span<const Perturbation> samples, std::span<const double> targets,
                          std::span<const double> weights, double ridge, std::size_t group_size) {
  if (samples.empty() || samples.size() != targets.size() || samples.size() != weights.size()) {
    throw InputError("fit_surrogate needs matching, non-empty samples, targets and weights");
  }
  if (!(ridge >= 0.0)) throw InputError("ridge must be non-negative");
  const std::size_t n = samples.size();
  const std::size_t groups = samples.front().mask.size();
  const std::size_t d = samples.front().z.size();
  const std::size_t p = groups + 1;

  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].mask.size() != groups) throw InputError("inconsistent mask lengths");
    X(i, 0) = 1.0;
    for (std::size_t g = 0; g < groups; ++g) X(i, g + 1) = samples[i].mask[g] ? 1.0 : 0.0;
    y(i) = targets[i];
    w(i) = weights[i];
  }

  const Eigen::MatrixXd Xw = X.array().colwise() * w.array();
  Eigen::MatrixXd A = X.transpose() * Xw;
  const Eigen::VectorXd b = Xw.transpose() * y;
  for (std::size_t g = 1; g < p; ++g) A(g, g) += ridge;

  Eigen::VectorXd coef;
  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < static_cast<Eigen::Index>(p)) {
      throw DegenerateDesignError("surrogate design has rank " + std::to_string(qr.rank()) + " < " +
                                  std::to_string(p) + " and ridge is 0");
    }
    coef = qr.solve(b);
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) throw DegenerateDesignError("surrogate normal matrix factorization failed");
    coef = ldlt.solve(b);
  }

  Attribution a;
  a.beta0 = coef(0);
  a.group_beta.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) a.group_beta[g] = coef(static_cast<Eigen::Index>(g + 1));
  a.beta.resize(d);
  for (std::size_t j = 0; j < d; ++j) a.beta[j] = a.group_beta[j / group_size];
  if (!all_finite(a.beta) || !std::isfinite(a.beta0)) throw NumericError("surrogate fit produced non-finite coefficients");

  const double wsum = w.sum();
  const double ybar = w.dot(y) / wsum;
  const Eigen::VectorXd resid = y - X * coef;
  const double ss_res = (w.array() * resid.array().square()).sum();
  const double ss_tot = (w.array() * (y.array() - ybar).square()).sum();
  const bool constant_target = (y.array() == y(0)).all();
  a.r2 = constant_target || !(ss_tot > 0.0) ? 0.0 : 1.0 - ss_res / ss_tot;
  return a;
}

Attribution explain(const nn::ModelState& model, std::span<const double> x, const LimeConfig& cfg) {
  if (x.size() != model.input_dim()) throw InputError("explain: input length does not match model");
  const std::size_t target = nn::predict(model, x);
  const auto samples = sample_perturbations(x, cfg);
  Vector targets(samples.size()), weights(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    targets[i] = nn::forward(model, samples[i].z)[target];
    weights[i] = kernel_weight(x, samples[i].z, cfg.kernel_width);
  }
  return fit_surrogate(samples, targets, weights, cfg.ridge, cfg.group_size);
}

Vector attribution_variance(const nn::ModelState& model, std::span<const double> x, std::size_t repeats,
                            const LimeConfig& cfg) {
  if (repeats < 2) throw InputError("attribution_variance needs at least 2 repeats");
  const std::size_t d = x.size();
  std::vector<Vector> runs;
  runs.reserve(repeats);
  for (std::size_t r = 1; r <= repeats; ++r) {
    LimeConfig c = cfg;
    c.seed = cfg.seed + r;
    runs.push_back(explain(model, x, c).beta);
  }
  Vector mean(d, 0.0), var(d, 0.0);
  for (const auto& b : runs) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += b[j];
  }
  for (auto& m : mean) m /= static_cast<double>(repeats);
  for (const auto& b : runs) {
    for (std::size_t j = 0; j < d; ++j) var[j] += (b[j] - mean[j]) * (b[j] - mean[j]);
  }
  for (auto& v : var) v /= static_cast<double>(repeats);
  return var;
}

}  // namespace attrguard::lime
