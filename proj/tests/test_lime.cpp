// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "attrguard/errors.hpp"
#include "attrguard/lime.hpp"
#include "attrguard/model.hpp"
#include "oracles.hpp"

using namespace attrguard;
using namespace attrguard::lime;
using attrguard::nn::ModelState;

namespace {

LimeConfig small_cfg(std::size_t d, std::uint64_t seed, std::size_t n = 64) {
  LimeConfig c;
  c.n_samples = n;
  c.kernel_width = 2.0;
  c.baseline.assign(d, 0.0);
  c.ridge = 0.0;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("masks at the extremes") {
  const Vector x{1.5, -2.0, 0.25};
  const Vector base{0.1, 0.2, 0.3};
  CHECK(apply_group_mask(x, Mask{1, 1, 1}, base, 1) == x);
  CHECK(apply_group_mask(x, Mask{0, 0, 0}, base, 1) == base);
  CHECK(apply_group_mask(x, Mask{1, 0}, base, 2) == Vector{1.5, -2.0, 0.3});
}

TEST_CASE("perturbations are seeded and the first sample keeps everything") {
  const Vector x{1, 2, 3, 4};
  const auto cfg = small_cfg(4, 12);
  const auto a = sample_perturbations(x, cfg);
  const auto b = sample_perturbations(x, cfg);
  REQUIRE(a.size() == cfg.n_samples);
  CHECK(a.front().z == x);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mask == b[i].mask);
    CHECK(a[i].z == b[i].z);
    for (std::size_t j = 0; j < x.size(); ++j) CHECK(a[i].z[j] == (a[i].mask[j] ? x[j] : 0.0));
  }
}

TEST_CASE("kernel weight") {
  const Vector x{0.0, 0.0};
  CHECK(kernel_weight(x, x, 1.3) == 1.0);
  const Vector z{3.0, 4.0};
  CHECK(kernel_weight(x, z, 5.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(kernel_weight(x, z, 1e6) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(kernel_weight(x, z, 0.0), InputError);
}

TEST_CASE("surrogate recovers a mask-linear target and matches the least-squares oracle") {
  const Vector x{1.0, 1.0};
  const auto cfg = small_cfg(2, 4, 40);
  const auto samples = sample_perturbations(x, cfg);
  Vector y, w;
  std::vector<Vector> design;
  for (const auto& s : samples) {
    y.push_back(2.0 * s.mask[0] + 3.0 * s.mask[1]);
    w.push_back(kernel_weight(x, s.z, cfg.kernel_width));
    design.push_back({double(s.mask[0]), double(s.mask[1])});
  }
  const auto a = fit_surrogate(samples, y, w, 0.0, 1);
  const auto ref = oracle::weighted_least_squares(design, y, w);
  CHECK(std::abs(a.beta0) < 1e-8);
  CHECK(std::abs(a.beta[0] - 2.0) < 1e-8);
  CHECK(std::abs(a.beta[1] - 3.0) < 1e-8);
  CHECK(std::abs(a.beta0 - ref[0]) < 1e-8);
  CHECK(std::abs(a.beta[0] - ref[1]) < 1e-8);
  CHECK(std::abs(a.beta[1] - ref[2]) < 1e-8);
  CHECK(a.r2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant target gives zero coefficients and zero r2") {
  const Vector x{0.5, -0.5, 1.0};
  const auto cfg = small_cfg(3, 8);
  const auto samples = sample_perturbations(x, cfg);
  Vector y(samples.size(), 3.0), w;
  for (const auto& s : samples) w.push_back(kernel_weight(x, s.z, cfg.kernel_width));
  const auto a = fit_surrogate(samples, y, w, 0.0, 1);
  CHECK(a.beta0 == doctest::Approx(3.0).epsilon(1e-12));
  for (double b : a.beta) CHECK(std::abs(b) < 1e-10);
  CHECK(a.r2 == 0.0);
}

TEST_CASE("identical masks are a degenerate design unless ridge is positive") {
  const Vector x{1.0, 2.0};
  std::vector<Perturbation> samples(10, Perturbation{Mask{1, 1}, x});
  Vector y(10), w(10, 1.0);
  for (std::size_t i = 0; i < 10; ++i) y[i] = 0.1 * double(i);
  CHECK_THROWS_AS(fit_surrogate(samples, y, w, 0.0, 1), DegenerateDesignError);
  const auto a = fit_surrogate(samples, y, w, 1e-3, 1);
  for (double b : a.beta) CHECK(std::isfinite(b));
}

TEST_CASE("explain on models with known structure") {
  const std::size_t d = 6;
  ModelState zero = ModelState::initialize(d, std::vector<std::size_t>{5}, 2, 1);
  for (auto& L : zero.mutable_layers()) L.weight.fill(0.0);
  const Vector x{0.3, -1.2, 0.8, 2.0, -0.4, 1.1};
  auto cfg = small_cfg(d, 3, 80);
  cfg.ridge = 1e-6;
  for (double b : explain(zero, x, cfg).beta) CHECK(std::abs(b) < 1e-6);

  // f1 - f0 = 4 x3 with f0 = 0; x3 > 0 so class 1 is predicted.
  std::vector<Vector> rows{Vector(d, 0.0), Vector(d, 0.0)};
  rows[1][3] = 4.0;
  const ModelState lin = oracle::linear_model(rows, {0.0, 0.0});
  const auto a = explain(lin, x, cfg);
  for (std::size_t j = 0; j < d; ++j) {
    if (j != 3) CHECK(std::abs(a.beta[3]) > std::abs(a.beta[j]));
  }
  CHECK(a.beta[3] == doctest::Approx(4.0 * x[3]).epsilon(1e-6));
}

TEST_CASE("grouped attributions broadcast to members") {
  const std::size_t d = 6;
  std::vector<Vector> rows{Vector(d, 0.0), Vector{1, 1, 2, 2, 3, 3}};
  const ModelState lin = oracle::linear_model(rows, {0.0, 0.0});
  const Vector x(d, 1.0);
  auto cfg = small_cfg(d, 5, 40);
  cfg.group_size = 2;
  const auto a = explain(lin, x, cfg);
  REQUIRE(a.group_beta.size() == 3);
  CHECK(a.group_beta[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(a.group_beta[2] == doctest::Approx(6.0).epsilon(1e-8));
  CHECK(a.beta[4] == a.group_beta[2]);
  CHECK(a.beta[5] == a.group_beta[2]);
}

TEST_CASE("attribution variance") {
  const std::size_t d = 4;
  ModelState zero = ModelState::initialize(d, std::vector<std::size_t>{3}, 2, 1);
  for (auto& L : zero.mutable_layers()) L.weight.fill(0.0);
  const Vector x{1, 2, 3, -1};
  auto cfg = small_cfg(d, 2, 30);
  cfg.ridge = 1e-6;
  for (double v : attribution_variance(zero, x, 5, cfg)) CHECK(v < 1e-8);
  CHECK_THROWS_AS(attribution_variance(zero, x, 1, cfg), InputError);

  // Population variance over the reseeded runs, recomputed by hand.
  const ModelState m = ModelState::initialize(d, std::vector<std::size_t>{6}, 2, 9);
  const Vector var = attribution_variance(m, x, 3, cfg);
  std::vector<Vector> runs;
  for (std::uint64_t r = 1; r <= 3; ++r) {
    auto c = cfg;
    c.seed = cfg.seed + r;
    runs.push_back(explain(m, x, c).beta);
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double mu = (runs[0][j] + runs[1][j] + runs[2][j]) / 3.0;
    double v = 0.0;
    for (const auto& b : runs) v += (b[j] - mu) * (b[j] - mu);
    CHECK(var[j] == doctest::Approx(v / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("config validation and data-derived defaults") {
  auto cfg = small_cfg(3, 0, 4);
  CHECK_THROWS_AS(cfg.validate(3), InputError);
  cfg.n_samples = 10;
  cfg.baseline = {0.0};
  CHECK_THROWS_AS(cfg.validate(3), InputError);

  data::DatasetSplit s{2, 2, 2, {1.0, 0.0, 3.0, 0.0}, {0, 1}};
  const auto def = LimeConfig::defaults_for(s, 7);
  CHECK(def.baseline == Vector{2.0, 0.0});
  CHECK(def.n_samples == 200);
  CHECK(def.kernel_width > 0.0);
}
