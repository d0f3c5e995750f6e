// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attrguard/tensor.hpp"

namespace attrguard::data {

/// Valid inputs live in [lo, hi]^d. Attacks and corruptions clamp to this box.
struct DomainBox {
  double lo = -4.0;
  double hi = 4.0;
  double width() const { return hi - lo; }
  double clamp(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
};

inline constexpr DomainBox kDomain{};

struct DatasetSplit {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t num_classes = 0;
  Vector inputs;  // row-major [n x d]
  std::vector<std::size_t> labels;

  std::span<const double> row(std::size_t i) const { return std::span<const double>(inputs).subspan(i * d, d); }
  std::span<double> row(std::size_t i) { return std::span<double>(inputs).subspan(i * d, d); }

  /// Throws InputError when shapes, labels or the domain box are violated.
  void validate(const DomainBox& box = kDomain) const;
  DatasetSplit subset(std::span<const std::size_t> indices) const;
  DatasetSplit head(std::size_t count) const;
  Vector feature_means() const;
  Vector feature_stds() const;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct PlantedSpec {
  std::size_t d = 64;
  std::size_t num_classes = 2;
  std::vector<std::size_t> core_indices{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<std::size_t> spurious_indices{19, 28, 37, 46, 55};
  double train_correlation = 0.95;
  double test_correlation = 0.5;
  double signal_scale = 2.0;
  double noise_std = 1.0;

  void validate() const;
};

/// Sign a class carries on the pos-th core or spurious feature. Binary: class 1 -> +1,
/// class 0 -> -1 on every feature. K > 2: +1 where pos % K == class, else -1.
int class_code(std::size_t num_classes, std::size_t label, std::size_t pos);

/// Draws n rows whose spurious features agree with class_code on exactly
/// ceil(correlation * n) rows (independently permuted per spurious feature).
DatasetSplit sample_planted(const PlantedSpec& spec, std::size_t n, double correlation, std::uint64_t seed);

struct PlantedData {
  DatasetSplit train;
  DatasetSplit test;
  PlantedSpec spec;
};

PlantedData make_planted(const PlantedSpec& spec, std::size_t n_train, std::size_t n_test, std::uint64_t seed);

enum class CorruptionKind { gaussian_noise, shot_noise, impulse_noise, box_blur, fog_gradient };

inline constexpr CorruptionKind kAllCorruptions[] = {CorruptionKind::gaussian_noise, CorruptionKind::shot_noise,
                                                     CorruptionKind::impulse_noise, CorruptionKind::box_blur,
                                                     CorruptionKind::fog_gradient};

std::string_view to_string(CorruptionKind kind);
CorruptionKind parse_corruption(std::string_view name);

struct Corruption {
  CorruptionKind kind;
  int severity;  // 1..5
};

// Severity tables (index = severity - 1).
//   gaussian_noise: additive N(0, s^2), s in raw feature units
//   shot_noise:     Poisson photon count on the box-normalized value, rate per unit
//   impulse_noise:  fraction of elements replaced by lo or hi
//   box_blur:       number of 3x3 box-filter passes on the sqrt(d) x sqrt(d) grid
//   fog_gradient:   amplitude of an additive ramp over the flat feature index
inline constexpr double kGaussianStd[5] = {0.04, 0.06, 0.08, 0.10, 0.12};
inline constexpr double kShotRate[5] = {500.0, 250.0, 100.0, 75.0, 50.0};
inline constexpr double kImpulseFraction[5] = {0.01, 0.02, 0.03, 0.05, 0.07};
inline constexpr int kBlurPasses[5] = {1, 2, 3, 4, 5};
inline constexpr double kFogAmplitude[5] = {0.5, 1.0, 1.5, 2.0, 2.5};

DatasetSplit apply_gaussian_noise(const DatasetSplit& split, double stddev, std::uint64_t seed);
DatasetSplit apply_shot_noise(const DatasetSplit& split, double rate, std::uint64_t seed);
DatasetSplit apply_impulse_noise(const DatasetSplit& split, double fraction, std::uint64_t seed);
DatasetSplit apply_box_blur(const DatasetSplit& split, int passes);
DatasetSplit apply_fog_gradient(const DatasetSplit& split, double amplitude);

DatasetSplit corrupt(const DatasetSplit& split, Corruption corruption, std::uint64_t seed);

/// Text format: header "n d K", then n lines of d floats and a trailing integer label.
void save_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

}  // namespace attrguard::data
