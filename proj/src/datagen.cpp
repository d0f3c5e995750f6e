// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "attrguard/errors.hpp"
#include "attrguard/seed.hpp"

namespace attrguard::data {

void DatasetSplit::validate(const DomainBox& box) const {
  if (n == 0 || d == 0) throw InputError("dataset split must have n >= 1 and d >= 1");
  if (inputs.size() != n * d) throw InputError("dataset inputs size does not equal n * d");
  if (labels.size() != n) throw InputError("dataset has " + std::to_string(labels.size()) + " labels for n = " + std::to_string(n));
  for (auto y : labels) {
    if (y >= num_classes) throw InputError("label " + std::to_string(y) + " >= K = " + std::to_string(num_classes));
  }
  for (double v : inputs) {
    if (!std::isfinite(v) || v < box.lo || v > box.hi) throw InputError("dataset input outside the domain box");
  }
}

DatasetSplit DatasetSplit::subset(std::span<const std::size_t> indices) const {
  DatasetSplit out{indices.size(), d, num_classes, {}, {}};
  out.inputs.reserve(indices.size() * d);
  for (auto i : indices) {
    if (i >= n) throw InputError("subset index " + std::to_string(i) + " out of range");
    const auto r = row(i);
    out.inputs.insert(out.inputs.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

DatasetSplit DatasetSplit::head(std::size_t count) const {
  std::vector<std::size_t> idx(std::min(count, n));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

Vector DatasetSplit::feature_means() const {
  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = row(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  return mean;
}

Vector DatasetSplit::feature_stds() const {
  const Vector mean = feature_means();
  Vector var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = row(i);
    for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
  }
  for (auto& v : var) v = std::sqrt(v / static_cast<double>(n));
  return var;
}

void PlantedSpec::validate() const {
  if (d == 0) throw InputError("planted spec needs d >= 1");
  if (num_classes < 2) throw InputError("planted spec needs K >= 2");
  std::unordered_set<std::size_t> seen;
  for (auto i : core_indices) {
    if (i >= d) throw InputError("core index " + std::to_string(i) + " >= d");
    if (!seen.insert(i).second) throw InputError("duplicate core index " + std::to_string(i));
  }
  for (auto i : spurious_indices) {
    if (i >= d) throw InputError("spurious index " + std::to_string(i) + " >= d");
    if (!seen.insert(i).second) throw InputError("spurious index " + std::to_string(i) + " overlaps another signal index");
  }
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(train_correlation) || !in_unit(test_correlation)) throw InputError("correlations must lie in [0, 1]");
  if (!(signal_scale >= 0.0) || !(noise_std >= 0.0)) throw InputError("signal_scale and noise_std must be non-negative");
}

int class_code(std::size_t num_classes, std::size_t label, std::size_t pos) {
  if (num_classes == 2) return label == 1 ? 1 : -1;
  return pos % num_classes == label ? 1 : -1;
}

DatasetSplit sample_planted(const PlantedSpec& spec, std::size_t n, double correlation, std::uint64_t seed) {
  spec.validate();
  if (n < spec.num_classes) throw InputError("need at least K rows");
  if (correlation < 0.0 || correlation > 1.0) throw InputError("correlation must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  DatasetSplit split{n, spec.d, spec.num_classes, Vector(n * spec.d), std::vector<std::size_t>(n)};

  // Balanced labels, shuffled.
  for (std::size_t i = 0; i < n; ++i) split.labels[i] = i % spec.num_classes;
  std::shuffle(split.labels.begin(), split.labels.end(), rng);

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = split.row(i);
    for (auto& v : r) v = spec.noise_std * noise(rng);
    for (std::size_t p = 0; p < spec.core_indices.size(); ++p) {
      r[spec.core_indices[p]] += class_code(spec.num_classes, split.labels[i], p);
    }
  }

  const auto agree = static_cast<std::size_t>(std::ceil(correlation * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  for (std::size_t p = 0; p < spec.spurious_indices.size(); ++p) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t j = spec.spurious_indices[p];
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t i = order[t];
      const double sign = class_code(spec.num_classes, split.labels[i], p);
      split.row(i)[j] = (t < agree ? 1.0 : -1.0) * spec.signal_scale * sign;
    }
  }
  for (auto& v : split.inputs) v = kDomain.clamp(v);
  return split;
}

PlantedData make_planted(const PlantedSpec& spec, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  return {sample_planted(spec, n_train, spec.train_correlation, derive_seed(seed, "planted/train")),
          sample_planted(spec, n_test, spec.test_correlation, derive_seed(seed, "planted/test")), spec};
}

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::shot_noise: return "shot_noise";
    case CorruptionKind::impulse_noise: return "impulse_noise";
    case CorruptionKind::box_blur: return "box_blur";
    case CorruptionKind::fog_gradient: return "fog_gradient";
  }
  return "unknown";
}

CorruptionKind parse_corruption(std::string_view name) {
  for (auto k : kAllCorruptions) {
    if (to_string(k) == name) return k;
  }
  throw InputError("unknown corruption kind '" + std::string(name) + "'");
}

DatasetSplit apply_gaussian_noise(const DatasetSplit& split, double stddev, std::uint64_t seed) {
  DatasetSplit out = split;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out.inputs) v = kDomain.clamp(v + dist(rng));
  return out;
}

DatasetSplit apply_shot_noise(const DatasetSplit& split, double rate, std::uint64_t seed) {
  if (!(rate > 0.0)) throw InputError("shot noise rate must be positive");
  DatasetSplit out = split;
  std::mt19937_64 rng(seed);
  for (auto& v : out.inputs) {
    const double unit = (kDomain.clamp(v) - kDomain.lo) / kDomain.width();
    std::poisson_distribution<long> dist(unit * rate);
    const double noisy = static_cast<double>(dist(rng)) / rate;
    v = kDomain.clamp(kDomain.lo + noisy * kDomain.width());
  }
  return out;
}

DatasetSplit apply_impulse_noise(const DatasetSplit& split, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw InputError("impulse fraction must lie in [0, 1]");
  DatasetSplit out = split;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : out.inputs) {
    const double hit = u(rng);
    const double side = u(rng);
    if (hit < fraction) v = side < 0.5 ? kDomain.lo : kDomain.hi;
  }
  return out;
}

DatasetSplit apply_box_blur(const DatasetSplit& split, int passes) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(split.d))));
  if (side * side != split.d) {
    throw InputError("box blur needs a square feature count, got d = " + std::to_string(split.d));
  }
  DatasetSplit out = split;
  Vector buf(split.d);
  for (std::size_t i = 0; i < out.n; ++i) {
    auto r = out.row(i);
    for (int p = 0; p < passes; ++p) {
      for (std::size_t gy = 0; gy < side; ++gy) {
        for (std::size_t gx = 0; gx < side; ++gx) {
          double sum = 0.0;
          int count = 0;
          for (std::size_t yy = gy == 0 ? 0 : gy - 1; yy <= std::min(side - 1, gy + 1); ++yy) {
            for (std::size_t xx = gx == 0 ? 0 : gx - 1; xx <= std::min(side - 1, gx + 1); ++xx) {
              sum += r[yy * side + xx];
              ++count;
            }
          }
          buf[gy * side + gx] = sum / count;
        }
      }
      std::copy(buf.begin(), buf.end(), r.begin());
    }
    for (auto& v : r) v = kDomain.clamp(v);
  }
  return out;
}

DatasetSplit apply_fog_gradient(const DatasetSplit& split, double amplitude) {
  DatasetSplit out = split;
  const double denom = split.d > 1 ? static_cast<double>(split.d - 1) : 1.0;
  for (std::size_t i = 0; i < out.n; ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < out.d; ++j) r[j] = kDomain.clamp(r[j] + amplitude * static_cast<double>(j) / denom);
  }
  return out;
}

DatasetSplit corrupt(const DatasetSplit& split, Corruption c, std::uint64_t seed) {
  if (c.severity < 1 || c.severity > 5) throw InputError("severity must be in 1..5, got " + std::to_string(c.severity));
  const auto s = static_cast<std::size_t>(c.severity - 1);
  switch (c.kind) {
    case CorruptionKind::gaussian_noise: return apply_gaussian_noise(split, kGaussianStd[s], seed);
    case CorruptionKind::shot_noise: return apply_shot_noise(split, kShotRate[s], seed);
    case CorruptionKind::impulse_noise: return apply_impulse_noise(split, kImpulseFraction[s], seed);
    case CorruptionKind::box_blur: return apply_box_blur(split, kBlurPasses[s]);
    case CorruptionKind::fog_gradient: return apply_fog_gradient(split, kFogAmplitude[s]);
  }
  throw InputError("unknown corruption kind");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void save_split(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << split.n << ' ' << split.d << ' ' << split.num_classes << '\n';
  for (std::size_t i = 0; i < split.n; ++i) {
    for (double v : split.row(i)) out << format_double(v) << ' ';
    out << split.labels[i] << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace {

template <typename T>
T parse_token(const std::string& tok, const std::filesystem::path& path, std::size_t line) {
  T value{};
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": cannot parse '" + tok + "'");
  }
  return value;
}

}  // namespace

DatasetSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file, missing 'n d K' header");
  std::istringstream header(line);
  std::string tn, td, tk, extra;
  if (!(header >> tn >> td >> tk) || (header >> extra)) {
    throw FormatError(path.string() + ":1: header must be 'n d K'");
  }
  DatasetSplit split;
  split.n = parse_token<std::size_t>(tn, path, 1);
  split.d = parse_token<std::size_t>(td, path, 1);
  split.num_classes = parse_token<std::size_t>(tk, path, 1);
  if (split.n == 0 || split.d == 0 || split.num_classes < 2) throw FormatError(path.string() + ":1: invalid header values");
  split.inputs.reserve(split.n * split.d);
  split.labels.reserve(split.n);
  for (std::size_t i = 0; i < split.n; ++i) {
    const std::size_t lineno = i + 2;
    if (!std::getline(in, line)) {
      throw FormatError(path.string() + ": truncated payload, expected " + std::to_string(split.n) + " rows, got " +
                        std::to_string(i));
    }
    std::istringstream row(line);
    std::vector<std::string> toks;
    for (std::string t; row >> t;) toks.push_back(t);
    if (toks.size() != split.d + 1) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": truncated payload, expected " +
                        std::to_string(split.d + 1) + " fields, got " + std::to_string(toks.size()));
    }
    for (std::size_t j = 0; j < split.d; ++j) split.inputs.push_back(parse_token<double>(toks[j], path, lineno));
    const auto y = parse_token<std::size_t>(toks.back(), path, lineno);
    if (y >= split.num_classes) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": label out of range");
    split.labels.push_back(y);
  }
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) throw FormatError(path.string() + ": trailing data after payload");
  }
  return split;
}

}  // namespace attrguard::data
