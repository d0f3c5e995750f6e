// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "attrguard/errors.hpp"

namespace attrguard {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw InputError("tensor shape must have at least one axis");
  for (auto s : shape) {
    if (s == 0) throw InputError("tensor shape entries must be positive");
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw InputError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape product " + std::to_string(element_count(shape_)));
  }
}

bool Tensor::all_finite() const noexcept { return attrguard::all_finite(data_); }

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace attrguard
