// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/norms.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attrguard/errors.hpp"

namespace attrguard {

double norm(std::span<const double> v, Norm p) {
  double acc = 0.0;
  switch (p) {
    case Norm::l1:
      for (double x : v) acc += std::abs(x);
      return acc;
    case Norm::l2:
      for (double x : v) acc += x * x;
      return std::sqrt(acc);
    case Norm::linf:
      for (double x : v) acc = std::max(acc, std::abs(x));
      return acc;
  }
  return acc;
}

std::string_view to_string(Norm p) {
  switch (p) {
    case Norm::l1: return "1";
    case Norm::l2: return "2";
    case Norm::linf: return "inf";
  }
  return "?";
}

Norm parse_norm(std::string_view s) {
  if (s == "1" || s == "l1") return Norm::l1;
  if (s == "2" || s == "l2") return Norm::l2;
  if (s == "inf" || s == "linf") return Norm::linf;
  throw InputError("unknown norm '" + std::string(s) + "', expected 1, 2 or inf");
}

}  // namespace attrguard
