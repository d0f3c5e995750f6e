// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string_view>

namespace attrguard {

enum class Norm { l1, l2, linf };

double norm(std::span<const double> v, Norm p);

/// Hoelder dual: 1 <-> inf, 2 <-> 2.
constexpr Norm dual(Norm p) {
  switch (p) {
    case Norm::l1: return Norm::linf;
    case Norm::l2: return Norm::l2;
    case Norm::linf: return Norm::l1;
  }
  return Norm::l2;
}

std::string_view to_string(Norm p);  // "1", "2", "inf"
Norm parse_norm(std::string_view s);

}  // namespace attrguard
