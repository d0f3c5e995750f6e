// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/fgsm.hpp"

#include "attrguard/errors.hpp"

namespace attrguard::refine {

Vector fgsm(const nn::ModelState& model, std::span<const double> x, std::size_t y, double eps,
            const data::DomainBox& box) {
  if (!(eps >= 0.0)) throw InputError("fgsm budget must be non-negative");
  Vector out(x.begin(), x.end());
  if (eps == 0.0) return out;
  const Vector g = nn::backward(model, x, y).input_grad;
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double s = g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);
    out[j] = box.clamp(out[j] + eps * s);
  }
  return out;
}

}  // namespace attrguard::refine
