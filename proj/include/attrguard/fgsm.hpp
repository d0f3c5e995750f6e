// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "attrguard/datagen.hpp"
#include "attrguard/model.hpp"

namespace attrguard::refine {

/// clamp(x + eps * sign(grad_x CE(f(x), y)), box), with sign(0) = 0.
Vector fgsm(const nn::ModelState& model, std::span<const double> x, std::size_t y, double eps,
            const data::DomainBox& box = data::kDomain);

}  // namespace attrguard::refine
