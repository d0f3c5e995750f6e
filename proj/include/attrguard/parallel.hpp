// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace attrguard {

/// Process-wide worker cap; 0 means hardware concurrency. Never changes results.
void set_max_threads(std::size_t n) noexcept;
std::size_t max_threads() noexcept;

/// Runs body(i) for i in [0, n). Each index writes only its own output slot, so
/// results do not depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace attrguard
