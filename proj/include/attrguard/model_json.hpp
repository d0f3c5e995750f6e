// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include "attrguard/model.hpp"

namespace attrguard::nn {

/// {"layers":[{"rows","cols","weights","bias"}...],"input_dim","num_classes"}, weights row-major.
nlohmann::json model_to_json(const ModelState& model);
ModelState model_from_json(const nlohmann::json& j);

}  // namespace attrguard::nn
