// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/model_json.hpp"

#include <string>

#include "attrguard/errors.hpp"

namespace attrguard::nn {

nlohmann::json model_to_json(const ModelState& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers()) {
    layers.push_back({{"rows", l.rows()}, {"cols", l.cols()}, {"weights", l.weight.data()}, {"bias", l.bias.data()}});
  }
  return {{"layers", std::move(layers)}, {"input_dim", model.input_dim()}, {"num_classes", model.num_classes()}};
}

ModelState model_from_json(const nlohmann::json& j) {
  try {
    std::vector<AffineLayer> layers;
    for (const auto& l : j.at("layers")) {
      const auto rows = l.at("rows").get<std::size_t>();
      const auto cols = l.at("cols").get<std::size_t>();
      auto weights = l.at("weights").get<std::vector<double>>();
      auto bias = l.at("bias").get<std::vector<double>>();
      layers.push_back({Tensor({rows, cols}, std::move(weights)), Tensor({rows}, std::move(bias))});
    }
    ModelState model(std::move(layers));
    if (model.input_dim() != j.at("input_dim").get<std::size_t>() ||
        model.num_classes() != j.at("num_classes").get<std::size_t>()) {
      throw FormatError("model header dimensions disagree with layer shapes");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model json: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(std::string("malformed model json: ") + e.what());
  }
}

}  // namespace attrguard::nn
