// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "attrguard/tensor.hpp"

namespace attrguard::nn {

/// y = W x + b with W stored [rows = out, cols = in].
struct AffineLayer {
  Tensor weight;
  Tensor bias;

  std::size_t rows() const { return weight.dim(0); }
  std::size_t cols() const { return weight.dim(1); }

  friend bool operator==(const AffineLayer&, const AffineLayer&) = default;
};

/// Feedforward classifier: affine layers with an elementwise ReLU between
/// consecutive layers (none after the last). Outputs K logits.
class ModelState {
 public:
  explicit ModelState(std::vector<AffineLayer> layers);

  /// Glorot-uniform weights in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases.
  static ModelState initialize(std::size_t input_dim, std::span<const std::size_t> hidden,
                               std::size_t num_classes, std::uint64_t seed);

  std::size_t input_dim() const { return layers_.front().cols(); }
  std::size_t num_classes() const { return layers_.back().rows(); }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_parameters() const;

  const std::vector<AffineLayer>& layers() const { return layers_; }
  std::vector<AffineLayer>& mutable_layers() { return layers_; }

  friend bool operator==(const ModelState&, const ModelState&) = default;

 private:
  std::vector<AffineLayer> layers_;
};

struct GradientBundle {
  std::vector<AffineLayer> param_grads;
  Vector input_grad;

  static GradientBundle zeros_like(const ModelState& model);
  void add_scaled(const GradientBundle& other, double scale);
  void scale(double s);
  bool all_finite() const;
};

/// Activations retained for reverse passes. pre[l] is layer l's affine output;
/// post[l] is its input (post[0] == x).
struct ForwardTrace {
  std::vector<Vector> pre;
  std::vector<Vector> post;
  const Vector& logits() const { return pre.back(); }
};

ForwardTrace trace_forward(const ModelState& model, std::span<const double> x);
Vector forward(const ModelState& model, std::span<const double> x);
std::size_t predict(const ModelState& model, std::span<const double> x);
std::size_t argmax(std::span<const double> v);

Vector softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> logits, std::size_t label);

/// Pulls a cotangent on the logits back to parameters and input.
GradientBundle backprop(const ModelState& model, const ForwardTrace& trace,
                        std::span<const double> logit_cotangent);

/// Gradients of cross_entropy(forward(model, x), label). ReLU'(0) is taken as 0.
GradientBundle backward(const ModelState& model, std::span<const double> x, std::size_t label);

/// d f_k / d x.
Vector logit_gradient(const ModelState& model, std::span<const double> x, std::size_t k);

/// All K input gradients at once, row k = d f_k / d x.
std::vector<Vector> logit_jacobian(const ModelState& model, std::span<const double> x);

ModelState sgd_step(ModelState model, const GradientBundle& grads, double lr);

void save_model(const ModelState& model, const std::filesystem::path& path);
ModelState load_model(const std::filesystem::path& path);

}  // namespace attrguard::nn
