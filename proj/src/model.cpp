// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "attrguard/errors.hpp"
#include "attrguard/model_json.hpp"

namespace attrguard::nn {

namespace {

void check_finite(std::span<const double> v, std::size_t layer, const char* what) {
  if (!all_finite(v)) {
    throw NumericError(std::string("non-finite ") + what + " at layer " + std::to_string(layer));
  }
}

}  // namespace

ModelState::ModelState(std::vector<AffineLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InputError("model needs at least one affine layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.bias.dim(0) != layer.rows()) {
      throw InputError("layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
    }
    if (l > 0 && layer.cols() != layers_[l - 1].rows()) {
      throw InputError("layer " + std::to_string(l) + " input width " + std::to_string(layer.cols()) +
                       " does not match previous output " + std::to_string(layers_[l - 1].rows()));
    }
  }
  if (num_classes() < 2) throw InputError("classifier needs at least two classes");
}

ModelState ModelState::initialize(std::size_t input_dim, std::span<const std::size_t> hidden,
                                  std::size_t num_classes, std::uint64_t seed) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(num_classes);

  std::mt19937_64 rng(seed);
  std::vector<AffineLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    AffineLayer layer{Tensor({fan_out, fan_in}), Tensor({fan_out})};
    for (auto& w : layer.weight.values()) w = dist(rng);
    layers.push_back(std::move(layer));
  }
  return ModelState(std::move(layers));
}

std::size_t ModelState::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

GradientBundle GradientBundle::zeros_like(const ModelState& model) {
  GradientBundle g;
  for (const auto& l : model.layers()) {
    g.param_grads.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
  }
  g.input_grad.assign(model.input_dim(), 0.0);
  return g;
}

void GradientBundle::add_scaled(const GradientBundle& other, double scale) {
  for (std::size_t l = 0; l < param_grads.size(); ++l) {
    auto w = param_grads[l].weight.values();
    auto ow = other.param_grads[l].weight.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * ow[i];
    auto b = param_grads[l].bias.values();
    auto ob = other.param_grads[l].bias.values();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * ob[i];
  }
  for (std::size_t i = 0; i < input_grad.size(); ++i) input_grad[i] += scale * other.input_grad[i];
}

void GradientBundle::scale(double s) {
  for (auto& l : param_grads) {
    for (auto& w : l.weight.values()) w *= s;
    for (auto& b : l.bias.values()) b *= s;
  }
  for (auto& v : input_grad) v *= s;
}

bool GradientBundle::all_finite() const {
  for (const auto& l : param_grads) {
    if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
  }
  return attrguard::all_finite(input_grad);
}

ForwardTrace trace_forward(const ModelState& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw InputError("input has length " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(model.input_dim()));
  }
  ForwardTrace t;
  const auto& layers = model.layers();
  t.pre.reserve(layers.size());
  t.post.reserve(layers.size());
  t.post.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const Vector& in = t.post.back();
    Vector z(layer.rows());
    for (std::size_t r = 0; r < layer.rows(); ++r) {
      const auto w = layer.weight.row(r);
      double acc = layer.bias[r];
      for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * in[c];
      z[r] = acc;
    }
    check_finite(z, l, "pre-activation");
    if (l + 1 < layers.size()) {
      Vector h(z.size());
      std::transform(z.begin(), z.end(), h.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
      t.pre.push_back(std::move(z));
      t.post.push_back(std::move(h));
    } else {
      t.pre.push_back(std::move(z));
    }
  }
  return t;
}

Vector forward(const ModelState& model, std::span<const double> x) {
  return trace_forward(model, x).pre.back();
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

std::size_t predict(const ModelState& model, std::span<const double> x) {
  return argmax(forward(model, x));
}

Vector softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - m);
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw InputError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - m);
  // -log softmax = log sum exp(z - m) - (z_y - m); the first term is >= 0 and
  // the second <= 0, so clamp only guards the last ulp.
  return std::max(0.0, std::log(total) - (logits[label] - m));
}

GradientBundle backprop(const ModelState& model, const ForwardTrace& trace,
                        std::span<const double> logit_cotangent) {
  const auto& layers = model.layers();
  GradientBundle g = GradientBundle::zeros_like(model);
  Vector upstream(logit_cotangent.begin(), logit_cotangent.end());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const Vector& in = trace.post[l];
    auto& gw = g.param_grads[l].weight;
    auto& gb = g.param_grads[l].bias;
    Vector down(layer.cols(), 0.0);
    for (std::size_t r = 0; r < layer.rows(); ++r) {
      const double u = upstream[r];
      gb[r] = u;
      if (u == 0.0) continue;
      auto grow = gw.row(r);
      const auto wrow = layer.weight.row(r);
      for (std::size_t c = 0; c < layer.cols(); ++c) {
        grow[c] = u * in[c];
        down[c] += u * wrow[c];
      }
    }
    check_finite(down, l, "gradient");
    if (l > 0) {
      const Vector& z = trace.pre[l - 1];
      for (std::size_t c = 0; c < down.size(); ++c) {
        if (!(z[c] > 0.0)) down[c] = 0.0;
      }
    }
    upstream = std::move(down);
  }
  g.input_grad = std::move(upstream);
  return g;
}

GradientBundle backward(const ModelState& model, std::span<const double> x, std::size_t label) {
  const ForwardTrace t = trace_forward(model, x);
  if (label >= model.num_classes()) {
    throw InputError("label " + std::to_string(label) + " out of range");
  }
  Vector cot = softmax(t.logits());
  cot[label] -= 1.0;
  return backprop(model, t, cot);
}

Vector logit_gradient(const ModelState& model, std::span<const double> x, std::size_t k) {
  if (k >= model.num_classes()) throw InputError("class index " + std::to_string(k) + " out of range");
  const ForwardTrace t = trace_forward(model, x);
  Vector e(model.num_classes(), 0.0);
  e[k] = 1.0;
  return backprop(model, t, e).input_grad;
}

std::vector<Vector> logit_jacobian(const ModelState& model, std::span<const double> x) {
  const ForwardTrace t = trace_forward(model, x);
  std::vector<Vector> rows;
  for (std::size_t k = 0; k < model.num_classes(); ++k) {
    Vector e(model.num_classes(), 0.0);
    e[k] = 1.0;
    rows.push_back(backprop(model, t, e).input_grad);
  }
  return rows;
}

ModelState sgd_step(ModelState model, const GradientBundle& grads, double lr) {
  if (grads.param_grads.size() != model.num_layers()) throw InputError("gradient bundle layer count mismatch");
  if (!grads.all_finite()) throw NumericError("non-finite gradient passed to sgd_step");
  auto& layers = model.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& g = grads.param_grads[l];
    if (g.weight.shape() != layers[l].weight.shape() || g.bias.shape() != layers[l].bias.shape()) {
      throw InputError("gradient shape mismatch at layer " + std::to_string(l));
    }
    auto w = layers[l].weight.values();
    const auto gw = g.weight.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    auto b = layers[l].bias.values();
    const auto gb = g.bias.values();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
  }
  return model;
}

void save_model(const ModelState& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << model_to_json(model).dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ModelState load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("model file " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace attrguard::nn
