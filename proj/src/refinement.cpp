// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "attrguard/attacks.hpp"
#include "attrguard/certifier.hpp"
#include "attrguard/errors.hpp"
#include "attrguard/seed.hpp"

namespace attrguard::refine {

void RefinementConfig::validate() const {
  if (!(lambda >= 0.0)) throw InputError("lambda must be non-negative");
  if (!(alpha >= 0.0)) throw InputError("alpha must be non-negative");
  if (!(eps_adv >= 0.0)) throw InputError("eps_adv must be non-negative");
  if (!(lr >= 0.0)) throw InputError("lr must be non-negative");
  if (batch_size == 0) throw InputError("batch_size must be >= 1");
  if (max_iters == 0) throw InputError("max_iters must be >= 1");
  if (instability_repeats < 2) throw InputError("instability_repeats must be >= 2");
  if (calibration_size == 0) throw InputError("calibration_size must be >= 1");
  thresholds.validate();
}

Vector mask_input(std::span<const double> x, std::span<const std::uint8_t> keep_mask, std::span<const double> baseline) {
  if (x.size() != keep_mask.size()) throw InputError("mask_input: mask length does not match input");
  if (baseline.size() != x.size()) throw InputError("mask_input: baseline length does not match input");
  Vector out(x.begin(), x.end());
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (!keep_mask[j]) out[j] = baseline[j];
  }
  return out;
}

namespace {

// d f_y / d x together with the upstream vectors u_l (cotangent at layer l's
// output) needed to differentiate it again.
struct InputGradChain {
  std::vector<Vector> u;
  Vector grad;
};

InputGradChain input_grad_chain(const nn::ModelState& model, const nn::ForwardTrace& t, std::size_t y) {
  const auto& layers = model.layers();
  const std::size_t L = layers.size();
  InputGradChain c;
  c.u.resize(L);
  c.u[L - 1].assign(layers[L - 1].rows(), 0.0);
  c.u[L - 1][y] = 1.0;
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = layers[l];
    Vector v(layer.cols(), 0.0);
    for (std::size_t r = 0; r < layer.rows(); ++r) {
      const double ur = c.u[l][r];
      if (ur == 0.0) continue;
      const auto w = layer.weight.row(r);
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += ur * w[k];
    }
    if (l == 0) {
      c.grad = std::move(v);
    } else {
      const Vector& z = t.pre[l - 1];
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (!(z[k] > 0.0)) v[k] = 0.0;
      }
      c.u[l - 1] = std::move(v);
    }
  }
  return c;
}

// Adds d/dtheta of sum_j coef * g_j^2 over the flagged features into `out`.
// Biases do not enter the input gradient of a ReLU net (away from kinks).
void accumulate_reg_grad(const nn::ModelState& model, const nn::ForwardTrace& t, const InputGradChain& c,
                         const spurious::IndexSet& features, double coef, nn::GradientBundle& out) {
  const auto& layers = model.layers();
  Vector r(model.input_dim(), 0.0);
  for (auto j : features) r[j] = 2.0 * coef * c.grad[j];
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    auto& gw = out.param_grads[l].weight;
    Vector next(layer.rows(), 0.0);
    for (std::size_t row = 0; row < layer.rows(); ++row) {
      const double ur = c.u[l][row];
      const auto w = layer.weight.row(row);
      auto g = gw.row(row);
      double acc = 0.0;
      for (std::size_t k = 0; k < layer.cols(); ++k) {
        g[k] += ur * r[k];
        acc += w[k] * r[k];
      }
      next[row] = acc;
    }
    if (l + 1 < layers.size()) {
      const Vector& z = t.pre[l];
      for (std::size_t k = 0; k < next.size(); ++k) {
        if (!(z[k] > 0.0)) next[k] = 0.0;
      }
      r = std::move(next);
    }
  }
}

void check_batch(const data::DatasetSplit& split, std::span<const std::size_t> batch) {
  if (batch.empty()) throw InputError("empty batch");
  for (auto i : batch) {
    if (i >= split.n) throw InputError("batch index out of range");
  }
}

double reg_value_on(const nn::ModelState& model, const data::DatasetSplit& split, std::span<const std::size_t> batch,
                    const spurious::IndexSet& features) {
  double total = 0.0;
  for (auto i : batch) {
    const auto t = nn::trace_forward(model, split.row(i));
    const auto c = input_grad_chain(model, t, split.labels[i]);
    double s = 0.0;
    for (auto j : features) s += c.grad[j] * c.grad[j];
    total += s;
  }
  return total / (static_cast<double>(features.size()) * static_cast<double>(batch.size()));
}

}  // namespace

double sensitivity_reg(const nn::ModelState& model, const data::DatasetSplit& split,
                       std::span<const std::size_t> batch, const spurious::IndexSet& spurious) {
  if (spurious.empty()) return 0.0;
  check_batch(split, batch);
  return reg_value_on(model, split, batch, spurious);
}

RegValueGrad sensitivity_reg_grad(const nn::ModelState& model, const data::DatasetSplit& split,
                                  std::span<const std::size_t> batch, const spurious::IndexSet& spurious,
                                  RegMode mode) {
  RegValueGrad out{0.0, nn::GradientBundle::zeros_like(model)};
  if (spurious.empty()) return out;
  check_batch(split, batch);
  const double coef = 1.0 / (static_cast<double>(spurious.size()) * static_cast<double>(batch.size()));
  if (mode == RegMode::analytic) {
    for (auto i : batch) {
      const auto t = nn::trace_forward(model, split.row(i));
      const auto c = input_grad_chain(model, t, split.labels[i]);
      for (auto j : spurious) out.value += coef * c.grad[j] * c.grad[j];
      accumulate_reg_grad(model, t, c, spurious, coef, out.grad);
    }
    return out;
  }
  out.value = reg_value_on(model, split, batch, spurious);
  constexpr double h = 1e-6;
  nn::ModelState probe = model;
  auto& layers = probe.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (auto* t : {&layers[l].weight, &layers[l].bias}) {
      auto& g = t == &layers[l].weight ? out.grad.param_grads[l].weight : out.grad.param_grads[l].bias;
      for (std::size_t k = 0; k < t->size(); ++k) {
        const double orig = (*t)[k];
        (*t)[k] = orig + h;
        const double up = reg_value_on(probe, split, batch, spurious);
        (*t)[k] = orig - h;
        const double down = reg_value_on(probe, split, batch, spurious);
        (*t)[k] = orig;
        g[k] = (up - down) / (2.0 * h);
      }
    }
  }
  return out;
}

CompositeLoss composite_loss(const nn::ModelState& model, const data::DatasetSplit& split,
                             std::span<const std::size_t> batch, const spurious::SpuriousSet& spurious,
                             const RefinementConfig& cfg) {
  check_batch(split, batch);
  if (spurious.mask.size() != split.d) throw InputError("spurious mask length does not match d");
  CompositeLoss out;
  out.grad = nn::GradientBundle::zeros_like(model);
  nn::GradientBundle adv_grad = nn::GradientBundle::zeros_like(model);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  // Masked copies are reused by the regularizer.
  data::DatasetSplit masked{batch.size(), split.d, split.num_classes, {}, {}};
  masked.inputs.reserve(batch.size() * split.d);
  std::vector<std::size_t> local(batch.size());
  const Vector zeros = cfg.lime.baseline.empty() ? Vector(split.d, 0.0) : Vector{};
  const std::span<const double> fill = cfg.lime.baseline.empty() ? std::span<const double>(zeros)
                                                                  : std::span<const double>(cfg.lime.baseline);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t i = batch[b];
    const std::size_t y = split.labels[i];
    const Vector xm = mask_input(split.row(i), spurious.mask, fill);
    const auto t = nn::trace_forward(model, xm);
    out.task += nn::cross_entropy(t.logits(), y);
    Vector cot = nn::softmax(t.logits());
    cot[y] -= 1.0;
    out.grad.add_scaled(nn::backprop(model, t, cot), 1.0);

    if (cfg.alpha > 0.0) {
      const Vector xa = fgsm(model, xm, y, cfg.eps_adv);
      const auto ta = nn::trace_forward(model, xa);
      out.adv += nn::cross_entropy(ta.logits(), y);
      Vector cota = nn::softmax(ta.logits());
      cota[y] -= 1.0;
      adv_grad.add_scaled(nn::backprop(model, ta, cota), 1.0);
    }
    masked.inputs.insert(masked.inputs.end(), xm.begin(), xm.end());
    masked.labels.push_back(y);
    local[b] = b;
  }
  out.task *= inv_b;
  out.grad.scale(inv_b);
  if (cfg.alpha > 0.0) {
    out.adv *= inv_b;
    out.grad.add_scaled(adv_grad, cfg.alpha * inv_b);
  }
  if (cfg.lambda > 0.0 && !spurious.indices.empty()) {
    auto reg = sensitivity_reg_grad(model, masked, local, spurious.indices, cfg.reg_mode);
    out.reg = reg.value;
    out.grad.add_scaled(reg.grad, cfg.lambda);
  } else if (!spurious.indices.empty()) {
    out.reg = sensitivity_reg(model, masked, local, spurious.indices);
  }
  out.total = out.task + cfg.alpha * out.adv + cfg.lambda * out.reg;
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

nn::ModelState standard_train(nn::ModelState model, const data::DatasetSplit& train, const TrainConfig& tc) {
  if (tc.batch_size == 0) throw InputError("batch_size must be >= 1");
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    const auto order = epoch_order(train.n, tc.seed, e);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      nn::GradientBundle grad = nn::GradientBundle::zeros_like(model);
      double loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        loss += nn::cross_entropy(nn::forward(model, train.row(i)), train.labels[i]);
        grad.add_scaled(nn::backward(model, train.row(i), train.labels[i]), 1.0);
      }
      if (!std::isfinite(loss)) throw TrainingError("non-finite loss in standard training, epoch " + std::to_string(e), 0);
      grad.scale(1.0 / static_cast<double>(end - start));
      model = nn::sgd_step(std::move(model), grad, tc.lr);
    }
  }
  return model;
}

nn::ModelState train_epochs(nn::ModelState model, const data::DatasetSplit& train,
                            const spurious::SpuriousSet& spurious, const RefinementConfig& cfg, std::uint64_t seed,
                            std::size_t iteration, std::vector<double>* loss_curve) {
  cfg.validate();
  for (std::size_t e = 0; e < cfg.epochs_per_iter; ++e) {
    const auto order = epoch_order(train.n, seed, e);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      CompositeLoss loss;
      try {
        loss = composite_loss(model, train, batch, spurious, cfg);
      } catch (const NumericError& err) {
        throw TrainingError(std::string("refinement iteration ") + std::to_string(iteration) + ": " + err.what(),
                            iteration);
      }
      if (!std::isfinite(loss.total)) {
        throw TrainingError("non-finite composite loss in refinement iteration " + std::to_string(iteration) +
                                ", epoch " + std::to_string(e),
                            iteration);
      }
      epoch_loss += loss.total;
      ++batches;
      model = nn::sgd_step(std::move(model), loss.grad, cfg.lr);
    }
    if (loss_curve) loss_curve->push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  return model;
}

std::uint64_t iteration_seed(std::uint64_t seed, std::size_t iteration) {
  return mix_seed(derive_seed(seed, "refine/train"), iteration);
}

data::DatasetSplit calibration_subset(const data::DatasetSplit& train, const RefinementConfig& cfg) {
  std::vector<std::size_t> idx(train.n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(cfg.seed, "refine/calibration"));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(cfg.calibration_size, train.n));
  std::sort(idx.begin(), idx.end());
  return train.subset(idx);
}

Detection detect_spurious(const nn::ModelState& model, const data::DatasetSplit& calibration,
                          const spurious::Reference& reference, const RefinementConfig& cfg, std::size_t iteration) {
  lime::LimeConfig lc = cfg.lime;
  lc.seed = mix_seed(cfg.lime.seed, iteration);
  Detection det;
  det.stats = spurious::collect_stats(model, reference, calibration, lc, cfg.instability_repeats);
  det.set = spurious::identify_spurious(det.stats, cfg.thresholds);

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < det.stats.attributions.size(); ++i) {
    try {
      sum += cert::alignment(det.stats.gradients[i], cert::normalized_attribution(det.stats.attributions[i]));
      ++count;
    } catch (const DegenerateAttributionError&) {
    } catch (const UndefinedAlignmentError&) {
    }
  }
  if (count) det.mean_alignment = sum / static_cast<double>(count);
  return det;
}

RefinementResult refine(const nn::ModelState& initial, const data::DatasetSplit& train,
                        const data::DatasetSplit& monitor, const spurious::Reference& reference,
                        const RefinementConfig& cfg) {
  cfg.validate();
  RefinementResult res{initial, {}, {}, {}, 0, false, true, {}};
  const auto calibration = calibration_subset(train, cfg);
  const std::uint64_t monitor_seed = derive_seed(cfg.seed, "refine/monitor");
  nn::ModelState model = initial;
  double best = -1.0;
  std::optional<double> prev_fgsm;
  std::size_t stable = 0;

  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    try {
      auto det = detect_spurious(model, calibration, reference, cfg, it);
      rec.mean_alignment = det.mean_alignment;
      model = train_epochs(std::move(model), train, det.set, cfg, iteration_seed(cfg.seed, it), it, &rec.loss_curve);
      rec.spurious = det.set.indices;
      rec.clean_acc = attacks::eval(model, monitor, attacks::AttackSpec::clean()).accuracy;
      rec.fgsm_acc = attacks::eval(model, monitor, attacks::AttackSpec::make_fgsm(cfg.eps_adv)).accuracy;
      rec.pgd_acc = attacks::eval(model, monitor, attacks::AttackSpec::make_pgd(cfg.eps_adv, monitor_seed)).accuracy;
      res.sets.push_back(std::move(det.set));
    } catch (const std::exception& e) {
      res.complete = false;
      res.error = e.what();
      break;
    }
    res.checkpoints.push_back(model);
    if (rec.fgsm_acc > best) {
      best = rec.fgsm_acc;
      res.best_iteration = it;
      res.model = model;
    }
    const bool small_change = prev_fgsm && std::abs(rec.fgsm_acc - *prev_fgsm) < cfg.convergence.tol;
    stable = small_change ? stable + 1 : 0;
    prev_fgsm = rec.fgsm_acc;
    res.trace.push_back(std::move(rec));
    if (stable >= cfg.convergence.patience) {
      res.converged = true;
      break;
    }
  }
  return res;
}

double mean_squared_feature_gradient(const nn::ModelState& model, const data::DatasetSplit& split,
                                     const spurious::IndexSet& features) {
  if (features.empty() || split.n == 0) return 0.0;
  std::vector<std::size_t> all(split.n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return reg_value_on(model, split, all, features);
}

}  // namespace attrguard::refine
