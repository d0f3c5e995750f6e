// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
// Exits 0 once every criterion has been evaluated; with --strict any FAIL
// gives exit status 1.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attrguard/attacks.hpp"
#include "attrguard/certifier.hpp"
#include "attrguard/experiment.hpp"
#include "attrguard/fgsm.hpp"
#include "attrguard/lime.hpp"
#include "attrguard/refinement.hpp"
#include "oracles.hpp"

using namespace attrguard;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Line {
  int id;
  std::string name;
  Outcome out;
  double seconds;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// limit <= 0 means the criterion has no runtime bound of its own.
Line run(int id, const std::string& name, double limit, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit > 0.0) {
    o.detail += "; runtime limit " + fmt("%.0f", limit) + " s";
    if (s >= limit) o.pass = false;
  }
  std::printf("[%s] %d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), s);
  std::fflush(stdout);
  return {id, name, o, s};
}

// 1
Outcome gradient_exactness() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(2, 10), width(2, 12), depth(0, 2), classes(2, 5);
  double worst = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    std::vector<std::size_t> hidden(static_cast<std::size_t>(depth(rng)));
    for (auto& h : hidden) h = static_cast<std::size_t>(width(rng));
    const std::size_t d = static_cast<std::size_t>(dim(rng));
    const std::size_t k = static_cast<std::size_t>(classes(rng));
    nn::ModelState m = nn::ModelState::initialize(d, hidden, k, 1000 + static_cast<std::uint64_t>(pair));
    for (auto& L : m.mutable_layers()) {
      for (std::size_t i = 0; i < L.bias.size(); ++i) L.bias[i] = oracle::random_vector(1, rng, -0.5, 0.5)[0];
    }
    Vector x = oracle::random_vector(d, rng, -2.0, 2.0);
    while (oracle::kink_distance(m, x) < 1e-2) x = oracle::random_vector(d, rng, -2.0, 2.0);
    const std::size_t y = static_cast<std::size_t>(pair) % k;
    const auto g = nn::backward(m, x, y);
    const Vector fx = oracle::fd_input_grad(m, x, y, 1e-4);
    for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, oracle::rel_err(g.input_grad[j], fx[j]));
    const Vector fp = oracle::fd_param_grad(m, x, y, 1e-4);
    std::size_t i = 0;
    for (const auto& L : g.param_grads) {
      for (double v : L.weight.values()) worst = std::max(worst, oracle::rel_err(v, fp[i++]));
      for (double v : L.bias.values()) worst = std::max(worst, oracle::rel_err(v, fp[i++]));
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.3g", worst) + " over 100 pairs (limit 1e-4)"};
}

// 2
Outcome lime_recovery() {
  std::mt19937_64 rng(2);
  double worst_truth = 0.0, worst_oracle = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 12;
    // Logit of class 1 is w . z + b; with a zero baseline z = m * x, so the
    // target is linear in the mask with coefficients w_j x_j.
    const Vector w = oracle::random_vector(d, rng, -2.0, 2.0);
    const Vector x = oracle::random_vector(d, rng, -2.0, 2.0);
    double f = 0.0;
    for (std::size_t j = 0; j < d; ++j) f += w[j] * x[j];
    const double b = std::abs(f) + 1.0;
    const nn::ModelState m = oracle::linear_model({Vector(d, 0.0), w}, {0.0, b + 30.0});
    lime::LimeConfig cfg;
    cfg.n_samples = 200;
    cfg.kernel_width = 3.0;
    cfg.baseline.assign(d, 0.0);
    cfg.ridge = 0.0;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const auto a = lime::explain(m, x, cfg);

    const auto samples = lime::sample_perturbations(x, cfg);
    std::vector<Vector> design;
    Vector targets, weights;
    for (const auto& s : samples) {
      Vector row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = s.mask[j];
      design.push_back(row);
      targets.push_back(oracle::forward(m, s.z)[1]);
      weights.push_back(std::exp(-[&] {
        double r = 0.0;
        for (std::size_t j = 0; j < d; ++j) r += (x[j] - s.z[j]) * (x[j] - s.z[j]);
        return r;
      }() / (cfg.kernel_width * cfg.kernel_width)));
    }
    const Vector ref = oracle::weighted_least_squares(design, targets, weights);
    worst_truth = std::max(worst_truth, std::abs(a.beta0 - (b + 30.0)));
    worst_oracle = std::max(worst_oracle, std::abs(a.beta0 - ref[0]));
    for (std::size_t j = 0; j < d; ++j) {
      worst_truth = std::max(worst_truth, std::abs(a.beta[j] - w[j] * x[j]));
      worst_oracle = std::max(worst_oracle, std::abs(a.beta[j] - ref[j + 1]));
    }
  }
  const bool ok = worst_truth < 1e-8 && worst_oracle < 1e-8;
  return {ok, "max |beta - true| " + fmt("%.3g", worst_truth) + ", max |beta - oracle WLS| " +
                  fmt("%.3g", worst_oracle) + " over 20 inputs (limit 1e-8)"};
}

// 3
Outcome spurious_detection() {
  harness::ExperimentConfig cfg;
  const auto p = harness::prepare(cfg);
  const auto base = harness::train_baseline(cfg, p);
  const auto cal = refine::calibration_subset(p.train, p.refinement);
  const auto det = refine::detect_spurious(base, cal, spurious::OracleRelevance{*p.planted_core}, p.refinement, 1);
  const auto sc = spurious::score_detection(det.set.indices, *p.planted_spurious);
  std::ostringstream os;
  os << "recall " << fmt("%.3f", sc.recall) << " (>= 0.9), precision " << fmt("%.3f", sc.precision)
     << " (>= 0.7); flagged {";
  for (std::size_t i = 0; i < det.set.indices.size(); ++i) os << (i ? "," : "") << det.set.indices[i];
  os << "} irrelevant " << det.set.irrelevant.size() << ", sensitive " << det.set.sensitive.size() << ", unstable "
     << det.set.unstable.size();
  return {sc.recall >= 0.9 && sc.precision >= 0.7, os.str()};
}

struct Flagship {
  harness::ExperimentReport first;
  harness::ExperimentReport second;
  double first_seconds = 0.0;
};

// 4
Outcome attack_sweep(const Flagship& f) {
  const json& d = f.first.doc;
  if (!f.first.complete) return {false, "flagship run incomplete: " + d["error"].dump()};
  const auto& b = d["baseline"]["attack_sweep"];
  const auto& r = d["refined"]["attack_sweep"];
  bool ok = f.first_seconds < 300.0;
  double smallest = -1.0;
  std::ostringstream os;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double eps = b[i]["eps"].get<double>();
    const double gap = r[i]["accuracy"].get<double>() - b[i]["accuracy"].get<double>();
    if (smallest < 0.0) smallest = eps;
    const bool row_ok = gap > 0.0 && (eps != smallest || gap >= 0.05);
    ok = ok && row_ok;
    os << b[i]["attack"].get<std::string>() << "@" << eps << " " << fmt("%.4f", b[i]["accuracy"].get<double>())
       << "->" << fmt("%.4f", r[i]["accuracy"].get<double>()) << "; ";
  }
  os << "pipeline " << fmt("%.1f", f.first_seconds) << " s (< 300 s)";
  return {ok, os.str()};
}

// 5
Outcome corruption(const Flagship& f) {
  const json& d = f.first.doc;
  if (!f.first.complete) return {false, "flagship run incomplete"};
  const double bm = d["baseline"]["corruption"]["mean"].get<double>();
  const double rm = d["refined"]["corruption"]["mean"].get<double>();
  const double bs = d["baseline"]["corruption"]["std"].get<double>();
  const double rs = d["refined"]["corruption"]["std"].get<double>();
  return {rm > bm && rs <= bs, "mean " + fmt("%.4f", bm) + " -> " + fmt("%.4f", rm) + ", per-kind std " +
                                   fmt("%.4f", bs) + " -> " + fmt("%.4f", rs)};
}

// 6
Outcome regularizer(const Flagship& f) {
  const json& d = f.first.doc;
  if (!f.first.complete || !d.contains("control")) return {false, "control section missing"};
  const auto& c = d["control"];
  if (c["ratio"].is_null()) return {false, "control gradient is zero"};
  const double ratio = c["ratio"].get<double>();
  return {ratio <= 0.5, "refined " + fmt("%.4g", c["refined_sq_gradient"].get<double>()) + " vs lambda=0 control " +
                            fmt("%.4g", c["control_sq_gradient"].get<double>()) + ", ratio " + fmt("%.3f", ratio) +
                            " (<= 0.5)"};
}

// 7
Outcome bound_soundness(const Flagship& f) {
  harness::ExperimentConfig cfg;
  const auto p = harness::prepare(cfg);
  auto lin = nn::ModelState::initialize(p.train.d, std::vector<std::size_t>{}, p.train.num_classes,
                                        harness::stage_seed(cfg, "model/init"));
  lin = refine::standard_train(std::move(lin), p.train,
                               refine::TrainConfig{cfg.model.pretrain_epochs, cfg.model.lr, cfg.model.batch_size,
                                                   harness::stage_seed(cfg, "train/baseline")});
  const std::vector<std::uint8_t> none(p.test.d, 0);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.test.n; ++i) {
    const auto b = cert::distortion_lower_bound(lin, p.test.row(i), none, Norm::l1);
    worst = std::max(worst, std::abs(b.pairwise.delta_min - oracle::linear_linf_distortion(lin, p.test.row(i))));
  }
  const bool linear_ok = worst <= 1e-9;

  const json& d = f.first.doc;
  if (!f.first.complete) return {false, "flagship run incomplete"};
  const auto& bounds = d["refined"]["bounds"];
  const std::size_t sound = bounds["n_sound"].get<std::size_t>();
  const std::size_t checked = bounds["n_checked"].get<std::size_t>();
  std::ostringstream os;
  os << "linear: max |delta_min - exact| " << fmt("%.3g", worst) << " over " << p.test.n
     << " points (<= 1e-9); refined net: " << sound << "/" << checked << " sound (>= 95/100)";
  for (auto v : bounds["violations"]) {
    const auto& r = bounds["records"][v.get<std::size_t>()];
    std::printf("    violation: point %zu delta_min %.6f delta_emp %.6f\n", r["index"].get<std::size_t>(),
                r["delta_min"].is_null() ? INFINITY : r["delta_min"].get<double>(),
                r["delta_emp"].is_null() ? INFINITY : r["delta_emp"].get<double>());
  }
  return {linear_ok && checked == 100 && sound >= 95, os.str()};
}

// 8
Outcome monotonicity() {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.3);
  std::size_t checks = 0, bad = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const Vector g = oracle::random_vector(32, rng, -5.0, 5.0);
    std::vector<std::uint8_t> m(32);
    for (auto& b : m) b = coin(rng) ? 1 : 0;
    for (Norm q : {Norm::l1, Norm::l2, Norm::linf}) {
      const double base = cert::effective_lipschitz(g, m, q);
      for (std::size_t j = 0; j < m.size(); ++j) {
        if (m[j]) continue;
        auto more = m;
        more[j] = 1;
        ++checks;
        if (cert::effective_lipschitz(g, more, q) > base) ++bad;
      }
    }
  }
  return {bad == 0, std::to_string(checks) + " single-index additions, " + std::to_string(bad) + " increases"};
}

// 9
Outcome determinism(const Flagship& f) {
  const std::string a = harness::canonical_report(f.first.doc);
  const std::string b = harness::canonical_report(f.second.doc);
  return {a == b && f.first.complete, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different")};
}

// 10
Outcome reductions() {
  harness::ExperimentConfig cfg;
  cfg.data.n_train = 1000;
  const auto p = harness::prepare(cfg);
  const auto init = nn::ModelState::initialize(p.train.d, cfg.model.hidden, 2, 3);
  refine::RefinementConfig rc = p.refinement;
  rc.alpha = 0.0;
  rc.lambda = 0.0;
  rc.epochs_per_iter = 3;
  rc.lr = 0.05;
  const auto a = refine::train_epochs(init, p.train, spurious::SpuriousSet::empty(p.train.d), rc, 17, 1);
  const auto b = refine::standard_train(init, p.train, refine::TrainConfig{3, 0.05, rc.batch_size, 17});
  const bool train_ok = a == b;

  const auto model = harness::train_baseline(cfg, p);
  std::size_t mismatched = 0;
  for (double eps : {0.01, 0.04, 0.4}) {
    for (std::size_t i = 0; i < 500; ++i) {
      attacks::AttackSpec s{attacks::AttackKind::pgd, eps, 1, eps, false, 0, Norm::linf};
      if (attacks::pgd(model, p.test.row(i), p.test.labels[i], s) !=
          refine::fgsm(model, p.test.row(i), p.test.labels[i], eps)) {
        ++mismatched;
      }
    }
  }
  return {train_ok && mismatched == 0, std::string("(a) training ") + (train_ok ? "bit-identical" : "differs") +
                                           ", (b) pgd/fgsm mismatches " + std::to_string(mismatched) + "/1500"};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) strict = true;
  }
  std::vector<Line> lines;
  lines.push_back(run(1, "gradient exactness", 10.0, gradient_exactness));
  lines.push_back(run(2, "lime recovery", 5.0, lime_recovery));
  lines.push_back(run(3, "spurious detection", 60.0, spurious_detection));

  Flagship f;
  {
    const auto t0 = std::chrono::steady_clock::now();
    f.first = harness::run_experiment(harness::ExperimentConfig{});
    f.first_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    f.second = harness::run_experiment(harness::ExperimentConfig{});
  }
  lines.push_back(run(4, "attack sweep", 0.0, [&] { return attack_sweep(f); }));
  lines.push_back(run(5, "corruption grid", 0.0, [&] { return corruption(f); }));
  lines.push_back(run(6, "regularizer effect", 0.0, [&] { return regularizer(f); }));
  lines.push_back(run(7, "bound soundness", 0.0, [&] { return bound_soundness(f); }));
  lines.push_back(run(8, "suppression monotonicity", 1.0, monotonicity));
  lines.push_back(run(9, "determinism", 0.0, [&] { return determinism(f); }));
  lines.push_back(run(10, "reductions", 0.0, reductions));

  int passed = 0;
  for (const auto& l : lines) passed += l.out.pass ? 1 : 0;
  std::printf("acceptance: %d/%zu criteria passed", passed, lines.size());
  if (passed != static_cast<int>(lines.size())) {
    std::printf("; failing:");
    for (const auto& l : lines) {
      if (!l.out.pass) std::printf(" %d", l.id);
    }
  }
  std::printf("\n");
  return strict && passed != static_cast<int>(lines.size()) ? 1 : 0;
}
