// Copyright 2026 The attrguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "attrguard/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "attrguard/certifier.hpp"
#include "attrguard/errors.hpp"
#include "attrguard/seed.hpp"

namespace attrguard::harness {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were read so leftovers can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  Section sub(const std::string& key) {
    static const json empty = json::object();
    const json* v = find(key);
    return Section(v ? *v : empty, key_path(key));
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = to_count(*v, key_path(key));
  }
  void get(const std::string& key, std::uint64_t& out, int) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        throw ConfigError(key_path(key), "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected an array");
      out.clear();
      for (const auto& e : *v) out.push_back(to_count(e, key_path(key)));
    }
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected an array");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) throw ConfigError(key_path(key), "expected an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    std::vector<std::size_t> tmp;
    if (j_.contains(key)) {
      get(key, tmp);
      out.assign(tmp.begin(), tmp.end());
    } else {
      seen_.insert(key);
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected an array");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) throw ConfigError(key_path(key), "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
    }
  }

 private:
  static std::size_t to_count(const json& v, const std::string& path) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(path, "expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

const char* reg_mode_name(refine::RegMode m) {
  return m == refine::RegMode::analytic ? "analytic" : "finite_difference";
}

void validate(const ExperimentConfig& c) {
  const auto& d = c.data;
  require(d.source == "planted" || d.source == "files", "data.source", "must be \"planted\" or \"files\"");
  if (d.source == "planted") {
    try {
      d.planted.validate();
    } catch (const InputError& e) {
      throw ConfigError("data", e.what());
    }
    require(d.n_train >= 1, "data.n_train", "must be >= 1");
    require(d.n_test >= 1, "data.n_test", "must be >= 1");
    require(d.n_monitor >= 1, "data.n_monitor", "must be >= 1");
  } else {
    require(!d.train_path.empty(), "data.train_path", "required when source is \"files\"");
    require(!d.test_path.empty(), "data.test_path", "required when source is \"files\"");
  }

  for (auto h : c.model.hidden) require(h >= 1, "model.hidden", "widths must be >= 1");
  require(c.model.lr > 0.0, "model.lr", "must be positive");
  require(c.model.batch_size >= 1, "model.batch_size", "must be >= 1");

  require(c.reference.kind == "oracle" || c.reference.kind == "robust_sibling", "reference.kind",
          "must be \"oracle\" or \"robust_sibling\"");
  require(c.reference.kind != "oracle" || d.source == "planted", "reference.kind",
          "oracle reference needs planted data");
  require(c.reference.sibling_eps >= 0.0, "reference.sibling_eps", "must be non-negative");

  const auto& r = c.refinement.params;
  require(r.lambda >= 0.0, "refinement.lambda", "must be non-negative");
  require(r.alpha >= 0.0, "refinement.alpha", "must be non-negative");
  require(r.eps_adv >= 0.0, "refinement.eps_adv", "must be non-negative");
  require(r.lr >= 0.0, "refinement.lr", "must be non-negative");
  require(r.batch_size >= 1, "refinement.batch_size", "must be >= 1");
  require(r.max_iters >= 1, "refinement.max_iters", "must be >= 1");
  require(r.convergence.tol >= 0.0, "refinement.convergence.tol", "must be non-negative");
  require(r.instability_repeats >= 2, "refinement.instability_repeats", "must be >= 2");
  require(r.calibration_size >= 1, "refinement.calibration_size", "must be >= 1");
  const auto& th = r.thresholds;
  if (th.percentile_mode) {
    for (auto [v, k] : {std::pair{th.tau, "tau"}, std::pair{th.eps_sens, "eps_sens"}, std::pair{th.delta, "delta"},
                        std::pair{th.tau_ref, "tau_ref"}}) {
      require(v >= 0.0 && v <= 100.0, std::string("refinement.thresholds.") + k, "percentile must lie in [0, 100]");
    }
  } else {
    for (auto [v, k] : {std::pair{th.tau, "tau"}, std::pair{th.eps_sens, "eps_sens"}, std::pair{th.delta, "delta"},
                        std::pair{th.tau_ref, "tau_ref"}}) {
      require(v >= 0.0, std::string("refinement.thresholds.") + k, "must be non-negative");
    }
  }

  require(c.lime.kernel_width >= 0.0, "lime.kernel_width", "must be non-negative");
  require(c.lime.ridge >= 0.0, "lime.ridge", "must be non-negative");
  require(c.lime.group_size >= 1, "lime.group_size", "must be >= 1");
  require(c.lime.baseline == "mean" || c.lime.baseline == "zero", "lime.baseline", "must be \"mean\" or \"zero\"");

  require(!c.attacks.eps.empty(), "attacks.eps", "must be non-empty");
  for (auto e : c.attacks.eps) require(e >= 0.0, "attacks.eps", "entries must be non-negative");
  require(std::is_sorted(c.attacks.eps.begin(), c.attacks.eps.end()), "attacks.eps", "must be sorted ascending");
  require(c.attacks.pgd_steps >= 1, "attacks.pgd_steps", "must be >= 1");
  require(c.attacks.pgd_step_size >= 0.0, "attacks.pgd_step_size", "must be non-negative");

  require(!c.corruption.kinds.empty(), "corruption.kinds", "must be non-empty");
  require(!c.corruption.severities.empty(), "corruption.severities", "must be non-empty");
  for (auto s : c.corruption.severities) require(s >= 1 && s <= 5, "corruption.severities", "must lie in 1..5");

  const auto& ce = c.certifier;
  require(ce.n_points >= 1, "certifier.n_points", "must be >= 1");
  require(ce.spurious == "empty" || ce.spurious == "detected", "certifier.spurious",
          "must be \"empty\" or \"detected\"");
  require(ce.resolution > 0.0, "certifier.resolution", "must be positive");
  require(ce.eps_max > 0.0, "certifier.eps_max", "must be positive");
  require(ce.search_steps >= 1, "certifier.search_steps", "must be >= 1");
  require(ce.restarts >= 1, "certifier.restarts", "must be >= 1");
  require(ce.tolerance >= 0.0, "certifier.tolerance", "must be non-negative");

  if (d.source == "planted") {
    for (auto i : c.explain.indices) require(i < d.n_test, "explain.indices", "index beyond the test split");
  }
  require(!c.output.dir.empty(), "output.dir", "must be non-empty");
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.get("seed", c.seed, 0);

  {
    Section s = root.sub("data");
    auto& d = c.data;
    s.get("source", d.source);
    s.get("d", d.planted.d);
    s.get("num_classes", d.planted.num_classes);
    s.get("core_indices", d.planted.core_indices);
    s.get("spurious_indices", d.planted.spurious_indices);
    s.get("train_correlation", d.planted.train_correlation);
    s.get("test_correlation", d.planted.test_correlation);
    s.get("signal_scale", d.planted.signal_scale);
    s.get("noise_std", d.planted.noise_std);
    s.get("n_train", d.n_train);
    s.get("n_test", d.n_test);
    s.get("n_monitor", d.n_monitor);
    s.get("train_path", d.train_path);
    s.get("test_path", d.test_path);
    s.get("monitor_path", d.monitor_path);
    s.finish();
  }
  {
    Section s = root.sub("model");
    s.get("hidden", c.model.hidden);
    s.get("pretrain_epochs", c.model.pretrain_epochs);
    s.get("lr", c.model.lr);
    s.get("batch_size", c.model.batch_size);
    s.finish();
  }
  {
    Section s = root.sub("reference");
    s.get("kind", c.reference.kind);
    s.get("sibling_eps", c.reference.sibling_eps);
    s.get("sibling_epochs", c.reference.sibling_epochs);
    s.finish();
  }
  {
    Section s = root.sub("refinement");
    auto& r = c.refinement.params;
    s.get("enabled", c.refinement.enabled);
    s.get("lambda", r.lambda);
    s.get("alpha", r.alpha);
    s.get("eps_adv", r.eps_adv);
    s.get("lr", r.lr);
    s.get("epochs_per_iter", r.epochs_per_iter);
    s.get("batch_size", r.batch_size);
    s.get("max_iters", r.max_iters);
    s.get("instability_repeats", r.instability_repeats);
    s.get("calibration_size", r.calibration_size);
    std::string mode = reg_mode_name(r.reg_mode);
    s.get("reg_mode", mode);
    if (mode == "analytic") {
      r.reg_mode = refine::RegMode::analytic;
    } else if (mode == "finite_difference") {
      r.reg_mode = refine::RegMode::finite_difference;
    } else {
      throw ConfigError("refinement.reg_mode", "must be \"analytic\" or \"finite_difference\"");
    }
    {
      Section cv = s.sub("convergence");
      cv.get("tol", r.convergence.tol);
      cv.get("patience", r.convergence.patience);
      cv.finish();
    }
    {
      Section th = s.sub("thresholds");
      th.get("tau", r.thresholds.tau);
      th.get("eps_sens", r.thresholds.eps_sens);
      th.get("delta", r.thresholds.delta);
      th.get("tau_ref", r.thresholds.tau_ref);
      th.get("percentile_mode", r.thresholds.percentile_mode);
      th.finish();
    }
    s.finish();
  }
  {
    Section s = root.sub("lime");
    s.get("n_samples", c.lime.n_samples);
    s.get("kernel_width", c.lime.kernel_width);
    s.get("ridge", c.lime.ridge);
    s.get("group_size", c.lime.group_size);
    s.get("baseline", c.lime.baseline);
    s.finish();
  }
  {
    Section s = root.sub("attacks");
    s.get("eps", c.attacks.eps);
    s.get("pgd_steps", c.attacks.pgd_steps);
    s.get("pgd_step_size", c.attacks.pgd_step_size);
    s.get("pgd_random_start", c.attacks.pgd_random_start);
    s.finish();
  }
  {
    Section s = root.sub("corruption");
    s.get("enabled", c.corruption.enabled);
    std::vector<std::string> kinds;
    for (auto k : c.corruption.kinds) kinds.emplace_back(data::to_string(k));
    s.get("kinds", kinds);
    c.corruption.kinds.clear();
    for (const auto& k : kinds) {
      try {
        c.corruption.kinds.push_back(data::parse_corruption(k));
      } catch (const InputError& e) {
        throw ConfigError("corruption.kinds", e.what());
      }
    }
    s.get("severities", c.corruption.severities);
    s.finish();
  }
  {
    Section s = root.sub("certifier");
    auto& ce = c.certifier;
    s.get("enabled", ce.enabled);
    s.get("n_points", ce.n_points);
    std::string q(to_string(ce.q));
    s.get("q", q);
    try {
      ce.q = parse_norm(q);
    } catch (const InputError& e) {
      throw ConfigError("certifier.q", e.what());
    }
    s.get("spurious", ce.spurious);
    s.get("with_empirical", ce.with_empirical);
    s.get("resolution", ce.resolution);
    s.get("eps_max", ce.eps_max);
    s.get("search_steps", ce.search_steps);
    s.get("restarts", ce.restarts);
    s.get("tolerance", ce.tolerance);
    s.finish();
  }
  {
    Section s = root.sub("control");
    s.get("enabled", c.control.enabled);
    s.finish();
  }
  {
    Section s = root.sub("explain");
    s.get("indices", c.explain.indices);
    s.finish();
  }
  {
    Section s = root.sub("output");
    s.get("dir", c.output.dir);
    s.get("save_models", c.output.save_models);
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& c) {
  const auto& r = c.refinement.params;
  json kinds = json::array();
  for (auto k : c.corruption.kinds) kinds.push_back(std::string(data::to_string(k)));
  return json{
      {"seed", c.seed},
      {"data",
       {{"source", c.data.source},
        {"d", c.data.planted.d},
        {"num_classes", c.data.planted.num_classes},
        {"core_indices", c.data.planted.core_indices},
        {"spurious_indices", c.data.planted.spurious_indices},
        {"train_correlation", c.data.planted.train_correlation},
        {"test_correlation", c.data.planted.test_correlation},
        {"signal_scale", c.data.planted.signal_scale},
        {"noise_std", c.data.planted.noise_std},
        {"n_train", c.data.n_train},
        {"n_test", c.data.n_test},
        {"n_monitor", c.data.n_monitor},
        {"train_path", c.data.train_path},
        {"test_path", c.data.test_path},
        {"monitor_path", c.data.monitor_path}}},
      {"model",
       {{"hidden", c.model.hidden},
        {"pretrain_epochs", c.model.pretrain_epochs},
        {"lr", c.model.lr},
        {"batch_size", c.model.batch_size}}},
      {"reference",
       {{"kind", c.reference.kind},
        {"sibling_eps", c.reference.sibling_eps},
        {"sibling_epochs", c.reference.sibling_epochs}}},
      {"refinement",
       {{"enabled", c.refinement.enabled},
        {"lambda", r.lambda},
        {"alpha", r.alpha},
        {"eps_adv", r.eps_adv},
        {"lr", r.lr},
        {"epochs_per_iter", r.epochs_per_iter},
        {"batch_size", r.batch_size},
        {"max_iters", r.max_iters},
        {"instability_repeats", r.instability_repeats},
        {"calibration_size", r.calibration_size},
        {"reg_mode", reg_mode_name(r.reg_mode)},
        {"convergence", {{"tol", r.convergence.tol}, {"patience", r.convergence.patience}}},
        {"thresholds",
         {{"tau", r.thresholds.tau},
          {"eps_sens", r.thresholds.eps_sens},
          {"delta", r.thresholds.delta},
          {"tau_ref", r.thresholds.tau_ref},
          {"percentile_mode", r.thresholds.percentile_mode}}}}},
      {"lime",
       {{"n_samples", c.lime.n_samples},
        {"kernel_width", c.lime.kernel_width},
        {"ridge", c.lime.ridge},
        {"group_size", c.lime.group_size},
        {"baseline", c.lime.baseline}}},
      {"attacks",
       {{"eps", c.attacks.eps},
        {"pgd_steps", c.attacks.pgd_steps},
        {"pgd_step_size", c.attacks.pgd_step_size},
        {"pgd_random_start", c.attacks.pgd_random_start}}},
      {"corruption", {{"enabled", c.corruption.enabled}, {"kinds", kinds}, {"severities", c.corruption.severities}}},
      {"certifier",
       {{"enabled", c.certifier.enabled},
        {"n_points", c.certifier.n_points},
        {"q", std::string(to_string(c.certifier.q))},
        {"spurious", c.certifier.spurious},
        {"with_empirical", c.certifier.with_empirical},
        {"resolution", c.certifier.resolution},
        {"eps_max", c.certifier.eps_max},
        {"search_steps", c.certifier.search_steps},
        {"restarts", c.certifier.restarts},
        {"tolerance", c.certifier.tolerance}}},
      {"control", {{"enabled", c.control.enabled}}},
      {"explain", {{"indices", c.explain.indices}}},
      {"output", {{"dir", c.output.dir}, {"save_models", c.output.save_models}}},
  };
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, const char* stage) { return derive_seed(cfg.seed, stage); }

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p;
  if (cfg.data.source == "planted") {
    auto pd = data::make_planted(cfg.data.planted, cfg.data.n_train, cfg.data.n_test, stage_seed(cfg, "data"));
    p.train = std::move(pd.train);
    p.test = std::move(pd.test);
    p.monitor = data::sample_planted(cfg.data.planted, cfg.data.n_monitor, cfg.data.planted.test_correlation,
                                     stage_seed(cfg, "data/monitor"));
    auto sp = cfg.data.planted.spurious_indices;
    auto core = cfg.data.planted.core_indices;
    std::sort(sp.begin(), sp.end());
    std::sort(core.begin(), core.end());
    p.planted_spurious = sp;
    p.planted_core = core;
  } else {
    p.train = data::load_split(cfg.data.train_path);
    p.test = data::load_split(cfg.data.test_path);
    p.monitor = cfg.data.monitor_path.empty() ? p.train : data::load_split(cfg.data.monitor_path);
    if (p.test.d != p.train.d || p.monitor.d != p.train.d) throw InputError("splits disagree on feature count");
    if (p.test.num_classes != p.train.num_classes || p.monitor.num_classes != p.train.num_classes) {
      throw InputError("splits disagree on class count");
    }
  }
  p.lime = lime::LimeConfig::defaults_for(p.train, stage_seed(cfg, "lime"), cfg.lime.group_size);
  if (cfg.lime.n_samples > 0) p.lime.n_samples = cfg.lime.n_samples;
  if (cfg.lime.kernel_width > 0.0) p.lime.kernel_width = cfg.lime.kernel_width;
  p.lime.ridge = cfg.lime.ridge;
  if (cfg.lime.baseline == "zero") p.lime.baseline.assign(p.train.d, 0.0);
  p.lime.validate(p.train.d);

  p.refinement = cfg.refinement.params;
  p.refinement.lime = p.lime;
  p.refinement.seed = stage_seed(cfg, "refine");
  return p;
}

nn::ModelState train_baseline(const ExperimentConfig& cfg, const Prepared& p) {
  auto model = nn::ModelState::initialize(p.train.d, cfg.model.hidden, p.train.num_classes,
                                          stage_seed(cfg, "model/init"));
  refine::TrainConfig tc{cfg.model.pretrain_epochs, cfg.model.lr, cfg.model.batch_size,
                         stage_seed(cfg, "train/baseline")};
  return refine::standard_train(std::move(model), p.train, tc);
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

attacks::AttackSpec pgd_spec(const ExperimentConfig& cfg, double eps) {
  attacks::AttackSpec s = attacks::AttackSpec::make_pgd(eps, stage_seed(cfg, "attack/pgd"), cfg.attacks.pgd_steps);
  s.step_size = cfg.attacks.pgd_step_size;
  s.random_start = cfg.attacks.pgd_random_start;
  return s;
}

json spurious_json(const refine::Detection& det, const Prepared& p) {
  const auto& s = det.set;
  json j{{"indices", s.indices},
         {"irrelevant", s.irrelevant},
         {"sensitive", s.sensitive},
         {"unstable", s.unstable},
         {"resolved_thresholds",
          {{"tau", s.resolved.tau},
           {"eps_sens", s.resolved.eps_sens},
           {"delta", s.resolved.delta},
           {"tau_ref", s.resolved.tau_ref}}},
         {"mean_alignment", optional_number(det.mean_alignment)}};
  if (p.planted_spurious) {
    const auto score = spurious::score_detection(s.indices, *p.planted_spurious);
    j["precision"] = score.precision;
    j["recall"] = score.recall;
  }
  return j;
}

json trace_json(const refine::RefinementResult& res) {
  json trace = json::array();
  for (const auto& r : res.trace) {
    trace.push_back({{"iteration", r.iteration},
                     {"spurious", r.spurious},
                     {"spurious_size", r.spurious.size()},
                     {"clean_accuracy", r.clean_acc},
                     {"fgsm_accuracy", r.fgsm_acc},
                     {"pgd_accuracy", r.pgd_acc},
                     {"mean_alignment", optional_number(r.mean_alignment)},
                     {"loss_curve", r.loss_curve}});
  }
  return trace;
}

class Stopwatch {
 public:
  explicit Stopwatch(json& sink) : sink_(sink) {}
  template <class F>
  void time(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    sink_[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

 private:
  json& sink_;
};

}  // namespace

json attack_sweep_section(const ExperimentConfig& cfg, const nn::ModelState& model, const data::DatasetSplit& test) {
  json rows = json::array();
  for (double eps : cfg.attacks.eps) {
    rows.push_back({{"attack", "fgsm"},
                    {"eps", eps},
                    {"accuracy", attacks::eval(model, test, attacks::AttackSpec::make_fgsm(eps)).accuracy}});
    rows.push_back({{"attack", "pgd"}, {"eps", eps}, {"accuracy", attacks::eval(model, test, pgd_spec(cfg, eps)).accuracy}});
  }
  return rows;
}

json corruption_section(const ExperimentConfig& cfg, const nn::ModelState& model, const data::DatasetSplit& test) {
  const double eps = cfg.attacks.eps.front();
  const auto grid = attacks::eval_corruption_grid(model, test, cfg.corruption.kinds, cfg.corruption.severities,
                                                  attacks::AttackSpec::make_fgsm(eps), stage_seed(cfg, "corruption"));
  json cells = json::array();
  for (const auto& c : grid.cells) {
    cells.push_back(
        {{"corruption", std::string(data::to_string(c.kind))}, {"severity", c.severity}, {"accuracy", c.result.accuracy}});
  }
  json kinds = json::object();
  for (auto k : grid.kinds) kinds[std::string(data::to_string(k))] = grid.kind_accuracy(k);
  return json{{"attack", "fgsm"}, {"eps", eps}, {"cells", cells}, {"kind_accuracy", kinds},
              {"mean", grid.mean()}, {"std", grid.stddev()}};
}

json certifier_section(const ExperimentConfig& cfg, const Prepared& p, const nn::ModelState& model,
                       const spurious::SpuriousSet* detected) {
  const auto points = p.test.head(std::min(cfg.certifier.n_points, p.test.n));
  lime::Mask indicator(p.test.d, 0);
  spurious::IndexSet used;
  if (cfg.certifier.spurious == "detected" && detected) {
    indicator = detected->spurious_indicator();
    used = detected->indices;
  }
  lime::LimeConfig lc = p.lime;
  lc.seed = stage_seed(cfg, "certify/lime");
  cert::CertifyOptions opts;
  opts.q = cfg.certifier.q;
  opts.with_empirical = cfg.certifier.with_empirical;
  opts.search.resolution = cfg.certifier.resolution;
  opts.search.eps_max = cfg.certifier.eps_max;
  opts.search.steps = cfg.certifier.search_steps;
  opts.search.restarts = cfg.certifier.restarts;
  opts.search.seed = stage_seed(cfg, "certify/search");
  opts.lime = &lc;
  opts.tolerance = cfg.certifier.tolerance;
  const auto rep = cert::certify_split(model, points, indicator, opts);

  json records = json::array();
  for (const auto& r : rep.records) {
    json rec{{"index", r.index},
             {"label", r.label},
             {"predicted", r.predicted},
             {"runner_up", r.runner_up},
             {"margin", r.margin},
             {"l_eff", r.l_eff},
             {"unbounded", r.unbounded},
             {"max_masked_gradient", r.max_masked_gradient},
             {"alignment", optional_number(r.alignment)},
             {"delta_emp", optional_number(r.delta_emp)},
             {"empirical_found", r.empirical_found},
             {"sound", r.sound ? json(*r.sound) : json(nullptr)}};
    rec["delta_min"] = r.unbounded ? json(nullptr) : json(r.delta_min);
    rec["delta_min_as_written"] = r.unbounded ? json(nullptr) : json(r.delta_min_as_written);
    records.push_back(std::move(rec));
  }
  return json{{"q", std::string(to_string(rep.q))},
              {"spurious_mode", cfg.certifier.spurious},
              {"spurious", used},
              {"mean_delta_min", rep.mean_delta_min},
              {"mean_delta_min_as_written", rep.mean_delta_min_as_written},
              {"n_points", rep.records.size()},
              {"n_unbounded", rep.n_unbounded},
              {"n_checked", rep.n_checked},
              {"n_sound", rep.n_sound},
              {"violations", rep.violations},
              {"mean_alignment", optional_number(rep.mean_alignment)},
              {"records", records}};
}

json explain_section(const ExperimentConfig& cfg, const Prepared& p, const nn::ModelState& model) {
  json out = json::array();
  const std::uint64_t base = stage_seed(cfg, "explain");
  for (auto i : cfg.explain.indices) {
    if (i >= p.test.n) throw InputError("explain index " + std::to_string(i) + " beyond the test split");
    lime::LimeConfig lc = p.lime;
    lc.seed = mix_seed(base, i);
    const auto a = lime::explain(model, p.test.row(i), lc);
    out.push_back({{"input_index", i}, {"beta0", a.beta0}, {"beta", a.beta}, {"r2", a.r2}});
  }
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentReport rep;
  json& doc = rep.doc;
  doc["schema"] = kSchema;
  doc["version"] = kVersion;
  doc["config"] = config_to_json(cfg);
  json seeds = json::object();
  for (const char* s : {"data", "data/monitor", "model/init", "train/baseline", "lime", "reference", "refine",
                        "attack/pgd", "corruption", "certify/lime", "certify/search", "explain"}) {
    seeds[s] = stage_seed(cfg, s);
  }
  doc["seeds"] = seeds;
  json timing = json::object();
  Stopwatch sw(timing);
  const auto t0 = std::chrono::steady_clock::now();
  std::string stage;

  try {
    stage = "data";
    Prepared p;
    sw.time(stage, [&] { p = prepare(cfg); });
    doc["data"] = {{"n_train", p.train.n}, {"n_test", p.test.n}, {"n_monitor", p.monitor.n},
                   {"d", p.train.d}, {"num_classes", p.train.num_classes}};
    if (p.planted_spurious) doc["data"]["planted_spurious"] = *p.planted_spurious;
    doc["lime"] = {{"n_samples", p.lime.n_samples}, {"kernel_width", p.lime.kernel_width},
                   {"ridge", p.lime.ridge}, {"group_size", p.lime.group_size}};

    stage = "baseline";
    sw.time(stage, [&] { rep.baseline = train_baseline(cfg, p); });
    const nn::ModelState& baseline = *rep.baseline;

    stage = "reference";
    std::optional<nn::ModelState> sibling;
    spurious::Reference reference = spurious::OracleRelevance{};
    sw.time(stage, [&] {
      if (cfg.reference.kind == "oracle") {
        reference = spurious::OracleRelevance{*p.planted_core};
      } else {
        refine::RefinementConfig rc = p.refinement;
        rc.alpha = 1.0;
        rc.lambda = 0.0;
        rc.eps_adv = cfg.reference.sibling_eps;
        rc.epochs_per_iter = cfg.reference.sibling_epochs;
        rc.lr = cfg.model.lr;
        rc.batch_size = cfg.model.batch_size;
        auto init = nn::ModelState::initialize(p.train.d, cfg.model.hidden, p.train.num_classes,
                                               stage_seed(cfg, "reference/init"));
        sibling = refine::train_epochs(std::move(init), p.train, spurious::SpuriousSet::empty(p.train.d), rc,
                                       stage_seed(cfg, "reference"), 0);
        reference = std::cref(*sibling);
      }
    });
    doc["reference"] = {{"kind", cfg.reference.kind}};

    stage = "refinement";
    refine::RefinementResult res{baseline, {}, {}, {}, 0, false, true, {}};
    if (cfg.refinement.enabled) {
      sw.time(stage, [&] { res = refine::refine(baseline, p.train, p.monitor, reference, p.refinement); });
    }
    rep.refined = res.model;
    rep.checkpoints = res.checkpoints;
    doc["refinement"] = {{"enabled", cfg.refinement.enabled},
                         {"iterations", res.trace.size()},
                         {"best_iteration", res.best_iteration},
                         {"converged", res.converged},
                         {"complete", res.complete},
                         {"error", res.complete ? json(nullptr) : json(res.error)},
                         {"trace", trace_json(res)}};
    if (!res.complete) throw TrainingError(res.error, res.trace.size() + 1);
    const nn::ModelState& refined = *rep.refined;

    stage = "detection";
    const auto calibration = refine::calibration_subset(p.train, p.refinement);
    std::optional<refine::Detection> det_base, det_ref;
    sw.time(stage, [&] {
      det_base = refine::detect_spurious(baseline, calibration, reference, p.refinement, 1);
      det_ref = refine::detect_spurious(refined, calibration, reference, p.refinement, 1);
    });

    for (auto [name, model, det] : {std::tuple{"baseline", &baseline, &*det_base},
                                    std::tuple{"refined", &refined, &*det_ref}}) {
      json& sec = doc[name];
      stage = std::string("evaluation/") + name;
      sw.time(stage, [&] {
        sec["clean_accuracy"] = attacks::eval(*model, p.test, attacks::AttackSpec::clean()).accuracy;
        sec["attack_sweep"] = attack_sweep_section(cfg, *model, p.test);
        sec["spurious"] = spurious_json(*det, p);
      });
      if (cfg.corruption.enabled) {
        stage = std::string("corruption/") + name;
        sw.time(stage, [&] { sec["corruption"] = corruption_section(cfg, *model, p.test); });
      }
      if (cfg.certifier.enabled) {
        stage = std::string("certifier/") + name;
        sw.time(stage, [&] { sec["bounds"] = certifier_section(cfg, p, *model, &det->set); });
      }
      stage = std::string("explain/") + name;
      sw.time(stage, [&] { sec["explanations"] = explain_section(cfg, p, *model); });
    }
    if (cfg.certifier.enabled) {
      const double b = doc["baseline"]["bounds"]["mean_delta_min"].get<double>();
      const double r = doc["refined"]["bounds"]["mean_delta_min"].get<double>();
      doc["bound_claim"] = {{"baseline_mean_delta_min", b}, {"refined_mean_delta_min", r},
                            {"refined_ge_baseline", r >= b}};
    }

    if (cfg.refinement.enabled && cfg.control.enabled) {
      stage = "control";
      sw.time(stage, [&] {
        refine::RefinementConfig rc = p.refinement;
        rc.lambda = 0.0;
        const auto ctrl = refine::refine(baseline, p.train, p.monitor, reference, rc);
        if (!ctrl.complete) throw TrainingError(ctrl.error, ctrl.trace.size() + 1);
        const spurious::IndexSet features =
            p.planted_spurious ? *p.planted_spurious : (res.sets.empty() ? spurious::IndexSet{} : res.sets.back().indices);
        // Same number of refinement iterations as the selected refined checkpoint.
        const std::size_t it = std::min(res.best_iteration, ctrl.checkpoints.size());
        const nn::ModelState& ctrl_model = it ? ctrl.checkpoints[it - 1] : baseline;
        const double g_ref = refine::mean_squared_feature_gradient(refined, p.test, features);
        const double g_ctrl = refine::mean_squared_feature_gradient(ctrl_model, p.test, features);
        doc["control"] = {{"features", features},
                          {"baseline_sq_gradient", refine::mean_squared_feature_gradient(baseline, p.test, features)},
                          {"refined_sq_gradient", g_ref},
                          {"control_sq_gradient", g_ctrl},
                          {"ratio", g_ctrl > 0.0 ? json(g_ref / g_ctrl) : json(nullptr)},
                          {"control_iteration", it}};
      });
    }
  } catch (const std::exception& e) {
    rep.complete = false;
    doc["error"] = stage + ": " + e.what();
  }
  doc["complete"] = rep.complete;
  if (rep.complete) doc["error"] = nullptr;
  timing["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  doc["timing"] = timing;
  return rep;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void close_checked(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw std::runtime_error("error writing " + path.string());
}

std::string num(const json& v) { return v.is_null() ? std::string() : data::format_double(v.get<double>()); }

}  // namespace

void emit_report(const ExperimentReport& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_dir) {
  const json& doc = report.doc;
  {
    auto out = open_out(json_path);
    out << doc.dump(2) << '\n';
    close_checked(out, json_path);
  }
  const bool both = doc.contains("baseline") && doc.contains("refined") &&
                    doc["baseline"].contains("attack_sweep") && doc["refined"].contains("attack_sweep");
  if (both) {
    const auto path = csv_dir / "attack_sweep.csv";
    auto out = open_out(path);
    out << "eps,attack,model,accuracy\n";
    const auto& rows = doc["baseline"]["attack_sweep"];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const char* m : {"baseline", "refined"}) {
        const auto& r = doc[m]["attack_sweep"][i];
        out << num(r["eps"]) << ',' << r["attack"].get<std::string>() << ',' << m << ',' << num(r["accuracy"]) << '\n';
      }
    }
    close_checked(out, path);
  }
  if (both && doc["baseline"].contains("corruption") && doc["refined"].contains("corruption")) {
    const auto path = csv_dir / "corruption_grid.csv";
    auto out = open_out(path);
    out << "corruption,severity,attack,eps,model,accuracy\n";
    for (const char* m : {"baseline", "refined"}) {
      const auto& g = doc[m]["corruption"];
      for (const auto& c : g["cells"]) {
        out << c["corruption"].get<std::string>() << ',' << c["severity"].get<int>() << ','
            << g["attack"].get<std::string>() << ',' << num(g["eps"]) << ',' << m << ',' << num(c["accuracy"]) << '\n';
      }
    }
    close_checked(out, path);
  }
  for (const char* m : {"baseline", "refined"}) {
    if (!doc.contains(m) || !doc[m].contains("bounds")) continue;
    const auto path = csv_dir / (std::string("bounds_") + m + ".csv");
    auto out = open_out(path);
    out << "index,label,predicted,runner_up,margin,l_eff,delta_min,delta_min_as_written,unbounded,"
           "max_masked_gradient,alignment,delta_emp,sound\n";
    for (const auto& r : doc[m]["bounds"]["records"]) {
      out << r["index"].get<std::size_t>() << ',' << r["label"].get<std::size_t>() << ','
          << r["predicted"].get<std::size_t>() << ',' << r["runner_up"].get<std::size_t>() << ',' << num(r["margin"])
          << ',' << num(r["l_eff"]) << ',' << num(r["delta_min"]) << ',' << num(r["delta_min_as_written"]) << ','
          << (r["unbounded"].get<bool>() ? 1 : 0) << ',' << num(r["max_masked_gradient"]) << ','
          << num(r["alignment"]) << ',' << num(r["delta_emp"]) << ','
          << (r["sound"].is_null() ? "" : (r["sound"].get<bool>() ? "1" : "0")) << '\n';
    }
    close_checked(out, path);
  }
  if (doc.contains("refinement")) {
    const auto path = csv_dir / "refinement_trace.csv";
    auto out = open_out(path);
    out << "iteration,spurious_size,clean_accuracy,fgsm_accuracy,pgd_accuracy,mean_alignment\n";
    for (const auto& r : doc["refinement"]["trace"]) {
      out << r["iteration"].get<std::size_t>() << ',' << r["spurious_size"].get<std::size_t>() << ','
          << num(r["clean_accuracy"]) << ',' << num(r["fgsm_accuracy"]) << ',' << num(r["pgd_accuracy"]) << ','
          << num(r["mean_alignment"]) << '\n';
    }
    close_checked(out, path);
  }
}

void save_models(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (report.baseline) nn::save_model(*report.baseline, dir / "baseline.json");
  if (report.refined) nn::save_model(*report.refined, dir / "refined.json");
  for (std::size_t i = 0; i < report.checkpoints.size(); ++i) {
    nn::save_model(report.checkpoints[i], dir / ("checkpoint_iter" + std::to_string(i + 1) + ".json"));
  }
}

std::string canonical_report(const json& doc) {
  json copy = doc;
  copy.erase("timing");
  return copy.dump(2);
}

}  // namespace attrguard::harness
