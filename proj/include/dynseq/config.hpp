#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynseq/market_data.hpp"
#include "dynseq/sweep.hpp"

namespace dynseq {

using Json = nlohmann::ordered_json;

enum class LossMode { static_horizon, dynamic };

inline std::string_view to_string(LossMode m) { return m == LossMode::dynamic ? "dynamic" : "static"; }

inline LossMode parse_loss_mode(std::string_view s) {
  if (s == "dynamic") return LossMode::dynamic;
  if (s == "static") return LossMode::static_horizon;
  throw ConfigError("unknown loss mode '" + std::string(s) + "' (expected static or dynamic)");
}

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected adam or sgd)");
}

/// Everything one CLI invocation needs. Defaults here are the documented
/// defaults; a config file only has to name the values it changes.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::string dataset;  // prices CSV; empty means generate from `synthetic`
  SyntheticConfig synthetic;
  LabelingConfig labeling;
  ModelConfig model = ModelConfig::defaults(ModelKind::seq2seq, 4);
  LossMode loss_mode = LossMode::dynamic;
  DynamicLossConfig loss;
  WalkForwardConfig walk_forward;
  TrainingConfig training;
  SweepConfig sweep;
  bool compare_static = false;

  RunConfig() {
    model.hidden = 32;
    walk_forward.seed = seed;
  }

  /// Loss settings with the horizon tied to the model and, in static mode,
  /// the always-continue configuration.
  DynamicLossConfig effective_loss() const {
    if (loss_mode == LossMode::static_horizon) return DynamicLossConfig::full_horizon(model.output_steps());
    DynamicLossConfig l = loss;
    l.horizon = model.output_steps();
    return l;
  }

  WalkForwardConfig effective_walk_forward() const {
    WalkForwardConfig w = walk_forward;
    w.seed = derive_seed(seed, {std::uint64_t{0x3a1c}});
    return w;
  }

  SyntheticConfig effective_synthetic() const {
    SyntheticConfig s = synthetic;
    s.seed = derive_seed(seed, {std::uint64_t{0xda7a}});
    return s;
  }

  void validate() const {
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (dataset.empty()) synthetic.validate();
    labeling.validate();
    model.validate();
    if (model.series != (dataset.empty() ? synthetic.series : model.series))
      throw ConfigError("model.series must equal synthetic.series");
    effective_loss().validate();
    walk_forward.validate();
    training.validate();
    sweep.validate();
  }
};

namespace detail {

inline void reject_unknown(const Json& j, const std::string& where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string_view> allowed(keys);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + where + "." + key + "': " + e.what());
  }
}

template <typename T, typename Parse>
void read_enum(const Json& j, const char* key, T& out, Parse parse, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ConfigError("config key '" + where + "." + key + "' must be a string");
  out = parse(j.at(key).get<std::string>());
}

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  Json regimes = Json::array();
  for (const auto& r : c.synthetic.regimes) regimes.push_back({{"start_tick", r.start_tick}, {"multipliers", r.multipliers}});
  return Json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset", c.dataset},
      {"synthetic",
       {{"series", c.synthetic.series},
        {"ticks_per_day", c.synthetic.ticks_per_day},
        {"days", c.synthetic.days},
        {"volatility", c.synthetic.volatility},
        {"regimes", regimes},
        {"factor_loading", c.synthetic.factor_loading},
        {"degrees_of_freedom", c.synthetic.degrees_of_freedom},
        {"trend_scale", c.synthetic.trend_scale},
        {"trend_persistence", c.synthetic.trend_persistence}}},
      {"labeling",
       {{"beta", c.labeling.beta},
        {"calibrate", c.labeling.calibrate},
        {"target_middle_fraction", c.labeling.target_middle_fraction}}},
      {"model",
       {{"kind", to_string(c.model.kind)},
        {"hidden", c.model.hidden},
        {"input_length", c.model.input_length},
        {"horizon", c.model.horizon},
        {"attention", c.model.attention},
        {"layers", c.model.layers},
        {"init_scale", c.model.init_scale}}},
      {"loss",
       {{"mode", to_string(c.loss_mode)},
        {"tau", c.loss.tau},
        {"lambda", c.loss.lambda},
        {"sharpness", c.loss.sharpness},
        {"confidence", to_string(c.loss.kind)},
        {"mask", to_string(c.loss.mask)},
        {"mask_gradient", to_string(c.loss.mask_gradient)}}},
      {"walk_forward",
       {{"train_span", c.walk_forward.train_span},
        {"test_span", c.walk_forward.test_span},
        {"step", c.walk_forward.step},
        {"window_count", c.walk_forward.window_count},
        {"warm_start", c.walk_forward.warm_start},
        {"max_epochs", c.walk_forward.max_epochs},
        {"patience", c.walk_forward.patience},
        {"validation_fraction", c.walk_forward.validation_fraction}}},
      {"training",
       {{"optimizer", to_string(c.training.optimizer)},
        {"learning_rate", c.training.learning_rate},
        {"batch_size", c.training.batch_size},
        {"clip_norm", c.training.clip_norm},
        {"eval_batch_size", c.training.eval_batch_size}}},
      {"sweep",
       {{"taus", c.sweep.taus},
        {"lambdas", c.sweep.lambdas},
        {"static_lengths", c.sweep.static_lengths},
        {"sensitivity_lambda", c.sweep.sensitivity_lambda},
        {"workers", c.sweep.workers}}},
      {"train", {{"compare_static", c.compare_static}}},
  };
}

/// Overlays `j` onto `c`. Unknown keys and wrongly typed values are errors.
inline void apply_json(RunConfig& c, const Json& j) {
  using detail::read;
  using detail::read_enum;
  detail::reject_unknown(j, "", {"seed", "output_dir", "dataset", "synthetic", "labeling", "model", "loss",
                                 "walk_forward", "training", "sweep", "train"});
  read(j, "seed", c.seed, "");
  read(j, "output_dir", c.output_dir, "");
  read(j, "dataset", c.dataset, "");
  if (j.contains("synthetic")) {
    const Json& s = j["synthetic"];
    detail::reject_unknown(s, "synthetic", {"series", "ticks_per_day", "days", "volatility", "regimes",
                                            "factor_loading", "degrees_of_freedom", "trend_scale",
                                            "trend_persistence"});
    read(s, "series", c.synthetic.series, "synthetic");
    read(s, "ticks_per_day", c.synthetic.ticks_per_day, "synthetic");
    read(s, "days", c.synthetic.days, "synthetic");
    read(s, "volatility", c.synthetic.volatility, "synthetic");
    if (s.contains("regimes")) {
      if (!s["regimes"].is_array()) throw ConfigError("synthetic.regimes must be an array");
      c.synthetic.regimes.clear();
      for (const Json& r : s["regimes"]) {
        detail::reject_unknown(r, "synthetic.regimes[]", {"start_tick", "multipliers"});
        RegimeSegment seg;
        read(r, "start_tick", seg.start_tick, "synthetic.regimes[]");
        read(r, "multipliers", seg.multipliers, "synthetic.regimes[]");
        c.synthetic.regimes.push_back(std::move(seg));
      }
    }
    read(s, "factor_loading", c.synthetic.factor_loading, "synthetic");
    read(s, "degrees_of_freedom", c.synthetic.degrees_of_freedom, "synthetic");
    read(s, "trend_scale", c.synthetic.trend_scale, "synthetic");
    read(s, "trend_persistence", c.synthetic.trend_persistence, "synthetic");
    if (s.contains("series")) c.model.series = c.synthetic.series;
  }
  if (j.contains("labeling")) {
    const Json& s = j["labeling"];
    detail::reject_unknown(s, "labeling", {"beta", "calibrate", "target_middle_fraction"});
    read(s, "beta", c.labeling.beta, "labeling");
    read(s, "calibrate", c.labeling.calibrate, "labeling");
    read(s, "target_middle_fraction", c.labeling.target_middle_fraction, "labeling");
  }
  if (j.contains("model")) {
    const Json& s = j["model"];
    detail::reject_unknown(s, "model", {"kind", "hidden", "input_length", "horizon", "attention", "layers",
                                        "init_scale"});
    if (s.contains("kind")) {
      ModelKind k = c.model.kind;
      read_enum(s, "kind", k, parse_model_kind, "model");
      if (k != c.model.kind) {
        const std::size_t q = c.model.series, h = c.model.hidden;
        c.model = ModelConfig::defaults(k, q);
        c.model.hidden = h;
      }
    }
    read(s, "hidden", c.model.hidden, "model");
    read(s, "input_length", c.model.input_length, "model");
    read(s, "horizon", c.model.horizon, "model");
    read(s, "attention", c.model.attention, "model");
    read(s, "layers", c.model.layers, "model");
    read(s, "init_scale", c.model.init_scale, "model");
  }
  if (j.contains("loss")) {
    const Json& s = j["loss"];
    detail::reject_unknown(s, "loss", {"mode", "tau", "lambda", "sharpness", "confidence", "mask", "mask_gradient"});
    read_enum(s, "mode", c.loss_mode, parse_loss_mode, "loss");
    read(s, "tau", c.loss.tau, "loss");
    read(s, "lambda", c.loss.lambda, "loss");
    read(s, "sharpness", c.loss.sharpness, "loss");
    read_enum(s, "confidence", c.loss.kind, parse_confidence_kind, "loss");
    read_enum(s, "mask", c.loss.mask, parse_mask_mode, "loss");
    read_enum(s, "mask_gradient", c.loss.mask_gradient, parse_mask_gradient, "loss");
  }
  if (j.contains("walk_forward")) {
    const Json& s = j["walk_forward"];
    detail::reject_unknown(s, "walk_forward", {"train_span", "test_span", "step", "window_count", "warm_start",
                                               "max_epochs", "patience", "validation_fraction"});
    read(s, "train_span", c.walk_forward.train_span, "walk_forward");
    read(s, "test_span", c.walk_forward.test_span, "walk_forward");
    read(s, "step", c.walk_forward.step, "walk_forward");
    read(s, "window_count", c.walk_forward.window_count, "walk_forward");
    read(s, "warm_start", c.walk_forward.warm_start, "walk_forward");
    read(s, "max_epochs", c.walk_forward.max_epochs, "walk_forward");
    read(s, "patience", c.walk_forward.patience, "walk_forward");
    read(s, "validation_fraction", c.walk_forward.validation_fraction, "walk_forward");
  }
  if (j.contains("training")) {
    const Json& s = j["training"];
    detail::reject_unknown(s, "training", {"optimizer", "learning_rate", "batch_size", "clip_norm", "eval_batch_size"});
    read_enum(s, "optimizer", c.training.optimizer, parse_optimizer, "training");
    read(s, "learning_rate", c.training.learning_rate, "training");
    read(s, "batch_size", c.training.batch_size, "training");
    read(s, "clip_norm", c.training.clip_norm, "training");
    read(s, "eval_batch_size", c.training.eval_batch_size, "training");
  }
  if (j.contains("sweep")) {
    const Json& s = j["sweep"];
    detail::reject_unknown(s, "sweep", {"taus", "lambdas", "static_lengths", "sensitivity_lambda", "workers"});
    read(s, "taus", c.sweep.taus, "sweep");
    read(s, "lambdas", c.sweep.lambdas, "sweep");
    read(s, "static_lengths", c.sweep.static_lengths, "sweep");
    read(s, "sensitivity_lambda", c.sweep.sensitivity_lambda, "sweep");
    read(s, "workers", c.sweep.workers, "sweep");
  }
  if (j.contains("train")) {
    const Json& s = j["train"];
    detail::reject_unknown(s, "train", {"compare_static"});
    read(s, "compare_static", c.compare_static, "train");
  }
}

/// Turns "a.b.c=value" into {"a":{"b":{"c":value}}}; the value is parsed as
/// JSON when possible and taken as a string otherwise.
inline Json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::vector<std::string> keys;
  for (std::size_t lo = 0;;) {
    const auto dot = path.find('.', lo);
    keys.push_back(path.substr(lo, dot - lo));
    if (dot == std::string::npos) break;
    lo = dot + 1;
  }
  Json out = value;
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) {
    if (it->empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    out = Json{{*it, out}};
  }
  return out;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j = Json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  RunConfig c;
  apply_json(c, j);
  return c;
}

/// DYNSEQ_OUTPUT_DIR, when set, replaces the configured output directory.
inline void apply_environment(RunConfig& c) {
  if (const char* dir = std::getenv("DYNSEQ_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
}

inline void write_effective_config(const RunConfig& c) {
  std::filesystem::create_directories(c.output_dir);
  std::ofstream out(std::filesystem::path(c.output_dir) / "config.effective.json");
  out << to_json(c).dump(2) << "\n";
  if (!out) throw Error("cannot write config.effective.json to " + c.output_dir);
}

/// Prices from the configured dataset file or the generator.
inline Tensor load_prices(const RunConfig& c) {
  if (c.dataset.empty()) return generate_synthetic(c.effective_synthetic());
  if (!std::filesystem::exists(c.dataset)) throw ConfigError("dataset file not found: " + c.dataset);
  return read_prices_csv(c.dataset);
}

/// Labels returns with beta calibrated on the first training span only (or
/// the configured beta when calibration is off).
inline LabeledSeries prepare_data(const RunConfig& c, const Tensor& prices) {
  const Tensor returns = compute_returns(prices);
  if (returns.cols() != c.model.series)
    throw ConfigError("dataset has " + std::to_string(returns.cols()) + " series but model.series is " +
                      std::to_string(c.model.series));
  const std::size_t tpd = c.synthetic.ticks_per_day;
  double beta = c.labeling.beta;
  if (c.labeling.calibrate)
    beta = calibrate_beta_daily(returns, tpd, c.labeling.target_middle_fraction, tpd + c.walk_forward.train_span);
  return label_series(returns, tpd, beta);
}

}  // namespace dynseq
