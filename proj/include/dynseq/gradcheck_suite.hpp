#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dynseq/dynamic_loss.hpp"
#include "dynseq/gradcheck.hpp"
#include "dynseq/models.hpp"
#include "dynseq/random.hpp"

namespace dynseq {

struct GradCheckCase {
  ModelKind model = ModelKind::seq2seq;
  bool attention = false;
  MaskMode mask = MaskMode::sigmoid;
  MaskGradient mask_gradient = MaskGradient::full;
  ConfidenceKind kind = ConfidenceKind::confidence_distance;

  std::string name() const {
    std::string n(to_string(model));
    if (model == ModelKind::seq2seq && attention) n += "+attn";
    n += "/";
    n += to_string(mask);
    if (mask == MaskMode::sigmoid && mask_gradient == MaskGradient::detached) n += "-detached";
    n += "/";
    n += to_string(kind);
    return n;
  }
};

/// Every model variant x mask x confidence kind with the full sigmoid
/// gradient, plus the detached sigmoid variants.
inline std::vector<GradCheckCase> all_gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  const std::pair<ModelKind, bool> models[] = {
      {ModelKind::ffn, false}, {ModelKind::lstm, false}, {ModelKind::seq2seq, false}, {ModelKind::seq2seq, true}};
  const ConfidenceKind kinds[] = {ConfidenceKind::maximum, ConfidenceKind::confidence_distance,
                                  ConfidenceKind::total_variation, ConfidenceKind::emd};
  for (auto [m, attn] : models)
    for (MaskMode mask : {MaskMode::indicator, MaskMode::sigmoid})
      for (ConfidenceKind k : kinds) cases.push_back({m, attn, mask, MaskGradient::full, k});
  for (auto [m, attn] : models)
    for (ConfidenceKind k : kinds) cases.push_back({m, attn, MaskMode::sigmoid, MaskGradient::detached, k});
  return cases;
}

/// Keeps cases whose name contains `filter` (empty keeps all).
inline std::vector<GradCheckCase> filter_cases(const std::vector<GradCheckCase>& cases, const std::string& filter) {
  std::vector<GradCheckCase> out;
  for (const auto& c : cases)
    if (filter.empty() || c.name().find(filter) != std::string::npos) out.push_back(c);
  return out;
}

struct GradSuiteConfig {
  std::size_t series = 2;
  std::size_t input_length = 6;
  std::size_t horizon = 3;  // seq2seq only; ffn and lstm emit one step
  std::size_t hidden = 8;
  std::size_t batch = 3;
  double init_scale = 0.3;
  double lambda = 0.5;
  double sharpness = 10.0;
  double tolerance = 1e-4;
  double margin = 1e-3;       // minimum |G - theta|
  double kink_margin = 1e-4;  // minimum distance from ties and zero crossings
  double epsilon = 1e-5;
  std::size_t max_attempts = 50;
  std::uint64_t seed = 7;
};

struct GradCaseResult {
  std::string name;
  bool passed = false;
  std::size_t attempts = 0;
  double tau = 0.0;
  GradCheckResult check;
  std::string note;
};

namespace detail {

inline std::vector<LabeledWindow> toy_windows(const GradSuiteConfig& cfg, Rng& rng) {
  std::vector<LabeledWindow> out(cfg.batch);
  std::normal_distribution<double> n01;
  for (std::size_t i = 0; i < cfg.batch; ++i) {
    LabeledWindow& w = out[i];
    w.inputs = Tensor::matrix(cfg.input_length, cfg.series);
    for (std::size_t j = 0; j < w.inputs.size(); ++j) w.inputs[j] = n01(rng.engine());
    w.labels.resize(cfg.horizon * cfg.series);
    for (int& l : w.labels) l = static_cast<int>(rng.index(kClassCount));
    w.first_labels.resize(cfg.series);
    for (int& l : w.first_labels) l = static_cast<int>(rng.index(kClassCount));
    w.start = i;
  }
  return out;
}

/// Distance from the nearest nondifferentiable configuration of the confidence
/// function at distribution p (with predecessor prev).
inline double kink_distance(ConfidenceKind kind, std::span<const double> p, std::span<const double> prev) {
  std::vector<double> v;
  switch (kind) {
    case ConfidenceKind::maximum:
    case ConfidenceKind::confidence_distance:
      v.assign(p.begin(), p.end());
      break;
    case ConfidenceKind::total_variation:
      for (std::size_t i = 0; i < p.size(); ++i) v.push_back(std::fabs(p[i] - prev[i]));
      break;
    case ConfidenceKind::emd: {
      double d = 0.0, m = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i + 1 < p.size(); ++i) {
        d += p[i] - prev[i];
        m = std::min(m, std::fabs(d));
      }
      return m;
    }
  }
  std::sort(v.begin(), v.end(), std::greater<>());
  double m = v[0] - v[1];
  if (kind == ConfidenceKind::confidence_distance) m = std::min(m, v[1] - v[2]);
  if (kind == ConfidenceKind::total_variation) m = std::min(m, v[0]);
  return m;
}

/// Threshold in the widest gap among the central half of the observed
/// confidences, so both sides of the mask are exercised. Returns the gap
/// half-width through `half_gap`.
inline double pick_threshold(std::vector<double> g, double& half_gap) {
  std::sort(g.begin(), g.end());
  const std::size_t lo = g.size() / 4, hi = std::max(lo + 1, (3 * g.size()) / 4);
  double best = -1.0, theta = g[g.size() / 2];
  for (std::size_t i = lo; i < hi && i + 1 < g.size(); ++i)
    if (g[i + 1] - g[i] > best) best = g[i + 1] - g[i], theta = 0.5 * (g[i] + g[i + 1]);
  half_gap = 0.5 * best;
  return theta;
}

}  // namespace detail

/// Runs one case: reseeds until a point sits at least `margin` away from every
/// mask boundary and kink, then compares analytic and numeric gradients.
inline GradCaseResult run_gradcheck_case(const GradCheckCase& c, const GradSuiteConfig& cfg, std::size_t case_index,
                                         const std::function<void(ParameterSet&)>& tamper = {}) {
  GradCaseResult res;
  res.name = c.name();
  ModelConfig mc = ModelConfig::defaults(c.model, cfg.series);
  mc.hidden = cfg.hidden;
  mc.input_length = cfg.input_length;
  mc.attention = c.model == ModelKind::seq2seq && c.attention;
  mc.layers = c.model == ModelKind::seq2seq ? 1 : 2;
  mc.horizon = c.model == ModelKind::seq2seq ? cfg.horizon : 1;
  mc.init_scale = cfg.init_scale;
  const std::size_t steps = mc.output_steps();

  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    res.attempts = attempt + 1;
    const std::uint64_t seed = derive_seed(cfg.seed, {std::uint64_t{case_index}, std::uint64_t{attempt}});
    Rng rng(seed);
    Model model(mc, derive_seed(seed, {std::uint64_t{1}}));
    const std::vector<LabeledWindow> windows = detail::toy_windows(cfg, rng);
    const Batch batch = make_batch(windows);

    DynamicLossConfig lc;
    lc.kind = c.kind;
    lc.mask = c.mask;
    lc.mask_gradient = c.mask_gradient;
    lc.horizon = steps;
    lc.lambda = cfg.lambda;
    lc.sharpness = cfg.sharpness;

    // Observe confidences and kink margins at this point.
    std::vector<double> gs;
    double kink = std::numeric_limits<double>::infinity();
    {
      Graph g(GradMode::inference);
      const ForwardPass pass = model.forward(g, batch, steps);
      std::vector<double> onehot(kClassCount);
      for (std::size_t b = 0; b < batch.size; ++b)
        for (std::size_t q = 0; q < batch.series; ++q) {
          std::fill(onehot.begin(), onehot.end(), 0.0);
          onehot[static_cast<std::size_t>(batch.first_label(b, q))] = 1.0;
          std::vector<double> prev = onehot;
          for (std::size_t t = 0; t < steps; ++t) {
            auto p = g.value(pass.dists[t][q]).row_span(b);
            gs.push_back(confidence(c.kind, p, prev));
            kink = std::min(kink, detail::kink_distance(c.kind, p, prev));
            prev.assign(p.begin(), p.end());
          }
        }
    }
    if (kink < cfg.kink_margin) continue;
    double half_gap = 0.0;
    const double theta = detail::pick_threshold(gs, half_gap);
    if (half_gap < cfg.margin) continue;
    lc.tau = is_volatility_kind(c.kind) ? -theta : theta;
    try {
      lc.validate();
    } catch (const ConfigError&) {
      continue;
    }
    res.tau = lc.tau;

    std::vector<double> frozen;
    if (c.mask == MaskMode::sigmoid && c.mask_gradient == MaskGradient::detached) {
      Graph g(GradMode::inference);
      const ForwardPass pass = model.forward(g, batch, steps);
      frozen = dynamic_loss(g, pass.dists, batch, lc).trace.weight;
    }
    const LossFunction loss = [&](ParameterSet&, bool with_grad) {
      Graph g(with_grad ? GradMode::record : GradMode::inference);
      const ForwardPass pass = model.forward(g, batch, steps);
      const DynamicLossResult r = dynamic_loss(g, pass.dists, batch, lc, frozen);
      if (with_grad) g.backward(r.loss);
      return r.value;
    };
    res.check = finite_diff_check(model.params(), loss, cfg.epsilon, tamper);
    res.passed = res.check.max_relative_error <= cfg.tolerance;
    return res;
  }
  res.note = "no point clear of mask boundaries and kinks after " + std::to_string(cfg.max_attempts) + " attempts";
  return res;
}

inline std::vector<GradCaseResult> run_gradcheck_suite(const std::vector<GradCheckCase>& cases,
                                                       const GradSuiteConfig& cfg = {},
                                                       const std::function<void(ParameterSet&)>& tamper = {}) {
  if (cases.empty()) throw UsageError("gradcheck: no configurations selected");
  std::vector<GradCaseResult> out;
  for (std::size_t i = 0; i < cases.size(); ++i) out.push_back(run_gradcheck_case(cases[i], cfg, i, tamper));
  return out;
}

}  // namespace dynseq
