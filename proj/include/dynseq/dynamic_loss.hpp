#pragma once

// Confidence-thresholded sequence loss.
//
// For every series q the decoder emits distributions f_1..f_T. A confidence
// value G_t is computed from f_t (and f_{t-1} for the time-dependent kinds);
// the series "continues" while G_t >= threshold. Training masks each step's
// KL term either by a hard indicator (truncated at the first failing step) or
// by a sigmoid of G_t, and adds lambda * max(threshold - G_t, 0) at every step
// so that stopping early is never free.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dynseq/batch.hpp"
#include "dynseq/graph.hpp"
#include "dynseq/models.hpp"

namespace dynseq {

enum class ConfidenceKind { maximum, confidence_distance, total_variation, emd };
enum class MaskMode { indicator, sigmoid };

/// Whether the sigmoid mask passes gradient to G (full) or acts as a
/// per-sample constant weight on the KL term (detached).
enum class MaskGradient { full, detached };

inline std::string_view to_string(ConfidenceKind k) {
  switch (k) {
    case ConfidenceKind::maximum: return "max";
    case ConfidenceKind::confidence_distance: return "cd";
    case ConfidenceKind::total_variation: return "tv";
    case ConfidenceKind::emd: return "emd";
  }
  return "?";
}

inline std::string_view to_string(MaskMode m) { return m == MaskMode::indicator ? "indicator" : "sigmoid"; }

inline ConfidenceKind parse_confidence_kind(std::string_view s) {
  if (s == "max" || s == "maximum") return ConfidenceKind::maximum;
  if (s == "cd" || s == "confidence_distance") return ConfidenceKind::confidence_distance;
  if (s == "tv" || s == "total_variation") return ConfidenceKind::total_variation;
  if (s == "emd" || s == "wasserstein") return ConfidenceKind::emd;
  throw ConfigError("unknown confidence kind '" + std::string(s) + "' (expected max, cd, tv or emd)");
}

inline std::string_view to_string(MaskGradient m) { return m == MaskGradient::full ? "full" : "detached"; }

inline MaskGradient parse_mask_gradient(std::string_view s) {
  if (s == "full") return MaskGradient::full;
  if (s == "detached") return MaskGradient::detached;
  throw ConfigError("unknown mask gradient '" + std::string(s) + "' (expected full or detached)");
}

inline MaskMode parse_mask_mode(std::string_view s) {
  if (s == "indicator" || s == "ind") return MaskMode::indicator;
  if (s == "sigmoid" || s == "sig") return MaskMode::sigmoid;
  throw ConfigError("unknown mask mode '" + std::string(s) + "' (expected indicator or sigmoid)");
}

/// Total variation and EMD measure volatility between consecutive outputs;
/// their confidence value is the negated measure.
constexpr bool is_volatility_kind(ConfidenceKind k) {
  return k == ConfidenceKind::total_variation || k == ConfidenceKind::emd;
}

struct DynamicLossConfig {
  double tau = 0.3;
  double lambda = 0.1;
  double sharpness = 10.0;  // k
  ConfidenceKind kind = ConfidenceKind::confidence_distance;
  MaskMode mask = MaskMode::sigmoid;
  MaskGradient mask_gradient = MaskGradient::detached;
  std::size_t horizon = 10;

  /// Always-continue configuration: reduces to the plain KL sum over T steps.
  static DynamicLossConfig full_horizon(std::size_t horizon) {
    DynamicLossConfig c;
    c.tau = 0.0;
    c.lambda = 0.0;
    c.kind = ConfidenceKind::maximum;
    c.mask = MaskMode::indicator;
    c.horizon = horizon;
    return c;
  }

  /// Value G must reach to continue: tau, or -tau for volatility kinds.
  double threshold() const { return is_volatility_kind(kind) ? -tau : tau; }

  /// Denominator inside the sigmoid mask.
  double sigmoid_scale() const { return is_volatility_kind(kind) ? 1.0 : 1.0 - tau; }

  void validate() const {
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("loss: tau must be a finite nonnegative number");
    if (!is_volatility_kind(kind) && tau > 1.0) throw ConfigError("loss: tau must lie in [0,1] for max/cd");
    if (mask == MaskMode::sigmoid && !is_volatility_kind(kind) && tau >= 1.0)
      throw ConfigError("loss: sigmoid masking needs tau < 1 for max/cd");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("loss: lambda must be nonnegative");
    if (!(sharpness > 0.0) || !std::isfinite(sharpness)) throw ConfigError("loss: sharpness k must be positive");
    if (horizon == 0) throw ConfigError("loss: horizon must be positive");
  }
};

// ---- scalar building blocks -------------------------------------------------

inline double kl_onehot(int true_class, std::span<const double> p) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= p.size())
    throw UsageError("kl_onehot: class " + std::to_string(true_class) + " outside [0," + std::to_string(p.size()) +
                     ")");
  return -std::log(std::max(p[static_cast<std::size_t>(true_class)], kLogFloor));
}

/// max_j |p_j - r_j|
inline double total_variation_distance(std::span<const double> p, std::span<const double> r) {
  double m = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) m = std::max(m, std::fabs(p[j] - r[j]));
  return m;
}

/// Wasserstein-1 over ordered classes with ground distance |i-j|.
inline double emd_distance(std::span<const double> p, std::span<const double> r) {
  double cp = 0.0, cr = 0.0, d = 0.0;
  for (std::size_t j = 0; j + 1 < p.size(); ++j) {
    cp += p[j];
    cr += r[j];
    d += std::fabs(cp - cr);
  }
  return d;
}

inline double confidence(ConfidenceKind kind, std::span<const double> p, std::span<const double> prev = {}) {
  switch (kind) {
    case ConfidenceKind::maximum: return *std::max_element(p.begin(), p.end());
    case ConfidenceKind::confidence_distance: {
      auto [i1, i2] = Graph::top_two(p);
      return p[i1] - p[i2];
    }
    case ConfidenceKind::total_variation:
    case ConfidenceKind::emd:
      if (prev.size() != p.size())
        throw UsageError("confidence: " + std::string(to_string(kind)) + " needs the previous distribution");
      return kind == ConfidenceKind::emd ? -emd_distance(p, prev) : -total_variation_distance(p, prev);
  }
  return 0.0;
}

/// G >= threshold; ties continue.
inline bool continuation_test(double g, const DynamicLossConfig& cfg) { return g >= cfg.threshold(); }

inline double mask_weight(double g, const DynamicLossConfig& cfg) {
  if (cfg.mask == MaskMode::indicator) return continuation_test(g, cfg) ? 1.0 : 0.0;
  return Graph::stable_sigmoid(cfg.sharpness * (g - cfg.threshold()) / cfg.sigmoid_scale());
}

inline double penalty(double g, const DynamicLossConfig& cfg) {
  return cfg.lambda * std::max(cfg.threshold() - g, 0.0);
}

/// Number of leading steps that pass the continuation test (t-bar).
inline std::size_t stop_index(std::span<const double> g, const DynamicLossConfig& cfg) {
  std::size_t t = 0;
  while (t < g.size() && continuation_test(g[t], cfg)) ++t;
  return t;
}

/// Loss of a single series from its per-step confidences and KL terms.
inline double dynamic_series_loss(std::span<const double> g, std::span<const double> kl,
                                  const DynamicLossConfig& cfg) {
  if (g.size() != kl.size()) throw ShapeError("dynamic_series_loss: confidence/KL length mismatch");
  const std::size_t stop = stop_index(g, cfg);
  double loss = 0.0;
  for (std::size_t t = 0; t < g.size(); ++t) {
    const double w = cfg.mask == MaskMode::indicator ? (t < stop ? 1.0 : 0.0) : mask_weight(g[t], cfg);
    loss += w * kl[t] + penalty(g[t], cfg);
  }
  return loss;
}

// ---- graph forms --------------------------------------------------------------

/// Confidence of each row of p ([batch,5]) as a [batch,1] node.
inline Var confidence_var(Graph& g, ConfidenceKind kind, Var p, Var prev = {}) {
  switch (kind) {
    case ConfidenceKind::maximum: return g.row_max(p);
    case ConfidenceKind::confidence_distance: return g.row_top2_gap(p);
    case ConfidenceKind::total_variation:
      if (!prev.valid()) throw UsageError("confidence_var: tv needs the previous distribution");
      return g.scale(g.row_max(g.abs(g.sub(p, prev))), -1.0);
    case ConfidenceKind::emd: {
      if (!prev.valid()) throw UsageError("confidence_var: emd needs the previous distribution");
      const std::size_t n = g.value(p).cols();
      Var diff = g.sub(g.row_cumsum(p), g.row_cumsum(prev));
      return g.scale(g.row_sum(g.abs(g.slice(diff, 0, n - 1))), -1.0);
    }
  }
  return {};
}

/// Per-sample record of confidences, stop indices and KL terms.
struct ConfidenceTrace {
  std::size_t batch = 0, series = 0, horizon = 0;
  std::vector<double> confidence;  // [b][q][t]
  std::vector<double> kl;          // [b][q][t]
  std::vector<double> weight;      // [b][q][t] mask value applied to each KL term
  std::vector<std::size_t> stop;   // [b][q]

  double g(std::size_t b, std::size_t q, std::size_t t) const { return confidence[(b * series + q) * horizon + t]; }
  double l(std::size_t b, std::size_t q, std::size_t t) const { return kl[(b * series + q) * horizon + t]; }
  std::size_t stop_at(std::size_t b, std::size_t q) const { return stop[b * series + q]; }
};

struct DynamicLossResult {
  Var loss;          // [1,1] node; backward() from here
  double value = 0;  // mean over the batch of the per-sample sum over series
  ConfidenceTrace trace;
};

namespace detail {

inline Var onehot_rows(Graph& g, const Batch& batch, std::size_t q) {
  Tensor t = Tensor::matrix(batch.size, kClassCount);
  for (std::size_t b = 0; b < batch.size; ++b) t(b, static_cast<std::size_t>(batch.first_label(b, q))) = 1.0;
  return g.constant(std::move(t));
}

inline void check_distribution_rows(const Tensor& p) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double x : p.row_span(r)) {
      if (!(x >= 0.0)) throw DataError("dynamic_loss: negative or NaN probability");
      s += x;
    }
    if (std::fabs(s - 1.0) > 1e-9) throw DataError("dynamic_loss: distribution does not sum to 1");
  }
}

}  // namespace detail

/// Builds the dynamic loss on top of teacher-forced distributions covering the
/// full horizon. Stop indices are read from the forward values and held fixed,
/// so the returned node differentiates only through the KL terms that survive
/// the mask and through the confidences in the penalty terms (and in the
/// sigmoid weights when the mask gradient is full).
/// `frozen_weights` ([b][q][t]) replaces the computed sigmoid weights in
/// detached mode; finite-difference checks use it to hold the mask fixed.
inline DynamicLossResult dynamic_loss(Graph& g, const StepDistributions& dists, const Batch& batch,
                                      const DynamicLossConfig& cfg, std::span<const double> frozen_weights = {}) {
  cfg.validate();
  if (dists.size() != cfg.horizon)
    throw ShapeError("dynamic_loss: " + std::to_string(dists.size()) + " steps but horizon is " +
                     std::to_string(cfg.horizon));
  if (batch.horizon < cfg.horizon) throw ShapeError("dynamic_loss: batch labels shorter than the horizon");
  const std::size_t B = batch.size, Q = batch.series, T = cfg.horizon;

  DynamicLossResult res;
  ConfidenceTrace& tr = res.trace;
  tr.batch = B;
  tr.series = Q;
  tr.horizon = T;
  tr.confidence.assign(B * Q * T, 0.0);
  tr.kl.assign(B * Q * T, 0.0);
  tr.weight.assign(B * Q * T, 0.0);
  tr.stop.assign(B * Q, 0);
  if (!frozen_weights.empty() && frozen_weights.size() != B * Q * T)
    throw ShapeError("dynamic_loss: frozen weights must hold batch x series x horizon values");

  const double theta = cfg.threshold();
  std::vector<Var> terms;
  for (std::size_t q = 0; q < Q; ++q) {
    std::vector<Var> conf(T), kl(T);
    Var prev = is_volatility_kind(cfg.kind) ? detail::onehot_rows(g, batch, q) : Var{};
    for (std::size_t t = 0; t < T; ++t) {
      if (dists[t].size() != Q) throw ShapeError("dynamic_loss: step has wrong series count");
      Var p = dists[t][q];
      detail::check_distribution_rows(g.value(p));
      const std::vector<int> labels = batch.step_labels(t, q);
      kl[t] = g.scale(g.log(g.pick(p, labels)), -1.0);
      conf[t] = confidence_var(g, cfg.kind, p, prev);
      prev = p;
      for (std::size_t b = 0; b < B; ++b) {
        tr.confidence[(b * Q + q) * T + t] = g.value(conf[t])[b];
        tr.kl[(b * Q + q) * T + t] = g.value(kl[t])[b];
      }
    }
    for (std::size_t b = 0; b < B; ++b)
      tr.stop[b * Q + q] = stop_index(std::span(tr.confidence).subspan((b * Q + q) * T, T), cfg);

    for (std::size_t t = 0; t < T; ++t) {
      if (cfg.mask == MaskMode::indicator) {
        Tensor mask = Tensor::matrix(B, 1);
        bool any = false;
        for (std::size_t b = 0; b < B; ++b)
          if (t < tr.stop[b * Q + q]) mask[b] = tr.weight[(b * Q + q) * T + t] = 1.0, any = true;
        if (any) terms.push_back(g.sum(g.mul(g.constant(std::move(mask)), kl[t])));
      } else if (cfg.mask_gradient == MaskGradient::full) {
        Var w = g.sigmoid(g.scale(g.shift(conf[t], -theta), cfg.sharpness / cfg.sigmoid_scale()));
        for (std::size_t b = 0; b < B; ++b) tr.weight[(b * Q + q) * T + t] = g.value(w)[b];
        terms.push_back(g.sum(g.mul(w, kl[t])));
      } else {
        Tensor w = Tensor::matrix(B, 1);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t i = (b * Q + q) * T + t;
          w[b] = tr.weight[i] = frozen_weights.empty() ? mask_weight(tr.confidence[i], cfg) : frozen_weights[i];
        }
        terms.push_back(g.sum(g.mul(g.constant(std::move(w)), kl[t])));
      }
      if (cfg.lambda > 0.0)
        terms.push_back(g.scale(g.sum(g.relu(g.shift(g.scale(conf[t], -1.0), theta))), cfg.lambda));
    }
  }
  Var total = terms.empty() ? g.constant(Tensor::scalar(0.0)) : terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  res.loss = g.scale(total, 1.0 / static_cast<double>(B));
  res.value = g.value(res.loss)[0];
  return res;
}

// ---- inference ----------------------------------------------------------------

struct RolloutResult {
  std::size_t batch = 0, series = 0, horizon = 0;
  std::vector<int> predictions;     // [b][q][t] argmax labels (all steps)
  std::vector<double> confidence;   // [b][q][t]
  std::vector<std::size_t> lengths; // [b][q]

  int prediction(std::size_t b, std::size_t q, std::size_t t) const {
    return predictions[(b * series + q) * horizon + t];
  }
  std::size_t length(std::size_t b, std::size_t q) const { return lengths[b * series + q]; }
  bool emitted(std::size_t b, std::size_t q, std::size_t t) const { return t < length(b, q); }
};

/// Decodes up to cfg.horizon steps and stops each series at its first
/// threshold violation (hard threshold in both masking modes).
inline RolloutResult dynamic_rollout(Model& model, const Batch& batch, const DynamicLossConfig& cfg,
                                     DecoderFeed feed = DecoderFeed::argmax) {
  cfg.validate();
  Graph g(GradMode::inference);
  ForwardPass pass = model.forward(g, batch, cfg.horizon, {feed, false});
  const std::size_t B = batch.size, Q = batch.series, T = cfg.horizon;
  RolloutResult out;
  out.batch = B;
  out.series = Q;
  out.horizon = T;
  out.predictions.assign(B * Q * T, 0);
  out.confidence.assign(B * Q * T, 0.0);
  out.lengths.assign(B * Q, 0);
  std::vector<double> onehot(kClassCount);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < Q; ++q) {
      std::fill(onehot.begin(), onehot.end(), 0.0);
      onehot[static_cast<std::size_t>(batch.first_label(b, q))] = 1.0;
      std::span<const double> prev = onehot;
      bool running = true;
      std::size_t len = 0;
      for (std::size_t t = 0; t < T; ++t) {
        auto p = g.value(pass.dists[t][q]).row_span(b);
        const double c = confidence(cfg.kind, p, prev);
        const std::size_t idx = (b * Q + q) * T + t;
        out.confidence[idx] = c;
        out.predictions[idx] = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        running = running && continuation_test(c, cfg);
        if (running) ++len;
        prev = p;
      }
      out.lengths[b * Q + q] = len;
    }
  return out;
}

}  // namespace dynseq
