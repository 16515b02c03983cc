#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "dynseq/batch.hpp"
#include "dynseq/dynamic_loss.hpp"
#include "dynseq/metrics.hpp"
#include "dynseq/models.hpp"
#include "dynseq/optimizer.hpp"
#include "dynseq/random.hpp"

namespace dynseq {

struct TrainingConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  double clip_norm = 5.0;  // global gradient-norm clip; 0 disables
  std::size_t eval_batch_size = 512;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("training: learning rate must be positive");
    if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("training: batch sizes must be positive");
    if (!(clip_norm >= 0.0)) throw ConfigError("training: clip norm must be nonnegative");
  }
};

/// One pass over `windows` in a seeded random order. Returns the mean batch loss.
inline double train_epoch(Model& model, OptimizerState& opt, std::span<const LabeledWindow> windows,
                          const DynamicLossConfig& loss_cfg, const TrainingConfig& cfg, Rng& rng) {
  if (windows.empty()) throw DataError("train_epoch: no training windows");
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  double total = 0.0;
  std::size_t batches = 0;
  model.params().zero_grad();
  for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
    const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
    const Batch batch = make_batch(windows, std::span(order).subspan(lo, hi - lo));
    Graph g;
    ForwardPass pass = model.forward(g, batch, loss_cfg.horizon);
    DynamicLossResult loss = dynamic_loss(g, pass.dists, batch, loss_cfg);
    g.backward(loss.loss);
    if (cfg.clip_norm > 0.0) {
      const double norm = model.params().grad_norm();
      if (norm > cfg.clip_norm) model.params().scale_grad(cfg.clip_norm / norm);
    }
    optimizer_step(opt, model.params());
    total += loss.value;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

/// Inference summary over a set of windows.
struct Evaluation {
  std::optional<double> f1;
  double average_length = 0.0;         // over every (sample, series) rollout
  double coverage = 0.0;               // fraction of rollouts emitting >= 1 prediction
  std::vector<double> series_length;   // mean emitted length per series
  std::size_t rollouts = 0;
  ConfusionCounts counts;
};

inline Evaluation evaluate(Model& model, std::span<const LabeledWindow> windows, const DynamicLossConfig& loss_cfg,
                           std::size_t eval_batch_size = 512) {
  if (windows.empty()) throw DataError("evaluate: no windows");
  const std::size_t Q = model.config().series;
  Evaluation ev;
  ev.counts = ConfusionCounts(Q);
  ev.series_length.assign(Q, 0.0);
  std::size_t covered = 0;
  double total_len = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < windows.size(); lo += eval_batch_size) {
    const std::size_t hi = std::min(windows.size(), lo + eval_batch_size);
    idx.resize(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Batch batch = make_batch(windows, idx);
    const RolloutResult r = dynamic_rollout(model, batch, loss_cfg);
    for (std::size_t b = 0; b < batch.size; ++b)
      for (std::size_t q = 0; q < Q; ++q) {
        const std::size_t len = r.length(b, q);
        total_len += static_cast<double>(len);
        ev.series_length[q] += static_cast<double>(len);
        if (len > 0) ++covered;
        for (std::size_t t = 0; t < len; ++t) ev.counts.add(q, r.prediction(b, q, t), batch.label(b, t, q));
      }
  }
  ev.rollouts = windows.size() * Q;
  ev.average_length = total_len / static_cast<double>(ev.rollouts);
  ev.coverage = static_cast<double>(covered) / static_cast<double>(ev.rollouts);
  for (double& s : ev.series_length) s /= static_cast<double>(windows.size());
  ev.f1 = ev.counts.macro_f1();
  return ev;
}

}  // namespace dynseq
