#pragma once

#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "dynseq/checkpoint.hpp"
#include "dynseq/market_data.hpp"
#include "dynseq/training.hpp"

namespace dynseq {

/// Rolling protocol over sample-window positions: window w trains on
/// positions [w*step, w*step + train_span) and tests on the following
/// test_span positions. Each window warm-starts from the previous one.
struct WalkForwardConfig {
  std::size_t train_span = 2000;
  std::size_t test_span = 250;
  std::size_t step = 0;  // 0 means test_span
  std::size_t window_count = 8;
  std::size_t warm_start = 3;
  std::size_t max_epochs = 6;
  std::size_t patience = 3;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;

  std::size_t effective_step() const { return step ? step : test_span; }

  /// Sample positions needed for all windows.
  std::size_t required_positions() const { return train_span + test_span + (window_count - 1) * effective_step(); }

  void validate() const {
    if (train_span == 0 || test_span == 0) throw ConfigError("walk_forward: spans must be positive");
    if (window_count == 0) throw ConfigError("walk_forward: window count must be positive");
    if (warm_start >= window_count) throw ConfigError("walk_forward: warm-start count must be below window count");
    if (max_epochs == 0) throw ConfigError("walk_forward: epoch cap must be positive");
    if (patience == 0) throw ConfigError("walk_forward: patience must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("walk_forward: validation fraction must lie in (0,1)");
  }
};

struct WindowReport {
  std::size_t index = 0;
  bool measured = false;  // false for warm-start windows
  std::optional<double> f1;
  double average_length = 0.0;
  double coverage = 0.0;
  std::vector<double> series_length;
  std::size_t epochs = 0;
  std::optional<double> best_validation_f1;
  std::uint64_t start_hash = 0;
  std::uint64_t end_hash = 0;
};

struct RunReport {
  std::vector<WindowReport> windows;
  std::optional<double> mean_f1;  // over measured windows with emitted predictions
  double mean_length = 0.0;
  double mean_coverage = 0.0;
  std::vector<double> series_length;
  ParameterSet final_params;
};

/// How many walk-forward windows the data supports for a model/horizon.
inline std::size_t available_positions(const LabeledSeries& data, const ModelConfig& model) {
  return window_count(data.ticks(), model.input_length, model.output_steps());
}

namespace detail {

/// Validation F1 (absent counts as -1), ties broken by lower teacher-forced
/// loss so that a model emitting nothing can still improve.
struct ValidationScore {
  double f1 = -1.0;
  double loss = std::numeric_limits<double>::infinity();

  bool better_than(const ValidationScore& o) const { return f1 > o.f1 || (f1 == o.f1 && loss < o.loss); }
};

inline double mean_loss(Model& model, std::span<const LabeledWindow> windows, const DynamicLossConfig& loss,
                        std::size_t batch_size) {
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < windows.size(); lo += batch_size) {
    const std::size_t hi = std::min(windows.size(), lo + batch_size);
    idx.resize(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Batch batch = make_batch(windows, idx);
    Graph g(GradMode::inference);
    const ForwardPass pass = model.forward(g, batch, loss.horizon);
    total += dynamic_loss(g, pass.dists, batch, loss).value * static_cast<double>(batch.size);
  }
  return total / static_cast<double>(windows.size());
}

inline ValidationScore validation_score(Model& model, std::span<const LabeledWindow> val,
                                        const DynamicLossConfig& loss, const TrainingConfig& tc) {
  ValidationScore s;
  s.f1 = evaluate(model, val, loss, tc.eval_batch_size).f1.value_or(-1.0);
  s.loss = mean_loss(model, val, loss, tc.eval_batch_size);
  return s;
}

}  // namespace detail

inline RunReport run_walk_forward(const ModelConfig& model_cfg, const DynamicLossConfig& loss_cfg,
                                  const LabeledSeries& data, const WalkForwardConfig& wf, const TrainingConfig& tc,
                                  const ParameterSet* initial = nullptr) {
  model_cfg.validate();
  loss_cfg.validate();
  wf.validate();
  tc.validate();
  if (loss_cfg.horizon != model_cfg.output_steps())
    throw ConfigError("walk_forward: loss horizon must equal the model's output steps");
  const std::size_t T = model_cfg.output_steps();
  const std::size_t positions = available_positions(data, model_cfg);
  if (positions < wf.required_positions())
    throw DataError("walk_forward: data exhausted (" + std::to_string(positions) + " positions, need " +
                    std::to_string(wf.required_positions()) + ")");
  if (wf.train_span <= T + 1) throw ConfigError("walk_forward: train span too short for the purge gap");

  Model model(model_cfg, derive_seed(wf.seed, {std::uint64_t{0x1417}}));
  if (initial) model.params().assign_values(*initial);
  OptimizerState opt = OptimizerState::make(tc.optimizer, tc.learning_rate);
  Rng rng(derive_seed(wf.seed, {std::uint64_t{0x5a4f}}));
  const DynamicLossConfig eval_cfg = loss_cfg;

  RunReport report;
  double f1_sum = 0.0, len_sum = 0.0, cov_sum = 0.0;
  std::size_t f1_n = 0, measured = 0;
  report.series_length.assign(model_cfg.series, 0.0);

  for (std::size_t w = 0; w < wf.window_count; ++w) {
    const std::size_t s = w * wf.effective_step();
    // The last T training windows have targets overlapping the test targets.
    const std::size_t train_end = s + wf.train_span - T;
    std::vector<LabeledWindow> train = make_windows(data, model_cfg.input_length, T, s, train_end);
    std::vector<LabeledWindow> test =
        make_windows(data, model_cfg.input_length, T, s + wf.train_span, s + wf.train_span + wf.test_span);
    normalize(train, test);
    const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(wf.validation_fraction * train.size()));
    std::span<const LabeledWindow> fit(train.data(), train.size() - n_val);
    std::span<const LabeledWindow> val(train.data() + fit.size(), n_val);

    WindowReport wr;
    wr.index = w;
    wr.measured = w >= wf.warm_start;
    wr.start_hash = checkpoint_hash(model.params());

    ParameterSet best = model.params();
    detail::ValidationScore best_score{-std::numeric_limits<double>::infinity()};
    if (w > 0) best_score = detail::validation_score(model, val, eval_cfg, tc);
    std::size_t since_best = 0;
    for (std::size_t e = 0; e < wf.max_epochs; ++e) {
      train_epoch(model, opt, fit, loss_cfg, tc, rng);
      ++wr.epochs;
      const detail::ValidationScore score = detail::validation_score(model, val, eval_cfg, tc);
      if (score.better_than(best_score)) {
        best_score = score;
        best.assign_values(model.params());
        since_best = 0;
      } else if (++since_best >= wf.patience) {
        break;
      }
    }
    model.params().assign_values(best);
    if (best_score.f1 >= 0.0) wr.best_validation_f1 = best_score.f1;
    wr.end_hash = checkpoint_hash(model.params());

    const Evaluation ev = evaluate(model, test, eval_cfg, tc.eval_batch_size);
    wr.f1 = ev.f1;
    wr.average_length = ev.average_length;
    wr.coverage = ev.coverage;
    wr.series_length = ev.series_length;
    if (wr.measured) {
      ++measured;
      len_sum += ev.average_length;
      cov_sum += ev.coverage;
      for (std::size_t q = 0; q < model_cfg.series; ++q) report.series_length[q] += ev.series_length[q];
      if (ev.f1) f1_sum += *ev.f1, ++f1_n;
    }
    report.windows.push_back(std::move(wr));
  }
  if (f1_n) report.mean_f1 = f1_sum / static_cast<double>(f1_n);
  report.mean_length = len_sum / static_cast<double>(measured);
  report.mean_coverage = cov_sum / static_cast<double>(measured);
  for (double& x : report.series_length) x /= static_cast<double>(measured);
  report.final_params = model.params();
  return report;
}

}  // namespace dynseq
