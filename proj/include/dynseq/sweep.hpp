#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dynseq/metrics.hpp"
#include "dynseq/walk_forward.hpp"

namespace dynseq {

struct SweepConfig {
  std::vector<double> taus{0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> lambdas{0.1, 0.5, 1.0};
  std::vector<std::size_t> static_lengths{1, 4, 7, 10};
  double sensitivity_lambda = 0.1;
  std::size_t workers = 1;

  void validate() const {
    if (taus.empty() || lambdas.empty()) throw ConfigError("sweep: tau and lambda grids must be nonempty");
    if (static_lengths.empty()) throw ConfigError("sweep: static lengths must be nonempty");
    for (std::size_t l : static_lengths)
      if (l == 0) throw ConfigError("sweep: static lengths must be positive");
    if (workers == 0) throw ConfigError("sweep: worker count must be positive");
  }
};

struct SweepPoint {
  double tau = 0.0;
  double lambda = 0.0;
  MaskMode mask = MaskMode::sigmoid;
  ConfidenceKind kind = ConfidenceKind::confidence_distance;
  std::optional<double> f1;
  double average_length = 0.0;
  bool above_curve = false;
  std::string status = "ok";
  std::vector<double> series_length;
};

/// Runs `n` independent jobs on up to `workers` threads; job i writes only
/// slot i, so results do not depend on the worker count.
inline void run_parallel(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) job(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Seed for one static-curve run, independent of the other lengths.
inline std::uint64_t static_seed(std::uint64_t master, std::size_t length) {
  return derive_seed(master, {std::uint64_t{0x57a71c}, std::uint64_t{length}});
}

/// Seed for one grid point; adding points never changes existing ones.
inline std::uint64_t point_seed(std::uint64_t master, double tau, double lambda) {
  return derive_seed(master, {tau, lambda});
}

struct StaticRun {
  std::size_t length = 0;
  RunReport report;
};

/// Trains fixed-horizon seq2seq models (plain KL over all steps) at each
/// length and interpolates their mean F1.
inline std::vector<StaticRun> run_static_models(const ModelConfig& base, const LabeledSeries& data,
                                                const WalkForwardConfig& wf, const TrainingConfig& tc,
                                                const std::vector<std::size_t>& lengths, std::size_t workers = 1) {
  std::vector<StaticRun> runs(lengths.size());
  run_parallel(lengths.size(), workers, [&](std::size_t i) {
    ModelConfig mc = base;
    mc.horizon = lengths[i];
    WalkForwardConfig w = wf;
    w.seed = static_seed(wf.seed, lengths[i]);
    runs[i].length = lengths[i];
    runs[i].report = run_walk_forward(mc, DynamicLossConfig::full_horizon(lengths[i]), data, w, tc);
  });
  return runs;
}

inline StaticCurve curve_from_runs(const std::vector<StaticRun>& runs) {
  std::vector<std::pair<double, double>> anchors;
  for (const auto& r : runs) {
    if (!r.report.mean_f1) throw DataError("static curve: length " + std::to_string(r.length) + " produced no F1");
    anchors.emplace_back(static_cast<double>(r.length), *r.report.mean_f1);
  }
  return StaticCurve(std::move(anchors));
}

inline StaticCurve build_static_curve(const ModelConfig& base, const LabeledSeries& data, const WalkForwardConfig& wf,
                                      const TrainingConfig& tc, const std::vector<std::size_t>& lengths,
                                      std::size_t workers = 1) {
  return curve_from_runs(run_static_models(base, data, wf, tc, lengths, workers));
}

/// One independent dynamic walk-forward run per (tau, lambda), in grid order
/// (tau-major). Failures are recorded in the point's status.
inline std::vector<SweepPoint> sweep(const ModelConfig& model, const DynamicLossConfig& loss_template,
                                     const LabeledSeries& data, const WalkForwardConfig& wf, const TrainingConfig& tc,
                                     const SweepConfig& sc, const StaticCurve& curve) {
  sc.validate();
  std::vector<SweepPoint> points;
  for (double tau : sc.taus)
    for (double lambda : sc.lambdas) {
      SweepPoint p;
      p.tau = tau;
      p.lambda = lambda;
      p.mask = loss_template.mask;
      p.kind = loss_template.kind;
      points.push_back(p);
    }
  run_parallel(points.size(), sc.workers, [&](std::size_t i) {
    SweepPoint& p = points[i];
    try {
      DynamicLossConfig lc = loss_template;
      lc.tau = p.tau;
      lc.lambda = p.lambda;
      WalkForwardConfig w = wf;
      w.seed = point_seed(wf.seed, p.tau, p.lambda);
      const RunReport r = run_walk_forward(model, lc, data, w, tc);
      p.f1 = r.mean_f1;
      p.average_length = r.mean_length;
      p.series_length = r.series_length;
      p.above_curve = p.f1.has_value() && *p.f1 > curve(p.average_length);
      if (!p.f1) p.status = "no_predictions";
    } catch (const std::exception& e) {
      p.status = std::string("error: ") + e.what();
    }
  });
  return points;
}

}  // namespace dynseq
