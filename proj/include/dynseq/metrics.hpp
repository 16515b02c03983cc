#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dynseq/batch.hpp"
#include "dynseq/tensor.hpp"

namespace dynseq {

/// Per-(series, class) one-vs-all confusion counts over emitted predictions.
class ConfusionCounts {
 public:
  explicit ConfusionCounts(std::size_t series = 0) : series_(series), cells_(series * kClassCount) {}

  std::size_t series() const noexcept { return series_; }
  std::size_t emitted() const noexcept { return emitted_; }

  void add(std::size_t q, int predicted, int truth) {
    if (q >= series_) throw UsageError("ConfusionCounts: series index out of range");
    if (predicted < 0 || predicted >= static_cast<int>(kClassCount) || truth < 0 ||
        truth >= static_cast<int>(kClassCount))
      throw UsageError("ConfusionCounts: class label out of range");
    ++emitted_;
    if (predicted == truth) {
      ++cell(q, predicted).tp;
    } else {
      ++cell(q, predicted).fp;
      ++cell(q, truth).fn;
    }
  }

  void merge(const ConfusionCounts& other) {
    if (other.series_ != series_) throw UsageError("ConfusionCounts: series mismatch");
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      cells_[i].tp += other.cells_[i].tp;
      cells_[i].fp += other.cells_[i].fp;
      cells_[i].fn += other.cells_[i].fn;
    }
    emitted_ += other.emitted_;
  }

  /// Unweighted mean F1 over (series, class) cells where the class occurs in
  /// the truth or the predictions; absent when nothing was emitted.
  std::optional<double> macro_f1() const {
    if (emitted_ == 0) return std::nullopt;
    double total = 0.0;
    std::size_t included = 0;
    for (const auto& c : cells_) {
      if (c.tp + c.fp + c.fn == 0) continue;
      ++included;
      const double precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
      const double recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
      total += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return total / static_cast<double>(included);
  }

 private:
  struct Cell {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  Cell& cell(std::size_t q, int c) { return cells_[q * kClassCount + static_cast<std::size_t>(c)]; }

  std::size_t series_;
  std::vector<Cell> cells_;
  std::size_t emitted_ = 0;
};

/// Macro F1 over flat [sample][series][step] arrays; entries with a zero
/// mask were not emitted and are ignored.
inline std::optional<double> f1_macro(std::span<const int> predicted, std::span<const int> truth,
                                      std::span<const std::uint8_t> emitted, std::size_t series, std::size_t steps) {
  if (predicted.size() != truth.size() || predicted.size() != emitted.size())
    throw ShapeError("f1_macro: predictions, truths and mask differ in length");
  if (series == 0 || steps == 0 || predicted.size() % (series * steps) != 0)
    throw ShapeError("f1_macro: length is not a multiple of series x steps");
  ConfusionCounts counts(series);
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (emitted[i]) counts.add((i / steps) % series, predicted[i], truth[i]);
  return counts.macro_f1();
}

/// F1 of fixed-horizon models at anchor lengths, linearly interpolated and
/// clamped to the end anchors.
class StaticCurve {
 public:
  StaticCurve() = default;
  explicit StaticCurve(std::vector<std::pair<double, double>> anchors) : anchors_(std::move(anchors)) {
    if (anchors_.empty()) throw UsageError("StaticCurve: no anchors");
    std::sort(anchors_.begin(), anchors_.end());
    for (std::size_t i = 1; i < anchors_.size(); ++i)
      if (anchors_[i].first == anchors_[i - 1].first) throw UsageError("StaticCurve: duplicate anchor length");
  }

  const std::vector<std::pair<double, double>>& anchors() const noexcept { return anchors_; }

  double operator()(double length) const {
    if (anchors_.empty()) throw UsageError("StaticCurve: evaluated before construction");
    if (length <= anchors_.front().first) return anchors_.front().second;
    if (length >= anchors_.back().first) return anchors_.back().second;
    auto hi = std::upper_bound(anchors_.begin(), anchors_.end(), length,
                               [](double x, const auto& a) { return x < a.first; });
    auto lo = hi - 1;
    const double w = (length - lo->first) / (hi->first - lo->first);
    return lo->second + w * (hi->second - lo->second);
  }

 private:
  std::vector<std::pair<double, double>> anchors_;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::optional<double> correlation;  // absent when y is constant
};

/// Ordinary least squares of y on x plus Pearson correlation.
inline LinearFit sensitivity_fit(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw UsageError("sensitivity_fit: need at least 3 points");
  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : points) mx += x, my += y;
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (auto [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  if (std::all_of(points.begin(), points.end(), [&](const auto& p) { return p.first == points[0].first; }))
    throw DataError("sensitivity_fit: all x values are equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy > 0.0) fit.correlation = sxy / std::sqrt(sxx * syy);
  return fit;
}

/// Relative F1 improvement (percent) over the static curve value.
inline double f1_gap(double dynamic_f1, double static_f1) {
  if (static_f1 == 0.0) throw DataError("f1_gap: static curve value is zero");
  return 100.0 * (dynamic_f1 - static_f1) / static_f1;
}

inline double f1_gap(double dynamic_f1, double length, const StaticCurve& curve) {
  return f1_gap(dynamic_f1, curve(length));
}

}  // namespace dynseq
