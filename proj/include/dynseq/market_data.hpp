#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dynseq/batch.hpp"
#include "dynseq/random.hpp"
#include "dynseq/tensor.hpp"

namespace dynseq {

/// Volatility multipliers that apply from `start_tick` until the next segment.
struct RegimeSegment {
  std::size_t start_tick = 0;
  std::vector<double> multipliers;  // one per series
};

/// Multi-series return generator:
///   r[t,q] = trend[t,q] + sigma_q * regime[t,q] * (a * F_t + sqrt(1 - a^2) * e[t,q])
/// with Student-t innovations F, e scaled to unit variance and an AR(1) trend
/// whose stationary scale is absolute (not multiplied by sigma_q), so noisier
/// series carry the same predictable component under more noise.
struct SyntheticConfig {
  std::size_t series = 4;
  std::size_t ticks_per_day = 78;
  std::size_t days = 60;
  std::vector<double> volatility;  // sigma_q; empty means 0.001 for every series
  std::vector<RegimeSegment> regimes;
  double factor_loading = 0.3;
  double degrees_of_freedom = 4.0;
  double trend_scale = 0.0;
  double trend_persistence = 0.9;
  std::uint64_t seed = 1;

  double sigma(std::size_t q) const { return volatility.empty() ? 0.001 : volatility[q]; }

  double multiplier(std::size_t tick, std::size_t q) const {
    double m = 1.0;
    for (const auto& seg : regimes)
      if (seg.start_tick <= tick) m = seg.multipliers[q];
    return m;
  }

  std::size_t return_count() const { return ticks_per_day * days; }

  void validate() const {
    if (series == 0) throw ConfigError("synthetic: series count must be positive");
    if (ticks_per_day == 0) throw ConfigError("synthetic: ticks per day must be positive");
    if (days == 0) throw ConfigError("synthetic: day count must be positive");
    if (!volatility.empty() && volatility.size() != series)
      throw ConfigError("synthetic: volatility list must have one entry per series");
    for (double s : volatility)
      if (!(s > 0.0)) throw ConfigError("synthetic: volatilities must be positive");
    for (std::size_t i = 0; i < regimes.size(); ++i) {
      if (regimes[i].multipliers.size() != series)
        throw ConfigError("synthetic: regime multipliers must have one entry per series");
      for (double m : regimes[i].multipliers)
        if (!(m > 0.0)) throw ConfigError("synthetic: regime multipliers must be positive");
      if (i && regimes[i].start_tick < regimes[i - 1].start_tick)
        throw ConfigError("synthetic: regimes must be sorted by start tick");
    }
    if (!(factor_loading >= 0.0 && factor_loading <= 1.0)) throw ConfigError("synthetic: factor loading must be in [0,1]");
    if (!(degrees_of_freedom > 2.0)) throw ConfigError("synthetic: degrees of freedom must exceed 2");
    if (!(trend_scale >= 0.0)) throw ConfigError("synthetic: trend scale must be nonnegative");
    if (!(trend_persistence >= 0.0 && trend_persistence < 1.0))
      throw ConfigError("synthetic: trend persistence must be in [0,1)");
  }
};

/// Prices [ticks + 1, series] starting at 100. Each series draws from its own
/// substream, so the output does not depend on generation order.
inline Tensor generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t N = cfg.return_count(), Q = cfg.series;
  const double t_scale = std::sqrt((cfg.degrees_of_freedom - 2.0) / cfg.degrees_of_freedom);
  const double a = cfg.factor_loading, b = std::sqrt(1.0 - a * a);

  std::vector<double> factor(N);
  {
    Rng rng(derive_seed(cfg.seed, {std::uint64_t{0xfac7}}));
    std::student_t_distribution<double> t(cfg.degrees_of_freedom);
    for (double& f : factor) f = t_scale * t(rng.engine());
  }
  Tensor prices = Tensor::matrix(N + 1, Q);
  for (std::size_t q = 0; q < Q; ++q) {
    Rng noise(derive_seed(cfg.seed, {std::uint64_t{1}, std::uint64_t{q}}));
    Rng drift(derive_seed(cfg.seed, {std::uint64_t{2}, std::uint64_t{q}}));
    std::student_t_distribution<double> t(cfg.degrees_of_freedom);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double phi = cfg.trend_persistence;
    double trend = cfg.trend_scale * n01(drift.engine());
    double p = 100.0;
    prices(0, q) = p;
    for (std::size_t i = 0; i < N; ++i) {
      const double e = t_scale * t(noise.engine());
      trend = phi * trend + std::sqrt(1.0 - phi * phi) * cfg.trend_scale * n01(drift.engine());
      const double r = trend + cfg.sigma(q) * cfg.multiplier(i, q) * (a * factor[i] + b * e);
      if (!(1.0 + r > 0.0)) throw DataError("generate_synthetic: return below -100%; reduce volatility");
      p *= 1.0 + r;
      prices(i + 1, q) = p;
    }
  }
  return prices;
}

inline std::vector<double> compute_returns(std::span<const double> prices) {
  if (prices.size() < 2) throw DataError("compute_returns: need at least two prices");
  std::vector<double> out(prices.size() - 1);
  for (std::size_t i = 0; i < prices.size(); ++i)
    if (!(prices[i] > 0.0)) throw DataError("compute_returns: nonpositive price at index " + std::to_string(i));
  for (std::size_t i = 1; i < prices.size(); ++i) out[i - 1] = prices[i] / prices[i - 1] - 1.0;
  return out;
}

/// Column-wise simple returns of a [ticks, series] price matrix.
inline Tensor compute_returns(const Tensor& prices) {
  const std::size_t N = prices.rows(), Q = prices.cols();
  if (N < 2) throw DataError("compute_returns: need at least two prices");
  Tensor out = Tensor::matrix(N - 1, Q);
  std::vector<double> col(N);
  for (std::size_t q = 0; q < Q; ++q) {
    for (std::size_t i = 0; i < N; ++i) col[i] = prices(i, q);
    const auto r = compute_returns(col);
    for (std::size_t i = 0; i + 1 < N; ++i) out(i, q) = r[i];
  }
  return out;
}

// ---- labeling -----------------------------------------------------------------

struct LabelingConfig {
  double beta = 0.14;
  bool calibrate = true;
  double target_middle_fraction = 0.5;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("labeling: beta must lie in (0,1)");
    if (!(target_middle_fraction > 0.0 && target_middle_fraction < 1.0))
      throw ConfigError("labeling: target middle fraction must lie in (0,1)");
  }
};

/// Five-way class of return x against the previous day's mean and deviation.
inline int label_return(double x, double mu, double sigma, double beta) {
  if (!(sigma > 0.0)) throw DataError("label_return: zero daily deviation (degenerate day)");
  if (x < mu - sigma) return 0;
  if (x < mu - beta * sigma) return 1;
  if (x < mu + beta * sigma) return 2;
  if (x < mu + sigma) return 3;
  return 4;
}

struct DailyStats {
  std::size_t days = 0, series = 0;
  std::vector<double> mean;    // [day][series]
  std::vector<double> stddev;  // [day][series]

  double mu(std::size_t d, std::size_t q) const { return mean[d * series + q]; }
  double sigma(std::size_t d, std::size_t q) const { return stddev[d * series + q]; }
};

/// Population mean/deviation of each day's returns; a trailing partial day
/// uses the ticks it has.
inline DailyStats daily_stats(const Tensor& returns, std::size_t ticks_per_day) {
  if (ticks_per_day == 0) throw ConfigError("daily_stats: ticks per day must be positive");
  const std::size_t N = returns.rows(), Q = returns.cols();
  DailyStats s;
  s.days = (N + ticks_per_day - 1) / ticks_per_day;
  s.series = Q;
  s.mean.assign(s.days * Q, 0.0);
  s.stddev.assign(s.days * Q, 0.0);
  for (std::size_t d = 0; d < s.days; ++d) {
    const std::size_t lo = d * ticks_per_day, hi = std::min(N, lo + ticks_per_day);
    const double n = static_cast<double>(hi - lo);
    for (std::size_t q = 0; q < Q; ++q) {
      double m = 0.0;
      for (std::size_t i = lo; i < hi; ++i) m += returns(i, q);
      m /= n;
      double v = 0.0;
      for (std::size_t i = lo; i < hi; ++i) v += (returns(i, q) - m) * (returns(i, q) - m);
      s.mean[d * Q + q] = m;
      s.stddev[d * Q + q] = std::sqrt(v / n);
    }
  }
  return s;
}

/// Fraction of returns inside the insignificant band [mu - beta sigma, mu + beta sigma).
inline double middle_fraction(std::span<const double> x, std::span<const double> mu, std::span<const double> sigma,
                              double beta) {
  std::size_t in = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] >= mu[i] - beta * sigma[i] && x[i] < mu[i] + beta * sigma[i]) ++in;
  return static_cast<double>(in) / static_cast<double>(x.size());
}

/// Bisection for the beta whose middle-class fraction matches `target`.
inline double calibrate_beta(std::span<const double> x, std::span<const double> mu, std::span<const double> sigma,
                             double target = 0.5) {
  if (!(target > 0.0 && target < 1.0)) throw ConfigError("calibrate_beta: target must lie in (0,1)");
  if (x.empty()) throw DataError("calibrate_beta: no returns");
  if (mu.size() != x.size() || sigma.size() != x.size()) throw ShapeError("calibrate_beta: stats length mismatch");
  constexpr double tolerance = 0.005;
  double lo = 0.0, hi = 1.0;
  if (middle_fraction(x, mu, sigma, hi) < target - tolerance)
    throw DataError("calibrate_beta: target middle fraction unattainable with beta < 1");
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    (middle_fraction(x, mu, sigma, mid) < target ? lo : hi) = mid;
  }
  const double beta = 0.5 * (lo + hi);
  if (std::fabs(middle_fraction(x, mu, sigma, beta) - target) > tolerance)
    throw DataError("calibrate_beta: target middle fraction unattainable (too many tied returns)");
  return beta;
}

/// Calibrates beta on ticks [day 1, limit) of a return matrix, pairing each
/// return with its previous-day stats.
inline double calibrate_beta_daily(const Tensor& returns, std::size_t ticks_per_day, double target,
                                   std::size_t limit) {
  const DailyStats stats = daily_stats(returns, ticks_per_day);
  limit = std::min(limit, returns.rows());
  std::vector<double> x, mu, sigma;
  for (std::size_t i = ticks_per_day; i < limit; ++i) {
    const std::size_t d = i / ticks_per_day;
    for (std::size_t q = 0; q < returns.cols(); ++q) {
      x.push_back(returns(i, q));
      mu.push_back(stats.mu(d - 1, q));
      sigma.push_back(stats.sigma(d - 1, q));
    }
  }
  return calibrate_beta(x, mu, sigma, target);
}

/// Returns and labels from the second day onward.
struct LabeledSeries {
  Tensor returns;           // [ticks, series]
  std::vector<int> labels;  // [ticks][series]
  std::size_t offset = 0;   // index of the first kept tick in the input returns
  double beta = 0.0;

  std::size_t ticks() const { return returns.rows(); }
  std::size_t series() const { return returns.cols(); }
  int label(std::size_t i, std::size_t q) const { return labels[i * series() + q]; }
};

/// Labels day D+1 with day D's stats; the first day has no prior stats and is dropped.
inline LabeledSeries label_series(const Tensor& returns, std::size_t ticks_per_day, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("label_series: beta must lie in (0,1)");
  if (returns.rows() <= ticks_per_day) throw DataError("label_series: need more than one day of returns");
  const DailyStats stats = daily_stats(returns, ticks_per_day);
  const std::size_t N = returns.rows(), Q = returns.cols();
  LabeledSeries out;
  out.offset = ticks_per_day;
  out.beta = beta;
  out.returns = Tensor::matrix(N - ticks_per_day, Q);
  out.labels.resize((N - ticks_per_day) * Q);
  for (std::size_t i = ticks_per_day; i < N; ++i) {
    const std::size_t d = i / ticks_per_day;
    for (std::size_t q = 0; q < Q; ++q) {
      const double sigma = stats.sigma(d - 1, q);
      if (!(sigma > 0.0))
        throw DataError("label_series: series " + std::to_string(q) + " is constant on day " + std::to_string(d - 1));
      out.returns(i - ticks_per_day, q) = returns(i, q);
      out.labels[(i - ticks_per_day) * Q + q] = label_return(returns(i, q), stats.mu(d - 1, q), sigma, beta);
    }
  }
  return out;
}

// ---- windows --------------------------------------------------------------------

/// Number of stride-1 windows a series of `ticks` supports.
inline std::size_t window_count(std::size_t ticks, std::size_t input_length, std::size_t horizon) {
  return ticks + 1 >= input_length + horizon + 1 ? ticks - input_length - horizon + 1 : 0;
}

/// Windows with start indices in [begin, end): inputs are ticks
/// [i, i+T̄), the first decoder label is tick i+T̄-1 and the targets are the
/// following T ticks.
inline std::vector<LabeledWindow> make_windows(const LabeledSeries& data, std::size_t input_length,
                                               std::size_t horizon, std::size_t begin, std::size_t end) {
  if (input_length == 0 || horizon == 0) throw ConfigError("make_windows: lengths must be positive");
  const std::size_t total = window_count(data.ticks(), input_length, horizon);
  if (total == 0) throw DataError("make_windows: series too short for one window");
  if (begin > end || end > total) throw DataError("make_windows: window range exceeds available data");
  const std::size_t Q = data.series();
  std::vector<LabeledWindow> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    LabeledWindow w;
    w.start = i;
    w.inputs = Tensor::matrix(input_length, Q);
    for (std::size_t s = 0; s < input_length; ++s)
      for (std::size_t q = 0; q < Q; ++q) w.inputs(s, q) = data.returns(i + s, q);
    w.first_labels.resize(Q);
    for (std::size_t q = 0; q < Q; ++q) w.first_labels[q] = data.label(i + input_length - 1, q);
    w.labels.resize(horizon * Q);
    for (std::size_t t = 0; t < horizon; ++t)
      for (std::size_t q = 0; q < Q; ++q) w.labels[t * Q + q] = data.label(i + input_length + t, q);
    out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<LabeledWindow> make_windows(const LabeledSeries& data, std::size_t input_length,
                                               std::size_t horizon) {
  return make_windows(data, input_length, horizon, 0, window_count(data.ticks(), input_length, horizon));
}

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Z-scores every window's inputs per series with statistics of the training
/// windows only.
inline NormalizationStats normalize(std::vector<LabeledWindow>& train, std::vector<LabeledWindow>& eval) {
  if (train.empty()) throw DataError("normalize: empty training set");
  const std::size_t Q = train[0].series();
  NormalizationStats s;
  s.mean.assign(Q, 0.0);
  s.stddev.assign(Q, 0.0);
  double n = 0.0;
  for (const auto& w : train) {
    for (std::size_t r = 0; r < w.input_length(); ++r)
      for (std::size_t q = 0; q < Q; ++q) s.mean[q] += w.inputs(r, q);
    n += static_cast<double>(w.input_length());
  }
  for (double& m : s.mean) m /= n;
  for (const auto& w : train)
    for (std::size_t r = 0; r < w.input_length(); ++r)
      for (std::size_t q = 0; q < Q; ++q) {
        const double d = w.inputs(r, q) - s.mean[q];
        s.stddev[q] += d * d;
      }
  for (std::size_t q = 0; q < Q; ++q) {
    s.stddev[q] = std::sqrt(s.stddev[q] / n);
    if (!(s.stddev[q] > 0.0)) throw DataError("normalize: series " + std::to_string(q) + " is constant in training");
  }
  auto apply = [&](std::vector<LabeledWindow>& ws) {
    for (auto& w : ws)
      for (std::size_t r = 0; r < w.input_length(); ++r)
        for (std::size_t q = 0; q < Q; ++q) w.inputs(r, q) = (w.inputs(r, q) - s.mean[q]) / s.stddev[q];
  };
  apply(train);
  apply(eval);
  return s;
}

// ---- CSV --------------------------------------------------------------------------

inline void write_prices_csv(std::ostream& out, const Tensor& prices) {
  out << "tick";
  for (std::size_t q = 0; q < prices.cols(); ++q) out << ",series_" << q;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < prices.rows(); ++i) {
    out << i;
    for (std::size_t q = 0; q < prices.cols(); ++q) {
      std::snprintf(buf, sizeof buf, "%.17g", prices(i, q));
      out << ',' << buf;
    }
    out << '\n';
  }
}

inline void write_prices_csv(const std::filesystem::path& path, const Tensor& prices) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_prices_csv(out, prices);
}

inline Tensor read_prices_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("tick", 0) != 0) throw DataError("dataset: missing 'tick,...' header");
  const std::size_t Q = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (Q == 0) throw DataError("dataset: no series columns");
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (std::size_t q = 0; q < Q; ++q) {
      if (!std::getline(ss, cell, ',')) throw DataError("dataset: short row " + std::to_string(rows + 1));
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("dataset: bad number '" + cell + "' in row " + std::to_string(rows + 1));
      }
    }
    ++rows;
  }
  return Tensor({rows, Q}, std::move(values));
}

}  // namespace dynseq
