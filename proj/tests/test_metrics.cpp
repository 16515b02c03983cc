#include <gtest/gtest.h>

#include <cmath>

#include "dynseq/metrics.hpp"
#include "dynseq/random.hpp"

using namespace dynseq;

namespace {

// Straight confusion-matrix oracle over one flattened series.
double oracle_macro_f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  double total = 0.0;
  int included = 0;
  for (int c = 0; c < 5; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && truth[i] == c;
      fp += pred[i] == c && truth[i] != c;
      fn += pred[i] != c && truth[i] == c;
    }
    if (tp + fp + fn == 0) continue;
    ++included;
    total += tp ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  }
  return total / included;
}

}  // namespace

TEST(F1, AllCorrect) {
  const std::vector<int> y{0, 1, 2, 3, 4, 2, 1};
  const std::vector<std::uint8_t> m(7, 1);
  EXPECT_EQ(f1_macro(y, y, m, 1, 7), 1.0);
}

TEST(F1, HandExample) {
  const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 0, 1};
  const std::vector<std::uint8_t> m(4, 1);
  EXPECT_DOUBLE_EQ(*f1_macro(pred, truth, m, 1, 4), 0.5);
}

TEST(F1, NothingEmittedIsAbsent) {
  const std::vector<int> y{0, 1, 2};
  const std::vector<std::uint8_t> none(3, 0);
  EXPECT_FALSE(f1_macro(y, y, none, 1, 3).has_value());
  EXPECT_FALSE(ConfusionCounts(2).macro_f1().has_value());
}

TEST(F1, MaskedEntriesIgnored) {
  const std::vector<int> truth{0, 1, 2, 3}, pred{0, 1, 4, 4};
  const std::vector<std::uint8_t> m{1, 1, 0, 0};
  EXPECT_EQ(f1_macro(pred, truth, m, 1, 4), 1.0);
}

TEST(F1, PerSeriesCellsAreSeparate) {
  // layout [sample][series][step]: series 0 perfect, series 1 always wrong
  const std::vector<int> truth{0, 1, 2, 3}, pred{0, 1, 3, 2};
  const std::vector<std::uint8_t> m(4, 1);
  // series 0: classes 0,1 -> F1 1; series 1: classes 2,3 -> F1 0
  EXPECT_DOUBLE_EQ(*f1_macro(pred, truth, m, 2, 2), 0.5);
}

TEST(F1, MatchesOracleOnRandomLabels) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(60);
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.index(5));
      pred[i] = rng.uniform() < 0.4 ? truth[i] : static_cast<int>(rng.index(5));
    }
    const std::vector<std::uint8_t> m(n, 1);
    EXPECT_NEAR(*f1_macro(pred, truth, m, 1, n), oracle_macro_f1(pred, truth), 1e-14);
  }
}

TEST(F1, ErrorsAndMerge) {
  const std::vector<int> y{0, 1, 2};
  const std::vector<std::uint8_t> m(2, 1);
  EXPECT_THROW(f1_macro(y, y, m, 1, 3), ShapeError);
  const std::vector<std::uint8_t> m3(3, 1);
  EXPECT_THROW(f1_macro(y, y, m3, 2, 2), ShapeError);
  ConfusionCounts a(1), b(1), all(1);
  EXPECT_THROW(a.add(1, 0, 0), UsageError);
  EXPECT_THROW(a.add(0, 5, 0), UsageError);
  a.add(0, 0, 0);
  a.add(0, 1, 0);
  b.add(0, 1, 1);
  b.add(0, 2, 1);
  for (auto [p, t] : {std::pair{0, 0}, {1, 0}, {1, 1}, {2, 1}}) all.add(0, p, t);
  a.merge(b);
  EXPECT_EQ(a.emitted(), 4u);
  EXPECT_EQ(*a.macro_f1(), *all.macro_f1());
  EXPECT_THROW(a.merge(ConfusionCounts(2)), UsageError);
}

TEST(StaticCurveTest, InterpolatesAndClamps) {
  const StaticCurve c({{4, 0.55}, {1, 0.60}, {10, 0.40}, {7, 0.50}});
  EXPECT_NEAR(c(2.5), 0.575, 1e-15);
  EXPECT_EQ(c(4.0), 0.55);
  EXPECT_EQ(c(7.0), 0.50);
  EXPECT_EQ(c(0.5), 0.60);
  EXPECT_EQ(c(0.0), 0.60);
  EXPECT_EQ(c(12.0), 0.40);
  EXPECT_NEAR(c(8.5), 0.45, 1e-15);
  EXPECT_THROW(StaticCurve(std::vector<std::pair<double, double>>{}), UsageError);
  EXPECT_THROW(StaticCurve({{1, 0.5}, {1, 0.6}}), UsageError);
  EXPECT_THROW(StaticCurve()(1.0), UsageError);
}

TEST(Sensitivity, ExactLine) {
  std::vector<std::pair<double, double>> pts;
  for (double x : {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}) pts.emplace_back(x, -8 * x + 10);
  const LinearFit f = sensitivity_fit(pts);
  EXPECT_NEAR(f.slope, -8.0, 1e-12);
  EXPECT_NEAR(f.intercept, 10.0, 1e-12);
  ASSERT_TRUE(f.correlation);
  EXPECT_NEAR(*f.correlation, -1.0, 1e-12);
}

TEST(Sensitivity, ConstantAndDegenerate) {
  const std::vector<std::pair<double, double>> flat{{0.1, 3}, {0.2, 3}, {0.3, 3}};
  const LinearFit f = sensitivity_fit(flat);
  EXPECT_EQ(f.slope, 0.0);
  EXPECT_FALSE(f.correlation.has_value());
  const std::vector<std::pair<double, double>> same_x{{0.1, 3}, {0.1, 4}, {0.1, 5}};
  EXPECT_THROW(sensitivity_fit(same_x), DataError);
  const std::vector<std::pair<double, double>> two{{0.1, 3}, {0.2, 4}};
  EXPECT_THROW(sensitivity_fit(two), UsageError);
}

TEST(Gap, Examples) {
  EXPECT_EQ(f1_gap(0.5, 0.5), 0.0);
  EXPECT_NEAR(f1_gap(0.55, 0.50), 10.0, 1e-12);
  EXPECT_THROW(f1_gap(0.3, 0.0), DataError);
  const StaticCurve c({{1, 0.6}, {4, 0.5}});
  EXPECT_NEAR(f1_gap(0.6, 2.5, c), 100.0 * (0.6 - 0.55) / 0.55, 1e-12);
}
