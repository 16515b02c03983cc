#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "dynseq/checkpoint.hpp"
#include "dynseq/optimizer.hpp"
#include "dynseq/parameters.hpp"
#include "dynseq/random.hpp"
#include "dynseq/tensor.hpp"

using namespace dynseq;

TEST(Tensor, ValueCountMatchesShape) {
  for (Shape s : {Shape{3}, Shape{2, 3}, Shape{4, 1}, Shape{2, 3, 4}}) {
    Tensor t(s, 1.5);
    EXPECT_EQ(t.size(), shape_count(s));
  }
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 0), 4.0);
  EXPECT_EQ(t[5], 6.0);
  EXPECT_EQ(t.row_span(1)[2], 6.0);
  Tensor r = Tensor::row({7, 8});
  EXPECT_EQ(r.rows(), 1u);
  EXPECT_EQ(r.cols(), 2u);
}

TEST(Parameters, NamesUniqueAndGradShapesMatch) {
  ParameterSet ps;
  ps.add("a", Tensor::matrix(2, 3));
  ps.add("b", Tensor::matrix(1, 4));
  EXPECT_THROW(ps.add("a", Tensor::matrix(1, 1)), UsageError);
  for (const auto& [name, p] : ps) EXPECT_EQ(p.grad.shape(), p.value.shape()) << name;
  EXPECT_EQ(ps.scalar_count(), 10u);
  EXPECT_THROW(ps.at("missing"), UsageError);
}

TEST(Parameters, UniformInitIsSeededAndBounded) {
  ParameterSet a, b;
  a.add("w", Tensor::matrix(10, 10));
  b.add("w", Tensor::matrix(10, 10));
  a.init_uniform(0.08, 42);
  b.init_uniform(0.08, 42);
  EXPECT_EQ(a.at("w").value, b.at("w").value);
  for (double v : a.at("w").value.data()) {
    EXPECT_GE(v, -0.08);
    EXPECT_LE(v, 0.08);
  }
  b.init_uniform(0.08, 43);
  EXPECT_NE(a.at("w").value, b.at("w").value);
}

TEST(Random, DerivedSeedsDifferByPart) {
  EXPECT_NE(derive_seed(1, {std::uint64_t{1}}), derive_seed(1, {std::uint64_t{2}}));
  EXPECT_NE(derive_seed(1, {0.1, 0.5}), derive_seed(1, {0.5, 0.1}));
  EXPECT_EQ(derive_seed(9, {0.3, 0.1}), derive_seed(9, {0.3, 0.1}));
}

// ---- optimizer ----

TEST(Optimizer, SgdStep) {
  ParameterSet ps;
  ps.add("t", Tensor::scalar(1.0));
  ps.at("t").grad[0] = 2.0;
  OptimizerState s = OptimizerState::sgd(0.1);
  optimizer_step(s, ps);
  EXPECT_DOUBLE_EQ(ps.at("t").value[0], 0.8);
  EXPECT_EQ(ps.at("t").grad[0], 0.0);
  EXPECT_EQ(s.step, 1u);
}

TEST(Optimizer, AdamFirstStepMagnitude) {
  for (double g : {1e-3, 0.5, -3.0, 100.0}) {
    ParameterSet ps;
    ps.add("t", Tensor::scalar(0.0));
    ps.at("t").grad[0] = g;
    OptimizerState s = OptimizerState::adam(0.001);
    optimizer_step(s, ps);
    // m_hat = g, v_hat = g^2 on the first step
    const double expected = -0.001 * g / (std::fabs(g) + 1e-8);
    EXPECT_NEAR(ps.at("t").value[0], expected, 1e-15);
    EXPECT_NEAR(std::fabs(ps.at("t").value[0]), 0.001, 1e-7);
  }
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  for (OptimizerKind k : {OptimizerKind::sgd, OptimizerKind::adam}) {
    ParameterSet ps;
    ps.add("w", Tensor::from_rows({{0.3, -0.2}}));
    OptimizerState s = OptimizerState::make(k, 0.01);
    optimizer_step(s, ps);
    EXPECT_EQ(ps.at("w").value, Tensor::from_rows({{0.3, -0.2}}));
  }
}

TEST(Optimizer, StepCounterAndMomentShapes) {
  ParameterSet ps;
  ps.add("a", Tensor::matrix(2, 3, 0.1));
  ps.add("b", Tensor::matrix(1, 2, 0.1));
  OptimizerState s = OptimizerState::adam(0.01);
  for (int i = 1; i <= 3; ++i) {
    ps.at("a").grad.fill(0.5);
    optimizer_step(s, ps);
    EXPECT_EQ(s.step, static_cast<std::uint64_t>(i));
  }
  for (const auto& [name, p] : ps) {
    EXPECT_EQ(s.first_moment.at(name).shape(), p.value.shape());
    EXPECT_EQ(s.second_moment.at(name).shape(), p.value.shape());
  }
}

// ---- checkpoint ----

namespace {

ParameterSet sample_params() {
  ParameterSet ps;
  ps.add("enc.l0.W", Tensor::matrix(3, 8));
  ps.add("head.0.b", Tensor::matrix(1, 5));
  ps.add("v", Tensor({4}, 0.0));
  ps.init_uniform(1.0, 5);
  ps.at("v").value[0] = -0.0;
  ps.at("v").value[1] = 1e-310;  // subnormal
  ps.at("v").value[2] = std::nextafter(1.0, 2.0);
  return ps;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const ParameterSet ps = sample_params();
  const auto bytes = serialize_checkpoint(ps);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "DPLS2S01");
  const ParameterSet back = deserialize_checkpoint(bytes);
  ASSERT_EQ(back.size(), ps.size());
  auto it = back.begin();
  for (const auto& [name, p] : ps) {
    EXPECT_EQ(it->first, name);
    ASSERT_EQ(it->second.value.shape(), p.value.shape());
    EXPECT_EQ(std::memcmp(it->second.value.data().data(), p.value.data().data(), p.value.size() * sizeof(double)), 0);
    ++it;
  }
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(checkpoint_hash(back), checkpoint_hash(ps));
}

TEST(Checkpoint, RecordLayout) {
  ParameterSet ps;
  ps.add("ab", Tensor::from_rows({{1.0, 2.0}}));
  const auto bytes = serialize_checkpoint(ps);
  // magic, u32 name len, name, u32 rank, 2 x u64 dims, 2 x f64
  ASSERT_EQ(bytes.size(), 8u + 4 + 2 + 4 + 16 + 16);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 'a');
  EXPECT_EQ(bytes[14], 2);  // rank
  EXPECT_EQ(bytes[18], 1);  // rows
  EXPECT_EQ(bytes[26], 2);  // cols
  double v;
  std::memcpy(&v, bytes.data() + 34, 8);
  EXPECT_EQ(v, 1.0);
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = serialize_checkpoint(sample_params());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), Error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_checkpoint(truncated), Error);
}

TEST(Checkpoint, FileRoundTripAndHashSensitivity) {
  const auto path = std::filesystem::temp_directory_path() / "dynseq_ckpt_test.bin";
  ParameterSet ps = sample_params();
  save_checkpoint(ps, path);
  const ParameterSet back = load_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ps));
  std::filesystem::remove(path);
  const auto h = checkpoint_hash(ps);
  ps.at("head.0.b").value[3] = std::nextafter(ps.at("head.0.b").value[3], 10.0);
  EXPECT_NE(checkpoint_hash(ps), h);
  EXPECT_THROW(load_checkpoint(path), DataError);
}
