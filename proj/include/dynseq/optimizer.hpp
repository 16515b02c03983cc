#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "dynseq/parameters.hpp"

namespace dynseq {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::map<std::string, Tensor, std::less<>> first_moment;
  std::map<std::string, Tensor, std::less<>> second_moment;
  std::uint64_t step = 0;

  static OptimizerState make(OptimizerKind kind, double lr) {
    OptimizerState s;
    s.kind = kind;
    s.learning_rate = lr;
    return s;
  }
  static OptimizerState sgd(double lr) { return make(OptimizerKind::sgd, lr); }
  static OptimizerState adam(double lr) { return make(OptimizerKind::adam, lr); }
};

/// Applies one update from the accumulated gradients, then clears them.
inline void optimizer_step(OptimizerState& state, ParameterSet& params) {
  if (!(state.learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  ++state.step;
  if (state.kind == OptimizerKind::sgd) {
    for (auto& [_, p] : params)
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= state.learning_rate * p.grad[i];
    params.zero_grad();
    return;
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, p] : params) {
    auto m_it = state.first_moment.find(name);
    if (m_it == state.first_moment.end()) {
      m_it = state.first_moment.emplace(name, Tensor(p.value.shape(), 0.0)).first;
      state.second_moment.emplace(name, Tensor(p.value.shape(), 0.0));
    }
    Tensor& m = m_it->second;
    Tensor& v = state.second_moment.find(name)->second;
    if (!m.same_shape(p.value)) throw ShapeError("optimizer: moment shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
  params.zero_grad();
}

}  // namespace dynseq
