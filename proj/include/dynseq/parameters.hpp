#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "dynseq/random.hpp"
#include "dynseq/tensor.hpp"

namespace dynseq {

/// A trainable tensor and its gradient accumulator (always the same shape).
struct Parameter {
  Tensor value;
  Tensor grad;
};

/// Named trainable weights. Iteration order is lexicographic by name, which
/// fixes the order of initialization draws and checkpoint records.
class ParameterSet {
 public:
  using Map = std::map<std::string, Parameter, std::less<>>;

  Parameter& add(std::string name, Tensor init) {
    if (params_.contains(name)) throw UsageError("ParameterSet: duplicate parameter '" + name + "'");
    Tensor grad(init.shape(), 0.0);
    auto [it, ok] = params_.emplace(std::move(name), Parameter{std::move(init), std::move(grad)});
    return it->second;
  }

  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

  Parameter& at(std::string_view name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("ParameterSet: unknown parameter '" + std::string(name) + "'");
    return it->second;
  }
  const Parameter& at(std::string_view name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("ParameterSet: unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const noexcept { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(0.0);
  }

  void fill(double v) {
    for (auto& [_, p] : params_) p.value.fill(v);
  }

  void init_uniform(double scale, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [_, p] : params_)
      for (double& v : p.value.data()) v = rng.uniform(-scale, scale);
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& [_, p] : params_)
      for (double g : p.grad.data()) s += g * g;
    return std::sqrt(s);
  }

  void scale_grad(double factor) {
    for (auto& [_, p] : params_)
      for (double& g : p.grad.data()) g *= factor;
  }

  /// Copies values (not gradients) from a set with identical names and shapes.
  void assign_values(const ParameterSet& other) {
    if (other.size() != size()) throw ShapeError("ParameterSet::assign_values: parameter count mismatch");
    auto it = other.params_.begin();
    for (auto& [name, p] : params_) {
      if (it->first != name || !it->second.value.same_shape(p.value))
        throw ShapeError("ParameterSet::assign_values: mismatch at '" + name + "'");
      p.value = it->second.value;
      ++it;
    }
  }

 private:
  Map params_;
};

}  // namespace dynseq
