#pragma once

#include <random>
#include <vector>

#include "dynseq/batch.hpp"
#include "dynseq/random.hpp"

namespace fixtures {

// Random windows with standard-normal inputs and uniform labels.
inline std::vector<dynseq::LabeledWindow> random_windows(std::size_t n, std::size_t input_length, std::size_t series,
                                                         std::size_t horizon, std::uint64_t seed) {
  dynseq::Rng rng(seed);
  std::normal_distribution<double> n01;
  std::vector<dynseq::LabeledWindow> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& w = out[i];
    w.start = i;
    w.inputs = dynseq::Tensor::matrix(input_length, series);
    for (double& v : w.inputs.data()) v = n01(rng.engine());
    w.labels.resize(horizon * series);
    for (int& l : w.labels) l = static_cast<int>(rng.index(dynseq::kClassCount));
    w.first_labels.resize(series);
    for (int& l : w.first_labels) l = static_cast<int>(rng.index(dynseq::kClassCount));
  }
  return out;
}

}  // namespace fixtures
