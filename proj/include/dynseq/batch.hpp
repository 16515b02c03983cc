#pragma once

#include <span>
#include <vector>

#include "dynseq/tensor.hpp"

namespace dynseq {

/// Classes 0..4: large down, small down, insignificant, small up, large up.
inline constexpr std::size_t kClassCount = 5;

/// One training sample: an encoder span of normalized returns, the labels of
/// the horizon that follows it, and the label of the final encoder tick.
struct LabeledWindow {
  Tensor inputs;                // [input_length, series]
  std::vector<int> labels;      // [horizon][series]
  std::vector<int> first_labels;  // [series]
  std::size_t start = 0;        // tick index of the first encoder return

  std::size_t input_length() const { return inputs.rows(); }
  std::size_t series() const { return first_labels.size(); }
  std::size_t horizon() const { return series() ? labels.size() / series() : 0; }
  int label(std::size_t t, std::size_t q) const { return labels[t * series() + q]; }
};

/// Column-major view of several windows, laid out for batched graph ops.
struct Batch {
  std::size_t size = 0;
  std::size_t series = 0;
  std::size_t input_length = 0;
  std::size_t horizon = 0;
  std::vector<Tensor> encoder_steps;  // input_length tensors of [size, series]
  std::vector<int> first_labels;      // [size][series]
  std::vector<int> labels;            // [size][horizon][series]

  int label(std::size_t b, std::size_t t, std::size_t q) const {
    return labels[(b * horizon + t) * series + q];
  }
  int first_label(std::size_t b, std::size_t q) const { return first_labels[b * series + q]; }

  /// Labels of step t for series q across the batch.
  std::vector<int> step_labels(std::size_t t, std::size_t q) const {
    std::vector<int> out(size);
    for (std::size_t b = 0; b < size; ++b) out[b] = label(b, t, q);
    return out;
  }
};

inline Batch make_batch(std::span<const LabeledWindow> windows, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("make_batch: empty selection");
  const LabeledWindow& first = windows[indices[0]];
  Batch batch;
  batch.size = indices.size();
  batch.series = first.series();
  batch.input_length = first.input_length();
  batch.horizon = first.horizon();
  batch.encoder_steps.assign(batch.input_length, Tensor::matrix(batch.size, batch.series));
  batch.first_labels.reserve(batch.size * batch.series);
  batch.labels.reserve(batch.size * batch.horizon * batch.series);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const LabeledWindow& w = windows[indices[b]];
    if (w.series() != batch.series || w.input_length() != batch.input_length || w.horizon() != batch.horizon)
      throw ShapeError("make_batch: windows disagree on shape");
    for (std::size_t s = 0; s < batch.input_length; ++s)
      for (std::size_t q = 0; q < batch.series; ++q) batch.encoder_steps[s](b, q) = w.inputs(s, q);
    batch.first_labels.insert(batch.first_labels.end(), w.first_labels.begin(), w.first_labels.end());
    batch.labels.insert(batch.labels.end(), w.labels.begin(), w.labels.end());
  }
  return batch;
}

inline Batch make_batch(std::span<const LabeledWindow> windows) {
  std::vector<std::size_t> idx(windows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(windows, idx);
}

}  // namespace dynseq
