#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dynseq/batch.hpp"
#include "dynseq/graph.hpp"
#include "dynseq/parameters.hpp"

namespace dynseq {

enum class ModelKind { ffn, lstm, seq2seq };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ffn: return "ffn";
    case ModelKind::lstm: return "lstm";
    case ModelKind::seq2seq: return "seq2seq";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "ffn") return ModelKind::ffn;
  if (s == "lstm") return ModelKind::lstm;
  if (s == "seq2seq") return ModelKind::seq2seq;
  throw ConfigError("unknown model kind '" + std::string(s) + "' (expected ffn, lstm or seq2seq)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::seq2seq;
  std::size_t series = 1;
  std::size_t hidden = 64;
  std::size_t input_length = 20;
  std::size_t horizon = 10;
  bool attention = true;
  std::size_t layers = 1;
  double init_scale = 0.08;

  /// Baseline shapes: two 64-wide layers for ffn/lstm over 10/20 returns,
  /// one encoder and one decoder layer for seq2seq over 20 returns.
  static ModelConfig defaults(ModelKind kind, std::size_t series) {
    ModelConfig c;
    c.kind = kind;
    c.series = series;
    switch (kind) {
      case ModelKind::ffn:
        c.input_length = 10;
        c.layers = 2;
        c.horizon = 1;
        c.attention = false;
        break;
      case ModelKind::lstm:
        c.input_length = 20;
        c.layers = 2;
        c.horizon = 1;
        c.attention = false;
        break;
      case ModelKind::seq2seq:
        break;
    }
    return c;
  }

  /// Number of decoder steps the model emits.
  std::size_t output_steps() const { return kind == ModelKind::seq2seq ? horizon : 1; }

  void validate() const {
    if (series == 0) throw ConfigError("model: series count must be positive");
    if (hidden == 0) throw ConfigError("model: hidden width must be positive");
    if (input_length == 0) throw ConfigError("model: input length must be positive");
    if (horizon == 0) throw ConfigError("model: horizon must be positive");
    if (layers == 0) throw ConfigError("model: layer count must be positive");
    if (kind != ModelKind::seq2seq && horizon != 1)
      throw ConfigError("model: " + std::string(to_string(kind)) + " emits a single step; horizon must be 1");
    if (!(init_scale > 0.0)) throw ConfigError("model: init scale must be positive");
  }
};

/// Per-step, per-series class distributions: dists[t][q] is [batch, 5].
using StepDistributions = std::vector<std::vector<Var>>;

struct LstmWeights {
  Var input;      // [in, 4H]
  Var recurrent;  // [H, 4H]
  Var bias;       // [1, 4H]
  std::size_t hidden = 0;
};

struct LstmState {
  Var h;
  Var c;
};

/// Standard LSTM cell; gate blocks are ordered input, forget, candidate, output.
inline LstmState lstm_step(Graph& g, const LstmWeights& w, Var x, const LstmState& s) {
  const std::size_t H = w.hidden;
  if (g.value(w.recurrent).rows() != H || g.value(w.recurrent).cols() != 4 * H)
    throw ShapeError("lstm_step: recurrent weights must be [" + std::to_string(H) + "x" + std::to_string(4 * H) +
                     "], got " + shape_string(g.value(w.recurrent).shape()));
  Var z = g.add(g.add(g.matmul(x, w.input), g.matmul(s.h, w.recurrent)), w.bias);
  Var i = g.sigmoid(g.slice(z, 0, H));
  Var f = g.sigmoid(g.slice(z, H, 2 * H));
  Var cand = g.tanh(g.slice(z, 2 * H, 3 * H));
  Var o = g.sigmoid(g.slice(z, 3 * H, 4 * H));
  Var c = g.add(g.mul(f, s.c), g.mul(i, cand));
  Var h = g.mul(o, g.tanh(c));
  return {h, c};
}

enum class DecoderFeed {
  teacher,  // previous ground-truth label
  argmax,   // one-hot argmax of the previous emitted distribution
};

struct ForwardOptions {
  DecoderFeed feed = DecoderFeed::teacher;
  /// Make decoder inputs gradient-tracked leaves (for causality checks).
  bool track_decoder_inputs = false;
};

struct ForwardPass {
  StepDistributions dists;
  std::vector<Var> decoder_inputs;  // per step, [batch, 5*series]
};

struct EncoderOutput {
  std::vector<Var> states;          // top-layer hidden state per step
  std::vector<LstmState> final;     // per layer
  std::vector<Var> keys;            // states projected by attn.W_enc
};

struct DecodeStep {
  std::vector<Var> logits;  // per series, [batch, 5]
  std::vector<Var> dists;   // per series, [batch, 5]
};

/// Feed-forward, stacked-LSTM and attention seq2seq classifiers that share a
/// ParameterSet layout and a per-series 5-way softmax head.
class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 1) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_parameters();
    params_.init_uniform(cfg_.init_scale, seed);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  LstmWeights lstm_weights(Graph& g, const std::string& prefix) {
    return {g.param(params_, prefix + ".W"), g.param(params_, prefix + ".U"), g.param(params_, prefix + ".b"),
            cfg_.hidden};
  }

  LstmState zero_state(Graph& g, std::size_t batch) const {
    return {g.constant(Tensor::matrix(batch, cfg_.hidden)), g.constant(Tensor::matrix(batch, cfg_.hidden))};
  }

  /// Runs the encoder stack over the input steps (each [batch, series]).
  EncoderOutput encode(Graph& g, std::span<const Var> steps) {
    if (steps.size() != cfg_.input_length)
      throw ShapeError("encode: expected " + std::to_string(cfg_.input_length) + " input steps, got " +
                       std::to_string(steps.size()));
    const std::size_t batch = g.value(steps[0]).rows();
    const std::string stem = cfg_.kind == ModelKind::lstm ? "lstm" : "enc";
    std::vector<Var> layer_in(steps.begin(), steps.end());
    EncoderOutput out;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      LstmWeights w = lstm_weights(g, stem + ".l" + std::to_string(l));
      LstmState s = zero_state(g, batch);
      std::vector<Var> layer_out;
      layer_out.reserve(layer_in.size());
      for (Var x : layer_in) {
        s = lstm_step(g, w, x, s);
        layer_out.push_back(s.h);
      }
      out.final.push_back(s);
      layer_in = std::move(layer_out);
    }
    out.states = std::move(layer_in);
    return out;
  }

  /// Additive attention: softmax_i(v . tanh(s W_dec + h_i W_enc)) weighted sum of h_i.
  void project_keys(Graph& g, EncoderOutput& enc) {
    Var w_enc = g.param(params_, "attn.W_enc");
    enc.keys.clear();
    for (Var h : enc.states) enc.keys.push_back(g.matmul(h, w_enc));
  }

  /// Additive attention; `keys` are the encoder states times attn.W_enc.
  Var attend(Graph& g, Var query_state, std::span<const Var> encoder_states, std::span<const Var> keys) {
    if (encoder_states.empty()) throw ShapeError("attend: no encoder states");
    if (keys.size() != encoder_states.size()) throw ShapeError("attend: key count differs from state count");
    Var w_dec = g.param(params_, "attn.W_dec");
    Var v = g.param(params_, "attn.v");
    Var query = g.matmul(query_state, w_dec);
    std::vector<Var> scores;
    scores.reserve(encoder_states.size());
    for (Var k : keys) scores.push_back(g.matmul(g.tanh(g.add(query, k)), v));
    Var weights = g.softmax(g.concat(scores));
    Var context = g.mul(g.slice(weights, 0, 1), encoder_states[0]);
    for (std::size_t i = 1; i < encoder_states.size(); ++i)
      context = g.add(context, g.mul(g.slice(weights, i, i + 1), encoder_states[i]));
    return context;
  }

  /// Applies the per-series heads to a hidden state.
  DecodeStep heads(Graph& g, Var hidden) {
    DecodeStep out;
    for (std::size_t q = 0; q < cfg_.series; ++q) {
      const std::string p = "head." + std::to_string(q);
      Var logits = g.add(g.matmul(hidden, g.param(params_, p + ".W")), g.param(params_, p + ".b"));
      out.logits.push_back(logits);
      out.dists.push_back(g.softmax(logits));
    }
    return out;
  }

  /// One decoder step: LSTM stack on [prev one-hot | context], then the heads.
  DecodeStep decode_step(Graph& g, Var prev_onehot, std::vector<LstmState>& state, Var context) {
    Var x = context.valid() ? g.concat({prev_onehot, context}) : prev_onehot;
    for (std::size_t l = 0; l < state.size(); ++l) {
      state[l] = lstm_step(g, lstm_weights(g, "dec.l" + std::to_string(l)), x, state[l]);
      x = state[l].h;
    }
    return heads(g, x);
  }

  /// Emits `steps` decoder outputs. With teacher feed, step t > 1 receives the
  /// ground truth of step t-1; step 1 always receives the last encoder label.
  ForwardPass forward(Graph& g, const Batch& batch, std::size_t steps, ForwardOptions opt = {}) {
    check_batch(batch);
    if (steps == 0 || steps > cfg_.output_steps())
      throw UsageError("forward: " + std::to_string(steps) + " steps exceed the configured horizon " +
                       std::to_string(cfg_.output_steps()));
    ForwardPass pass;
    if (cfg_.kind == ModelKind::ffn) {
      pass.dists.push_back(ffn_forward(g, batch).dists);
      return pass;
    }
    std::vector<Var> inputs;
    inputs.reserve(batch.input_length);
    for (const Tensor& t : batch.encoder_steps) inputs.push_back(g.constant(t));
    EncoderOutput enc = encode(g, inputs);
    if (cfg_.kind == ModelKind::lstm) {
      pass.dists.push_back(heads(g, enc.states.back()).dists);
      return pass;
    }

    if (opt.feed == DecoderFeed::teacher && steps > batch.horizon + 1)
      throw UsageError("forward: teacher forcing needs labels for " + std::to_string(steps - 1) + " steps");
    if (cfg_.attention) project_keys(g, enc);
    std::vector<LstmState> state = enc.final;
    std::vector<int> prev(batch.first_labels);
    for (std::size_t t = 0; t < steps; ++t) {
      Tensor onehot = Tensor::matrix(batch.size, kClassCount * cfg_.series);
      for (std::size_t b = 0; b < batch.size; ++b)
        for (std::size_t q = 0; q < cfg_.series; ++q)
          onehot(b, q * kClassCount + static_cast<std::size_t>(prev[b * cfg_.series + q])) = 1.0;
      Var in = opt.track_decoder_inputs ? g.variable(std::move(onehot)) : g.constant(std::move(onehot));
      pass.decoder_inputs.push_back(in);
      Var context = cfg_.attention ? attend(g, state.back().h, enc.states, enc.keys) : Var{};
      DecodeStep step = decode_step(g, in, state, context);
      if (t + 1 < steps) {
        for (std::size_t b = 0; b < batch.size; ++b)
          for (std::size_t q = 0; q < cfg_.series; ++q) {
            if (opt.feed == DecoderFeed::teacher) {
              prev[b * cfg_.series + q] = batch.label(b, t, q);
            } else {
              auto row = g.value(step.dists[q]).row_span(b);
              prev[b * cfg_.series + q] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            }
          }
      }
      pass.dists.push_back(std::move(step.dists));
    }
    return pass;
  }

  /// Flattens the encoder span (time-major) through tanh layers and the heads.
  DecodeStep ffn_forward(Graph& g, const Batch& batch) {
    if (cfg_.kind != ModelKind::ffn) throw UsageError("ffn_forward: model is not a feed-forward network");
    check_batch(batch);
    std::vector<Var> parts;
    for (const Tensor& t : batch.encoder_steps) parts.push_back(g.constant(t));
    Var x = g.concat(parts);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "ffn.l" + std::to_string(l);
      x = g.tanh(g.add(g.matmul(x, g.param(params_, p + ".W")), g.param(params_, p + ".b")));
    }
    return heads(g, x);
  }

 private:
  void check_batch(const Batch& batch) const {
    if (batch.series != cfg_.series)
      throw ShapeError("model: batch has " + std::to_string(batch.series) + " series, model expects " +
                       std::to_string(cfg_.series));
    if (batch.input_length != cfg_.input_length)
      throw ShapeError("model: batch input length " + std::to_string(batch.input_length) + " != configured " +
                       std::to_string(cfg_.input_length));
  }

  void add_lstm(const std::string& prefix, std::size_t in) {
    const std::size_t H = cfg_.hidden;
    params_.add(prefix + ".W", Tensor::matrix(in, 4 * H));
    params_.add(prefix + ".U", Tensor::matrix(H, 4 * H));
    params_.add(prefix + ".b", Tensor::matrix(1, 4 * H));
  }

  void build_parameters() {
    const std::size_t H = cfg_.hidden, Q = cfg_.series;
    switch (cfg_.kind) {
      case ModelKind::ffn: {
        std::size_t in = cfg_.input_length * Q;
        for (std::size_t l = 0; l < cfg_.layers; ++l, in = H) {
          params_.add("ffn.l" + std::to_string(l) + ".W", Tensor::matrix(in, H));
          params_.add("ffn.l" + std::to_string(l) + ".b", Tensor::matrix(1, H));
        }
        break;
      }
      case ModelKind::lstm:
        for (std::size_t l = 0; l < cfg_.layers; ++l) add_lstm("lstm.l" + std::to_string(l), l ? H : Q);
        break;
      case ModelKind::seq2seq:
        for (std::size_t l = 0; l < cfg_.layers; ++l) add_lstm("enc.l" + std::to_string(l), l ? H : Q);
        for (std::size_t l = 0; l < cfg_.layers; ++l)
          add_lstm("dec.l" + std::to_string(l), l ? H : kClassCount * Q + (cfg_.attention ? H : 0));
        if (cfg_.attention) {
          params_.add("attn.W_dec", Tensor::matrix(H, H));
          params_.add("attn.W_enc", Tensor::matrix(H, H));
          params_.add("attn.v", Tensor::matrix(H, 1));
        }
        break;
    }
    for (std::size_t q = 0; q < Q; ++q) {
      params_.add("head." + std::to_string(q) + ".W", Tensor::matrix(H, kClassCount));
      params_.add("head." + std::to_string(q) + ".b", Tensor::matrix(1, kClassCount));
    }
  }

  ModelConfig cfg_;
  ParameterSet params_;
};

}  // namespace dynseq
