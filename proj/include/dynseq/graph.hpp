#pragma once

// Tape-based reverse-mode differentiation over rank-2 tensors.
//
// Operations execute eagerly: every call computes its value immediately and
// appends a node to the tape. Graph::backward walks the tape in reverse and
// accumulates gradients into every reachable node and, for parameter leaves,
// into the owning ParameterSet.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dynseq/parameters.hpp"
#include "dynseq/tensor.hpp"

namespace dynseq {

class Graph;

/// Handle to a node on a Graph tape.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return graph_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  inline const Tensor& value() const;

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class GradMode { record, inference };

/// Floor applied inside log(); keeps -log p finite for saturated softmax.
inline constexpr double kLogFloor = 1e-12;

class Graph {
 public:
  explicit Graph(GradMode mode = GradMode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return mode_ == GradMode::record; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // ---- leaves ------------------------------------------------------------

  Var constant(Tensor value) { return push("constant", as_matrix(std::move(value)), false, nullptr); }

  /// Leaf whose gradient is recorded (for input sensitivity checks).
  Var variable(Tensor value) { return push("variable", as_matrix(std::move(value)), recording(), nullptr); }

  /// Leaf bound to a named parameter; the same parameter maps to one node.
  Var param(ParameterSet& params, std::string_view name) {
    Parameter& p = params.at(name);
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push("param", as_matrix(p.value), recording(), nullptr);
    nodes_[v.id_].param = &p;
    param_nodes_.emplace(&p, v.id_);
    return v;
  }

  const Tensor& value(Var v) const { return node(v).value; }

  /// Gradient of the last backward() output with respect to v (zeros if v was
  /// not reached).
  Tensor grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  // ---- linear algebra ----------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) shape_error("matmul", A, B);
    Tensor out = Tensor::matrix(m, n);
    const double* pa = A.data().data();
    const double* pb = B.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * n;
        double* orow = po + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    return push("matmul", std::move(out), needs(a, b), [a = a.id_, b = b.id_, m, k, n](Graph& g, std::size_t self) {
      const double* gy = g.nodes_[self].grad.data().data();
      if (g.nodes_[a].requires_grad) {
        const double* pb = g.nodes_[b].value.data().data();
        double* ga = g.grad_buffer(a).data().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gy[i * n + j] * pb[p * n + j];
            ga[i * k + p] += s;
          }
      }
      if (g.nodes_[b].requires_grad) {
        const double* pa = g.nodes_[a].value.data().data();
        double* gb = g.grad_buffer(b).data().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * gy[i * n + j];
          }
      }
    });
  }

  // ---- broadcasting elementwise binaries ---------------------------------
  // Each operand dimension must match the output or be 1.

  Var add(Var a, Var b) { return binary("add", a, b, BinaryOp::add); }
  Var sub(Var a, Var b) { return binary("sub", a, b, BinaryOp::sub); }
  Var mul(Var a, Var b) { return binary("mul", a, b, BinaryOp::mul); }

  // ---- elementwise unaries -----------------------------------------------

  Var scale(Var a, double c) {
    return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
  }
  Var shift(Var a, double c) {
    return unary("shift", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
  }
  Var tanh(Var a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
  }
  Var sigmoid(Var a) {
    return unary("sigmoid", a, [](double x) { return stable_sigmoid(x); },
                 [](double, double y) { return y * (1.0 - y); });
  }
  Var exp(Var a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
  }
  /// log(max(x, 1e-12)); the gradient is zero where the floor is active.
  Var log(Var a) {
    return unary("log", a, [](double x) { return std::log(std::max(x, kLogFloor)); },
                 [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
  }
  /// max(x, 0) with subgradient 0 at x = 0.
  Var relu(Var a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
  }
  Var abs(Var a) {
    return unary("abs", a, [](double x) { return std::fabs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
  }

  // ---- structural ----------------------------------------------------------

  /// Concatenates along columns; all parts share a row count.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    const std::size_t m = value(parts[0]).rows();
    std::size_t total = 0;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // (node, cols)
    bool req = false;
    for (Var p : parts) {
      const Tensor& t = value(p);
      if (t.rows() != m) shape_error("concat", value(parts[0]), t);
      spans.emplace_back(p.id_, t.cols());
      total += t.cols();
      req = req || node(p).requires_grad;
    }
    Tensor out = Tensor::matrix(m, total);
    std::size_t off = 0;
    for (auto [id, c] : spans) {
      const double* src = nodes_[id].value.data().data();
      for (std::size_t r = 0; r < m; ++r)
        std::copy_n(src + r * c, c, out.data().data() + r * total + off);
      off += c;
    }
    return push("concat", std::move(out), req, [spans, m, total](Graph& g, std::size_t self) {
      const double* gy = g.nodes_[self].grad.data().data();
      std::size_t off = 0;
      for (auto [id, c] : spans) {
        if (g.nodes_[id].requires_grad) {
          double* gp = g.grad_buffer(id).data().data();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) gp[r * c + j] += gy[r * total + off + j];
        }
        off += c;
      }
    });
  }
  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }

  /// Columns [begin, end).
  Var slice(Var a, std::size_t begin, std::size_t end) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    if (begin >= end || end > n)
      throw ShapeError("slice: columns [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") out of range for " + shape_string(A.shape()));
    const std::size_t w = end - begin;
    Tensor out = Tensor::matrix(m, w);
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(A.data().data() + r * n + begin, w, out.data().data() + r * w);
    return push("slice", std::move(out), needs(a), [a = a.id_, m, n, w, begin](Graph& g, std::size_t self) {
      const double* gy = g.nodes_[self].grad.data().data();
      double* ga = g.grad_buffer(a).data().data();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < w; ++j) ga[r * n + begin + j] += gy[r * w + j];
    });
  }

  // ---- row-wise reductions and transforms ------------------------------------

  /// Softmax over the last axis of each row.
  Var softmax(Var a) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t r = 0; r < m; ++r) {
      const double* x = A.data().data() + r * n;
      double* y = out.data().data() + r * n;
      const double mx = *std::max_element(x, x + n);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
      for (std::size_t j = 0; j < n; ++j) y[j] /= s;
    }
    return push("softmax", std::move(out), needs(a), [a = a.id_, m, n](Graph& g, std::size_t self) {
      const double* y = g.nodes_[self].value.data().data();
      const double* gy = g.nodes_[self].grad.data().data();
      double* ga = g.grad_buffer(a).data().data();
      for (std::size_t r = 0; r < m; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (gy[r * n + j] - dot);
      }
    });
  }

  /// Sum of all entries, shape [1,1].
  Var sum(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double x : A.data()) s += x;
    return push("sum", Tensor::scalar(s), needs(a), [a = a.id_](Graph& g, std::size_t self) {
      const double gy = g.nodes_[self].grad[0];
      for (double& x : g.grad_buffer(a).data()) x += gy;
    });
  }

  /// [m,n] -> [m,1] row sums.
  Var row_sum(Var a) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::matrix(m, 1);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) out[r] += A[r * n + j];
    return push("row_sum", std::move(out), needs(a), [a = a.id_, m, n](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      double* ga = g.grad_buffer(a).data().data();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += gy[r];
    });
  }

  /// [m,n] -> [m,1] row maxima; the gradient goes to the first maximizer.
  Var row_max(Var a) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    if (n == 0) throw ShapeError("row_max: empty rows");
    Tensor out = Tensor::matrix(m, 1);
    std::vector<std::size_t> arg(m);
    for (std::size_t r = 0; r < m; ++r) {
      const double* x = A.data().data() + r * n;
      arg[r] = static_cast<std::size_t>(std::max_element(x, x + n) - x);
      out[r] = x[arg[r]];
    }
    return push("row_max", std::move(out), needs(a), [a = a.id_, n, arg = std::move(arg)](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      double* ga = g.grad_buffer(a).data().data();
      for (std::size_t r = 0; r < arg.size(); ++r) ga[r * n + arg[r]] += gy[r];
    });
  }

  /// [m,n] -> [m,1]: largest minus second-largest entry of each row.
  Var row_top2_gap(Var a) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    if (n < 2) throw ShapeError("row_top2_gap: need at least two columns, got " + shape_string(A.shape()));
    Tensor out = Tensor::matrix(m, 1);
    std::vector<std::pair<std::size_t, std::size_t>> arg(m);
    for (std::size_t r = 0; r < m; ++r) {
      arg[r] = top_two(A.row_span(r));
      out[r] = A[r * n + arg[r].first] - A[r * n + arg[r].second];
    }
    return push("row_top2_gap", std::move(out), needs(a), [a = a.id_, n, arg = std::move(arg)](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      double* ga = g.grad_buffer(a).data().data();
      for (std::size_t r = 0; r < arg.size(); ++r) {
        ga[r * n + arg[r].first] += gy[r];
        ga[r * n + arg[r].second] -= gy[r];
      }
    });
  }

  /// Running sum along each row.
  Var row_cumsum(Var a) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (s += A[r * n + j]);
    }
    return push("row_cumsum", std::move(out), needs(a), [a = a.id_, m, n](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      double* ga = g.grad_buffer(a).data().data();
      for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t j = n; j-- > 0;) ga[r * n + j] += (s += gy[r * n + j]);
      }
    });
  }

  /// [m,n] -> [m,1] with out[r] = a[r, cols[r]].
  Var pick(Var a, std::span<const int> cols) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    if (cols.size() != m)
      throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_string(A.shape()));
    Tensor out = Tensor::matrix(m, 1);
    std::vector<std::size_t> idx(m);
    for (std::size_t r = 0; r < m; ++r) {
      if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= n)
        throw UsageError("pick: index " + std::to_string(cols[r]) + " outside [0," + std::to_string(n) + ")");
      idx[r] = static_cast<std::size_t>(cols[r]);
      out[r] = A[r * n + idx[r]];
    }
    return push("pick", std::move(out), needs(a), [a = a.id_, n, idx = std::move(idx)](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      double* ga = g.grad_buffer(a).data().data();
      for (std::size_t r = 0; r < idx.size(); ++r) ga[r * n + idx[r]] += gy[r];
    });
  }

  // ---- backward --------------------------------------------------------------

  /// Seeds d(output)/d(output) = 1; output must be a [1,1] scalar.
  void backward(Var output) {
    const Tensor& v = value(output);
    if (v.size() != 1) throw ShapeError("backward: implicit seed needs a scalar output, got " + shape_string(v.shape()));
    backward(output, Tensor(v.shape(), 1.0));
  }

  void backward(Var output, const Tensor& seed) {
    if (!recording()) throw UsageError("backward: graph was built in inference mode");
    if (!output.valid() || output.graph_ != this || output.id_ >= nodes_.size())
      throw UsageError("backward: output is not a node of this graph (run forward first)");
    if (backward_done_) throw UsageError("backward: already run on this graph");
    const Tensor& v = nodes_[output.id_].value;
    if (seed.size() != v.size())
      throw ShapeError("backward: seed " + shape_string(seed.shape()) + " does not match output " +
                       shape_string(v.shape()));
    backward_done_ = true;
    Tensor& g0 = grad_buffer(output.id_);
    for (std::size_t i = 0; i < g0.size(); ++i) g0[i] += seed[i];
    for (std::size_t id = output.id_ + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        double* dst = n.param->grad.data().data();
        const double* src = nodes_[id].grad.data().data();
        for (std::size_t i = 0; i < n.param->grad.size(); ++i) dst[i] += src[i];
      }
    }
  }

  /// Indices of the largest and second-largest entries (first occurrence wins ties).
  static std::pair<std::size_t, std::size_t> top_two(std::span<const double> x) {
    std::size_t i1 = 0;
    for (std::size_t j = 1; j < x.size(); ++j)
      if (x[j] > x[i1]) i1 = j;
    std::size_t i2 = i1 == 0 ? 1 : 0;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (j != i1 && x[j] > x[i2]) i2 = j;
    return {i1, i2};
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

 private:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  enum class BinaryOp { add, sub, mul };

  const Node& node(Var v) const {
    if (!v.valid() || v.graph_ != this || v.id_ >= nodes_.size())
      throw UsageError("Graph: variable does not belong to this graph");
    return nodes_[v.id_];
  }

  bool needs(Var a) const { return node(a).requires_grad; }
  bool needs(Var a, Var b) const { return node(a).requires_grad || node(b).requires_grad; }

  static Tensor as_matrix(Tensor t) {
    if (t.rank() == 2) return t;
    if (t.rank() == 1) return Tensor({1, t.size()}, std::move(t.values()));
    if (t.rank() == 0 && t.size() == 1) return Tensor({1, 1}, std::move(t.values()));
    throw ShapeError("Graph: only rank-1/rank-2 tensors are supported, got " + shape_string(t.shape()));
  }

  [[noreturn]] static void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }

  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  Var push(std::string_view op, Tensor value, bool requires_grad, BackwardFn fn) {
    for (double x : value.data())
      if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in forward pass");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && recording();
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  template <class F, class D>
  Var unary(std::string_view op, Var a, F f, D dfdx) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
    return push(op, std::move(out), needs(a), [a = a.id_, dfdx](Graph& g, std::size_t self) {
      const Node& s = g.nodes_[self];
      const Tensor& x = g.nodes_[a].value;
      Tensor& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s.grad[i] * dfdx(x[i], s.value[i]);
    });
  }

  Var binary(std::string_view op, Var a, Var b, BinaryOp kind) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const std::size_t ma = A.rows(), na = A.cols(), mb = B.rows(), nb = B.cols();
    const std::size_t m = std::max(ma, mb), n = std::max(na, nb);
    if ((ma != m && ma != 1) || (mb != m && mb != 1) || (na != n && na != 1) || (nb != n && nb != 1))
      shape_error(op, A, B);
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double x = A[(ma == 1 ? 0 : r) * na + (na == 1 ? 0 : c)];
        const double y = B[(mb == 1 ? 0 : r) * nb + (nb == 1 ? 0 : c)];
        out[r * n + c] = kind == BinaryOp::add ? x + y : kind == BinaryOp::sub ? x - y : x * y;
      }
    return push(op, std::move(out), needs(a, b),
                [a = a.id_, b = b.id_, kind, ma, na, mb, nb, m, n](Graph& g, std::size_t self) {
                  const Tensor& gy = g.nodes_[self].grad;
                  const bool ra = g.nodes_[a].requires_grad, rb = g.nodes_[b].requires_grad;
                  Tensor* ga = ra ? &g.grad_buffer(a) : nullptr;
                  Tensor* gb = rb ? &g.grad_buffer(b) : nullptr;
                  const Tensor& A = g.nodes_[a].value;
                  const Tensor& B = g.nodes_[b].value;
                  for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) {
                      const std::size_t ia = (ma == 1 ? 0 : r) * na + (na == 1 ? 0 : c);
                      const std::size_t ib = (mb == 1 ? 0 : r) * nb + (nb == 1 ? 0 : c);
                      const double d = gy[r * n + c];
                      switch (kind) {
                        case BinaryOp::add:
                          if (ga) (*ga)[ia] += d;
                          if (gb) (*gb)[ib] += d;
                          break;
                        case BinaryOp::sub:
                          if (ga) (*ga)[ia] += d;
                          if (gb) (*gb)[ib] -= d;
                          break;
                        case BinaryOp::mul:
                          if (ga) (*ga)[ia] += d * B[ib];
                          if (gb) (*gb)[ib] += d * A[ia];
                          break;
                      }
                    }
                });
  }

  GradMode mode_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const {
  if (!graph_) throw UsageError("Var: empty handle");
  return graph_->value(*this);
}

inline Var operator+(Var a, Var b) { return a.graph()->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph()->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph()->mul(a, b); }
inline Var operator*(double c, Var a) { return a.graph()->scale(a, c); }

}  // namespace dynseq
