#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mls2s/tensor.hpp"

namespace mls2s {

/// A trainable tensor with its gradient buffer. The grad buffer is empty
/// until a backward pass (or zero_grad) allocates it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  /// Gradient after Tape::backward; empty when the node received none.
  const Tensor& grad() const;
  bool tracked() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a forward computation in evaluation order so gradients can be
/// accumulated in reverse. One tape serves one forward/backward pass.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked input; receives no gradient.
  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  /// Tracked leaf whose gradient is readable via Var::grad after backward.
  Var leaf(Tensor value) { return push(std::move(value), true, nullptr, {}); }

  /// Tracked leaf bound to a Parameter. backward() adds into param.grad;
  /// the parameter must outlive the backward call.
  Var param(Parameter& p) { return push(p.value, true, &p, {}); }

  /// Appends an operation result. `backprop` is dropped when no input is tracked.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop) {
    bool tracked = false;
    for (const Var& in : inputs) {
      check_owner(in);
      tracked = tracked || nodes_[in.id()].tracked;
    }
    return push(std::move(value), tracked, nullptr, tracked ? std::move(backprop) : Backprop{});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool tracked(std::size_t id) const { return nodes_.at(id).tracked; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of node `id`, zero-allocated on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(const Var& v, const Tensor& g) {
    if (!nodes_[v.id()].tracked) return;
    Tensor& buf = grad_buffer(v.id());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  void backward(const Var& loss) {
    check_owner(loss);
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be scalar, got " + lv.shape_string());
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.tracked || n.grad.empty() || !n.backprop) continue;
      n.backprop(*this, n.grad);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.param == nullptr) continue;
      Tensor& pg = n.param->grad;
      if (!pg.same_shape(n.param->value)) pg = Tensor(n.param->value.rows(), n.param->value.cols());
      if (n.grad.empty()) continue;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool tracked = false;
    Parameter* param = nullptr;
    Backprop backprop;
  };

  Var push(Tensor value, bool tracked, Parameter* param, Backprop backprop) {
    nodes_.push_back(Node{std::move(value), Tensor(), tracked, param, std::move(backprop)});
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(const Var& v) const {
    if (v.tape() != this) throw ContractError("variable belongs to a different tape");
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::tracked() const { return tape_->tracked(id_); }

/// Free-function form of Tape::backward.
inline void backward(Tape& tape, const Var& loss) { tape.backward(loss); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError("operands are not recorded on the same tape");
  }
  return *a.tape();
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  Tensor out = matmul(a.value(), b.value());
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.tracked()) as_eigen(t.grad_buffer(a.id())).noalias() += as_eigen(g) * as_eigen(b.value()).transpose();
    if (b.tracked()) as_eigen(t.grad_buffer(b.id())).noalias() += as_eigen(a.value()).transpose() * as_eigen(g);
  });
}

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (b.tracked()) {
      Tensor& gb = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.tracked()) {
      Tensor& ga = t.grad_buffer(a.id());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (b.tracked()) {
      Tensor& gb = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = detail::map(a.value(), [s](double x) { return s * x; });
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

/// 1 - a, elementwise.
inline Var one_minus(const Var& a) {
  Tensor out = detail::map(a.value(), [](double x) { return 1.0 - x; });
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  });
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  Tensor out = detail::map(a.value(), [](double x) { return sigmoid(x); });
  Tape& tape = *a.tape();
  // Backward reads the node's own output, which lands at index out_id.
  const std::size_t out_id = tape.size();
  return tape.record(std::move(out), {a}, [a, out_id](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(out_id);
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var tanh(const Var& a) {
  Tensor out = detail::map(a.value(), [](double x) { return std::tanh(x); });
  Tape& tape = *a.tape();
  const std::size_t out_id = tape.size();
  return tape.record(std::move(out), {a}, [a, out_id](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(out_id);
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

/// a + b with the 1 x cols row vector b broadcast over every row of a.
inline Var add_bias(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("add_bias: bias " + bv.shape_string() + " does not broadcast over " +
                     av.shape_string());
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (b.tracked()) {
      Tensor& gb = t.grad_buffer(b.id());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

/// Columns of a followed by columns of b.
inline Var concat_cols(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: row counts differ, " + av.shape_string() + " vs " +
                     bv.shape_string());
  }
  const std::size_t p = av.cols(), q = bv.cols();
  Tensor out(av.rows(), p + q);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < p; ++c) out(r, c) = av(r, c);
    for (std::size_t c = 0; c < q; ++c) out(r, p + c) = bv(r, c);
  }
  return tape.record(std::move(out), {a, b}, [a, b, p, q](Tape& t, const Tensor& g) {
    if (a.tracked()) {
      Tensor& ga = t.grad_buffer(a.id());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < p; ++c) ga(r, c) += g(r, c);
    }
    if (b.tracked()) {
      Tensor& gb = t.grad_buffer(b.id());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < q; ++c) gb(r, c) += g(r, p + c);
    }
  });
}

/// Columns [first, first + count) of a.
inline Var slice_cols(const Var& a, std::size_t first, std::size_t count) {
  const Tensor& av = a.value();
  if (first + count > av.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " + av.shape_string());
  }
  Tensor out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, first + c);
  return a.tape()->record(std::move(out), {a}, [a, first, count](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) ga(r, first + c) += g(r, c);
  });
}

/// Applies the n x n operator `prop` to every consecutive block of n rows
/// of a, i.e. left-multiplies a batch of stacked node matrices. `prop` must
/// outlive the backward pass.
inline Var propagate(const Tensor& prop, const Var& a) {
  const Tensor& av = a.value();
  const std::size_t n = prop.rows();
  if (prop.cols() != n || n == 0 || av.rows() % n != 0) {
    throw ShapeError("propagate: operator " + prop.shape_string() +
                     " does not tile input rows of " + av.shape_string());
  }
  const std::size_t f = av.cols();
  const std::size_t blocks = av.rows() / n;
  Tensor out(av.rows(), f);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * n;
    for (std::size_t i = 0; i < n; ++i) {
      double* orow = out.row(base + i);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = prop(i, j);
        if (w == 0.0) continue;
        const double* arow = av.row(base + j);
        for (std::size_t c = 0; c < f; ++c) orow[c] += w * arow[c];
      }
    }
  }
  const Tensor* pp = &prop;
  return a.tape()->record(std::move(out), {a}, [a, pp, n, f, blocks](Tape& t, const Tensor& g) {
    const Tensor& p = *pp;
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t base = b * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g.row(base + i);
        for (std::size_t j = 0; j < n; ++j) {
          const double w = p(i, j);
          if (w == 0.0) continue;
          double* garow = ga.row(base + j);
          for (std::size_t c = 0; c < f; ++c) garow[c] += w * grow[c];
        }
      }
    }
  });
}

/// Sum of all entries, as a 1x1 tensor.
inline Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

/// Mean of |pred - target| over entries where mask != 0, as a 1x1 tensor.
/// The subgradient at an exact zero residual is 0.
inline Var masked_mean_abs(const Var& pred, const Tensor& target, std::vector<std::uint8_t> mask) {
  const Tensor& pv = pred.value();
  detail::require_same_shape("masked_mean_abs", pv, target);
  if (mask.size() != pv.size()) {
    throw ShapeError("masked_mean_abs: mask length " + std::to_string(mask.size()) +
                     " does not match " + pv.shape_string());
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!mask[i]) continue;
    ++count;
    total += std::abs(pv[i] - target[i]);
  }
  if (count == 0) throw ContractError("masked_mean_abs: mask selects no entries");
  const double inv = 1.0 / static_cast<double>(count);
  // The sign pattern is all backward needs.
  std::vector<std::int8_t> sign(pv.size(), 0);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!mask[i]) continue;
    const double d = pv[i] - target[i];
    sign[i] = d > 0.0 ? 1 : (d < 0.0 ? -1 : 0);
  }
  return pred.tape()->record(
      Tensor::scalar(total * inv), {pred},
      [pred, sign = std::move(sign), inv](Tape& t, const Tensor& g) {
        Tensor& gp = t.grad_buffer(pred.id());
        const double s = g[0] * inv;
        for (std::size_t i = 0; i < sign.size(); ++i) gp[i] += s * sign[i];
      });
}

/// Central-difference estimate (f(x+step) - f(x-step)) / (2 step) per entry.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                                     double step) {
  if (!(step > 0.0)) throw ContractError("finite_difference_grad: step must be positive");
  Tensor g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

}  // namespace mls2s
