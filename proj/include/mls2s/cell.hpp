#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "mls2s/autodiff.hpp"
#include "mls2s/graph.hpp"
#include "mls2s/optim.hpp"

namespace mls2s {

enum class Activation { none, sigmoid, tanh };

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound,
                             std::mt19937_64& rng) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return t;
}

/// Indices of one graph convolution's weight ((d_in + d_hidden) x d_out)
/// and bias (1 x d_out) in a ParamStore.
struct GConvParams {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

/// The three independent gate convolutions of a GC-GRU layer.
struct GCGRUParams {
  GConvParams reset;
  GConvParams update;
  GConvParams candidate;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
};

/// Registers a GC-GRU layer under `prefix` (e.g. "decoder.layer1"). Weights
/// are uniform in +-sqrt(1/(d_in + d_hidden)), biases zero.
inline GCGRUParams add_gcgru_params(ParamStore& store, const std::string& prefix,
                                    std::size_t input_dim, std::size_t hidden_dim,
                                    std::mt19937_64& rng) {
  const std::size_t fan_in = input_dim + hidden_dim;
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  GCGRUParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  auto gate = [&](const char* name) {
    GConvParams g;
    g.weight = store.add(prefix + "." + name + ".W", uniform_tensor(fan_in, hidden_dim, bound, rng));
    g.bias = store.add(prefix + "." + name + ".b", Tensor(1, hidden_dim));
    return g;
  };
  p.reset = gate("reset");
  p.update = gate("update");
  p.candidate = gate("candidate");
  return p;
}

/// Gate parameters bound to a tape for one forward pass.
struct GConvWeights {
  Var weight;
  Var bias;
};

struct GCGRUWeights {
  GConvWeights reset;
  GConvWeights update;
  GConvWeights candidate;
};

inline GCGRUWeights bind(Tape& tape, ParamStore& store, const GCGRUParams& p) {
  auto b = [&](const GConvParams& g) {
    return GConvWeights{tape.param(store[g.weight]), tape.param(store[g.bias])};
  };
  return GCGRUWeights{b(p.reset), b(p.update), b(p.candidate)};
}

/// `hops` applications of the propagation operator.
inline Var propagate_hops(const PropagationMatrix& prop, Var h, int hops) {
  for (int k = 0; k < hops; ++k) h = propagate(prop.p, h);
  return h;
}

inline Var apply_activation(Var v, Activation act) {
  switch (act) {
    case Activation::sigmoid:
      return sigmoid(v);
    case Activation::tanh:
      return tanh(v);
    case Activation::none:
      break;
  }
  return v;
}

/// activation(P H W + b), bias broadcast over rows. `h_in` may stack several
/// graphs' node rows; P applies blockwise.
inline Var gconv(const PropagationMatrix& prop, Var h_in, const GConvWeights& w,
                 Activation act, int hops = 1) {
  const Var mixed = propagate_hops(prop, h_in, hops);
  return apply_activation(add_bias(matmul(mixed, w.weight), w.bias), act);
}

/// One GC-GRU update:
///   r = sigmoid(gconv([x, h]))      u = sigmoid(gconv([x, h]))
///   c = tanh(gconv([x, r * h]))     h' = u * h + (1 - u) * c
/// The reset and update gates read the same propagated input, so it is
/// computed once; P (X W) == (P X) W.
inline Var gcgru_step(const PropagationMatrix& prop, Var x, Var h_prev, const GCGRUWeights& w,
                      int hops = 1) {
  const Var xh = propagate_hops(prop, concat_cols(x, h_prev), hops);
  const Var r = sigmoid(add_bias(matmul(xh, w.reset.weight), w.reset.bias));
  const Var u = sigmoid(add_bias(matmul(xh, w.update.weight), w.update.bias));
  const Var xrh = concat_cols(x, mul(r, h_prev));
  const Var c = gconv(prop, xrh, w.candidate, Activation::tanh, hops);
  return add(mul(u, h_prev), mul(one_minus(u), c));
}

}  // namespace mls2s
