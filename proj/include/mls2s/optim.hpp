#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "mls2s/autodiff.hpp"

namespace mls2s {

/// Ordered, named collection of parameters. Indices are stable once the
/// store is built; names follow dotted paths such as
/// `encoder.level2.layer1.reset.W`.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(Parameter{std::move(name), std::move(value), Tensor()});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  Parameter& at(const std::string& name) { return params_[index_of(name)]; }
  const Parameter& at(const std::string& name) const { return params_[index_of(name)]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Allocates (or clears) every gradient buffer to zeros.
  void zero_grad() {
    for (Parameter& p : params_) p.grad = Tensor(p.value.rows(), p.value.cols());
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// One bias-corrected Adam update over every parameter; gradients are zeroed
/// afterwards.
inline void adam_step(ParamStore& params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const Parameter& p : params) {
      state.first_moment.emplace_back(p.value.rows(), p.value.cols());
      state.second_moment.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  for (const Parameter& p : params) {
    if (!p.grad.same_shape(p.value)) {
      throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    p.grad.fill(0.0);
  }
}

}  // namespace mls2s
