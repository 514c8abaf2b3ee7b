#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mls2s/cell.hpp"

namespace mls2s {

struct MLS2SConfig {
  std::size_t levels = 2;
  std::size_t hidden_dim = 64;
  std::size_t input_dim = 1;
  std::size_t horizon = 12;
  std::size_t history = 12;
  double teacher_forcing_prob = 0.5;
  int gconv_hops = 1;

  void validate() const {
    if (levels < 1) throw ContractError("levels must be >= 1");
    if (hidden_dim < 1) throw ContractError("hidden_dim must be >= 1");
    if (input_dim < 1) throw ContractError("input_dim must be >= 1");
    if (horizon < 1) throw ContractError("horizon must be >= 1");
    if (history < 1) throw ContractError("history must be >= 1");
    if (!(teacher_forcing_prob >= 0.0 && teacher_forcing_prob <= 1.0)) {
      throw ContractError("teacher_forcing_prob must lie in [0, 1]");
    }
    if (gconv_hops < 1) throw ContractError("gconv_hops must be >= 1");
  }

  friend bool operator==(const MLS2SConfig&, const MLS2SConfig&) = default;
};

/// Parameters of the multilevel network. Encoder level l (1-based) is a stack
/// of l GC-GRU layers; the decoder has one layer per level. The output
/// projection hidden -> 1 is shared by all nodes and steps.
class MLS2SModel {
 public:
  MLS2SModel() = default;

  MLS2SModel(const MLS2SConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t hid = config_.hidden_dim;
    for (std::size_t level = 1; level <= config_.levels; ++level) {
      std::vector<GCGRUParams> layers;
      for (std::size_t layer = 1; layer <= level; ++layer) {
        const std::string prefix =
            "encoder.level" + std::to_string(level) + ".layer" + std::to_string(layer);
        layers.push_back(add_gcgru_params(params_, prefix, layer == 1 ? config_.input_dim : hid,
                                          hid, rng));
      }
      encoder_.push_back(std::move(layers));
    }
    for (std::size_t layer = 1; layer <= config_.levels; ++layer) {
      decoder_.push_back(add_gcgru_params(params_, "decoder.layer" + std::to_string(layer),
                                          layer == 1 ? 1 : hid, hid, rng));
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(hid));
    output_weight_ = params_.add("output.W", uniform_tensor(hid, 1, bound, rng));
    output_bias_ = params_.add("output.b", Tensor(1, 1));
  }

  const MLS2SConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const std::vector<std::vector<GCGRUParams>>& encoder() const { return encoder_; }
  const std::vector<GCGRUParams>& decoder() const { return decoder_; }
  std::size_t output_weight() const { return output_weight_; }
  std::size_t output_bias() const { return output_bias_; }

  void zero_parameters() {
    for (Parameter& p : params_) p.value.fill(0.0);
  }

 private:
  MLS2SConfig config_;
  ParamStore params_;
  std::vector<std::vector<GCGRUParams>> encoder_;
  std::vector<GCGRUParams> decoder_;
  std::size_t output_weight_ = 0;
  std::size_t output_bias_ = 0;
};

/// All model parameters bound to one tape.
struct BoundMLS2S {
  std::vector<std::vector<GCGRUWeights>> encoder;
  std::vector<GCGRUWeights> decoder;
  Var output_weight;
  Var output_bias;
  int hops = 1;
};

inline BoundMLS2S bind(Tape& tape, MLS2SModel& model) {
  BoundMLS2S b;
  for (const auto& level : model.encoder()) {
    std::vector<GCGRUWeights> layers;
    for (const auto& layer : level) layers.push_back(bind(tape, model.params(), layer));
    b.encoder.push_back(std::move(layers));
  }
  for (const auto& layer : model.decoder()) b.decoder.push_back(bind(tape, model.params(), layer));
  b.output_weight = tape.param(model.params()[model.output_weight()]);
  b.output_bias = tape.param(model.params()[model.output_bias()]);
  b.hops = model.config().gconv_hops;
  return b;
}

/// Runs a stack of GC-GRU layers over `inputs` from zero states and returns
/// the top layer's final hidden state.
inline Var encode_level(const PropagationMatrix& prop, std::span<const Var> inputs,
                        std::span<const GCGRUWeights> layers, int hops = 1) {
  if (inputs.empty()) throw ContractError("encode_level: empty input sequence");
  if (layers.empty()) throw ContractError("encode_level: no layers");
  Tape& tape = *inputs.front().tape();
  const std::size_t rows = inputs.front().value().rows();
  std::vector<Var> state;
  for (const auto& layer : layers) {
    state.push_back(tape.constant(Tensor(rows, layer.reset.weight.value().cols())));
  }
  for (const Var& x : inputs) {
    Var below = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      state[l] = gcgru_step(prop, below, state[l], layers[l], hops);
      below = state[l];
    }
  }
  return state.back();
}

/// Every level reads the same sequence; element l initializes decoder layer l.
inline std::vector<Var> multilevel_encode(const PropagationMatrix& prop,
                                          std::span<const Var> inputs, const BoundMLS2S& model) {
  std::vector<Var> finals;
  for (const auto& level : model.encoder) {
    finals.push_back(encode_level(prop, inputs, level, model.hops));
  }
  return finals;
}

/// Hidden state -> per-node scalar prediction.
inline Var project_output(const BoundMLS2S& model, const Var& hidden) {
  return add_bias(matmul(hidden, model.output_weight), model.output_bias);
}

/// Autoregressive decoding. Decoder layer 1 consumes the previous
/// prediction, or, with probability `tf_prob` per step after the first, the
/// previous ground-truth column of `targets`. Teacher forcing is active only
/// when `rng` is given and targets are supplied.
inline std::vector<Var> decode(const PropagationMatrix& prop, std::span<const Var> init_states,
                               const Var& first_input, const BoundMLS2S& model, std::size_t steps,
                               std::optional<Var> targets = std::nullopt, double tf_prob = 0.0,
                               std::mt19937_64* rng = nullptr) {
  if (init_states.size() != model.decoder.size()) {
    throw ContractError("decode: " + std::to_string(init_states.size()) +
                        " initial states for a decoder of depth " +
                        std::to_string(model.decoder.size()));
  }
  if (steps < 1) throw ContractError("decode: steps must be >= 1");
  if (targets && targets->value().cols() < steps) {
    throw ContractError("decode: targets cover " + std::to_string(targets->value().cols()) +
                        " steps, need " + std::to_string(steps));
  }
  std::vector<Var> state(init_states.begin(), init_states.end());
  std::vector<Var> outputs;
  Var input = first_input;
  for (std::size_t step = 0; step < steps; ++step) {
    if (step > 0) {
      input = outputs.back();
      if (targets && rng != nullptr) {
        const bool use_truth = uniform01(*rng) < tf_prob;
        if (use_truth) input = slice_cols(*targets, step - 1, 1);
      }
    }
    Var below = input;
    for (std::size_t l = 0; l < state.size(); ++l) {
      state[l] = gcgru_step(prop, below, state[l], model.decoder[l], model.hops);
      below = state[l];
    }
    outputs.push_back(project_output(model, below));
  }
  return outputs;
}

/// Input frames of X: step t occupies columns [t*d_in, (t+1)*d_in).
inline std::vector<Var> split_frames(const Var& x, std::size_t history, std::size_t input_dim) {
  if (x.value().cols() != history * input_dim) {
    throw ShapeError("input has " + std::to_string(x.value().cols()) + " columns, expected history " +
                     std::to_string(history) + " x input_dim " + std::to_string(input_dim));
  }
  std::vector<Var> frames;
  for (std::size_t t = 0; t < history; ++t) frames.push_back(slice_cols(x, t * input_dim, input_dim));
  return frames;
}

/// Encodes X ((batch * n) x history*input_dim) and decodes `horizon` steps,
/// starting from the last observed frame. Returns (batch * n) x horizon.
inline Var forward(const PropagationMatrix& prop, const Var& x, const BoundMLS2S& model,
                   const MLS2SConfig& config, std::optional<Var> targets = std::nullopt,
                   double tf_prob = 0.0, std::mt19937_64* rng = nullptr) {
  const auto frames = split_frames(x, config.history, config.input_dim);
  const auto init = multilevel_encode(prop, frames, model);
  const Var first = slice_cols(x, (config.history - 1) * config.input_dim, 1);
  const auto outputs = decode(prop, init, first, model, config.horizon, targets, tf_prob, rng);
  Var y = outputs.front();
  for (std::size_t k = 1; k < outputs.size(); ++k) y = concat_cols(y, outputs[k]);
  return y;
}

/// Evaluation-mode prediction without teacher forcing.
inline Tensor predict(const PropagationMatrix& prop, const Tensor& x, MLS2SModel& model) {
  Tape tape;
  const BoundMLS2S bound = bind(tape, model);
  return forward(prop, tape.constant(x), bound, model.config()).value();
}

}  // namespace mls2s
