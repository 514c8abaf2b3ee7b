#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mls2s/graph.hpp"
#include "mls2s/metrics.hpp"
#include "mls2s/optim.hpp"
#include "mls2s/seq2seq.hpp"
#include "mls2s/speed_matrix.hpp"

namespace mls2s {

/// One forecasting example. x holds slots [t_anchor-d+1, t_anchor], y holds
/// [t_anchor+1, t_anchor+h]. Missing cells are NaN in x and y; mask marks
/// observed targets.
struct WindowSample {
  Tensor x;
  Tensor y;
  std::size_t t_anchor = 0;
  std::vector<std::uint8_t> mask;
};

inline std::vector<WindowSample> make_windows(const SpeedMatrix& series, std::size_t d, std::size_t h) {
  if (d < 1 || h < 1) throw ContractError("make_windows: history and horizon must be >= 1");
  const std::size_t n = series.nodes(), T = series.slots();
  if (T < d + h) {
    throw InputError("series has " + std::to_string(T) + " slots, need at least history + horizon = " +
                     std::to_string(d + h));
  }
  std::vector<WindowSample> out;
  out.reserve(T - d - h + 1);
  for (std::size_t anchor = d - 1; anchor + h < T; ++anchor) {
    WindowSample w;
    w.t_anchor = anchor;
    w.x = Tensor(n, d);
    w.y = Tensor(n, h);
    w.mask.assign(n * h, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t s = anchor + 1 - d + k;
        w.x(i, k) = series.observed_at(i, s) ? series.at(i, s) : std::nan("");
      }
      for (std::size_t k = 0; k < h; ++k) {
        const std::size_t s = anchor + 1 + k;
        const bool obs = series.observed_at(i, s);
        w.y(i, k) = obs ? series.at(i, s) : std::nan("");
        w.mask[i * h + k] = obs ? 1 : 0;
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

struct DatasetSplit {
  std::vector<WindowSample> train;
  std::vector<WindowSample> val;
  std::vector<WindowSample> test;
};

/// Chronological split; train and val sizes are floored, test takes the rest.
inline DatasetSplit split_dataset(std::vector<WindowSample> windows,
                                  std::array<double, 3> fractions = {0.7, 0.1, 0.2}) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw ContractError("split fractions must be non-negative and sum to 1");
  }
  std::stable_sort(windows.begin(), windows.end(),
                   [](const WindowSample& a, const WindowSample& b) { return a.t_anchor < b.t_anchor; });
  const double n = static_cast<double>(windows.size());
  const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * n + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * n + 1e-9));
  const std::size_t n_test = windows.size() - n_train - n_val;
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw InputError(std::to_string(windows.size()) + " windows give an empty split (" +
                     std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                     std::to_string(n_test) + ")");
  }
  DatasetSplit s;
  auto it = std::make_move_iterator(windows.begin());
  s.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(it + static_cast<std::ptrdiff_t>(n_train),
               it + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val), std::make_move_iterator(windows.end()));
  return s;
}

struct ZScore {
  double mean = 0.0;
  double std = 1.0;

  double apply(double v) const { return (v - mean) / std; }
  double invert(double z) const { return z * std + mean; }

  Tensor apply(const Tensor& t) const {
    Tensor out = t;
    for (double& v : out.data()) v = apply(v);
    return out;
  }
  Tensor invert(const Tensor& t) const {
    Tensor out = t;
    for (double& v : out.data()) v = invert(v);
    return out;
  }
};

/// Mean and population standard deviation over the observed cells of the
/// slot range spanned by `train` windows.
inline ZScore fit_zscore(const SpeedMatrix& series, const std::vector<WindowSample>& train) {
  if (train.empty()) throw ContractError("fit_zscore: no training windows");
  const std::size_t d = train.front().x.cols(), h = train.front().y.cols();
  std::size_t first = std::numeric_limits<std::size_t>::max(), last = 0;
  for (const auto& w : train) {
    first = std::min(first, w.t_anchor + 1 - d);
    last = std::max(last, w.t_anchor + h);
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < series.nodes(); ++i)
    for (std::size_t s = first; s <= last; ++s)
      if (series.observed_at(i, s)) {
        sum += series.at(i, s);
        ++count;
      }
  if (count == 0) throw InputError("training range contains no observed values");
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (std::size_t i = 0; i < series.nodes(); ++i)
    for (std::size_t s = first; s <= last; ++s)
      if (series.observed_at(i, s)) sq += (series.at(i, s) - mean) * (series.at(i, s) - mean);
  const double sd = std::sqrt(sq / static_cast<double>(count));
  if (!(sd > 0.0)) {
    throw InputError("training data has zero variance (constant value " + csv::format_exact(mean) + ")");
  }
  return {mean, sd};
}

/// Mean |y_hat - y| over observed entries.
inline Var mae_loss(const Var& y_hat, const Tensor& y, const std::vector<std::uint8_t>& mask) {
  return masked_mean_abs(y_hat, y, mask);
}

struct TrainConfig {
  double base_lr = 0.01;
  double decay_ratio = 0.1;
  std::vector<std::size_t> decay_epochs{20, 40};
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t history = 12;
  std::size_t horizon = 12;
  double tf_prob = 0.5;

  void validate() const {
    if (!(base_lr > 0.0)) throw ContractError("base_lr must be positive");
    if (!(decay_ratio > 0.0 && decay_ratio <= 1.0)) throw ContractError("decay_ratio must lie in (0, 1]");
    for (std::size_t k = 1; k < decay_epochs.size(); ++k)
      if (decay_epochs[k] <= decay_epochs[k - 1]) throw ContractError("decay_epochs must be strictly increasing");
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (!(tf_prob >= 0.0 && tf_prob <= 1.0)) throw ContractError("tf_prob must lie in [0, 1]");
  }

  /// Learning rate used during 1-based `epoch`.
  double lr_at(std::size_t epoch) const {
    double lr = base_lr;
    for (std::size_t m : decay_epochs)
      if (epoch > m) lr *= decay_ratio;
    return lr;
  }
};

/// Windows stacked node-block by node-block, normalized, with missing inputs
/// and targets set to 0 (the training mean).
struct Batch {
  Tensor x;
  Tensor y;
  std::vector<std::uint8_t> mask;
};

inline Batch make_batch(const std::vector<WindowSample>& windows, std::span<const std::size_t> index,
                        const ZScore& norm) {
  const std::size_t n = windows.at(index[0]).x.rows();
  const std::size_t d = windows[index[0]].x.cols(), h = windows[index[0]].y.cols();
  Batch b{Tensor(index.size() * n, d), Tensor(index.size() * n, h), {}};
  b.mask.reserve(index.size() * n * h);
  for (std::size_t k = 0; k < index.size(); ++k) {
    const WindowSample& w = windows.at(index[k]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        const double v = w.x(i, c);
        b.x(k * n + i, c) = std::isfinite(v) ? norm.apply(v) : 0.0;
      }
      for (std::size_t c = 0; c < h; ++c) {
        const bool obs = w.mask[i * h + c] != 0;
        b.y(k * n + i, c) = obs ? norm.apply(w.y(i, c)) : 0.0;
        b.mask.push_back(obs ? 1 : 0);
      }
    }
  }
  return b;
}

/// Denormalized n x h forecasts for every window, evaluated in batches.
inline std::vector<Tensor> predict_windows(MLS2SModel& model, const PropagationMatrix& prop,
                                           const ZScore& norm, const std::vector<WindowSample>& windows,
                                           std::size_t batch_size = 64) {
  std::vector<Tensor> out;
  out.reserve(windows.size());
  std::vector<std::size_t> index;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    index.clear();
    for (std::size_t k = start; k < std::min(windows.size(), start + batch_size); ++k) index.push_back(k);
    const Batch b = make_batch(windows, index, norm);
    const Tensor y = predict(prop, b.x, model);
    const std::size_t n = windows[start].x.rows(), h = y.cols();
    for (std::size_t k = 0; k < index.size(); ++k) {
      Tensor t(n, h);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < h; ++c) t(i, c) = norm.invert(y(k * n + i, c));
      out.push_back(std::move(t));
    }
  }
  return out;
}

/// Scores forecasts against window targets; NaN forecasts count as missing.
inline EvalReport evaluate_predictions(const std::vector<Tensor>& preds,
                                       const std::vector<WindowSample>& windows, std::string method,
                                       double mape_floor = 1.0) {
  if (preds.size() != windows.size()) {
    throw ContractError("evaluate_predictions: " + std::to_string(preds.size()) + " forecasts for " +
                        std::to_string(windows.size()) + " windows");
  }
  if (windows.empty()) throw ContractError("evaluate_predictions: no windows");
  const std::size_t h = windows.front().y.cols();
  EvalAccumulator acc(h);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const WindowSample& win = windows[w];
    if (!preds[w].same_shape(win.y)) {
      throw ShapeError("forecast " + preds[w].shape_string() + " does not match target " +
                       win.y.shape_string());
    }
    for (std::size_t i = 0; i < win.y.rows(); ++i)
      for (std::size_t k = 0; k < h; ++k)
        acc.add(k, preds[w](i, k), win.y(i, k), win.mask[i * h + k] != 0);
  }
  return acc.report(std::move(method), mape_floor);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_mae = std::numeric_limits<double>::infinity();
};

/// Everything the training loop reads.
struct TrainingData {
  PropagationMatrix prop;
  ZScore norm;
  DatasetSplit split;
};

inline TrainingData prepare_training_data(const SpeedMatrix& series, const RoadGraph& graph,
                                          std::size_t history, std::size_t horizon,
                                          std::array<double, 3> fractions = {0.7, 0.1, 0.2}) {
  if (graph.node_ids() != series.node_ids) {
    throw InputError("adjacency node order does not match the speed matrix rows");
  }
  TrainingData data;
  data.prop = normalize_propagation(graph);
  data.split = split_dataset(make_windows(series, history, horizon), fractions);
  data.norm = fit_zscore(series, data.split.train);
  return data;
}

/// Mini-batch Adam on the masked MAE in normalized units. Reported MAEs are
/// in speed units. The model ends holding the best-validation parameters.
inline TrainResult train(MLS2SModel& model, const TrainingData& data, const TrainConfig& config,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (data.split.train.empty() || data.split.val.empty()) {
    throw ContractError("train: empty training or validation split");
  }
  const MLS2SConfig& mc = model.config();
  if (data.split.train.front().x.cols() != mc.history || data.split.train.front().y.cols() != mc.horizon) {
    throw ContractError("train: window shape does not match model history/horizon");
  }
  TrainResult result;
  if (config.epochs == 0) return result;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam;
  std::vector<Tensor> best;
  for (const Parameter& p : model.params()) best.push_back(p.value);
  std::vector<std::size_t> order(data.split.train.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = config.lr_at(epoch);
    for (std::size_t k = order.size(); k > 1; --k) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k));
      std::swap(order[k - 1], order[std::min(j, k - 1)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const Batch b = make_batch(data.split.train, std::span(order).subspan(start, count), data.norm);
      if (std::none_of(b.mask.begin(), b.mask.end(), [](auto m) { return m != 0; })) continue;
      model.params().zero_grad();
      Tape tape;
      const BoundMLS2S bound = bind(tape, model);
      const Var y_hat = forward(data.prop, tape.constant(b.x), bound, mc, tape.constant(b.y),
                                config.tf_prob, &rng);
      const Var loss = mae_loss(y_hat, b.y, b.mask);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericalError("training diverged: loss is " + csv::format_exact(lv) + " at epoch " +
                             std::to_string(epoch));
      }
      tape.backward(loss);
      adam_step(model.params(), adam, lr);
      loss_sum += lv;
      ++batches;
    }
    if (batches == 0) throw InputError("no training batch contains an observed target");
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_mae = loss_sum / static_cast<double>(batches) * data.norm.std;
    const auto preds = predict_windows(model, data.prop, data.norm, data.split.val);
    rec.val_mae = evaluate_predictions(preds, data.split.val, "mls2s").aggregate.mae;
    if (!std::isfinite(rec.val_mae)) {
      throw NumericalError("training diverged: validation MAE is not finite at epoch " +
                           std::to_string(epoch));
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      for (std::size_t k = 0; k < best.size(); ++k) best[k] = model.params()[k].value;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  for (std::size_t k = 0; k < best.size(); ++k) {
    model.params()[k].value = best[k];
    model.params()[k].grad = Tensor();
  }
  return result;
}

}  // namespace mls2s
