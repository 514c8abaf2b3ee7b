#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mls2s/trainer.hpp"

namespace mls2s {

// ---------------------------------------------------------------- HA

struct HAModel {
  std::size_t period = 2016;
  std::size_t lookback_cycles = 4;
  std::vector<double> weights;  // weights[k] applies to lag (k+1)*period

  static HAModel uniform(std::size_t period, std::size_t lookback) {
    if (period < 1 || lookback < 1) throw ContractError("HA period and lookback must be >= 1");
    return {period, lookback, std::vector<double>(lookback, 1.0 / static_cast<double>(lookback))};
  }

  void validate() const {
    if (period < 1) throw ContractError("HA period must be >= 1");
    if (weights.size() != lookback_cycles) throw ContractError("HA weights length must equal lookback_cycles");
    const double s = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) throw ContractError("HA weights must sum to 1");
  }
};

/// Weighted same-phase average for one slot using only lags at or before
/// `latest`. NaN when no lag is observed.
inline double ha_value(const HAModel& m, const SpeedMatrix& series, std::size_t node, std::size_t slot,
                       std::size_t latest) {
  // Accumulated as offsets from the first usable lag so equal lags average exactly.
  double ref = 0.0, num = 0.0, den = 0.0;
  bool any = false;
  for (std::size_t k = 1; k <= m.lookback_cycles; ++k) {
    if (k * m.period > slot) break;
    const std::size_t s = slot - k * m.period;
    if (s > latest || !series.observed_at(node, s)) continue;
    if (!any) ref = series.at(node, s);
    any = true;
    num += m.weights[k - 1] * (series.at(node, s) - ref);
    den += m.weights[k - 1];
  }
  return any && den > 0.0 ? ref + num / den : std::nan("");
}

/// n x h forecast for slots t_anchor+1 .. t_anchor+h; unforecastable entries are NaN.
inline Tensor ha_predict(const HAModel& m, const SpeedMatrix& series, std::size_t t_anchor, std::size_t h) {
  m.validate();
  Tensor out(series.nodes(), h);
  for (std::size_t i = 0; i < series.nodes(); ++i)
    for (std::size_t k = 0; k < h; ++k) out(i, k) = ha_value(m, series, i, t_anchor + 1 + k, t_anchor);
  return out;
}

inline std::vector<Tensor> ha_forecast(const HAModel& m, const SpeedMatrix& series,
                                       const std::vector<WindowSample>& windows) {
  std::vector<Tensor> out;
  for (const auto& w : windows) out.push_back(ha_predict(m, series, w.t_anchor, w.y.cols()));
  return out;
}

// ---------------------------------------------------------------- VAR

struct VARModel {
  std::size_t order = 3;
  std::vector<Tensor> coefficients;  // A_1..A_p, each n x n
  std::vector<double> intercept;     // c
  double ridge = 1e-4;
  std::vector<double> residual_variance;  // per node, one-step, on the fit data

  std::size_t nodes() const { return intercept.size(); }
};

/// Least squares for x_t = c + sum_i A_i x_{t-i} with ridge on A only.
/// Rows whose target or lags contain a missing cell are skipped.
inline VARModel var_fit(const SpeedMatrix& series, std::size_t p, double lambda) {
  if (p < 1) throw ContractError("VAR order must be >= 1");
  if (lambda < 0.0) throw ContractError("VAR ridge must be >= 0");
  const std::size_t n = series.nodes(), T = series.slots();
  if (T <= p) {
    throw InputError("VAR(" + std::to_string(p) + ") needs more than " + std::to_string(p) +
                     " slots, got " + std::to_string(T));
  }
  auto row_ok = [&](std::size_t t) {
    for (std::size_t s = t - p; s <= t; ++s)
      for (std::size_t i = 0; i < n; ++i)
        if (!series.observed_at(i, s)) return false;
    return true;
  };
  std::vector<std::size_t> rows;
  for (std::size_t t = p; t < T; ++t)
    if (row_ok(t)) rows.push_back(t);
  if (rows.empty()) throw InputError("VAR fit: no fully observed training rows");

  // Centering the regressors and targets solves the unpenalized-intercept
  // problem exactly and keeps the normal matrix well conditioned.
  const auto k = static_cast<Eigen::Index>(n * p);
  const auto N = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd Z(N, k);
  Eigen::MatrixXd Y(N, static_cast<Eigen::Index>(n));
  for (Eigen::Index r = 0; r < N; ++r) {
    const std::size_t t = rows[static_cast<std::size_t>(r)];
    for (std::size_t lag = 1; lag <= p; ++lag)
      for (std::size_t j = 0; j < n; ++j)
        Z(r, static_cast<Eigen::Index>((lag - 1) * n + j)) = series.at(j, t - lag);
    for (std::size_t i = 0; i < n; ++i) Y(r, static_cast<Eigen::Index>(i)) = series.at(i, t);
  }
  const Eigen::RowVectorXd z_mean = Z.colwise().mean();
  const Eigen::RowVectorXd y_mean = Y.colwise().mean();
  const Eigen::MatrixXd Zc = Z.rowwise() - z_mean;
  const Eigen::MatrixXd Yc = Y.rowwise() - y_mean;
  Eigen::MatrixXd G = Zc.transpose() * Zc;
  G.diagonal().array() += lambda;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13)) {
    throw NumericalError("VAR normal equations are singular (rcond " + csv::format_exact(ldlt.rcond()) +
                         "); use a ridge lambda > 0");
  }
  const Eigen::MatrixXd B = ldlt.solve(Zc.transpose() * Yc);  // k x n
  const Eigen::RowVectorXd c = y_mean - z_mean * B;

  VARModel m;
  m.order = p;
  m.ridge = lambda;
  m.intercept.resize(n);
  m.coefficients.assign(p, Tensor(n, n));
  for (std::size_t i = 0; i < n; ++i) {
    m.intercept[i] = c(static_cast<Eigen::Index>(i));
    for (std::size_t lag = 1; lag <= p; ++lag)
      for (std::size_t j = 0; j < n; ++j)
        m.coefficients[lag - 1](i, j) = B(static_cast<Eigen::Index>((lag - 1) * n + j), static_cast<Eigen::Index>(i));
  }
  const Eigen::MatrixXd resid = Yc - Zc * B;
  m.residual_variance.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    m.residual_variance[i] = resid.col(static_cast<Eigen::Index>(i)).squaredNorm() / static_cast<double>(rows.size());
  return m;
}

/// Iterated forecasts from `recent` (n x p, oldest column first).
inline Tensor var_predict(const VARModel& m, const Tensor& recent, std::size_t h) {
  const std::size_t n = m.nodes(), p = m.order;
  if (recent.rows() != n || recent.cols() != p) {
    throw ShapeError("var_predict: recent frames " + recent.shape_string() + ", expected [" +
                     std::to_string(n) + "x" + std::to_string(p) + "]");
  }
  std::vector<std::vector<double>> hist;  // chronological frames
  for (std::size_t c = 0; c < p; ++c) {
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = recent(i, c);
    hist.push_back(std::move(f));
  }
  Tensor out(n, h);
  for (std::size_t k = 0; k < h; ++k) {
    std::vector<double> next(m.intercept);
    for (std::size_t lag = 1; lag <= p; ++lag) {
      const auto& frame = hist[hist.size() - lag];
      const Tensor& A = m.coefficients[lag - 1];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) next[i] += A(i, j) * frame[j];
    }
    for (std::size_t i = 0; i < n; ++i) out(i, k) = next[i];
    hist.push_back(std::move(next));
  }
  return out;
}

/// VAR fit in z-score units on the training slot range.
struct VARBaseline {
  VARModel model;
  ZScore norm;
};

inline VARBaseline fit_var_baseline(const SpeedMatrix& series, const std::vector<WindowSample>& train,
                                    const ZScore& norm, std::size_t p, double lambda) {
  if (train.empty()) throw ContractError("fit_var_baseline: no training windows");
  const std::size_t d = train.front().x.cols(), h = train.front().y.cols();
  std::size_t first = train.front().t_anchor + 1 - d, last = train.front().t_anchor + h;
  for (const auto& w : train) {
    first = std::min(first, w.t_anchor + 1 - d);
    last = std::max(last, w.t_anchor + h);
  }
  SpeedMatrix z(series.node_ids, series.interval_seconds, series.slot_start(first), last - first + 1);
  for (std::size_t i = 0; i < series.nodes(); ++i)
    for (std::size_t s = first; s <= last; ++s)
      if (series.observed_at(i, s)) z.set(i, s - first, norm.apply(series.at(i, s)));
  return {var_fit(z, p, lambda), norm};
}

inline std::vector<Tensor> var_forecast(const VARBaseline& b, const std::vector<WindowSample>& windows) {
  const std::size_t p = b.model.order;
  std::vector<Tensor> out;
  for (const auto& w : windows) {
    if (w.x.cols() < p) {
      throw ContractError("VAR order " + std::to_string(p) + " exceeds window history " +
                          std::to_string(w.x.cols()));
    }
    Tensor recent(w.x.rows(), p);
    for (std::size_t i = 0; i < w.x.rows(); ++i)
      for (std::size_t c = 0; c < p; ++c) {
        const double v = w.x(i, w.x.cols() - p + c);
        recent(i, c) = std::isfinite(v) ? b.norm.apply(v) : 0.0;
      }
    out.push_back(b.norm.invert(var_predict(b.model, recent, w.y.cols())));
  }
  return out;
}

// ---------------------------------------------------------------- persistence

/// Every step repeats the latest observed value in the window (NaN if none).
inline std::vector<Tensor> persistence_forecast(const std::vector<WindowSample>& windows) {
  std::vector<Tensor> out;
  for (const auto& w : windows) {
    Tensor t(w.y.rows(), w.y.cols(), std::nan(""));
    for (std::size_t i = 0; i < w.x.rows(); ++i)
      for (std::size_t c = w.x.cols(); c-- > 0;)
        if (std::isfinite(w.x(i, c))) {
          for (std::size_t k = 0; k < w.y.cols(); ++k) t(i, k) = w.x(i, c);
          break;
        }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace mls2s
