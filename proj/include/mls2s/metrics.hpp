#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mls2s/csv.hpp"
#include "mls2s/error.hpp"

namespace mls2s {

namespace detail {

inline void check_metric_inputs(const char* name, std::span<const double> pred,
                                std::span<const double> truth, std::span<const std::uint8_t> mask) {
  if (pred.size() != truth.size() || mask.size() != truth.size()) {
    throw ShapeError(std::string(name) + ": prediction, truth and mask lengths differ (" +
                     std::to_string(pred.size()) + ", " + std::to_string(truth.size()) + ", " +
                     std::to_string(mask.size()) + ")");
  }
}

inline bool usable(std::span<const double> truth, std::span<const std::uint8_t> mask,
                   std::size_t i) {
  return mask[i] != 0 && std::isfinite(truth[i]);
}

}  // namespace detail

/// Mean absolute error over entries with mask != 0 and finite truth.
inline double mae(std::span<const double> pred, std::span<const double> truth,
                  std::span<const std::uint8_t> mask) {
  detail::check_metric_inputs("mae", pred, truth, mask);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!detail::usable(truth, mask, i)) continue;
    total += std::abs(pred[i] - truth[i]);
    ++count;
  }
  if (count == 0) throw ContractError("mae: mask selects no entries");
  return total / static_cast<double>(count);
}

inline double rmse(std::span<const double> pred, std::span<const double> truth,
                   std::span<const std::uint8_t> mask) {
  detail::check_metric_inputs("rmse", pred, truth, mask);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!detail::usable(truth, mask, i)) continue;
    const double d = pred[i] - truth[i];
    total += d * d;
    ++count;
  }
  if (count == 0) throw ContractError("rmse: mask selects no entries");
  return std::sqrt(total / static_cast<double>(count));
}

/// Mean absolute percentage error in percent, over entries with |truth| >= floor.
inline double mape(std::span<const double> pred, std::span<const double> truth,
                   std::span<const std::uint8_t> mask, double floor = 1.0) {
  detail::check_metric_inputs("mape", pred, truth, mask);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!detail::usable(truth, mask, i) || std::abs(truth[i]) < floor) continue;
    total += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
    ++count;
  }
  if (count == 0) throw ContractError("mape: no entries at or above the floor");
  return 100.0 * total / static_cast<double>(count);
}

struct MetricRow {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;
  std::size_t count = 0;
};

/// Per-horizon-step metrics plus the aggregate over steps 1..h.
struct EvalReport {
  std::string method;
  double mape_floor = 1.0;
  std::vector<MetricRow> per_step;  // per_step[k] is step k+1
  MetricRow aggregate;
};

/// Collects predictions entry by entry, grouped by horizon step.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(std::size_t horizon) : pred_(horizon), truth_(horizon), mask_(horizon) {}

  void add(std::size_t step, double pred, double truth, bool observed) {
    pred_.at(step).push_back(pred);
    truth_.at(step).push_back(truth);
    mask_.at(step).push_back(observed && std::isfinite(pred) ? 1 : 0);
  }

  std::size_t horizon() const { return pred_.size(); }

  EvalReport report(std::string method, double mape_floor = 1.0) const {
    EvalReport r;
    r.method = std::move(method);
    r.mape_floor = mape_floor;
    std::vector<double> all_p, all_t;
    std::vector<std::uint8_t> all_m;
    for (std::size_t k = 0; k < pred_.size(); ++k) {
      r.per_step.push_back(row(pred_[k], truth_[k], mask_[k], mape_floor));
      all_p.insert(all_p.end(), pred_[k].begin(), pred_[k].end());
      all_t.insert(all_t.end(), truth_[k].begin(), truth_[k].end());
      all_m.insert(all_m.end(), mask_[k].begin(), mask_[k].end());
    }
    r.aggregate = row(all_p, all_t, all_m, mape_floor);
    return r;
  }

  static MetricRow row(const std::vector<double>& p, const std::vector<double>& t,
                       const std::vector<std::uint8_t>& m, double floor) {
    MetricRow out;
    for (std::size_t i = 0; i < m.size(); ++i) out.count += (m[i] && std::isfinite(t[i])) ? 1 : 0;
    if (out.count == 0) {
      out.mae = out.rmse = out.mape = std::nan("");
      return out;
    }
    out.mae = mae(p, t, m);
    out.rmse = rmse(p, t, m);
    try {
      out.mape = mape(p, t, m, floor);
    } catch (const ContractError&) {
      out.mape = std::nan("");
    }
    return out;
  }

 private:
  std::vector<std::vector<double>> pred_;
  std::vector<std::vector<double>> truth_;
  std::vector<std::vector<std::uint8_t>> mask_;
};

inline void write_report_header(std::ostream& out) { out << "method,horizon_steps,mae,rmse,mape,count\n"; }

/// One row per requested horizon step (1-based), metrics at that step.
inline void write_report_rows(std::ostream& out, const EvalReport& r,
                              const std::vector<std::size_t>& horizons) {
  for (std::size_t h : horizons) {
    if (h < 1 || h > r.per_step.size()) {
      throw ContractError("horizon " + std::to_string(h) + " outside evaluated range 1.." +
                          std::to_string(r.per_step.size()));
    }
    const MetricRow& m = r.per_step[h - 1];
    out << r.method << ',' << h << ',' << csv::format_fixed(m.mae, 4) << ','
        << csv::format_fixed(m.rmse, 4) << ',' << csv::format_fixed(m.mape, 4) << ',' << m.count
        << '\n';
  }
}

}  // namespace mls2s
