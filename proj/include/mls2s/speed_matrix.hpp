#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mls2s/csv.hpp"
#include "mls2s/tensor.hpp"

namespace mls2s {

/// Node x time-slot observation grid. Slot t covers
/// [start_timestamp + t*interval, start_timestamp + (t+1)*interval).
/// mask(i, t) == 0 marks a missing cell; values there are NaN.
struct SpeedMatrix {
  std::vector<std::string> node_ids;
  std::int64_t interval_seconds = 300;
  std::int64_t start_timestamp = 0;
  Tensor values;
  std::vector<std::uint8_t> mask;

  SpeedMatrix() = default;

  SpeedMatrix(std::vector<std::string> ids, std::int64_t interval, std::int64_t start,
              std::size_t slots)
      : node_ids(std::move(ids)),
        interval_seconds(interval),
        start_timestamp(start),
        values(node_ids.size(), slots, std::nan("")),
        mask(node_ids.size() * slots, 0) {}

  /// Fully observed matrix from dense values.
  static SpeedMatrix observed(std::vector<std::string> ids, std::int64_t interval,
                              std::int64_t start, Tensor v) {
    SpeedMatrix m;
    m.node_ids = std::move(ids);
    m.interval_seconds = interval;
    m.start_timestamp = start;
    if (v.rows() != m.node_ids.size()) throw ShapeError("speed values rows do not match node ids");
    m.mask.assign(v.size(), 1);
    m.values = std::move(v);
    return m;
  }

  std::size_t nodes() const { return node_ids.size(); }
  std::size_t slots() const { return values.cols(); }
  bool observed_at(std::size_t node, std::size_t slot) const { return mask[node * slots() + slot] != 0; }
  double at(std::size_t node, std::size_t slot) const { return values(node, slot); }

  void set(std::size_t node, std::size_t slot, double v) {
    values(node, slot) = v;
    mask[node * slots() + slot] = 1;
  }

  void clear(std::size_t node, std::size_t slot) {
    values(node, slot) = std::nan("");
    mask[node * slots() + slot] = 0;
  }

  std::int64_t slot_start(std::size_t slot) const {
    return start_timestamp + static_cast<std::int64_t>(slot) * interval_seconds;
  }

  std::size_t missing_count() const {
    std::size_t c = 0;
    for (auto m : mask) c += m ? 0 : 1;
    return c;
  }

  /// Rows `keep` (in order) as a new matrix.
  SpeedMatrix select_nodes(const std::vector<std::size_t>& keep) const {
    SpeedMatrix out;
    out.interval_seconds = interval_seconds;
    out.start_timestamp = start_timestamp;
    out.values = Tensor(keep.size(), slots());
    out.mask.assign(keep.size() * slots(), 0);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      out.node_ids.push_back(node_ids.at(keep[r]));
      for (std::size_t t = 0; t < slots(); ++t) {
        out.values(r, t) = values(keep[r], t);
        out.mask[r * slots() + t] = mask[keep[r] * slots() + t];
      }
    }
    return out;
  }

  /// Marks exact zeros as missing (loop-detector dropouts).
  void mask_zeros() {
    for (std::size_t i = 0; i < values.size(); ++i)
      if (mask[i] && values[i] == 0.0) {
        mask[i] = 0;
        values[i] = std::nan("");
      }
  }
};

/// Grid text: header `node_id,<slot start timestamps...>`, then one row per
/// node; missing cells are written as NaN. `digits` < 0 writes the shortest
/// exact representation.
inline void save_speed_matrix(const SpeedMatrix& m, const std::filesystem::path& path,
                              int digits = 6) {
  auto out = csv::open_out(path);
  out << "node_id";
  for (std::size_t t = 0; t < m.slots(); ++t) out << ',' << m.slot_start(t);
  out << '\n';
  for (std::size_t i = 0; i < m.nodes(); ++i) {
    out << m.node_ids[i];
    for (std::size_t t = 0; t < m.slots(); ++t) {
      out << ',';
      if (!m.observed_at(i, t)) {
        out << "NaN";
      } else {
        out << (digits < 0 ? csv::format_exact(m.at(i, t)) : csv::format_fixed(m.at(i, t), digits));
      }
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline SpeedMatrix load_speed_matrix(const std::filesystem::path& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw InputError("speed matrix '" + path.string() + "' is empty");
  const auto header = csv::split(lines[0]);
  if (header.size() < 2) throw InputError(path.string() + ": header needs at least one time column");
  std::vector<std::int64_t> stamps;
  for (std::size_t k = 1; k < header.size(); ++k) {
    stamps.push_back(csv::parse_int(header[k], path.string() + " header"));
  }
  std::int64_t interval = 0;
  if (stamps.size() >= 2) {
    interval = stamps[1] - stamps[0];
    for (std::size_t k = 1; k < stamps.size(); ++k)
      if (stamps[k] - stamps[k - 1] != interval || interval <= 0) {
        throw InputError(path.string() + ": timestamps are not evenly spaced");
      }
  } else {
    interval = 300;
  }
  std::vector<std::string> ids;
  for (std::size_t r = 1; r < lines.size(); ++r) ids.emplace_back(csv::split(lines[r])[0]);
  SpeedMatrix m(ids, interval, stamps[0], stamps.size());
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto f = csv::split(lines[r]);
    if (f.size() != header.size()) {
      throw InputError(path.string() + ":" + std::to_string(r + 1) + ": expected " +
                       std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    for (std::size_t t = 0; t < stamps.size(); ++t) {
      const double v = csv::parse_double(f[t + 1], path.string() + ":" + std::to_string(r + 1));
      if (std::isfinite(v)) m.set(r - 1, t, v);
    }
  }
  return m;
}

}  // namespace mls2s
