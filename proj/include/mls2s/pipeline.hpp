#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mls2s/baselines.hpp"
#include "mls2s/csv.hpp"
#include "mls2s/graph.hpp"
#include "mls2s/speed_matrix.hpp"

namespace mls2s {

struct TripRecord {
  std::string link_id;
  std::int64_t start_time = 0;
  std::int64_t end_time = 0;
  double speed = 0.0;

  friend bool operator==(const TripRecord&, const TripRecord&) = default;
};

enum class Aggregation { max, mean, min };

inline Aggregation parse_aggregation(const std::string& name) {
  if (name == "max") return Aggregation::max;
  if (name == "mean") return Aggregation::mean;
  if (name == "min") return Aggregation::min;
  throw InputError("unknown aggregation '" + name + "' (expected max, mean or min)");
}

inline std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::max: return "max";
    case Aggregation::mean: return "mean";
    case Aggregation::min: return "min";
  }
  return "?";
}

struct PipelineConfig {
  std::int64_t interval_seconds = 300;
  std::string aggregation = "max";
  std::size_t tau = 1000;
  std::size_t top_k_by_trip_count = 0;  // 0 keeps every link
  std::size_t reaggregate_factor = 3;
  std::size_t ha_period = 0;  // in re-aggregated slots; 0 means one week
  std::size_t ha_lookback = 4;
  double sigma_slots = 1.0;
};

namespace detail {

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

/// Runs `f`, prefixing any pipeline error with the stage name.
template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InputError& e) {
    throw InputError(stage + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(stage + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(stage + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(stage + ": " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(stage + ": " + e.what());
  }
}

inline bool looks_like_header(const std::vector<std::string_view>& fields, std::size_t numeric_col) {
  std::int64_t v = 0;
  return fields.size() > numeric_col && !csv::try_parse_int(fields[numeric_col], v);
}

}  // namespace detail

// ------------------------------------------------------------------ I/O

/// `link_id,start_time,end_time,speed`, optional header.
inline std::vector<TripRecord> load_trips(const std::filesystem::path& path) {
  const auto lines = csv::read_lines(path);
  std::vector<TripRecord> trips;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto f = csv::split(lines[r]);
    if (r == 0 && detail::looks_like_header(f, 1)) continue;
    const std::string where = path.string() + ":" + std::to_string(r + 1);
    if (f.size() != 4) throw InputError(where + ": expected 4 fields, got " + std::to_string(f.size()));
    TripRecord t{std::string(f[0]), csv::parse_int(f[1], where), csv::parse_int(f[2], where),
                 csv::parse_double(f[3], where)};
    if (t.link_id.empty()) throw InputError(where + ": empty link_id");
    if (t.end_time <= t.start_time) throw InputError(where + ": end_time must exceed start_time");
    if (!std::isfinite(t.speed)) throw InputError(where + ": speed is not finite");
    trips.push_back(std::move(t));
  }
  return trips;
}

inline void save_trips(const std::vector<TripRecord>& trips, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "link_id,start_time,end_time,speed\n";
  for (const auto& t : trips)
    out << t.link_id << ',' << t.start_time << ',' << t.end_time << ',' << csv::format_exact(t.speed) << '\n';
}

/// `link_id,origin_id,destination_id`, optional header.
inline std::vector<RoadSegment> load_segments(const std::filesystem::path& path) {
  const auto lines = csv::read_lines(path);
  std::vector<RoadSegment> segs;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto f = csv::split(lines[r]);
    if (r == 0 && f.size() == 3 && f[0] == "link_id") continue;
    if (f.size() != 3) {
      throw InputError(path.string() + ":" + std::to_string(r + 1) + ": expected 3 fields, got " +
                       std::to_string(f.size()));
    }
    segs.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2])});
  }
  return segs;
}

// ------------------------------------------------------------------ stages

/// Cuts trips longer than `interval` into interval-long pieces plus a final
/// remainder piece; every piece keeps the trip's speed.
inline std::vector<TripRecord> split_long_trips(const std::vector<TripRecord>& trips, std::int64_t interval) {
  if (interval <= 0) throw InputError("interval must be positive, got " + std::to_string(interval));
  std::vector<TripRecord> out;
  out.reserve(trips.size());
  for (const auto& t : trips) {
    std::int64_t start = t.start_time;
    while (t.end_time - start > interval) {
      out.push_back({t.link_id, start, start + interval, t.speed});
      start += interval;
    }
    out.push_back({t.link_id, start, t.end_time, t.speed});
  }
  return out;
}

/// Aggregates trip speeds into slots of `interval` seconds. A trip feeds
/// every slot its half-open range overlaps. Rows follow `links`; trips on
/// other links are ignored. The grid spans the trips unless `start` is given.
inline SpeedMatrix build_speed_matrix(const std::vector<TripRecord>& trips, const std::vector<std::string>& links,
                                      std::int64_t interval, Aggregation agg,
                                      std::optional<std::int64_t> start = std::nullopt) {
  if (interval <= 0) throw InputError("interval must be positive");
  if (links.empty()) throw InputError("no links");
  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < links.size(); ++i) row.emplace(links[i], i);
  std::int64_t lo = 0, hi = 0;
  bool any = false;
  for (const auto& t : trips) {
    if (!row.contains(t.link_id)) continue;
    lo = any ? std::min(lo, t.start_time) : t.start_time;
    hi = any ? std::max(hi, t.end_time) : t.end_time;
    any = true;
  }
  if (!any) throw InputError("no trip records on known links");
  const std::int64_t origin = start ? *start : detail::floor_div(lo, interval) * interval;
  if (origin > lo) throw InputError("grid start is after the first trip");
  const auto slots = static_cast<std::size_t>(detail::ceil_div(hi - origin, interval));

  SpeedMatrix m(links, interval, origin, slots);
  std::vector<double> sum(links.size() * slots, 0.0);
  std::vector<std::size_t> count(links.size() * slots, 0);
  for (const auto& t : trips) {
    const auto it = row.find(t.link_id);
    if (it == row.end()) continue;
    const std::int64_t first = detail::floor_div(t.start_time - origin, interval);
    const std::int64_t last = detail::ceil_div(t.end_time - origin, interval) - 1;
    for (std::int64_t s = first; s <= last; ++s) {
      const std::size_t cell = it->second * slots + static_cast<std::size_t>(s);
      const auto slot = static_cast<std::size_t>(s);
      if (!m.observed_at(it->second, slot)) {
        m.set(it->second, slot, t.speed);
      } else if (agg == Aggregation::max) {
        m.values(it->second, slot) = std::max(m.at(it->second, slot), t.speed);
      } else if (agg == Aggregation::min) {
        m.values(it->second, slot) = std::min(m.at(it->second, slot), t.speed);
      }
      sum[cell] += t.speed;
      ++count[cell];
    }
  }
  if (agg == Aggregation::mean) {
    for (std::size_t i = 0; i < links.size(); ++i)
      for (std::size_t s = 0; s < slots; ++s)
        if (count[i * slots + s]) m.values(i, s) = sum[i * slots + s] / static_cast<double>(count[i * slots + s]);
  }
  return m;
}

/// Longest run of consecutive missing slots in row `i`.
inline std::size_t longest_missing_run(const SpeedMatrix& m, std::size_t i) {
  std::size_t best = 0, run = 0;
  for (std::size_t s = 0; s < m.slots(); ++s) {
    run = m.observed_at(i, s) ? 0 : run + 1;
    best = std::max(best, run);
  }
  return best;
}

struct FilterResult {
  SpeedMatrix matrix;
  std::vector<std::string> kept_ids;
  std::vector<std::size_t> kept_rows;
};

/// Drops links with a run of more than `tau` consecutive missing slots.
inline FilterResult filter_links(const SpeedMatrix& m, std::size_t tau) {
  if (tau < 1) throw InputError("tau must be >= 1");
  FilterResult r;
  for (std::size_t i = 0; i < m.nodes(); ++i)
    if (longest_missing_run(m, i) <= tau) r.kept_rows.push_back(i);
  if (r.kept_rows.empty()) {
    throw InputError("every link has more than " + std::to_string(tau) + " consecutive missing slots");
  }
  r.matrix = m.select_nodes(r.kept_rows);
  r.kept_ids = r.matrix.node_ids;
  return r;
}

/// The `k` rows with the most trip records (ties by row order), kept in row order.
inline std::vector<std::size_t> top_k_by_trip_count(const SpeedMatrix& m, const std::vector<TripRecord>& trips,
                                                    std::size_t k) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : trips) ++counts[t.link_id];
  std::vector<std::size_t> rows(m.nodes());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  if (k == 0 || k >= rows.size()) return rows;
  std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    return counts[m.node_ids[a]] > counts[m.node_ids[b]];
  });
  rows.resize(k);
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Merges groups of `factor` slots; a trailing partial group is dropped.
inline SpeedMatrix reaggregate(const SpeedMatrix& m, std::size_t factor, Aggregation agg = Aggregation::max) {
  if (factor < 1) throw InputError("re-aggregation factor must be >= 1");
  const std::size_t slots = m.slots() / factor;
  if (slots == 0) throw InputError("series shorter than one re-aggregation group");
  SpeedMatrix out(m.node_ids, m.interval_seconds * static_cast<std::int64_t>(factor), m.start_timestamp, slots);
  for (std::size_t i = 0; i < m.nodes(); ++i)
    for (std::size_t g = 0; g < slots; ++g) {
      double acc = 0.0;
      std::size_t count = 0;
      for (std::size_t s = g * factor; s < (g + 1) * factor; ++s) {
        if (!m.observed_at(i, s)) continue;
        const double v = m.at(i, s);
        if (count == 0) acc = v;
        else if (agg == Aggregation::max) acc = std::max(acc, v);
        else if (agg == Aggregation::min) acc = std::min(acc, v);
        else acc += v;
        ++count;
      }
      if (count == 0) continue;
      out.set(i, g, agg == Aggregation::mean ? acc / static_cast<double>(count) : acc);
    }
  return out;
}

struct ImputeStats {
  std::size_t historical = 0;
  std::size_t filled = 0;
};

/// Fills missing cells with the uniform same-phase average over up to
/// `lookback` earlier cycles (observed cells only). Cells with no such value
/// take the nearest earlier value in the row, or the first later one for a
/// leading gap.
inline SpeedMatrix impute_ha(const SpeedMatrix& m, std::size_t period, std::size_t lookback,
                             ImputeStats* stats = nullptr) {
  if (period < 1 || period > m.slots()) {
    throw InputError("HA period " + std::to_string(period) + " must lie in 1.." + std::to_string(m.slots()));
  }
  const HAModel ha = HAModel::uniform(period, lookback);
  SpeedMatrix out = m;
  ImputeStats local;
  for (std::size_t i = 0; i < m.nodes(); ++i) {
    std::size_t first_obs = m.slots();
    for (std::size_t s = 0; s < m.slots(); ++s)
      if (m.observed_at(i, s)) {
        first_obs = s;
        break;
      }
    if (first_obs == m.slots()) throw InputError("link '" + m.node_ids[i] + "' has no observed value");
    std::vector<std::uint8_t> done(m.slots(), 0);
    for (std::size_t s = 0; s < m.slots(); ++s) {
      if (m.observed_at(i, s)) {
        done[s] = 1;
        continue;
      }
      const double v = ha_value(ha, m, i, s, s);
      if (std::isfinite(v)) {
        out.set(i, s, v);
        done[s] = 1;
        ++local.historical;
      }
    }
    for (std::size_t s = 0; s < m.slots(); ++s) {
      if (done[s]) continue;
      out.set(i, s, s < first_obs ? m.at(i, first_obs) : out.at(i, s - 1));
      ++local.filled;
    }
  }
  if (stats) *stats = local;
  return out;
}

/// Normalized Gaussian taps for offsets -r..r, r = ceil(4 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw InputError("sigma must be positive");
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> k;
  double total = 0.0;
  for (std::ptrdiff_t j = -r; j <= r; ++j) {
    const double w = std::exp(-0.5 * static_cast<double>(j * j) / (sigma * sigma));
    k.push_back(w);
    total += w;
  }
  for (double& w : k) w /= total;
  return k;
}

/// Index into [0, n) under half-sample symmetric reflection (d c b a | a b c d | d c b a).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t k = i % period;
  if (k < 0) k += period;
  if (k >= static_cast<std::ptrdiff_t>(n)) k = period - 1 - k;
  return static_cast<std::size_t>(k);
}

inline SpeedMatrix gaussian_smooth(const SpeedMatrix& m, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  if (m.missing_count() != 0) throw InputError("smoothing needs a fully imputed matrix");
  const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  SpeedMatrix out = m;
  for (std::size_t i = 0; i < m.nodes(); ++i)
    for (std::size_t s = 0; s < m.slots(); ++s) {
      double acc = 0.0;
      for (std::ptrdiff_t j = -r; j <= r; ++j)
        acc += kernel[static_cast<std::size_t>(j + r)] *
               m.at(i, reflect_index(static_cast<std::ptrdiff_t>(s) + j, m.slots()));
      out.values(i, s) = acc;
    }
  return out;
}

// ------------------------------------------------------------------ composition

struct PipelineResult {
  SpeedMatrix matrix;
  RoadGraph graph;
  std::vector<std::pair<std::string, std::string>> provenance;
};

inline PipelineResult run_pipeline(const std::filesystem::path& trips_path,
                                   const std::filesystem::path& segments_path, const PipelineConfig& cfg) {
  PipelineResult res;
  auto note = [&](std::string key, auto value) {
    if constexpr (std::is_convertible_v<decltype(value), std::string>) {
      res.provenance.emplace_back(std::move(key), std::string(value));
    } else {
      res.provenance.emplace_back(std::move(key), std::to_string(value));
    }
  };
  const Aggregation agg = detail::in_stage("config", [&] { return parse_aggregation(cfg.aggregation); });
  const auto segments = detail::in_stage("load segments", [&] { return load_segments(segments_path); });
  const auto trips = detail::in_stage("load trips", [&] { return load_trips(trips_path); });
  note("trips_file", trips_path.string());
  note("segments_file", segments_path.string());
  note("interval_seconds", cfg.interval_seconds);
  note("aggregation", to_string(agg));
  note("tau", cfg.tau);
  note("top_k_by_trip_count", cfg.top_k_by_trip_count);
  note("reaggregate_factor", cfg.reaggregate_factor);
  note("ha_lookback", cfg.ha_lookback);
  note("sigma_slots", csv::format_exact(cfg.sigma_slots));
  note("segments_read", segments.size());
  note("records_read", trips.size());

  const RoadGraph full_graph = detail::in_stage("adjacency", [&] { return build_adjacency_from_segments(segments); });
  std::unordered_set<std::string> known(full_graph.node_ids().begin(), full_graph.node_ids().end());
  std::vector<TripRecord> kept_trips;
  for (const auto& t : trips)
    if (known.contains(t.link_id)) kept_trips.push_back(t);
  note("records_dropped_no_segment", trips.size() - kept_trips.size());

  const auto pieces = detail::in_stage("split", [&] { return split_long_trips(kept_trips, cfg.interval_seconds); });
  note("records_after_split", pieces.size());

  const SpeedMatrix raw = detail::in_stage("build", [&] {
    if (pieces.empty()) throw InputError("no trip records to aggregate");
    return build_speed_matrix(pieces, full_graph.node_ids(), cfg.interval_seconds, agg);
  });
  note("start_timestamp", raw.start_timestamp);
  note("slots_before_reaggregation", raw.slots());
  note("cells_missing_before_reaggregation", raw.missing_count());

  FilterResult filtered = detail::in_stage("filter", [&] { return filter_links(raw, cfg.tau); });
  note("links_dropped_tau", raw.nodes() - filtered.kept_rows.size());

  const auto top = top_k_by_trip_count(filtered.matrix, kept_trips, cfg.top_k_by_trip_count);
  const SpeedMatrix selected = filtered.matrix.select_nodes(top);
  note("links_kept", selected.nodes());

  std::vector<std::size_t> graph_rows;
  for (const auto& id : selected.node_ids)
    graph_rows.push_back(static_cast<std::size_t>(
        std::find(full_graph.node_ids().begin(), full_graph.node_ids().end(), id) - full_graph.node_ids().begin()));
  res.graph = full_graph.subgraph(graph_rows);
  note("edges_kept", res.graph.edge_count());

  const SpeedMatrix coarse = detail::in_stage("reaggregate", [&] { return reaggregate(selected, cfg.reaggregate_factor, agg); });
  note("slots", coarse.slots());
  note("interval_seconds_output", coarse.interval_seconds);
  note("cells_missing_after_reaggregation", coarse.missing_count());

  ImputeStats stats;
  const SpeedMatrix imputed = detail::in_stage("impute", [&] {
    std::size_t period = cfg.ha_period;
    if (period == 0) {
      if (604800 % coarse.interval_seconds != 0) {
        throw InputError("one week is not a whole number of " + std::to_string(coarse.interval_seconds) +
                         "-second slots; set ha_period");
      }
      period = static_cast<std::size_t>(604800 / coarse.interval_seconds);
    }
    note("ha_period", period);
    return impute_ha(coarse, std::min(period, coarse.slots()), cfg.ha_lookback, &stats);
  });
  note("cells_imputed_historical_average", stats.historical);
  note("cells_imputed_fill", stats.filled);

  res.matrix = detail::in_stage("smooth", [&] { return gaussian_smooth(imputed, cfg.sigma_slots); });
  return res;
}

inline void save_provenance(const PipelineResult& r, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  for (const auto& [k, v] : r.provenance) out << k << ": " << v << '\n';
}

/// Writes speed.csv, edges.csv, nodes.txt and provenance.txt into `dir`.
inline void save_pipeline_outputs(const PipelineResult& r, const std::filesystem::path& dir) {
  save_speed_matrix(r.matrix, dir / "speed.csv", 6);
  save_edge_list(r.graph, dir / "edges.csv", dir / "nodes.txt");
  save_provenance(r, dir / "provenance.txt");
}

}  // namespace mls2s
