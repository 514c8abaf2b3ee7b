#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mls2s/cell.hpp"
#include "mls2s/graph.hpp"
#include "mls2s/speed_matrix.hpp"

namespace mls2s {

// Synthetic traffic: a latent demand per node is a daily pattern, shifted in
// phase from node to node, plus an autoregressive disturbance that diffuses
// over the graph. Speed is a congestion curve of demand.
struct SynthConfig {
  std::size_t nodes = 8;
  std::size_t days = 14;
  std::int64_t interval_seconds = 900;
  std::uint64_t seed = 1;
  std::string graph = "ring";  // ring | path
  double free_flow = 65.0;
  double congestion_drop = 0.7;    // fraction of free flow lost when fully congested
  double congestion_level = 0.65;  // demand at the curve midpoint
  double congestion_width = 0.08;
  double phase_spread_hours = 24.0;  // node i is shifted by spread * i / nodes
  double ar = 0.99;        // persistence of the disturbance
  double coupling = 0.5;   // share of the disturbance taken from neighbours
  double noise = 0.002;    // innovation scale in demand units
  std::int64_t start_timestamp = 1704067200;

  void validate() const {
    if (nodes < 2) throw InputError("synthetic data needs at least 2 nodes");
    if (days < 1) throw InputError("days must be >= 1");
    if (interval_seconds <= 0 || 86400 % interval_seconds != 0) {
      throw InputError("interval must divide one day, got " + std::to_string(interval_seconds));
    }
    if (graph != "ring" && graph != "path") throw InputError("graph must be ring or path, got '" + graph + "'");
    if (!(coupling >= 0.0 && coupling <= 1.0)) throw InputError("coupling must lie in [0, 1]");
    if (!(noise >= 0.0)) throw InputError("noise must be >= 0");
    if (!(std::abs(ar) < 1.0)) throw InputError("ar must lie in (-1, 1)");
    if (!(phase_spread_hours >= 0.0 && phase_spread_hours <= 24.0)) throw InputError("phase_spread_hours must lie in [0, 24]");
    if (!(congestion_width > 0.0)) throw InputError("congestion_width must be positive");
  }

  std::size_t slots_per_day() const { return static_cast<std::size_t>(86400 / interval_seconds); }
};

/// Daily demand in [0.15, 0.95] with morning and evening peaks; `hour` in [0, 24).
inline double synth_daily_demand(double hour) {
  const double w = 2.0 * std::numbers::pi * hour / 24.0;
  return 0.5 - 0.25 * std::cos(w - 0.35) - 0.2 * std::cos(2.0 * w - 0.9);
}

inline double synth_speed(const SynthConfig& c, double demand) {
  const double congested = 1.0 / (1.0 + std::exp(-(demand - c.congestion_level) / c.congestion_width));
  return c.free_flow * (1.0 - c.congestion_drop * congested);
}

struct SynthData {
  SpeedMatrix series;
  RoadGraph graph;
};

inline SynthData generate_synthetic(const SynthConfig& c) {
  c.validate();
  const std::size_t n = c.nodes, per_day = c.slots_per_day(), T = per_day * c.days;
  RoadGraph g = c.graph == "ring" ? ring_graph(n) : path_graph(n);
  const std::vector<std::string>& ids = g.node_ids();

  // The daily pattern depends only on the slot of day, so noise = 0 gives an
  // exactly periodic series.
  Tensor pattern(n, per_day);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < per_day; ++s) {
      const double hour = static_cast<double>(s) * static_cast<double>(c.interval_seconds) / 3600.0 -
                          c.phase_spread_hours * static_cast<double>(i) / static_cast<double>(n);
      pattern(i, s) = synth_speed(c, synth_daily_demand(std::fmod(hour + 240.0, 24.0)));
    }

  std::mt19937_64 rng(c.seed);
  auto gaussian = [&rng] {
    // Box-Muller on the portable uniform stream.
    const double u1 = 1.0 - uniform01(rng), u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  };
  std::vector<double> z(n, 0.0), next(n, 0.0);
  SpeedMatrix m(ids, c.interval_seconds, c.start_timestamp, T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double hour = static_cast<double>(t % per_day) * static_cast<double>(c.interval_seconds) / 3600.0 -
                          c.phase_spread_hours * static_cast<double>(i) / static_cast<double>(n);
      const double demand = synth_daily_demand(std::fmod(hour + 240.0, 24.0)) + z[i];
      m.set(i, t, c.noise == 0.0 ? pattern(i, t % per_day) : synth_speed(c, demand));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double nb = 0.0;
      std::size_t deg = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (g.connected(i, j)) {
          nb += z[j];
          ++deg;
        }
      const double mixed = deg ? (1.0 - c.coupling) * z[i] + c.coupling * nb / static_cast<double>(deg) : z[i];
      next[i] = c.ar * mixed + c.noise * gaussian();
    }
    z.swap(next);
  }
  return {std::move(m), std::move(g)};
}

}  // namespace mls2s
