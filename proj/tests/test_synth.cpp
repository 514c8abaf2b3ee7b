#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mls2s/baselines.hpp"
#include "mls2s/synth.hpp"

using namespace mls2s;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> row(const SpeedMatrix& m, std::size_t i) {
  std::vector<double> r(m.slots());
  for (std::size_t t = 0; t < m.slots(); ++t) r[t] = m.at(i, t);
  return r;
}

// Least neighbour correlation minus largest non-neighbour correlation, per node.
double worst_neighbour_margin(const std::vector<std::vector<double>>& rows, const RoadGraph& g) {
  double worst = 1e9;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double min_nb = 1e9, max_other = -1e9;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (j == i) continue;
      const double c = correlation(rows[i], rows[j]);
      if (g.connected(i, j)) min_nb = std::min(min_nb, c);
      else max_other = std::max(max_other, c);
    }
    worst = std::min(worst, min_nb - max_other);
  }
  return worst;
}

}  // namespace

TEST(Synth, ShapeAndGraph) {
  SynthConfig c;
  c.days = 2;
  const SynthData d = generate_synthetic(c);
  EXPECT_EQ(d.series.nodes(), 8u);
  EXPECT_EQ(d.series.slots(), 192u);
  EXPECT_EQ(d.series.interval_seconds, 900);
  EXPECT_EQ(d.series.missing_count(), 0u);
  EXPECT_EQ(d.graph.edge_count(), 8u);
  EXPECT_EQ(d.graph.node_ids(), d.series.node_ids);
  c.graph = "path";
  EXPECT_EQ(generate_synthetic(c).graph.edge_count(), 7u);
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "mls2s_synth_test";
  std::filesystem::create_directories(dir);
  SynthConfig c;
  c.days = 3;
  c.seed = 42;
  save_speed_matrix(generate_synthetic(c).series, dir / "a.csv");
  save_speed_matrix(generate_synthetic(c).series, dir / "b.csv");
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  c.seed = 43;
  save_speed_matrix(generate_synthetic(c).series, dir / "c.csv");
  EXPECT_NE(slurp(dir / "a.csv"), slurp(dir / "c.csv"));
  std::filesystem::remove_all(dir);
}

TEST(Synth, ZeroNoiseIsPeriodicAndHAIsExact) {
  SynthConfig c;
  c.noise = 0.0;
  const SynthData d = generate_synthetic(c);
  const std::size_t day = c.slots_per_day();
  for (std::size_t i = 0; i < d.series.nodes(); ++i)
    for (std::size_t t = day; t < d.series.slots(); ++t) ASSERT_EQ(d.series.at(i, t), d.series.at(i, t - day));

  const auto split = split_dataset(make_windows(d.series, 12, 4), {0.7, 0.1, 0.2});
  const auto preds = ha_forecast(HAModel::uniform(day, 4), d.series, split.test);
  const EvalReport r = evaluate_predictions(preds, split.test, "ha");
  EXPECT_EQ(r.aggregate.mae, 0.0);
  EXPECT_GT(r.aggregate.count, 0u);
}

TEST(Synth, NeighboursCorrelateAboveNonNeighbours) {
  SynthConfig c;
  c.noise = 0.01;
  c.coupling = 0.5;
  const SynthData d = generate_synthetic(c);
  std::vector<std::vector<double>> raw;
  for (std::size_t i = 0; i < c.nodes; ++i) raw.push_back(row(d.series, i));
  EXPECT_GT(worst_neighbour_margin(raw, d.graph), 0.0);

  // The same holds for the disturbance alone: invert the congestion curve
  // and subtract the demand of the noiseless series.
  SynthConfig quiet = c;
  quiet.noise = 0.0;
  const SynthData base = generate_synthetic(quiet);
  auto demand = [&c](double v) {
    const double congested = (1.0 - v / c.free_flow) / c.congestion_drop;
    return c.congestion_level + c.congestion_width * std::log(congested / (1.0 - congested));
  };
  std::vector<std::vector<double>> dev;
  for (std::size_t i = 0; i < c.nodes; ++i) {
    auto r = row(d.series, i);
    const auto b = row(base.series, i);
    for (std::size_t t = 0; t < r.size(); ++t) r[t] = demand(r[t]) - demand(b[t]);
    dev.push_back(std::move(r));
  }
  EXPECT_GT(worst_neighbour_margin(dev, d.graph), 0.0);
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig c;
  c.nodes = 1;
  EXPECT_THROW(generate_synthetic(c), InputError);
  c = SynthConfig{};
  c.interval_seconds = 7;
  EXPECT_THROW(generate_synthetic(c), InputError);
  c = SynthConfig{};
  c.graph = "star";
  EXPECT_THROW(generate_synthetic(c), InputError);
  c = SynthConfig{};
  c.coupling = 1.5;
  EXPECT_THROW(generate_synthetic(c), InputError);
}
