#pragma once

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mls2s/baselines.hpp"
#include "mls2s/checkpoint.hpp"
#include "mls2s/pipeline.hpp"
#include "mls2s/synth.hpp"
#include "mls2s/trainer.hpp"

namespace mls2s::cli {

/// Bad usage or configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { text, path, integer, count, real, flag, counts };

struct KeyDef {
  std::string name;
  Kind kind;
  std::string help;
};

inline const std::vector<KeyDef>& schema() {
  static const std::vector<KeyDef> keys = {
      // files
      {"data_dir", Kind::path, "directory holding speed.csv, edges.csv and nodes.txt"},
      {"out_dir", Kind::path, "output directory (created if missing)"},
      {"trips", Kind::path, "trip records CSV: link_id,start_time,end_time,speed"},
      {"segments", Kind::path, "segment metadata CSV: link_id,origin_id,destination_id"},
      {"checkpoint", Kind::path, "checkpoint JSON written by train"},
      {"report", Kind::path, "write the metrics table here instead of stdout"},
      {"mask_zeros", Kind::flag, "treat zero speeds as missing (METR-LA convention); default false"},
      // pipeline
      {"interval_seconds", Kind::integer, "slot length in seconds (prepare: default 300; synth: default 900)"},
      {"aggregation", Kind::text, "speed aggregation within a slot: max|mean|min; default max"},
      {"tau", Kind::count, "drop links whose longest missing run exceeds this many slots; default 1000"},
      {"top_k_by_trip_count", Kind::count, "keep only the k links with most trips, 0 keeps all; default 0"},
      {"reaggregate_factor", Kind::count, "merge this many slots into one after filtering; default 3"},
      {"impute_period", Kind::count, "imputation cycle in output slots, 0 means one week; default 0"},
      {"impute_lookback", Kind::count, "previous cycles averaged when imputing; default 4"},
      {"sigma_slots", Kind::real, "Gaussian smoothing width in slots, 0 disables; default 1.0"},
      // synthetic data
      {"nodes", Kind::count, "synthetic node count (>= 2); default 8"},
      {"days", Kind::count, "synthetic days; default 14"},
      {"graph", Kind::text, "synthetic topology: ring|path; default ring"},
      {"noise", Kind::real, "synthetic disturbance innovation scale, 0 gives a periodic series; default 0.002"},
      {"coupling", Kind::real, "share of the disturbance drawn from neighbours, in [0, 1]; default 0.5"},
      {"ar", Kind::real, "disturbance persistence, in (-1, 1); default 0.99"},
      {"phase_spread_hours", Kind::real, "daily-pattern shift across all nodes, in [0, 24]; default 24"},
      {"free_flow", Kind::real, "synthetic free-flow speed; default 65"},
      // data windows
      {"history", Kind::count, "input steps per window; default 12"},
      {"horizon", Kind::count, "predicted steps per window; default 12"},
      {"train_fraction", Kind::real, "chronological train share; default 0.7"},
      {"val_fraction", Kind::real, "chronological validation share; default 0.1"},
      {"test_fraction", Kind::real, "chronological test share; default 0.2"},
      // model and training
      {"model", Kind::text, "model to train: mls2s|ha|var; default mls2s"},
      {"levels", Kind::count, "encoder levels L; default 2"},
      {"hidden_dim", Kind::count, "GC-GRU hidden units; default 64"},
      {"gconv_hops", Kind::count, "propagation hops per graph convolution; default 1"},
      {"tf_prob", Kind::real, "teacher forcing probability per decoder step; default 0.5"},
      {"epochs", Kind::count, "training epochs; default 60"},
      {"batch_size", Kind::count, "windows per mini-batch; default 16"},
      {"base_lr", Kind::real, "initial Adam learning rate; default 0.01"},
      {"decay_ratio", Kind::real, "learning-rate factor applied after each decay epoch; default 0.1"},
      {"decay_epochs", Kind::counts, "comma-separated decay epochs; default 20,40"},
      {"seed", Kind::count, "random seed (initialization, shuffling, teacher forcing, synthetic noise); default 1"},
      // baselines
      {"ha_period", Kind::count, "HA cycle in slots, 0 means one week; default 0"},
      {"ha_lookback", Kind::count, "HA previous cycles averaged; default 4"},
      {"var_order", Kind::count, "VAR lag order p; default 3"},
      {"var_ridge", Kind::real, "VAR ridge penalty on the lag coefficients; default 1e-4"},
      // evaluation
      {"horizons", Kind::counts, "comma-separated 1-based steps to report; default every step"},
      {"split", Kind::text, "split to evaluate: train|val|test; default test"},
      {"mape_floor", Kind::real, "MAPE ignores targets with |y| below this; default 1.0"},
  };
  return keys;
}

inline std::string type_name(Kind k) {
  switch (k) {
    case Kind::text: return "TEXT";
    case Kind::path: return "PATH";
    case Kind::integer: return "INT";
    case Kind::count: return "UINT";
    case Kind::real: return "FLOAT";
    case Kind::flag: return "BOOL";
    case Kind::counts: return "UINT,...";
  }
  return "TEXT";
}

inline const KeyDef* find_key(const std::string& name) {
  for (const KeyDef& k : schema())
    if (k.name == name) return &k;
  return nullptr;
}

/// Flat key=value settings checked against the schema.
class RunConfig {
 public:
  void set(const std::string& key, const std::string& value, const std::string& where = "command line") {
    const KeyDef* def = find_key(key);
    if (!def) throw ConfigError("unknown config key '" + key + "' (" + where + ")");
    check(*def, value);
    values_[key] = value;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    RunConfig cfg;
    std::vector<std::string> lines;
    try {
      lines = csv::read_lines(path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    std::map<std::string, std::size_t> seen;
    for (std::size_t n = 0; n < lines.size(); ++n) {
      const std::string where = path.string() + ":" + std::to_string(n + 1);
      std::string_view line = lines[n];
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = csv::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value at " + where);
      const std::string key(csv::trim(line.substr(0, eq)));
      if (seen.contains(key)) throw ConfigError("duplicate config key '" + key + "' at " + where);
      seen[key] = n;
      cfg.set(key, std::string(csv::trim(line.substr(eq + 1))), where);
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string text(const std::string& key, const std::string& fallback) const {
    return has(key) ? values_.at(key) : fallback;
  }
  std::filesystem::path required_path(const std::string& key) const {
    if (!has(key) || values_.at(key).empty()) throw ConfigError("missing required setting --" + key);
    return values_.at(key);
  }
  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    return has(key) ? std::stoll(values_.at(key)) : fallback;
  }
  std::size_t count(const std::string& key, std::size_t fallback) const {
    return has(key) ? static_cast<std::size_t>(std::stoull(values_.at(key))) : fallback;
  }
  double real(const std::string& key, double fallback) const {
    return has(key) ? std::stod(values_.at(key)) : fallback;
  }
  bool flag(const std::string& key) const { return has(key) && parse_flag(values_.at(key)); }
  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::size_t> out;
    for (auto part : csv::split(values_.at(key)))
      if (!csv::trim(part).empty()) out.push_back(static_cast<std::size_t>(std::stoull(std::string(csv::trim(part)))));
    return out;
  }

 private:
  static bool parse_flag(const std::string& v) { return v == "true" || v == "1" || v == "yes"; }

  static void check(const KeyDef& def, const std::string& value) {
    auto fail = [&](const std::string& expected) {
      throw ConfigError("config key '" + def.name + "': expected " + expected + ", got '" + value + "'");
    };
    std::int64_t i = 0;
    double d = 0.0;
    switch (def.kind) {
      case Kind::text:
      case Kind::path:
        break;
      case Kind::integer:
        if (!csv::try_parse_int(value, i)) fail("an integer");
        break;
      case Kind::count:
        if (!csv::try_parse_int(value, i) || i < 0) fail("a non-negative integer");
        break;
      case Kind::real:
        if (!csv::try_parse_double(value, d) || !std::isfinite(d)) fail("a finite number");
        break;
      case Kind::flag:
        if (value != "true" && value != "false" && value != "1" && value != "0" && value != "yes" && value != "no")
          fail("true or false");
        break;
      case Kind::counts:
        for (auto part : csv::split(value))
          if (!csv::trim(part).empty() && (!csv::try_parse_int(csv::trim(part), i) || i < 0))
            fail("a comma-separated list of non-negative integers");
        break;
    }
  }

  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------- helpers

struct LoadedData {
  SpeedMatrix series;
  RoadGraph graph;
};

inline LoadedData load_data(const RunConfig& cfg) {
  const auto dir = cfg.required_path("data_dir");
  LoadedData d{load_speed_matrix(dir / "speed.csv"), load_adjacency(dir / "edges.csv", dir / "nodes.txt")};
  if (cfg.flag("mask_zeros")) d.series.mask_zeros();
  return d;
}

inline std::array<double, 3> fractions(const RunConfig& cfg) {
  return {cfg.real("train_fraction", 0.7), cfg.real("val_fraction", 0.1), cfg.real("test_fraction", 0.2)};
}

inline std::filesystem::path make_out_dir(const RunConfig& cfg) {
  const auto dir = cfg.required_path("out_dir");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline std::size_t week_in_slots(std::int64_t interval_seconds) {
  return static_cast<std::size_t>(std::max<std::int64_t>(1, 604800 / interval_seconds));
}

inline MLS2SConfig model_config(const RunConfig& cfg) {
  MLS2SConfig mc;
  mc.levels = cfg.count("levels", 2);
  mc.hidden_dim = cfg.count("hidden_dim", 64);
  mc.history = cfg.count("history", 12);
  mc.horizon = cfg.count("horizon", 12);
  mc.teacher_forcing_prob = cfg.real("tf_prob", 0.5);
  mc.gconv_hops = static_cast<int>(cfg.count("gconv_hops", 1));
  return mc;
}

inline TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.count("epochs", 60);
  tc.batch_size = cfg.count("batch_size", 16);
  tc.base_lr = cfg.real("base_lr", 0.01);
  tc.decay_ratio = cfg.real("decay_ratio", 0.1);
  tc.decay_epochs = cfg.counts("decay_epochs", {20, 40});
  tc.seed = cfg.count("seed", 1);
  tc.history = cfg.count("history", 12);
  tc.horizon = cfg.count("horizon", 12);
  tc.tf_prob = cfg.real("tf_prob", 0.5);
  return tc;
}

inline void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& dir) {
  auto h = csv::open_out(dir / "history.csv");
  h << "epoch,train_mae,val_mae,lr\n";
  for (const auto& r : history)
    h << r.epoch << ',' << csv::format_exact(r.train_mae) << ',' << csv::format_exact(r.val_mae) << ','
      << csv::format_exact(r.lr) << '\n';
  auto t = csv::open_out(dir / "timing.csv");
  t << "epoch,seconds\n";
  for (const auto& r : history) t << r.epoch << ',' << csv::format_fixed(r.seconds, 6) << '\n';
}

inline std::string epoch_line(const EpochRecord& r, std::size_t total) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu/%zu train_mae %.4f val_mae %.4f lr %.6g seconds %.3f", r.epoch, total,
                r.train_mae, r.val_mae, r.lr, r.seconds);
  return buf;
}

inline Checkpoint train_mls2s(const RunConfig& cfg, const TrainingData& data,
                              const std::filesystem::path& out_dir, std::ostream& out) {
  const MLS2SConfig mc = model_config(cfg);
  const TrainConfig tc = train_config(cfg);
  MLS2SModel model(mc, tc.seed);
  const TrainResult res = train(model, data, tc, [&](const EpochRecord& r) { out << epoch_line(r, tc.epochs) << '\n'; });
  write_history(res.history, out_dir);
  if (!res.history.empty()) {
    double total = 0.0;
    for (const auto& r : res.history) total += r.seconds;
    char buf[160];
    std::snprintf(buf, sizeof buf, "best epoch %zu val_mae %.4f; mean seconds per epoch %.3f", res.best_epoch,
                  res.best_val_mae, total / static_cast<double>(res.history.size()));
    out << buf << '\n';
  }
  Checkpoint c;
  c.kind = "mls2s";
  c.history = mc.history;
  c.horizon = mc.horizon;
  c.fractions = fractions(cfg);
  c.norm = data.norm;
  c.mls2s = std::move(model);
  return c;
}

inline Checkpoint fit_ha(const RunConfig& cfg, const LoadedData& d, const TrainingData& data) {
  const std::size_t period = cfg.count("ha_period", 0);
  Checkpoint c;
  c.kind = "ha";
  c.history = cfg.count("history", 12);
  c.horizon = cfg.count("horizon", 12);
  c.fractions = fractions(cfg);
  c.norm = data.norm;
  c.ha = HAModel::uniform(period ? period : week_in_slots(d.series.interval_seconds), cfg.count("ha_lookback", 4));
  return c;
}

inline Checkpoint fit_var(const RunConfig& cfg, const LoadedData& d, const TrainingData& data) {
  Checkpoint c;
  c.kind = "var";
  c.history = cfg.count("history", 12);
  c.horizon = cfg.count("horizon", 12);
  c.fractions = fractions(cfg);
  c.norm = data.norm;
  c.var = fit_var_baseline(d.series, data.split.train, data.norm, cfg.count("var_order", 3), cfg.real("var_ridge", 1e-4))
              .model;
  return c;
}

inline std::string method_name(const std::string& kind) {
  if (kind == "mls2s") return "MLS2S";
  if (kind == "ha") return "HA";
  return "VAR";
}

inline std::vector<Tensor> forecast(Checkpoint& c, const LoadedData& d, const PropagationMatrix& prop,
                                    const std::vector<WindowSample>& windows) {
  if (c.kind == "mls2s") {
    if (d.series.nodes() == 0) throw InputError("no nodes in data");
    return predict_windows(*c.mls2s, prop, c.norm, windows);
  }
  if (c.kind == "ha") return ha_forecast(*c.ha, d.series, windows);
  if (c.var->nodes() != d.series.nodes()) {
    throw InputError("VAR checkpoint has " + std::to_string(c.var->nodes()) + " nodes, data has " +
                     std::to_string(d.series.nodes()));
  }
  return var_forecast(VARBaseline{*c.var, c.norm}, windows);
}

inline std::vector<std::size_t> horizons(const RunConfig& cfg, std::size_t trained) {
  std::vector<std::size_t> all(trained);
  for (std::size_t k = 0; k < trained; ++k) all[k] = k + 1;
  auto hs = cfg.counts("horizons", all);
  if (hs.empty()) throw ConfigError("--horizons lists no steps");
  for (std::size_t h : hs)
    if (h < 1 || h > trained) {
      throw ConfigError("horizon step " + std::to_string(h) + " is outside the trained horizon 1.." +
                        std::to_string(trained));
    }
  return hs;
}

inline const std::vector<WindowSample>& pick_split(const DatasetSplit& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  throw ConfigError("--split must be train, val or test, got '" + name + "'");
}

// ---------------------------------------------------------------- commands

inline int cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  PipelineConfig p;
  p.interval_seconds = cfg.integer("interval_seconds", 300);
  p.aggregation = cfg.text("aggregation", "max");
  p.tau = cfg.count("tau", 1000);
  p.top_k_by_trip_count = cfg.count("top_k_by_trip_count", 0);
  p.reaggregate_factor = cfg.count("reaggregate_factor", 3);
  p.ha_period = cfg.count("impute_period", 0);
  p.ha_lookback = cfg.count("impute_lookback", 4);
  p.sigma_slots = cfg.real("sigma_slots", 1.0);
  const auto trips = cfg.required_path("trips"), segments = cfg.required_path("segments");
  const auto dir = make_out_dir(cfg);
  const PipelineResult r = run_pipeline(trips, segments, p);
  save_pipeline_outputs(r, dir);
  out << "prepared " << r.matrix.nodes() << " links x " << r.matrix.slots() << " slots, " << r.graph.edge_count()
      << " edges -> " << dir.string() << '\n';
  return 0;
}

inline SynthConfig synth_config(const RunConfig& cfg) {
  SynthConfig s;
  s.nodes = cfg.count("nodes", s.nodes);
  s.days = cfg.count("days", s.days);
  s.interval_seconds = cfg.integer("interval_seconds", s.interval_seconds);
  s.seed = cfg.count("seed", 1);
  s.graph = cfg.text("graph", s.graph);
  s.noise = cfg.real("noise", s.noise);
  s.coupling = cfg.real("coupling", s.coupling);
  s.ar = cfg.real("ar", s.ar);
  s.phase_spread_hours = cfg.real("phase_spread_hours", s.phase_spread_hours);
  s.free_flow = cfg.real("free_flow", s.free_flow);
  return s;
}

inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const SynthConfig s = synth_config(cfg);
  const SynthData d = generate_synthetic(s);
  const auto dir = make_out_dir(cfg);
  save_speed_matrix(d.series, dir / "speed.csv", -1);
  save_edge_list(d.graph, dir / "edges.csv", dir / "nodes.txt");
  out << "synthetic " << s.graph << ": " << d.series.nodes() << " nodes x " << d.series.slots() << " slots -> "
      << dir.string() << '\n';
  return 0;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const std::string kind = cfg.text("model", "mls2s");
  if (kind != "mls2s" && kind != "ha" && kind != "var") {
    throw ConfigError("--model must be mls2s, ha or var, got '" + kind + "'");
  }
  const LoadedData d = load_data(cfg);
  const auto dir = make_out_dir(cfg);
  const TrainingData data =
      prepare_training_data(d.series, d.graph, cfg.count("history", 12), cfg.count("horizon", 12), fractions(cfg));
  Checkpoint c = kind == "mls2s" ? train_mls2s(cfg, data, dir, out)
                 : kind == "ha"  ? fit_ha(cfg, d, data)
                                 : fit_var(cfg, d, data);
  save_checkpoint(c, dir / "checkpoint.json");
  out << "wrote " << (dir / "checkpoint.json").string() << '\n';
  return 0;
}

inline void emit_report(const RunConfig& cfg, std::ostream& out, const std::vector<EvalReport>& reports,
                        const std::vector<std::size_t>& hs) {
  auto write = [&](std::ostream& o) {
    write_report_header(o);
    for (const auto& r : reports) write_report_rows(o, r, hs);
  };
  if (cfg.has("report")) {
    auto f = csv::open_out(cfg.required_path("report"));
    write(f);
  } else {
    write(out);
  }
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  Checkpoint c = load_checkpoint(cfg.required_path("checkpoint"));
  const auto hs = horizons(cfg, c.horizon);
  const LoadedData d = load_data(cfg);
  if (d.graph.node_ids() != d.series.node_ids) throw InputError("adjacency node order does not match the speed matrix rows");
  const auto split = split_dataset(make_windows(d.series, c.history, c.horizon), c.fractions);
  const auto& windows = pick_split(split, cfg.text("split", "test"));
  const PropagationMatrix prop = normalize_propagation(d.graph);
  const auto preds = forecast(c, d, prop, windows);
  emit_report(cfg, out, {evaluate_predictions(preds, windows, method_name(c.kind), cfg.real("mape_floor", 1.0))}, hs);
  return 0;
}

inline int cmd_compare(const RunConfig& cfg, std::ostream& out) {
  const LoadedData d = load_data(cfg);
  const auto dir = make_out_dir(cfg);
  const std::size_t horizon = cfg.count("horizon", 12);
  const auto hs = horizons(cfg, horizon);
  const TrainingData data = prepare_training_data(d.series, d.graph, cfg.count("history", 12), horizon, fractions(cfg));
  std::vector<Checkpoint> models;
  models.push_back(train_mls2s(cfg, data, dir, out));
  models.push_back(fit_ha(cfg, d, data));
  models.push_back(fit_var(cfg, d, data));
  std::vector<EvalReport> reports;
  const double floor = cfg.real("mape_floor", 1.0);
  for (Checkpoint& c : models) {
    save_checkpoint(c, dir / (c.kind + ".json"));
    const auto preds = forecast(c, d, data.prop, data.split.test);
    reports.push_back(evaluate_predictions(preds, data.split.test, method_name(c.kind), floor));
  }
  {
    auto f = csv::open_out(dir / "compare.csv");
    write_report_header(f);
    for (const auto& r : reports) write_report_rows(f, r, hs);
  }
  write_report_header(out);
  for (const auto& r : reports) write_report_rows(out, r, hs);
  return 0;
}

// ---------------------------------------------------------------- entry point

struct Command {
  std::string name;
  std::string description;
  std::vector<std::string> keys;
  int (*run)(const RunConfig&, std::ostream&);
};

inline const std::vector<Command>& commands() {
  static const std::vector<std::string> window_keys = {"history", "horizon", "train_fraction", "val_fraction",
                                                       "test_fraction", "mask_zeros"};
  static const std::vector<std::string> model_keys = {"levels",  "hidden_dim",   "gconv_hops", "tf_prob",
                                                      "epochs",  "batch_size",   "base_lr",    "decay_ratio",
                                                      "decay_epochs", "seed",    "ha_period",  "ha_lookback",
                                                      "var_order", "var_ridge"};
  auto join = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  static const std::vector<Command> cmds = {
      {"prepare", "Build a speed matrix and adjacency from trip records",
       {"trips", "segments", "out_dir", "interval_seconds", "aggregation", "tau", "top_k_by_trip_count",
        "reaggregate_factor", "impute_period", "impute_lookback", "sigma_slots"},
       cmd_prepare},
      {"synth", "Generate a seeded synthetic dataset on a ring or path graph",
       {"out_dir", "nodes", "days", "interval_seconds", "seed", "graph", "noise", "coupling", "ar",
        "phase_spread_hours", "free_flow"},
       cmd_synth},
      {"train", "Train MLS2S or fit a baseline; writes checkpoint.json, history.csv, timing.csv",
       join(join({"data_dir", "out_dir", "model"}, window_keys), model_keys), cmd_train},
      {"eval", "Evaluate a checkpoint on one split and print the metrics table",
       {"checkpoint", "data_dir", "horizons", "split", "mape_floor", "report", "mask_zeros"}, cmd_eval},
      {"compare", "Train MLS2S, fit HA and VAR, and write one combined metrics table",
       join(join({"data_dir", "out_dir", "horizons", "mape_floor"}, window_keys), model_keys), cmd_compare},
  };
  return cmds;
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const ContractError*>(&e))
    return 2;
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  return 1;
}

/// Runs the command line `args` (args[0] is the program name). Returns the exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilevel sequence-to-sequence GC-GRU traffic forecasting"};
  app.require_subcommand(1);
  std::map<std::string, std::string> flag_values;
  std::map<std::string, std::string> config_paths;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& cmd : commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.description);
    sub->add_option("--config", config_paths[cmd.name], "key = value config file; flags override its entries")
        ->type_name("PATH");
    for (const std::string& key : cmd.keys) {
      const KeyDef* def = find_key(key);
      const std::string names = key == "interval_seconds" ? "--interval_seconds,--interval" : "--" + key;
      sub->add_option(names, flag_values[cmd.name + "." + key], def->help)->type_name(type_name(def->kind));
    }
    subs.emplace_back(sub, &cmd);
  }

  std::vector<std::string> owned(args);
  std::vector<char*> argv;
  for (auto& a : owned) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    try {
      RunConfig cfg;
      const std::string& cfg_path = config_paths[cmd->name];
      if (!cfg_path.empty()) cfg = RunConfig::from_file(cfg_path);
      for (const std::string& key : cmd->keys)
        if (sub->count("--" + key) > 0) cfg.set(key, flag_values[cmd->name + "." + key]);
      return cmd->run(cfg, out);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return exit_code_for(e);
    }
  }
  return 2;
}

}  // namespace mls2s::cli
