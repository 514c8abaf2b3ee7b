#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <iterator>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>

#include "mls2s/baselines.hpp"
#include "mls2s/csv.hpp"
#include "mls2s/seq2seq.hpp"
#include "mls2s/trainer.hpp"

namespace mls2s {

/// A trained model of any kind together with the data settings it was fit
/// under. Exactly one of the model fields is set, matching `kind`.
struct Checkpoint {
  std::string kind;  // mls2s | ha | var
  std::size_t history = 12;
  std::size_t horizon = 12;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  ZScore norm;
  std::optional<MLS2SModel> mls2s;
  std::optional<HAModel> ha;
  std::optional<VARModel> var;
};

namespace detail {

using json = nlohmann::json;

inline json tensor_to_json(const Tensor& t, const std::string& what) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericalError("checkpoint: non-finite value in " + what);
  return json{{"shape", {t.rows(), t.cols()}}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const json& j) {
  const auto shape = j.at("shape").get<std::array<std::size_t, 2>>();
  return Tensor(shape[0], shape[1], j.at("data").get<std::vector<double>>());
}

inline json to_json(const Checkpoint& c) {
  json j;
  j["format"] = "mls2s-checkpoint";
  j["version"] = 1;
  j["model"] = c.kind;
  j["history"] = c.history;
  j["horizon"] = c.horizon;
  j["split_fractions"] = c.fractions;
  j["normalization"] = {{"mean", c.norm.mean}, {"std", c.norm.std}};
  if (c.kind == "mls2s") {
    if (!c.mls2s) throw ContractError("checkpoint: mls2s model missing");
    const MLS2SConfig& mc = c.mls2s->config();
    j["config"] = {{"levels", mc.levels},       {"hidden_dim", mc.hidden_dim},
                   {"input_dim", mc.input_dim}, {"horizon", mc.horizon},
                   {"history", mc.history},     {"teacher_forcing_prob", mc.teacher_forcing_prob},
                   {"gconv_hops", mc.gconv_hops}};
    json params = json::object();
    for (const Parameter& p : c.mls2s->params()) params[p.name] = tensor_to_json(p.value, p.name);
    j["params"] = std::move(params);
  } else if (c.kind == "ha") {
    if (!c.ha) throw ContractError("checkpoint: ha model missing");
    j["ha"] = {{"period", c.ha->period}, {"lookback_cycles", c.ha->lookback_cycles}, {"weights", c.ha->weights}};
  } else if (c.kind == "var") {
    if (!c.var) throw ContractError("checkpoint: var model missing");
    json coef = json::array();
    for (std::size_t k = 0; k < c.var->coefficients.size(); ++k)
      coef.push_back(tensor_to_json(c.var->coefficients[k], "A_" + std::to_string(k + 1)));
    j["var"] = {{"order", c.var->order},
                {"ridge", c.var->ridge},
                {"intercept", c.var->intercept},
                {"coefficients", std::move(coef)},
                {"residual_variance", c.var->residual_variance}};
  } else {
    throw ContractError("checkpoint: unknown model kind '" + c.kind + "'");
  }
  return j;
}

inline Checkpoint from_json(const json& j) {
  if (j.value("format", "") != "mls2s-checkpoint") throw InputError("not an mls2s checkpoint");
  Checkpoint c;
  c.kind = j.at("model").get<std::string>();
  c.history = j.at("history").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.fractions = j.at("split_fractions").get<std::array<double, 3>>();
  c.norm.mean = j.at("normalization").at("mean").get<double>();
  c.norm.std = j.at("normalization").at("std").get<double>();
  if (c.kind == "mls2s") {
    const json& cj = j.at("config");
    MLS2SConfig mc;
    mc.levels = cj.at("levels").get<std::size_t>();
    mc.hidden_dim = cj.at("hidden_dim").get<std::size_t>();
    mc.input_dim = cj.at("input_dim").get<std::size_t>();
    mc.horizon = cj.at("horizon").get<std::size_t>();
    mc.history = cj.at("history").get<std::size_t>();
    mc.teacher_forcing_prob = cj.at("teacher_forcing_prob").get<double>();
    mc.gconv_hops = cj.at("gconv_hops").get<int>();
    MLS2SModel model(mc, 0);
    const json& params = j.at("params");
    std::set<std::string> seen;
    for (Parameter& p : model.params()) {
      if (!params.contains(p.name)) throw InputError("checkpoint is missing parameter " + p.name);
      Tensor t = tensor_from_json(params.at(p.name));
      if (!t.same_shape(p.value)) {
        throw InputError("checkpoint parameter " + p.name + " has shape " + t.shape_string() + ", expected " +
                         p.value.shape_string());
      }
      p.value = std::move(t);
      seen.insert(p.name);
    }
    for (const auto& [name, _] : params.items())
      if (!seen.contains(name)) throw InputError("checkpoint has unexpected parameter " + name);
    c.mls2s = std::move(model);
  } else if (c.kind == "ha") {
    const json& hj = j.at("ha");
    HAModel m;
    m.period = hj.at("period").get<std::size_t>();
    m.lookback_cycles = hj.at("lookback_cycles").get<std::size_t>();
    m.weights = hj.at("weights").get<std::vector<double>>();
    m.validate();
    c.ha = std::move(m);
  } else if (c.kind == "var") {
    const json& vj = j.at("var");
    VARModel m;
    m.order = vj.at("order").get<std::size_t>();
    m.ridge = vj.at("ridge").get<double>();
    m.intercept = vj.at("intercept").get<std::vector<double>>();
    m.residual_variance = vj.at("residual_variance").get<std::vector<double>>();
    for (const json& a : vj.at("coefficients")) m.coefficients.push_back(tensor_from_json(a));
    if (m.coefficients.size() != m.order) throw InputError("checkpoint VAR coefficient count differs from order");
    for (const Tensor& a : m.coefficients)
      if (a.rows() != m.nodes() || a.cols() != m.nodes()) throw InputError("checkpoint VAR coefficient shape mismatch");
    c.var = std::move(m);
  } else {
    throw InputError("checkpoint has unknown model kind '" + c.kind + "'");
  }
  return c;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << detail::to_json(c).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = csv::open_in(path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return detail::from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint " + path.string() + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError("checkpoint " + path.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw InputError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace mls2s
