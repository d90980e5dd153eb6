// SPDX-License-Identifier: Apache-2.0
//
// cfmimo: resource allocation for cell-free MU-MIMO multicarrier downlinks
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


/**
 * @file config_io.hpp
 * @brief JSON form of an experiment configuration. Keys mirror the struct
 * field names; a key the defaults do not contain is an error.
 *
 * Layout: {"system": {...}, "ga": {...}, "solver": {...}, "sweep": {...},
 * "trial": {"scheme", "deployment", "regime"}}.
 */
#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfmimo/experiments.hpp"
#include "json.hpp"

namespace cfmimo {

using Json = nlohmann::ordered_json;

struct ExperimentConfig {
  SystemConfig system;
  GaConfig ga;
  SolverConfig solver;
  SweepSpec sweep;
  Scheme scheme = Scheme::MU;
  Deployment deployment = Deployment::CellFree;
  Regime regime = Regime::FBL;
};

inline ExperimentConfig from_preset(const Preset& p) {
  return {p.system, p.ga, p.solver, p.sweep, p.scheme, p.deployment, p.regime};
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T, class F>
Json names(const std::vector<T>& xs, F to_str) {
  Json a = Json::array();
  for (const auto& x : xs) a.push_back(to_str(x));
  return a;
}

template <class T, class F>
std::vector<T> parse_names(const Json& j, F parse) {
  std::vector<T> out;
  for (const auto& e : j) out.push_back(parse(e.template get<std::string>()));
  return out;
}

/// Overlays `patch` on `base`; every key in `patch` must exist in `base`.
inline void merge_strict(Json& base, const Json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError(where.empty() ? "config root must be an object" : where + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown key '" + path + "'");
    Json& slot = base[it.key()];
    if (slot.is_object())
      merge_strict(slot, it.value(), path);
    else
      slot = it.value();
  }
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
  const auto& s = c.system;
  Json sys = {
      {"n_aps", s.n_aps},
      {"antennas_per_ap", s.antennas_per_ap},
      {"n_users", s.n_users},
      {"n_slots", s.n_slots},
      {"n_subcarriers", s.n_subcarriers},
      {"cell_radius_m", s.cell_radius_m},
      {"reference_distance_m", s.reference_distance_m},
      {"path_loss_exponent", s.path_loss_exponent},
      {"snr_db", s.snr_db},
      {"noise_power", s.noise_power},
      {"quantization_noise_power", s.quantization_noise_power ? Json(*s.quantization_noise_power) : Json(nullptr)},
      {"bler", s.bler},
      {"min_bits", s.min_bits},
      {"weights", s.weights},
      {"min_sinr_floor", s.min_sinr_floor},
      {"rng_seed", s.rng_seed},
  };
  const auto& g = c.ga;
  Json ga = {
      {"population_size", g.population_size},
      {"elite_count", g.elite_count},
      {"crossover_prob", g.crossover_prob},
      {"mutation_prob", g.mutation_prob},
      {"max_generations", g.max_generations},
      {"stage2_generations", g.stage2_generations},
      {"stage2_population", g.stage2_population},
      {"mutation_bias", g.mutation_bias},
      {"biased_mutation", g.biased_mutation},
      {"crossover_user_rows", g.crossover_user_rows},
  };
  Json solver = {
      {"max_sca_iters", c.solver.max_sca_iters},
      {"convergence_tol", c.solver.convergence_tol},
      {"rank1_ratio_threshold", c.solver.rank1_ratio_threshold},
      {"randomization_trials", c.solver.randomization_trials},
  };
  auto sch = [](Scheme x) { return to_string(x); };
  auto dep = [](Deployment x) { return to_string(x); };
  auto reg = [](Regime x) { return to_string(x); };
  Json sweep = {
      {"axis", to_string(c.sweep.axis)},
      {"values", c.sweep.values},
      {"schemes", detail::names(c.sweep.schemes, sch)},
      {"deployments", detail::names(c.sweep.deployments, dep)},
      {"regimes", detail::names(c.sweep.regimes, reg)},
      {"n_trials", c.sweep.n_trials},
      {"master_seed", c.sweep.master_seed},
  };
  Json trial = {{"scheme", to_string(c.scheme)}, {"deployment", to_string(c.deployment)},
                {"regime", to_string(c.regime)}};
  return {{"system", sys}, {"ga", ga}, {"solver", solver}, {"sweep", sweep}, {"trial", trial}};
}

inline ExperimentConfig from_json_over(const ExperimentConfig& base, const Json& patch) {
  Json j = to_json(base);
  detail::merge_strict(j, patch, "");
  ExperimentConfig c;
  try {
    const Json& s = j.at("system");
    c.system.n_aps = s.at("n_aps").get<int>();
    c.system.antennas_per_ap = s.at("antennas_per_ap").get<int>();
    c.system.n_users = s.at("n_users").get<int>();
    c.system.n_slots = s.at("n_slots").get<int>();
    c.system.n_subcarriers = s.at("n_subcarriers").get<int>();
    c.system.cell_radius_m = s.at("cell_radius_m").get<double>();
    c.system.reference_distance_m = s.at("reference_distance_m").get<double>();
    c.system.path_loss_exponent = s.at("path_loss_exponent").get<double>();
    c.system.snr_db = s.at("snr_db").get<double>();
    c.system.noise_power = s.at("noise_power").get<double>();
    if (!s.at("quantization_noise_power").is_null())
      c.system.quantization_noise_power = s.at("quantization_noise_power").get<double>();
    c.system.bler = s.at("bler").get<double>();
    c.system.min_bits = s.at("min_bits").get<std::vector<double>>();
    c.system.weights = s.at("weights").get<std::vector<double>>();
    c.system.min_sinr_floor = s.at("min_sinr_floor").get<double>();
    c.system.rng_seed = s.at("rng_seed").get<std::uint64_t>();

    const Json& g = j.at("ga");
    c.ga.population_size = g.at("population_size").get<int>();
    c.ga.elite_count = g.at("elite_count").get<int>();
    c.ga.crossover_prob = g.at("crossover_prob").get<double>();
    c.ga.mutation_prob = g.at("mutation_prob").get<double>();
    c.ga.max_generations = g.at("max_generations").get<int>();
    c.ga.stage2_generations = g.at("stage2_generations").get<int>();
    c.ga.stage2_population = g.at("stage2_population").get<int>();
    c.ga.mutation_bias = g.at("mutation_bias").get<double>();
    c.ga.biased_mutation = g.at("biased_mutation").get<bool>();
    c.ga.crossover_user_rows = g.at("crossover_user_rows").get<bool>();

    const Json& v = j.at("solver");
    c.solver.max_sca_iters = v.at("max_sca_iters").get<int>();
    c.solver.convergence_tol = v.at("convergence_tol").get<double>();
    c.solver.rank1_ratio_threshold = v.at("rank1_ratio_threshold").get<double>();
    c.solver.randomization_trials = v.at("randomization_trials").get<int>();

    const Json& w = j.at("sweep");
    c.sweep.axis = parse_axis(w.at("axis").get<std::string>());
    c.sweep.values = w.at("values").get<std::vector<double>>();
    c.sweep.schemes = detail::parse_names<Scheme>(w.at("schemes"), parse_scheme);
    c.sweep.deployments = detail::parse_names<Deployment>(w.at("deployments"), parse_deployment);
    c.sweep.regimes = detail::parse_names<Regime>(w.at("regimes"), parse_regime);
    c.sweep.n_trials = w.at("n_trials").get<int>();
    c.sweep.master_seed = w.at("master_seed").get<std::uint64_t>();

    const Json& t = j.at("trial");
    c.scheme = parse_scheme(t.at("scheme").get<std::string>());
    c.deployment = parse_deployment(t.at("deployment").get<std::string>());
    c.regime = parse_regime(t.at("regime").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

inline ExperimentConfig load_config_file(const std::string& path, const ExperimentConfig& base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_over(base, parse_json_text(ss.str(), path));
}

/// `key=value`. The key is `section.field`, or a bare field name that occurs
/// in exactly one section. The value is read as JSON, falling back to a plain
/// string.
inline ExperimentConfig apply_override(const ExperimentConfig& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  const Json current = to_json(base);
  std::string section, field;
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    section = key.substr(0, dot);
    field = key.substr(dot + 1);
  } else {
    field = key;
    for (auto it = current.begin(); it != current.end(); ++it) {
      if (!it.value().contains(field)) continue;
      if (!section.empty()) throw ConfigError("override key '" + key + "' is ambiguous; use section.field");
      section = it.key();
    }
    if (section.empty()) throw ConfigError("unknown key '" + key + "'");
  }
  return from_json_over(base, Json{{section, Json{{field, value}}}});
}

inline ValidationReport validate(const ExperimentConfig& c) {
  ValidationReport r = validate_config(c.system);
  auto add = [&r](const ValidationReport& o) {
    r.violations.insert(r.violations.end(), o.violations.begin(), o.violations.end());
    r.warnings.insert(r.warnings.end(), o.warnings.begin(), o.warnings.end());
  };
  add(validate_config(c.ga));
  add(validate_config(c.solver));
  add(validate_sweep(c.sweep, c.system));
  return r;
}

}  // namespace cfmimo
