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


// cfmimo: command-line driver for trials, sweeps, convergence reports and
// oracle checks.
//
// Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfmimo/config_io.hpp"

#ifndef CFMIMO_VERSION
#define CFMIMO_VERSION "0.0.0-unknown"
#endif

namespace fs = std::filesystem;
using namespace cfmimo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string preset;
};

struct Loaded {
  ExperimentConfig cfg;
  std::optional<Preset> preset;
};

Loaded load(const Options& o) {
  Loaded l;
  if (!o.preset.empty()) {
    l.preset = make_preset(o.preset);
    l.cfg = from_preset(*l.preset);
  }
  if (!o.config_path.empty()) l.cfg = load_config_file(o.config_path, l.cfg);
  for (const auto& s : o.overrides) l.cfg = apply_override(l.cfg, s);
  if (o.seed) {
    l.cfg.system.rng_seed = *o.seed;
    l.cfg.sweep.master_seed = *o.seed;
  }
  if (o.trials) l.cfg.sweep.n_trials = *o.trials;
  return l;
}

void print_report(const ValidationReport& r) {
  for (const auto& v : r.violations) std::cerr << "violation: " << v << '\n';
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

void write_manifest(const fs::path& dir, const std::string& command, const Loaded& l,
                    const std::vector<std::uint64_t>& seeds, const std::vector<fs::path>& files) {
  Json m;
  m["version"] = CFMIMO_VERSION;
  m["command"] = command;
  m["preset"] = l.preset ? l.preset->name : "";
  m["config"] = to_json(l.cfg);
  m["seeds"] = seeds;
  Json names = Json::array();
  for (const auto& f : files) names.push_back(f.filename().string());
  m["files"] = names;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

int cmd_validate(const Loaded& l) {
  const auto r = validate(l.cfg);
  print_report(r);
  if (!r.ok()) return kExitInvalid;
  std::cout << "config valid\n";
  return kExitOk;
}

int cmd_run(const Loaded& l, const fs::path& out) {
  const auto& c = l.cfg;
  const auto t = run_trial(c.system, c.ga, c.solver, c.scheme, c.deployment, c.regime, c.system.rng_seed);
  const auto& r = t.schedule.result;
  std::ostringstream users;
  users << "user,weight,required_bits,bits,raw_bits,meets_qos\n";
  for (std::size_t k = 0; k < r.per_user_bits.size(); ++k) {
    const int kk = static_cast<int>(k);
    users << k << ',' << num(c.system.weight(kk)) << ',' << num(c.system.required_bits(kk)) << ','
          << num(r.per_user_bits[k]) << ',' << num(r.per_user_raw_bits[k]) << ','
          << meets_bits(r.per_user_raw_bits[k], c.system.required_bits(kk)) << '\n';
  }
  std::ostringstream sched;
  sched << "user,slot,subcarrier,scheduled\n";
  const auto& z = t.schedule.zeta;
  for (int k = 0; k < z.users(); ++k)
    for (int tt = 0; tt < z.slots(); ++tt)
      for (int f = 0; f < z.subcarriers(); ++f) sched << k << ',' << tt << ',' << f << ',' << z(k, tt, f) << '\n';
  std::vector<fs::path> files{out / "run_users.csv", out / "run_schedule.csv"};
  write_file_atomic(files[0], users.str());
  write_file_atomic(files[1], sched.str());
  write_manifest(out, "run", l, {c.system.rng_seed}, files);
  std::printf("%s %s %s seed=%llu wtp=%.9g feasible=%d qos_met=%d sca_evaluations=%d\n",
              to_string(c.deployment).c_str(), to_string(c.scheme).c_str(), to_string(c.regime).c_str(),
              static_cast<unsigned long long>(c.system.rng_seed), r.weighted_throughput, r.feasible, r.qos_met,
              t.schedule.trace.sca_evaluations);
  if (!t.diagnostic.empty()) std::cerr << "diagnostic: " << t.diagnostic << '\n';
  return kExitOk;
}

int cmd_sweep(const Loaded& l, const fs::path& out) {
  const auto& c = l.cfg;
  const auto res = run_sweep(c.sweep, c.system, c.ga, c.solver, [](const std::string& line) {
    std::cerr << line << '\n';
  });
  std::ostringstream trials, cells;
  write_trials_csv(trials, res);
  write_cells_csv(cells, res.spec, res.cells);
  std::vector<fs::path> files{out / "trials.csv", out / "cells.csv"};
  write_file_atomic(files[0], trials.str());
  write_file_atomic(files[1], cells.str());
  const std::string stem = l.preset ? l.preset->name : "sweep";
  const bool service = l.preset ? l.preset->service_rate : false;
  for (auto& f : emit_figures(res, out, stem, service)) files.push_back(f);
  write_manifest(out, "sweep", l, res.seeds, files);
  for (const auto& f : files) std::cout << f.string() << '\n';
  return kExitOk;
}

int cmd_converge(const Loaded& l, const fs::path& out) {
  const auto& c = l.cfg;
  std::vector<ConvergenceReport> reports;
  for (auto d : c.sweep.deployments)
    for (auto r : c.sweep.regimes) {
      reports.push_back(convergence_report(c.system, c.ga, c.solver, c.scheme, d, r, c.system.rng_seed));
      const auto& rep = reports.back();
      std::cerr << to_string(d) << ' ' << to_string(r) << ": sca_iterations=" << rep.sca_trace.size()
                << " converged=" << rep.sca_converged << " generations=" << rep.ga_trace.size() << '\n';
    }
  std::vector<fs::path> files;
  for (const auto& [stem, ga] : {std::pair{"sca_convergence", false}, std::pair{"ga_convergence", true}})
    for (auto& f : emit_convergence_figure(reports, out, stem, ga)) files.push_back(f);
  write_manifest(out, "converge", l, {c.system.rng_seed}, files);
  for (const auto& f : files) std::cout << f.string() << '\n';
  return kExitOk;
}

int cmd_oracle_check(const Loaded& l, const fs::path& out) {
  const auto& c = l.cfg;
  const int bits = c.system.n_users * c.system.n_slots * c.system.n_subcarriers;
  if (bits > kOracleMaxBits) {
    std::cerr << "violation: oracle-check needs n_users*n_slots*n_subcarriers <= " << kOracleMaxBits << " (got "
              << bits << ")\n";
    return kExitInvalid;
  }
  const auto ch = generate_channels(generate_topology(c.system, c.deployment), c.system);
  std::ostringstream csv;
  csv << "scheme,regime,oracle_fitness,ga_fitness,candidates,pass\n";
  for (auto scheme : c.sweep.schemes) {
    const auto oracle = exhaustive_oracle(ch, c.system, c.solver, scheme, c.regime, Evaluator::MMSE);
    const auto ga = usbda(ch, c.system, c.ga, c.solver, scheme, c.regime, Evaluator::MMSE);
    const double got = *ga.trace.best_individual.fitness;
    const double tol = 1e-9 * std::max(1.0, std::abs(oracle.fitness));
    const bool pass = std::abs(got - oracle.fitness) <= tol;
    std::printf("%s %s: oracle=%.9g ga=%.9g candidates=%d\n", pass ? "PASS" : "FAIL", to_string(scheme).c_str(),
                oracle.fitness, got, oracle.candidates);
    csv << to_string(scheme) << ',' << to_string(c.regime) << ',' << num(oracle.fitness) << ',' << num(got) << ','
        << oracle.candidates << ',' << pass << '\n';
  }
  const std::vector<fs::path> files{out / "oracle_check.csv"};
  write_file_atomic(files[0], csv.str());
  write_manifest(out, "oracle-check", l, {c.system.rng_seed}, files);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint user scheduling and beamforming for cell-free MU-MIMO downlinks", "cfmimo"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CFMIMO_VERSION);
  Options o;

  std::string preset_help = "preset:";
  for (const auto& n : preset_names()) preset_help += " " + n;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out_dir, "output directory")->capture_default_str();
    sub->add_option("--set", o.overrides, "override key=value (repeatable)")->allow_extra_args(false);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--trials", o.trials, "Monte Carlo trials per sweep cell")->check(CLI::PositiveNumber);
    sub->add_option("--preset", o.preset, preset_help)->check(CLI::IsMember(preset_names()));
    return sub;
  };
  auto* run = add_common(app.add_subcommand("run", "one two-stage trial"));
  auto* sweep = add_common(app.add_subcommand("sweep", "Monte Carlo sweep with CSV and SVG output"));
  auto* converge = add_common(app.add_subcommand("converge", "SCA and GA convergence traces"));
  auto* oracle = add_common(app.add_subcommand("oracle-check", "GA vs exhaustive search on a tiny instance"));
  auto* validate_cmd = add_common(app.add_subcommand("validate", "check a configuration"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitInvalid;
  }

  Loaded l;
  try {
    l = load(o);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitInvalid;
  }
  if (validate_cmd->parsed()) return cmd_validate(l);

  const auto report = validate(l.cfg);
  print_report(report);
  if (!report.ok()) return kExitInvalid;

  const fs::path out = o.out_dir;
  try {
    if (run->parsed()) return cmd_run(l, out);
    if (sweep->parsed()) return cmd_sweep(l, out);
    if (converge->parsed()) return cmd_converge(l, out);
    if (oracle->parsed()) return cmd_oracle_check(l, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInvalid;
}
