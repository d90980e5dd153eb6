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


#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cfmimo/config_io.hpp"
#include "cfmimo/experiments.hpp"

namespace cfmimo {
namespace {

SystemConfig tiny_system() {
  SystemConfig cfg;
  cfg.n_aps = 2;
  cfg.antennas_per_ap = 2;
  cfg.n_users = 3;
  cfg.n_slots = 2;
  cfg.n_subcarriers = 1;
  return cfg;
}

GaConfig cheap_ga() {
  GaConfig ga;
  ga.population_size = 4;
  ga.elite_count = 1;
  ga.max_generations = 3;
  ga.stage2_generations = 2;
  ga.stage2_population = 3;
  return ga;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

TEST(AxisPoint, EachAxisMovesOneField) {
  const SystemConfig base = tiny_system();
  EXPECT_EQ(at_axis_point(base, SweepAxis::MaxLatencyT, 6).n_slots, 6);
  EXPECT_EQ(at_axis_point(base, SweepAxis::SubcarriersF, 4).n_subcarriers, 4);
  EXPECT_EQ(at_axis_point(base, SweepAxis::UsersK, 7).n_users, 7);
  EXPECT_EQ(at_axis_point(base, SweepAxis::ApsN, 5).n_aps, 5);
  EXPECT_EQ(at_axis_point(base, SweepAxis::BlerEps, 1e-7).bler, 1e-7);
  for (int n : {1, 2, 4}) {
    const auto c = at_axis_point(base, SweepAxis::Antennas, n);
    EXPECT_EQ(c.n_aps, n);
    EXPECT_EQ(c.total_antennas(), base.total_antennas());
  }
}

TEST(AxisPoint, SweepValidation) {
  SweepSpec s;
  s.axis = SweepAxis::Antennas;
  s.values = {3};
  EXPECT_FALSE(validate_sweep(s, tiny_system()).ok());
  s.axis = SweepAxis::BlerEps;
  s.values = {0.7};
  EXPECT_FALSE(validate_sweep(s, tiny_system()).ok());
  s.axis = SweepAxis::UsersK;
  s.values = {2.5};
  EXPECT_FALSE(validate_sweep(s, tiny_system()).ok());
  s.values = {2};
  s.n_trials = 0;
  EXPECT_FALSE(validate_sweep(s, tiny_system()).ok());
  s.n_trials = 1;
  EXPECT_TRUE(validate_sweep(s, tiny_system()).ok());
}

TEST(Stats, MeanAndStandardError) {
  const auto m = mean_se({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  // sample sd sqrt(5/3), divided by sqrt(4)
  EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(mean_se({7}).se, 0.0);
  EXPECT_EQ(mean_se({}).mean, 0.0);
}

TEST(RunTrial, DeterministicPerSeed) {
  const auto a = run_trial(tiny_system(), cheap_ga(), SolverConfig{}, Scheme::MU, Deployment::CellFree,
                           Regime::FBL, 99);
  const auto b = run_trial(tiny_system(), cheap_ga(), SolverConfig{}, Scheme::MU, Deployment::CellFree,
                           Regime::FBL, 99);
  EXPECT_EQ(a.schedule.zeta, b.schedule.zeta);
  EXPECT_EQ(a.schedule.result.per_user_raw_bits, b.schedule.result.per_user_raw_bits);
  EXPECT_EQ(a.schedule.result.weighted_throughput, b.schedule.result.weighted_throughput);
  EXPECT_EQ(a.schedule.trace.best_fitness_per_generation, b.schedule.trace.best_fitness_per_generation);
}

TEST(RunTrial, ShannonBoundsReturnedFblAllocation) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (auto d : {Deployment::CellFree, Deployment::CentralizedAntenna}) {
      auto cfg = tiny_system();
      const auto t = run_trial(cfg, cheap_ga(), SolverConfig{}, Scheme::MU, d, Regime::FBL, seed);
      cfg.rng_seed = seed;
      const auto ch = generate_channels(generate_topology(cfg, d), cfg);
      const auto inf = weighted_throughput(ch, t.schedule.w, t.schedule.zeta, cfg, Regime::INFBL);
      const auto fbl = weighted_throughput(ch, t.schedule.w, t.schedule.zeta, cfg, Regime::FBL);
      EXPECT_EQ(fbl.weighted_throughput, t.schedule.result.weighted_throughput);
      EXPECT_GE(inf.weighted_throughput, fbl.weighted_throughput);
    }
  }
}

TEST(RunSweep, SingleUserOverloadHasZeroServiceAndThroughput) {
  auto cfg = tiny_system();
  cfg.n_users = 4;
  cfg.n_slots = 1;
  cfg.n_subcarriers = 2;
  cfg.min_bits = {1.0};
  SweepSpec spec;
  spec.values = {1};
  spec.schemes = {Scheme::SU};
  spec.regimes = {Regime::INFBL, Regime::FBL};
  spec.n_trials = 3;
  const auto res = run_sweep(spec, cfg, cheap_ga(), SolverConfig{});
  ASSERT_EQ(res.cells.size(), 4u);
  for (const auto& c : res.cells) {
    EXPECT_EQ(c.wtp.mean, 0.0);
    EXPECT_EQ(c.service.mean, 0.0);
    EXPECT_EQ(c.trials, 3);
  }
}

TEST(RunSweep, CsvShapeAndFormat) {
  SweepSpec spec;
  spec.axis = SweepAxis::MaxLatencyT;
  spec.values = {1, 2};
  spec.schemes = {Scheme::FU, Scheme::MU};
  spec.deployments = {Deployment::CellFree};
  spec.regimes = {Regime::INFBL};
  spec.n_trials = 2;
  std::vector<std::string> log;
  const auto res = run_sweep(spec, tiny_system(), cheap_ga(), SolverConfig{},
                             [&](const std::string& l) { log.push_back(l); });
  EXPECT_EQ(log.size(), 4u);
  std::ostringstream trials, cells;
  write_trials_csv(trials, res);
  write_cells_csv(cells, spec, res.cells);
  const auto tl = lines(trials.str());
  const auto cl = lines(cells.str());
  ASSERT_EQ(tl.size(), 1u + 2 * 2 * 2);
  ASSERT_EQ(cl.size(), 1u + 2 * 2);
  EXPECT_EQ(tl[0].rfind("axis,value,scheme,deployment,regime,trial,seed,wtp", 0), 0u);
  EXPECT_EQ(trials.str().find('\r'), std::string::npos);
  for (const auto& c : res.cells) {
    EXPECT_GE(c.wtp.mean, 0.0);
    EXPECT_GE(c.service.mean, 0.0);
    EXPECT_LE(c.service.mean, 1.0);
  }
  EXPECT_EQ(num(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(num(1e-9), "1e-09");
}

TEST(Convergence, TracesAreNondecreasing) {
  for (auto regime : {Regime::INFBL, Regime::FBL}) {
    auto cfg = tiny_system();
    cfg.min_bits = {0.0};
    const auto r = convergence_report(cfg, cheap_ga(), SolverConfig{}, Scheme::MU, Deployment::CellFree, regime, 4);
    ASSERT_FALSE(r.ga_trace.empty());
    EXPECT_EQ(r.stage2_start, cheap_ga().max_generations);
    for (std::size_t i = 1; i < r.ga_trace.size(); ++i) EXPECT_GE(r.ga_trace[i], r.ga_trace[i - 1]);
    for (std::size_t i = 1; i < r.sca_trace.size(); ++i)
      EXPECT_GE(r.sca_trace[i], r.sca_trace[i - 1] - 1e-6 * std::abs(r.sca_trace[i - 1]));
  }
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("cfmimo_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  static std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }
  std::filesystem::path dir_;
};

using Figures = TempDir;

TEST_F(Figures, EmptySweepWritesNothing) {
  SweepResult empty;
  EXPECT_TRUE(emit_figures(empty, dir_, "fig5").empty());
  EXPECT_FALSE(std::filesystem::exists(dir_));
}

TEST_F(Figures, SvgHasSiblingCsvWithCellData) {
  SweepResult res;
  res.spec.axis = SweepAxis::MaxLatencyT;
  res.spec.values = {2, 4};
  for (double v : {2.0, 4.0})
    for (int i = 0; i < 3; ++i) {
      TrialRecord r;
      r.value = v;
      r.trial = i;
      r.feasible = i > 0;
      r.wtp = r.feasible ? v * 10 + i : 0.0;
      res.records.push_back(r);
    }
  res.cells = aggregate(res.records);
  const auto files = emit_figures(res, dir_, "fig5", true);
  ASSERT_EQ(files.size(), 4u);
  std::ostringstream cells;
  write_cells_csv(cells, res.spec, res.cells);
  for (const auto& f : files) {
    ASSERT_TRUE(std::filesystem::exists(f)) << f;
    if (f.extension() == ".csv") {
      EXPECT_EQ(slurp(f), cells.str());
    }
    if (f.extension() == ".svg") {
      const auto svg = slurp(f);
      EXPECT_NE(svg.find("<svg"), std::string::npos);
      EXPECT_NE(svg.find("<path d=\"M"), std::string::npos);  // error bars
      EXPECT_TRUE(std::filesystem::exists(f.parent_path() / (f.stem().string() + ".csv")));
    }
  }
  for (const auto& e : std::filesystem::directory_iterator(dir_)) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST_F(Figures, AtomicWriteReplacesContent) {
  const auto p = dir_ / "a" / "b.txt";
  write_file_atomic(p, "one\n");
  write_file_atomic(p, "two\n");
  EXPECT_EQ(slurp(p), "two\n");
  EXPECT_FALSE(std::filesystem::exists(dir_ / "a" / "b.txt.tmp"));
}

TEST(Presets, AllValidAndShaped) {
  for (const auto& name : preset_names()) {
    const auto p = make_preset(name);
    const auto r = validate(from_preset(p));
    EXPECT_TRUE(r.ok()) << name << ": " << (r.violations.empty() ? "" : r.violations.front());
  }
  EXPECT_EQ(make_preset("fig5").sweep.values, (std::vector<double>{2, 4, 6, 8, 10}));
  EXPECT_EQ(make_preset("fig5").sweep.axis, SweepAxis::MaxLatencyT);
  const auto t1 = make_preset("table1-defaults");
  EXPECT_EQ(t1.system.n_aps, 8);
  EXPECT_EQ(t1.system.n_users, 16);
  EXPECT_EQ(t1.system.n_slots, 6);
  EXPECT_EQ(t1.system.n_subcarriers, 3);
  const auto ci = make_preset("ci-small");
  EXPECT_EQ(ci.system.n_aps, 4);
  EXPECT_EQ(ci.system.n_users, 4);
  EXPECT_EQ(ci.sweep.n_trials, 50);
  EXPECT_THROW(make_preset("fig10"), std::invalid_argument);
}

TEST(ConfigIo, RoundTrip) {
  ExperimentConfig c = from_preset(make_preset("fig7"));
  c.system.quantization_noise_power = 0.125;
  c.system.min_bits = {1, 2};
  c.regime = Regime::INFBL;
  const Json j = to_json(c);
  const auto back = from_json_over(ExperimentConfig{}, j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
}

TEST(ConfigIo, UnknownKeysAreErrors) {
  EXPECT_THROW(from_json_over({}, Json::parse(R"({"system":{"n_user":3}})")), ConfigError);
  EXPECT_THROW(from_json_over({}, Json::parse(R"({"extra":{}})")), ConfigError);
  EXPECT_THROW(from_json_over({}, Json::parse(R"({"system":3})")), ConfigError);
  EXPECT_THROW(from_json_over({}, Json::parse(R"({"system":{"n_users":"x"}})")), ConfigError);
  EXPECT_THROW(from_json_over({}, Json::parse(R"({"trial":{"scheme":"XU"}})")), ConfigError);
}

TEST(ConfigIo, PartialFileOverlaysBase) {
  const auto c = from_json_over({}, Json::parse(R"({"system":{"n_users":5,"bler":0.001},"ga":{"elite_count":3}})"));
  EXPECT_EQ(c.system.n_users, 5);
  EXPECT_EQ(c.system.bler, 0.001);
  EXPECT_EQ(c.ga.elite_count, 3);
  EXPECT_EQ(c.system.n_aps, SystemConfig{}.n_aps);
}

TEST(ConfigIo, Overrides) {
  ExperimentConfig c;
  c = apply_override(c, "n_users=6");
  c = apply_override(c, "ga.mutation_prob=0.5");
  c = apply_override(c, "sweep.values=[1,2,3]");
  c = apply_override(c, "trial.scheme=SU");
  c = apply_override(c, "quantization_noise_power=0.01");
  EXPECT_EQ(c.system.n_users, 6);
  EXPECT_EQ(c.ga.mutation_prob, 0.5);
  EXPECT_EQ(c.sweep.values, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(c.scheme, Scheme::SU);
  EXPECT_EQ(c.system.quantization_noise_power, 0.01);
  EXPECT_THROW(apply_override(c, "nope=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "n_users"), ConfigError);
  EXPECT_THROW(apply_override(c, "system.n_users=abc"), ConfigError);
}

TEST(ConfigIo, ValidationCollectsAllSections) {
  ExperimentConfig c;
  c.system.bler = 0;
  c.ga.elite_count = 100;
  c.solver.convergence_tol = 0;
  c.sweep.n_trials = 0;
  EXPECT_EQ(validate(c).violations.size(), 4u);
}

}  // namespace
}  // namespace cfmimo
