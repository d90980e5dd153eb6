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

#include <cmath>
#include <set>

#include "cfmimo/scheduling.hpp"

namespace cfmimo {
namespace {

SystemConfig small_config(int aps, int ants, int users, int slots, int subs, std::uint64_t seed) {
  SystemConfig cfg;
  cfg.n_aps = aps;
  cfg.antennas_per_ap = ants;
  cfg.n_users = users;
  cfg.n_slots = slots;
  cfg.n_subcarriers = subs;
  cfg.rng_seed = seed;
  return cfg;
}

ChannelRealization channels_for(const SystemConfig& cfg, Deployment d = Deployment::CellFree) {
  return generate_channels(generate_topology(cfg, d), cfg);
}

void expect_nondecreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_GE(v[i], v[i - 1]) << "generation " << i;
}

TEST(InitPopulation, FullUseIsOneAllOnesGenome) {
  const auto cfg = small_config(2, 2, 4, 3, 2, 1);
  const auto pop = init_population(cfg, GaConfig{}, Scheme::FU, 5);
  ASSERT_EQ(pop.size(), 1u);
  EXPECT_TRUE(pop[0].zeta.is_full());
}

TEST(InitPopulation, SingleUserColumnsHoldAtMostOne) {
  const auto cfg = small_config(2, 2, 5, 3, 4, 1);
  GaConfig ga;
  ga.population_size = 50;
  for (const auto& ind : init_population(cfg, ga, Scheme::SU, 11)) EXPECT_TRUE(ind.zeta.is_single_user());
}

TEST(InitPopulation, MultiUserBitsAreFairCoins) {
  const auto cfg = small_config(1, 1, 10, 10, 10, 1);
  GaConfig ga;
  ga.population_size = 10;
  std::size_t ones = 0, total = 0;
  for (const auto& ind : init_population(cfg, ga, Scheme::MU, 3)) {
    for (auto b : ind.zeta.bits()) ones += b;
    total += ind.zeta.size();
  }
  ASSERT_EQ(total, 10000u);
  EXPECT_NEAR(static_cast<double>(ones) / total, 0.5, 0.02);
}

TEST(Fitness, EmptyGenomePaysTotalRequirement) {
  auto cfg = small_config(2, 2, 3, 2, 1, 4);
  cfg.min_bits = {1.0, 2.0, 0.5};
  const auto ch = channels_for(cfg);
  const Individual empty{ScheduleMatrix(3, 2, 1), std::nullopt};
  for (auto ev : {Evaluator::MMSE, Evaluator::BF_INFBL, Evaluator::BF_FBL}) {
    const Regime regime = ev == Evaluator::BF_FBL ? Regime::FBL : Regime::INFBL;
    EXPECT_NEAR(evaluate_fitness(empty, ch, cfg, SolverConfig{}, ev, regime), -3.5, 1e-12) << to_string(ev);
  }
}

TEST(Fitness, SingleUserSingleReIsMatchedFilter) {
  auto cfg = small_config(2, 2, 1, 1, 1, 9);
  const auto ch = channels_for(cfg);
  const double pt = derive_power_budget(cfg);
  const double oracle = std::log2(1.0 + pt * ch.h(0, 0, 0).squaredNorm() / ch.combined_noise(0, 0, 0));
  const Individual one{ScheduleMatrix::all_ones(1, 1, 1), std::nullopt};
  const double fit = evaluate_fitness(one, ch, cfg, SolverConfig{}, Evaluator::BF_INFBL, Regime::INFBL);
  EXPECT_NEAR(fit, oracle, 1e-6 * oracle);
}

TEST(Fitness, FeasibleGenomeScoresItsThroughput) {
  auto cfg = small_config(2, 2, 3, 2, 2, 6);
  cfg.min_bits = {0.0};
  const auto ch = channels_for(cfg);
  const auto zeta = ScheduleMatrix::all_ones(3, 2, 2);
  const auto e = evaluate_individual(zeta, ch, cfg, SolverConfig{}, Evaluator::BF_INFBL, Regime::INFBL);
  ASSERT_TRUE(e.outcome.result.feasible);
  const auto recomputed = weighted_throughput(ch, e.outcome.w, zeta, cfg, Regime::INFBL);
  EXPECT_EQ(e.fitness, recomputed.weighted_throughput);
}

Population scored(const SystemConfig& cfg, const GaConfig& ga, Scheme scheme, std::uint64_t seed) {
  auto pop = init_population(cfg, ga, scheme, seed);
  Rng rng(seed + 1);
  for (auto& ind : pop) ind.fitness = rng.uniform() * 10.0 - 5.0;
  return pop;
}

TEST(Evolve, NoVariationClonesParents) {
  const auto cfg = small_config(1, 1, 4, 3, 2, 1);
  GaConfig ga;
  ga.population_size = 12;
  ga.elite_count = 3;
  ga.crossover_prob = 0.0;
  ga.mutation_prob = 0.0;
  auto pop = scored(cfg, ga, Scheme::MU, 21);
  std::set<std::vector<std::uint8_t>> parents;
  for (const auto& ind : pop) parents.insert(ind.zeta.bits());
  auto sorted = pop;
  detail::sort_by_fitness(sorted);

  Rng rng(2);
  const auto next = evolve(pop, ga, Scheme::MU, rng);
  ASSERT_EQ(next.size(), pop.size());
  for (int i = 0; i < ga.elite_count; ++i) {
    EXPECT_EQ(next[i].zeta, sorted[i].zeta);
    EXPECT_EQ(next[i].fitness, sorted[i].fitness);
  }
  for (const auto& ind : next) {
    EXPECT_TRUE(parents.count(ind.zeta.bits()));
    EXPECT_TRUE(ind.fitness.has_value());
  }
}

TEST(Evolve, SingleUserProjectionSurvivesVariation) {
  const auto cfg = small_config(1, 1, 4, 2, 2, 1);
  GaConfig ga;
  ga.population_size = 20;
  ga.crossover_prob = 1.0;
  ga.mutation_prob = 1.0;
  for (bool rows : {false, true}) {
    ga.crossover_user_rows = rows;
    auto pop = scored(cfg, ga, Scheme::SU, 8);
    Rng rng(3);
    for (int g = 0; g < 30; ++g) {
      pop = evolve(pop, ga, Scheme::SU, rng);
      for (auto& ind : pop) {
        ASSERT_TRUE(ind.zeta.is_single_user());
        if (!ind.fitness) ind.fitness = rng.uniform();
      }
    }
  }
}

TEST(Evolve, FullUseStaysSingleAllOnes) {
  const auto cfg = small_config(1, 1, 3, 2, 2, 1);
  auto pop = scored(cfg, GaConfig{}, Scheme::FU, 4);
  Rng rng(1);
  const auto next = evolve(pop, GaConfig{}, Scheme::FU, rng);
  ASSERT_EQ(next.size(), 1u);
  EXPECT_TRUE(next[0].zeta.is_full());
}

TEST(Evolve, BiasedMutationFollowsIncumbent) {
  ScheduleMatrix best = ScheduleMatrix::all_ones(4, 4, 4);
  GaConfig ga;
  ga.mutation_bias = 0.75;
  Rng rng(17);
  int toward = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    ScheduleMatrix z(4, 4, 4);
    detail::mutate(z, best, ga, rng);
    toward += z.any();
  }
  EXPECT_NEAR(toward / static_cast<double>(n), 0.75, 0.015);
}

TEST(Usbda, FullUseIsOneBeamformingRun) {
  const auto cfg = small_config(2, 2, 3, 2, 1, 3);
  const auto ch = channels_for(cfg);
  GaConfig ga;
  ga.max_generations = 5;
  const auto out = usbda(ch, cfg, ga, SolverConfig{}, Scheme::FU, Regime::INFBL);
  EXPECT_EQ(out.trace.evaluations, 1);
  EXPECT_TRUE(out.zeta.is_full());
  EXPECT_EQ(out.trace.generations_run, 5);
}

TEST(Usbda, MmseSearchMatchesExhaustiveOracle) {
  int matched = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = small_config(2, 2, 2, 1, 2, seed);
    cfg.min_bits = {0.0};
    const auto ch = channels_for(cfg);
    const auto oracle = exhaustive_oracle(ch, cfg, SolverConfig{}, Scheme::MU, Regime::INFBL, Evaluator::MMSE);
    EXPECT_EQ(oracle.candidates, 16);
    const auto ga = usbda(ch, cfg, GaConfig{}, SolverConfig{}, Scheme::MU, Regime::INFBL, Evaluator::MMSE);
    EXPECT_LE(*ga.trace.best_individual.fitness, oracle.fitness + 1e-12);
    matched += std::abs(*ga.trace.best_individual.fitness - oracle.fitness) <= 1e-12;
  }
  EXPECT_EQ(matched, 5);
}

TEST(Usbda, MoreGenerationsNeverHurtAndTraceIsElitist) {
  auto cfg = small_config(2, 2, 4, 2, 2, 12);
  const auto ch = channels_for(cfg);
  GaConfig ga;
  ga.max_generations = 1;
  const auto one = usbda(ch, cfg, ga, SolverConfig{}, Scheme::MU, Regime::INFBL, Evaluator::MMSE);
  ga.max_generations = 20;
  const auto twenty = usbda(ch, cfg, ga, SolverConfig{}, Scheme::MU, Regime::INFBL, Evaluator::MMSE);
  EXPECT_GE(*twenty.trace.best_individual.fitness, *one.trace.best_individual.fitness);
  EXPECT_EQ(twenty.trace.best_fitness_per_generation.front(), one.trace.best_fitness_per_generation.front());
  expect_nondecreasing(twenty.trace.best_fitness_per_generation);
  EXPECT_EQ(twenty.trace.generations_run, 20);
}

TEST(Usbda, Reproducible) {
  auto cfg = small_config(2, 2, 4, 2, 2, 13);
  const auto ch = channels_for(cfg);
  GaConfig ga;
  ga.max_generations = 8;
  const auto a = usbda(ch, cfg, ga, SolverConfig{}, Scheme::SU, Regime::FBL, Evaluator::MMSE);
  const auto b = usbda(ch, cfg, ga, SolverConfig{}, Scheme::SU, Regime::FBL, Evaluator::MMSE);
  EXPECT_EQ(a.trace.best_fitness_per_generation, b.trace.best_fitness_per_generation);
  EXPECT_EQ(a.zeta, b.zeta);
}

TEST(Usbda, SingleUserOverloadIsPenalized) {
  auto cfg = small_config(2, 2, 5, 2, 2, 14);
  cfg.min_bits = {1.0};
  const auto ch = channels_for(cfg);
  GaConfig ga;
  ga.max_generations = 10;
  const auto out = usbda(ch, cfg, ga, SolverConfig{}, Scheme::SU, Regime::INFBL, Evaluator::MMSE);
  EXPECT_LT(*out.trace.best_individual.fitness, 0.0);
  EXPECT_FALSE(out.result.feasible);
}

TEST(TwoStage, RefinesStageOneBestWithinBudget) {
  auto cfg = small_config(2, 2, 3, 2, 1, 5);
  cfg.min_bits = {0.0};
  const auto ch = channels_for(cfg);
  GaConfig ga;
  ga.population_size = 6;
  ga.elite_count = 1;
  ga.max_generations = 6;
  ga.stage2_generations = 3;
  const SolverConfig scfg;
  const auto out = two_stage(ch, cfg, ga, scfg, Scheme::MU, Regime::INFBL);
  const auto stage1 = usbda(ch, cfg, ga, scfg, Scheme::MU, Regime::INFBL, Evaluator::MMSE);
  const double refined = evaluate_fitness(Individual{stage1.zeta, std::nullopt}, ch, cfg, scfg,
                                          Evaluator::BF_INFBL, Regime::INFBL);
  EXPECT_GE(*out.trace.best_individual.fitness, refined - 1e-12);
  EXPECT_LE(out.trace.sca_evaluations, ga.population_size * ga.stage2_generations);
  EXPECT_EQ(out.trace.stage2_start, ga.max_generations);
  EXPECT_EQ(out.trace.generations_run, ga.max_generations + ga.stage2_generations);
  expect_nondecreasing(out.trace.best_fitness_per_generation);
  EXPECT_EQ(out.result.weighted_throughput,
            weighted_throughput(ch, out.w, out.zeta, cfg, Regime::INFBL).weighted_throughput);
}

TEST(Oracle, SingleResourceSchedulesTheUser) {
  auto cfg = small_config(2, 2, 1, 1, 1, 2);
  cfg.min_bits = {0.0};
  const auto ch = channels_for(cfg);
  const auto r = exhaustive_oracle(ch, cfg, SolverConfig{}, Scheme::MU, Regime::INFBL, Evaluator::MMSE);
  EXPECT_EQ(r.candidates, 2);
  EXPECT_TRUE(r.zeta.is_full());
  EXPECT_GT(r.fitness, 0.0);
}

TEST(Oracle, FullUseHasOneCandidateAndBoundIsEnforced) {
  auto cfg = small_config(2, 2, 2, 2, 2, 2);
  const auto ch = channels_for(cfg);
  EXPECT_EQ(exhaustive_oracle(ch, cfg, SolverConfig{}, Scheme::FU, Regime::INFBL, Evaluator::MMSE).candidates, 1);
  auto big = small_config(2, 2, 3, 3, 2, 2);
  const auto ch_big = channels_for(big);
  EXPECT_THROW(exhaustive_oracle(ch_big, big, SolverConfig{}, Scheme::MU, Regime::INFBL, Evaluator::MMSE),
               std::invalid_argument);
}

TEST(Oracle, MultiUserDominatesRestrictedSchemes) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto cfg = small_config(2, 2, 2, 2, 1, seed);
    cfg.min_bits = {seed % 2 ? 0.0 : 1.0};
    for (auto deployment : {Deployment::CellFree, Deployment::CentralizedAntenna}) {
      const auto ch = channels_for(cfg, deployment);
      for (auto regime : {Regime::INFBL, Regime::FBL}) {
        auto best = [&](Scheme s) {
          return exhaustive_oracle(ch, cfg, SolverConfig{}, s, regime, Evaluator::MMSE).fitness;
        };
        const double mu = best(Scheme::MU);
        EXPECT_GE(mu, best(Scheme::SU));
        EXPECT_GE(mu, best(Scheme::FU));
      }
    }
  }
}

}  // namespace
}  // namespace cfmimo
