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
 * @file scheduling.hpp
 * @brief Genetic user scheduling over the binary K x T x F schedule, the
 * two-stage (MMSE screen, then SCA refine) driver, and an exhaustive oracle
 * for instances small enough to enumerate.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfmimo/beamforming.hpp"

namespace cfmimo {

struct Individual {
  ScheduleMatrix zeta;
  std::optional<double> fitness;
};

using Population = std::vector<Individual>;

struct GaTrace {
  std::vector<double> best_fitness_per_generation;
  Individual best_individual;
  int generations_run = 0;
  /// Index of the first stage-2 generation in a two-stage trace, else -1.
  int stage2_start = -1;
  /// Beamformer evaluations actually solved (cache hits excluded).
  int evaluations = 0;
  /// Evaluations that ran an SCA design rather than MMSE.
  int sca_evaluations = 0;
};

inline Evaluator sca_evaluator(Regime regime) {
  return regime == Regime::INFBL ? Evaluator::BF_INFBL : Evaluator::BF_FBL;
}

/// Fitness of a finished allocation: WTP when feasible, minus the total QoS
/// deficit otherwise.
inline double fitness_of(const AllocationResult& r, const SystemConfig& cfg) {
  if (r.feasible) return r.weighted_throughput;
  double deficit = 0.0;
  for (std::size_t k = 0; k < r.per_user_raw_bits.size(); ++k) {
    const double need = cfg.required_bits(static_cast<int>(k));
    if (!meets_bits(r.per_user_raw_bits[k], need)) deficit += need - r.per_user_raw_bits[k];
  }
  return -deficit;
}

struct Evaluation {
  double fitness = 0.0;
  BeamformingOutcome outcome;
};

/// Beamforms under the genome and scores it. A thrown solver error falls back
/// to the MMSE beamformer and is recorded in the diagnostic.
inline Evaluation evaluate_individual(const ScheduleMatrix& zeta, const ChannelRealization& ch,
                                      const SystemConfig& cfg, const SolverConfig& scfg, Evaluator evaluator,
                                      Regime regime) {
  Evaluation e;
  try {
    e.outcome = run_beamformer(ch, zeta, cfg, scfg, evaluator, regime);
  } catch (const std::exception& ex) {
    e.outcome = run_beamformer(ch, zeta, cfg, scfg, Evaluator::MMSE, regime);
    e.outcome.diagnostic = std::string("solver error, MMSE fallback: ") + ex.what();
  }
  e.fitness = fitness_of(e.outcome.result, cfg);
  return e;
}

inline double evaluate_fitness(const Individual& ind, const ChannelRealization& ch, const SystemConfig& cfg,
                               const SolverConfig& scfg, Evaluator evaluator, Regime regime) {
  return evaluate_individual(ind.zeta, ch, cfg, scfg, evaluator, regime).fitness;
}

namespace detail {

/// Keeps one scheduled user per RE: the one the preferred parent scheduled
/// there if it survived, else the other parent's, else the lowest index.
inline void project_single_user(ScheduleMatrix& z, const ScheduleMatrix* preferred, const ScheduleMatrix* other) {
  for (int t = 0; t < z.slots(); ++t)
    for (int f = 0; f < z.subcarriers(); ++f) {
      if (z.users_in(t, f) <= 1) continue;
      int keep = -1;
      for (const ScheduleMatrix* p : {preferred, other}) {
        if (!p || keep >= 0) continue;
        for (int k = 0; k < z.users(); ++k)
          if (z(k, t, f) && (*p)(k, t, f)) {
            keep = k;
            break;
          }
      }
      for (int k = 0; k < z.users(); ++k) {
        if (!z(k, t, f)) continue;
        if (keep < 0) keep = k;
        z.set(k, t, f, k == keep);
      }
    }
}

inline void enforce_scheme(ScheduleMatrix& z, Scheme scheme, const ScheduleMatrix* preferred = nullptr,
                           const ScheduleMatrix* other = nullptr) {
  if (scheme == Scheme::FU) z = ScheduleMatrix::all_ones(z.users(), z.slots(), z.subcarriers());
  if (scheme == Scheme::SU) project_single_user(z, preferred, other);
}

inline Individual random_individual(const SystemConfig& cfg, Scheme scheme, Rng& rng) {
  Individual ind{ScheduleMatrix(cfg.n_users, cfg.n_slots, cfg.n_subcarriers), std::nullopt};
  switch (scheme) {
    case Scheme::FU: ind.zeta = ScheduleMatrix::all_ones(cfg.n_users, cfg.n_slots, cfg.n_subcarriers); break;
    case Scheme::MU:
      for (std::size_t i = 0; i < ind.zeta.size(); ++i) ind.zeta.set_bit(i, rng.bernoulli(0.5));
      break;
    case Scheme::SU:
      // Each RE: one of K users or nobody, uniformly.
      for (int t = 0; t < cfg.n_slots; ++t)
        for (int f = 0; f < cfg.n_subcarriers; ++f) {
          const auto pick = rng.index(static_cast<std::size_t>(cfg.n_users) + 1);
          if (pick < static_cast<std::size_t>(cfg.n_users)) ind.zeta.set(static_cast<int>(pick), t, f, true);
        }
      break;
  }
  return ind;
}

inline std::size_t pick_parent(const std::vector<double>& weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

inline void crossover(ScheduleMatrix& a, ScheduleMatrix& b, bool user_rows, Rng& rng) {
  if (user_rows) {
    const int k = static_cast<int>(rng.index(static_cast<std::size_t>(a.users())));
    for (int t = 0; t < a.slots(); ++t)
      for (int f = 0; f < a.subcarriers(); ++f) {
        const bool x = a(k, t, f);
        a.set(k, t, f, b(k, t, f));
        b.set(k, t, f, x);
      }
    return;
  }
  const auto re = rng.index(static_cast<std::size_t>(a.slots()) * a.subcarriers());
  const int t = static_cast<int>(re) / a.subcarriers();
  const int f = static_cast<int>(re) % a.subcarriers();
  for (int k = 0; k < a.users(); ++k) {
    const bool x = a(k, t, f);
    a.set(k, t, f, b(k, t, f));
    b.set(k, t, f, x);
  }
}

/// One-bit mutation; with bias the bit takes the incumbent's value with
/// probability `ga.mutation_bias`, otherwise its complement.
inline void mutate(ScheduleMatrix& z, const ScheduleMatrix& best, const GaConfig& ga, Rng& rng) {
  const auto i = rng.index(z.size());
  if (!ga.biased_mutation) {
    z.set_bit(i, !z.bit(i));
    return;
  }
  const bool toward = rng.bernoulli(ga.mutation_bias);
  z.set_bit(i, toward ? best.bit(i) : !best.bit(i));
}

inline void sort_by_fitness(Population& pop) {
  std::stable_sort(pop.begin(), pop.end(), [](const Individual& a, const Individual& b) {
    return a.fitness.value_or(-std::numeric_limits<double>::infinity()) >
           b.fitness.value_or(-std::numeric_limits<double>::infinity());
  });
}

}  // namespace detail

inline Population init_population(const SystemConfig& cfg, const GaConfig& ga, Scheme scheme, std::uint64_t seed) {
  Rng rng(seed);
  Population pop;
  const int size = scheme == Scheme::FU ? 1 : ga.population_size;
  pop.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) pop.push_back(detail::random_individual(cfg, scheme, rng));
  return pop;
}

/// Next generation. Requires every fitness to be set. Elites keep their
/// fitness; offspring come back unevaluated.
inline Population evolve(Population pop, const GaConfig& ga, Scheme scheme, Rng& rng) {
  if (pop.empty()) return pop;
  for (const auto& ind : pop)
    if (!ind.fitness) throw std::invalid_argument("evolve: unevaluated individual");
  detail::sort_by_fitness(pop);
  if (scheme == Scheme::FU) return {pop.front()};

  const std::size_t size = pop.size();
  const std::size_t elites = std::min<std::size_t>(static_cast<std::size_t>(std::max(ga.elite_count, 0)), size);
  const double hi = *pop.front().fitness;
  const double lo = *pop.back().fitness;
  const double floor = hi > lo ? 0.01 * (hi - lo) : 1.0;
  std::vector<double> weights(size);
  for (std::size_t i = 0; i < size; ++i) weights[i] = *pop[i].fitness - lo + floor;
  const ScheduleMatrix& best = pop.front().zeta;

  Population next(pop.begin(), pop.begin() + static_cast<std::ptrdiff_t>(elites));
  while (next.size() < size) {
    const std::size_t ia = detail::pick_parent(weights, rng);
    const std::size_t ib = detail::pick_parent(weights, rng);
    // Sorted order: the lower index has the higher (or equal) fitness.
    const ScheduleMatrix& fitter = pop[std::min(ia, ib)].zeta;
    const ScheduleMatrix& weaker = pop[std::max(ia, ib)].zeta;
    ScheduleMatrix a = pop[ia].zeta;
    ScheduleMatrix b = pop[ib].zeta;
    const bool crossed = rng.uniform() <= ga.crossover_prob && ga.crossover_prob > 0;
    if (crossed) detail::crossover(a, b, ga.crossover_user_rows, rng);
    for (ScheduleMatrix* child : {&a, &b}) {
      if (next.size() >= size) break;
      const bool mutated = rng.uniform() <= ga.mutation_prob && ga.mutation_prob > 0;
      if (mutated) detail::mutate(*child, best, ga, rng);
      detail::enforce_scheme(*child, scheme, &fitter, &weaker);
      const bool clone = !crossed && !mutated;
      next.push_back({*child, clone ? pop[child == &a ? ia : ib].fitness : std::nullopt});
    }
  }
  return next;
}

struct ScheduleOutcome {
  ScheduleMatrix zeta;
  BeamformerSet w;
  AllocationResult result;
  GaTrace trace;
  BeamformingOutcome beamforming;
};

namespace detail {

/// Memoizes evaluations by genome; the beamformers are deterministic in
/// (channel, genome, config), so a hit is exact.
class FitnessCache {
 public:
  FitnessCache(const ChannelRealization& ch, const SystemConfig& cfg, const SolverConfig& scfg, Evaluator ev,
               Regime regime)
      : ch_(ch), cfg_(cfg), scfg_(scfg), ev_(ev), regime_(regime) {}

  const Evaluation& get(const ScheduleMatrix& z, GaTrace& trace) {
    auto it = memo_.find(z.bits());
    if (it != memo_.end()) return it->second;
    ++trace.evaluations;
    if (ev_ != Evaluator::MMSE) ++trace.sca_evaluations;
    return memo_.emplace(z.bits(), evaluate_individual(z, ch_, cfg_, scfg_, ev_, regime_)).first->second;
  }

 private:
  const ChannelRealization& ch_;
  const SystemConfig& cfg_;
  const SolverConfig& scfg_;
  Evaluator ev_;
  Regime regime_;
  std::map<std::vector<std::uint8_t>, Evaluation> memo_;
};

/// Evaluates, records, and evolves for `generations` rounds starting from
/// `pop`. Returns the best individual's evaluation.
inline Evaluation run_generations(Population pop, int generations, const GaConfig& ga, Scheme scheme,
                                  FitnessCache& cache, GaTrace& trace, std::uint64_t seed) {
  Evaluation best_eval;
  bool have = false;
  for (int g = 0; g < generations; ++g) {
    for (auto& ind : pop)
      if (!ind.fitness) ind.fitness = cache.get(ind.zeta, trace).fitness;
    sort_by_fitness(pop);
    if (!have || *pop.front().fitness > *trace.best_individual.fitness) {
      trace.best_individual = pop.front();
      best_eval = cache.get(pop.front().zeta, trace);
      have = true;
    }
    trace.best_fitness_per_generation.push_back(*trace.best_individual.fitness);
    ++trace.generations_run;
    if (g + 1 < generations) {
      Rng rng(derive_seed(seed, Stream::Genetic, static_cast<std::uint64_t>(g) + 1));
      pop = evolve(std::move(pop), ga, scheme, rng);
    }
  }
  return best_eval;
}

inline ScheduleOutcome finish(Evaluation best, GaTrace trace) {
  ScheduleOutcome out;
  out.zeta = trace.best_individual.zeta;
  out.w = best.outcome.w;
  out.result = best.outcome.result;
  out.beamforming = std::move(best.outcome);
  out.trace = std::move(trace);
  return out;
}

inline std::uint64_t ga_seed(const SystemConfig& cfg, std::uint64_t stage) {
  return derive_seed(cfg.rng_seed, Stream::Genetic, stage << 32);
}

}  // namespace detail

/// Genetic scheduling with beamforming inside the fitness. FU has a single
/// genome and costs one beamformer evaluation.
inline ScheduleOutcome usbda(const ChannelRealization& ch, const SystemConfig& cfg, const GaConfig& ga,
                             const SolverConfig& scfg, Scheme scheme, Regime regime,
                             std::optional<Evaluator> evaluator = std::nullopt) {
  const Evaluator ev = evaluator.value_or(sca_evaluator(regime));
  detail::FitnessCache cache(ch, cfg, scfg, ev, regime);
  GaTrace trace;
  const std::uint64_t seed = detail::ga_seed(cfg, 1);
  auto best = detail::run_generations(init_population(cfg, ga, scheme, seed), ga.max_generations, ga, scheme, cache,
                                      trace, seed);
  return detail::finish(std::move(best), std::move(trace));
}

/// Stage 1 screens schedules with the MMSE beamformer; stage 2 reruns the GA
/// with the SCA design from the stage-1 best and mutated copies of it.
inline ScheduleOutcome two_stage(const ChannelRealization& ch, const SystemConfig& cfg, const GaConfig& ga,
                                 const SolverConfig& scfg, Scheme scheme, Regime regime) {
  const ScheduleOutcome stage1 = usbda(ch, cfg, ga, scfg, scheme, regime, Evaluator::MMSE);

  detail::FitnessCache cache(ch, cfg, scfg, sca_evaluator(regime), regime);
  GaTrace trace = stage1.trace;
  trace.stage2_start = trace.generations_run;
  trace.best_individual = {};
  const std::uint64_t seed = detail::ga_seed(cfg, 2);

  Population pop{Individual{stage1.zeta, std::nullopt}};
  if (scheme != Scheme::FU) {
    Rng rng(seed);
    GaConfig flip = ga;
    flip.biased_mutation = false;
    const int size = ga.stage2_population > 0 ? ga.stage2_population : ga.population_size;
    while (static_cast<int>(pop.size()) < size) {
      Individual copy{stage1.zeta, std::nullopt};
      detail::mutate(copy.zeta, stage1.zeta, flip, rng);
      detail::enforce_scheme(copy.zeta, scheme, &stage1.zeta);
      pop.push_back(std::move(copy));
    }
  }
  // Stage-2 accounting starts from zero so the SCA budget is visible on its own.
  const int stage1_evals = trace.evaluations;
  trace.evaluations = 0;
  trace.sca_evaluations = 0;
  auto best = detail::run_generations(std::move(pop), ga.stage2_generations, ga, scheme, cache, trace, seed);
  trace.evaluations += stage1_evals;
  return detail::finish(std::move(best), std::move(trace));
}

inline constexpr int kOracleMaxBits = 16;

struct OracleResult {
  ScheduleMatrix zeta;
  double fitness = 0.0;
  int candidates = 0;
};

/// Exhaustive search over every scheme-valid genome. Ties go to the
/// lexicographically smallest genome (flat bit order, bit 0 most significant).
inline OracleResult exhaustive_oracle(const ChannelRealization& ch, const SystemConfig& cfg, const SolverConfig& scfg,
                                      Scheme scheme, Regime regime, Evaluator evaluator) {
  const int bits = cfg.n_users * cfg.n_slots * cfg.n_subcarriers;
  if (bits > kOracleMaxBits)
    throw std::invalid_argument("exhaustive_oracle: K*T*F = " + std::to_string(bits) + " exceeds " +
                                std::to_string(kOracleMaxBits));
  OracleResult best;
  bool have = false;
  ScheduleMatrix z(cfg.n_users, cfg.n_slots, cfg.n_subcarriers);
  for (std::uint32_t code = 0; code < (1u << bits); ++code) {
    for (int i = 0; i < bits; ++i) z.set_bit(static_cast<std::size_t>(i), (code >> (bits - 1 - i)) & 1u);
    if (!z.respects(scheme)) continue;
    ++best.candidates;
    const double fit = evaluate_individual(z, ch, cfg, scfg, evaluator, regime).fitness;
    if (!have || fit > best.fitness) {
      best.zeta = z;
      best.fitness = fit;
      have = true;
    }
  }
  return best;
}

}  // namespace cfmimo
