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

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cfmimo {

using cplx = std::complex<double>;

enum class Deployment { CellFree, CentralizedAntenna };
enum class Scheme { SU, FU, MU };
enum class Regime { INFBL, FBL };
enum class Evaluator { MMSE, BF_INFBL, BF_FBL };

inline std::string to_string(Deployment d) { return d == Deployment::CellFree ? "CF" : "CAS"; }
inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::SU: return "SU";
    case Scheme::FU: return "FU";
    case Scheme::MU: return "MU";
  }
  return "?";
}
inline std::string to_string(Regime r) { return r == Regime::INFBL ? "INFBL" : "FBL"; }
inline std::string to_string(Evaluator e) {
  switch (e) {
    case Evaluator::MMSE: return "MMSE";
    case Evaluator::BF_INFBL: return "BF_INFBL";
    case Evaluator::BF_FBL: return "BF_FBL";
  }
  return "?";
}

inline Deployment parse_deployment(std::string_view s) {
  if (s == "CF" || s == "CellFree" || s == "cell_free") return Deployment::CellFree;
  if (s == "CAS" || s == "CentralizedAntenna" || s == "centralized_antenna") return Deployment::CentralizedAntenna;
  throw std::invalid_argument("unknown deployment '" + std::string(s) + "'");
}
inline Scheme parse_scheme(std::string_view s) {
  if (s == "SU") return Scheme::SU;
  if (s == "FU") return Scheme::FU;
  if (s == "MU") return Scheme::MU;
  throw std::invalid_argument("unknown scheme '" + std::string(s) + "'");
}
inline Regime parse_regime(std::string_view s) {
  if (s == "INFBL") return Regime::INFBL;
  if (s == "FBL") return Regime::FBL;
  throw std::invalid_argument("unknown regime '" + std::string(s) + "'");
}

/// Full description of one deployment + radio grid. Per-user vectors may be
/// empty (default value for every user), hold one entry (broadcast), or hold
/// exactly n_users entries.
struct SystemConfig {
  int n_aps = 8;
  int antennas_per_ap = 2;
  int n_users = 16;
  int n_slots = 6;
  int n_subcarriers = 3;
  double cell_radius_m = 500.0;
  double reference_distance_m = 100.0;
  double path_loss_exponent = 3.0;
  double snr_db = 40.0;
  double noise_power = 1.0;
  /// Unset means 30 dB below p_t / (K * F).
  std::optional<double> quantization_noise_power;
  double bler = 1e-5;
  std::vector<double> min_bits;
  std::vector<double> weights;
  double min_sinr_floor = 0.0;
  std::uint64_t rng_seed = 1;

  int total_antennas() const { return n_aps * antennas_per_ap; }
  int resource_elements() const { return n_slots * n_subcarriers; }

  double required_bits(int k) const { return per_user(min_bits, k, 1.0); }
  double weight(int k) const { return per_user(weights, k, 1.0); }

 private:
  static double per_user(const std::vector<double>& v, int k, double fallback) {
    if (v.empty()) return fallback;
    if (v.size() == 1) return v.front();
    return v.at(static_cast<std::size_t>(k));
  }
};

struct GaConfig {
  int population_size = 16;
  int elite_count = 2;
  double crossover_prob = 0.8;
  double mutation_prob = 0.9;
  int max_generations = 30;
  int stage2_generations = 10;
  /// Stage-2 population of the two-stage driver; 0 means population_size.
  int stage2_population = 0;
  /// Probability that a mutated bit takes the incumbent best's value.
  double mutation_bias = 0.75;
  bool biased_mutation = true;
  /// false: exchange one resource element's user vector; true: one user's row.
  bool crossover_user_rows = false;
};

struct SolverConfig {
  int max_sca_iters = 20;
  double convergence_tol = 1e-4;
  double rank1_ratio_threshold = 0.95;
  int randomization_trials = 16;
};

struct ValidationReport {
  std::vector<std::string> violations;
  std::vector<std::string> warnings;
  bool ok() const { return violations.empty(); }
};

inline ValidationReport validate_config(const SystemConfig& cfg) {
  ValidationReport r;
  auto need = [&r](bool cond, const char* msg) {
    if (!cond) r.violations.emplace_back(msg);
  };
  need(cfg.n_aps >= 1, "n_aps must be >= 1");
  need(cfg.antennas_per_ap >= 1, "antennas_per_ap must be >= 1");
  need(cfg.n_users >= 1, "n_users must be >= 1");
  need(cfg.n_slots >= 1, "n_slots must be >= 1");
  need(cfg.n_subcarriers >= 1, "n_subcarriers must be >= 1");
  need(cfg.cell_radius_m > 0, "cell_radius_m must be positive");
  need(cfg.reference_distance_m > 0, "reference_distance_m must be positive");
  need(cfg.path_loss_exponent > 0, "path_loss_exponent must be positive");
  need(std::isfinite(cfg.snr_db), "snr_db must be finite");
  need(cfg.noise_power > 0, "noise_power must be positive");
  need(!cfg.quantization_noise_power || *cfg.quantization_noise_power >= 0,
       "quantization_noise_power must be nonnegative");
  need(cfg.bler > 0 && cfg.bler < 0.5, "bler out of range (0, 0.5)");
  need(cfg.min_sinr_floor >= 0, "min_sinr_floor must be nonnegative");

  auto sized = [&](const std::vector<double>& v) {
    return v.empty() || v.size() == 1 || static_cast<int>(v.size()) == cfg.n_users;
  };
  need(sized(cfg.min_bits), "min_bits must have 0, 1 or n_users entries");
  need(sized(cfg.weights), "weights must have 0, 1 or n_users entries");
  for (double b : cfg.min_bits) {
    if (!(b >= 0)) {
      r.violations.emplace_back("min_bits must be nonnegative");
      break;
    }
  }
  for (double w : cfg.weights) {
    if (!(w > 0)) {
      r.violations.emplace_back("weights must be strictly positive");
      break;
    }
  }

  if (r.ok() && cfg.n_users > cfg.resource_elements()) {
    bool all_positive = true;
    for (int k = 0; k < cfg.n_users; ++k) all_positive = all_positive && cfg.required_bits(k) > 0;
    if (all_positive) r.warnings.emplace_back("SU-MIMO infeasible: K > T·F");
  }
  return r;
}

inline ValidationReport validate_config(const GaConfig& ga) {
  ValidationReport r;
  auto prob = [](double p) { return p >= 0 && p <= 1; };
  if (ga.population_size < 1) r.violations.emplace_back("population_size must be >= 1");
  if (ga.elite_count < 1) r.violations.emplace_back("elite_count must be >= 1");
  if (ga.elite_count >= ga.population_size) r.violations.emplace_back("elite_count must be < population_size");
  if (!prob(ga.crossover_prob)) r.violations.emplace_back("crossover_prob out of range [0, 1]");
  if (!prob(ga.mutation_prob)) r.violations.emplace_back("mutation_prob out of range [0, 1]");
  if (!prob(ga.mutation_bias)) r.violations.emplace_back("mutation_bias out of range [0, 1]");
  if (ga.max_generations < 1) r.violations.emplace_back("max_generations must be >= 1");
  if (ga.stage2_generations < 1) r.violations.emplace_back("stage2_generations must be >= 1");
  if (ga.stage2_population < 0) r.violations.emplace_back("stage2_population must be >= 0");
  return r;
}

inline ValidationReport validate_config(const SolverConfig& s) {
  ValidationReport r;
  if (s.max_sca_iters < 1) r.violations.emplace_back("max_sca_iters must be >= 1");
  if (!(s.convergence_tol > 0)) r.violations.emplace_back("convergence_tol must be positive");
  if (!(s.rank1_ratio_threshold > 0 && s.rank1_ratio_threshold <= 1))
    r.violations.emplace_back("rank1_ratio_threshold out of range (0, 1]");
  if (s.randomization_trials < 0) r.violations.emplace_back("randomization_trials must be >= 0");
  return r;
}

/// Per-slot transmit power budget p_t.
inline double derive_power_budget(const SystemConfig& cfg) {
  return cfg.noise_power * std::pow(10.0, cfg.snr_db / 10.0);
}

inline double quantization_noise(const SystemConfig& cfg) {
  if (cfg.quantization_noise_power) return *cfg.quantization_noise_power;
  return 1e-3 * derive_power_budget(cfg) / (cfg.n_users * cfg.n_subcarriers);
}

// ---- randomness ------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named sub-streams of one master seed. Every consumer of randomness takes
/// its own stream so adding draws in one place never shifts another.
enum class Stream : std::uint64_t {
  Topology = 1,
  Channel = 2,
  Genetic = 3,
  Randomization = 4,
  Trial = 5,
};

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ (static_cast<std::uint64_t>(stream) << 56)) + index);
}

/// mt19937_64 engine with hand-written distributions; the std distributions
/// are implementation-defined, which would break cross-platform replay.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    double u;
    do u = uniform();
    while (u == 0.0);
    return u;
  }

  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index with n == 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = engine_();
    while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// CN(0, 1): independent real and imaginary parts of variance 1/2.
  cplx complex_normal() {
    const double re = normal();
    const double im = normal();
    return {re * std::numbers::sqrt2 / 2.0, im * std::numbers::sqrt2 / 2.0};
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cfmimo
