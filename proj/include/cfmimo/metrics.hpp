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

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/core.hpp"

namespace cfmimo {

/// Binary scheduling indicator zeta over (user, slot, subcarrier).
class ScheduleMatrix {
 public:
  ScheduleMatrix() = default;
  ScheduleMatrix(int users, int slots, int subcarriers, std::uint8_t fill = 0)
      : users_(users), slots_(slots), subcarriers_(subcarriers),
        bits_(static_cast<std::size_t>(users) * slots * subcarriers, fill ? 1 : 0) {}

  static ScheduleMatrix all_ones(int users, int slots, int subcarriers) {
    return {users, slots, subcarriers, 1};
  }

  int users() const { return users_; }
  int slots() const { return slots_; }
  int subcarriers() const { return subcarriers_; }
  std::size_t size() const { return bits_.size(); }

  /// Flat layout: ((t * F + f) * K + k), so one resource element's user
  /// vector is contiguous.
  std::size_t flat(int k, int t, int f) const {
    return (static_cast<std::size_t>(t) * subcarriers_ + f) * users_ + k;
  }
  bool operator()(int k, int t, int f) const { return bits_[flat(k, t, f)] != 0; }
  void set(int k, int t, int f, bool on) { bits_[flat(k, t, f)] = on ? 1 : 0; }
  bool bit(std::size_t i) const { return bits_[i] != 0; }
  void set_bit(std::size_t i, bool on) { bits_[i] = on ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  int users_in(int t, int f) const {
    int n = 0;
    for (int k = 0; k < users_; ++k) n += (*this)(k, t, f);
    return n;
  }
  int scheduled_res(int k) const {
    int n = 0;
    for (int t = 0; t < slots_; ++t)
      for (int f = 0; f < subcarriers_; ++f) n += (*this)(k, t, f);
    return n;
  }
  bool any() const { return std::any_of(bits_.begin(), bits_.end(), [](auto b) { return b != 0; }); }

  /// At most one user per resource element.
  bool is_single_user() const {
    for (int t = 0; t < slots_; ++t)
      for (int f = 0; f < subcarriers_; ++f)
        if (users_in(t, f) > 1) return false;
    return true;
  }
  bool is_full() const { return std::all_of(bits_.begin(), bits_.end(), [](auto b) { return b != 0; }); }
  bool respects(Scheme scheme) const {
    switch (scheme) {
      case Scheme::SU: return is_single_user();
      case Scheme::FU: return is_full();
      case Scheme::MU: return true;
    }
    return false;
  }

  bool operator==(const ScheduleMatrix&) const = default;
  auto operator<=>(const ScheduleMatrix& o) const { return bits_ <=> o.bits_; }

 private:
  int users_ = 0, slots_ = 0, subcarriers_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Stacked beamforming vectors w over (user, antenna, slot, subcarrier).
class BeamformerSet {
 public:
  BeamformerSet() = default;
  BeamformerSet(int users, int antennas, int slots, int subcarriers)
      : users_(users), antennas_(antennas), slots_(slots), subcarriers_(subcarriers),
        w_(static_cast<std::size_t>(users) * antennas * slots * subcarriers, cplx{0.0, 0.0}) {}

  int users() const { return users_; }
  int antennas() const { return antennas_; }
  int slots() const { return slots_; }
  int subcarriers() const { return subcarriers_; }

  Eigen::Map<const Eigen::VectorXcd> w(int k, int t, int f) const { return {w_.data() + offset(k, t, f), antennas_}; }
  Eigen::Map<Eigen::VectorXcd> w(int k, int t, int f) { return {w_.data() + offset(k, t, f), antennas_}; }

  /// sum_k sum_f ||w_k^{tf}||^2
  double slot_power(int t) const {
    double p = 0.0;
    for (int k = 0; k < users_; ++k)
      for (int f = 0; f < subcarriers_; ++f) p += w(k, t, f).squaredNorm();
    return p;
  }

  /// Uniformly scales down every slot whose power exceeds the budget.
  void project_power(double budget) {
    for (int t = 0; t < slots_; ++t) {
      const double p = slot_power(t);
      if (p <= budget) continue;
      const double scale = std::sqrt(budget / p);
      for (int k = 0; k < users_; ++k)
        for (int f = 0; f < subcarriers_; ++f) w(k, t, f) *= scale;
    }
  }

  void zero_unscheduled(const ScheduleMatrix& zeta) {
    for (int k = 0; k < users_; ++k)
      for (int t = 0; t < slots_; ++t)
        for (int f = 0; f < subcarriers_; ++f)
          if (!zeta(k, t, f)) w(k, t, f).setZero();
  }

 private:
  std::size_t offset(int k, int t, int f) const {
    return ((static_cast<std::size_t>(k) * slots_ + t) * subcarriers_ + f) * antennas_;
  }
  int users_ = 0, antennas_ = 0, slots_ = 0, subcarriers_ = 0;
  std::vector<cplx> w_;
};

struct AllocationResult {
  /// Throughput-accounting bits: Shannon bits, or clamped normal-approximation bits.
  std::vector<double> per_user_bits;
  /// Unclamped bits used for the QoS check.
  std::vector<double> per_user_raw_bits;
  double weighted_throughput = 0.0;
  /// L_k^f, row-major K x F.
  std::vector<int> per_user_blocklength;
  bool qos_met = false;
  bool power_ok = false;
  bool feasible = false;
  std::vector<double> trace;

  /// Throughput as reported in sweeps: zero when any constraint fails.
  double reported_throughput() const { return feasible ? weighted_throughput : 0.0; }
};

inline void check_shapes(const ChannelRealization& ch, const BeamformerSet& w, const ScheduleMatrix& zeta) {
  if (ch.users() != w.users() || ch.users() != zeta.users() || ch.antennas() != w.antennas() ||
      ch.slots() != w.slots() || ch.slots() != zeta.slots() || ch.subcarriers() != w.subcarriers() ||
      ch.subcarriers() != zeta.subcarriers())
    throw std::invalid_argument("inconsistent channel / beamformer / schedule shapes");
}

/// SINR with scheduling indicators inside signal and interference terms.
inline double sinr(const ChannelRealization& ch, const BeamformerSet& w, const ScheduleMatrix& zeta, int k, int t,
                   int f) {
  if (!zeta(k, t, f)) return 0.0;
  const auto h = ch.h(k, t, f);
  const double signal = std::norm(h.dot(w.w(k, t, f)));
  double interference = 0.0;
  for (int j = 0; j < ch.users(); ++j)
    if (j != k && zeta(j, t, f)) interference += std::norm(h.dot(w.w(j, t, f)));
  return signal / (interference + ch.combined_noise(k, t, f));
}

inline double shannon_bits(const ChannelRealization& ch, const BeamformerSet& w, const ScheduleMatrix& zeta, int k) {
  double bits = 0.0;
  for (int t = 0; t < ch.slots(); ++t)
    for (int f = 0; f < ch.subcarriers(); ++f)
      if (zeta(k, t, f)) bits += std::log2(1.0 + sinr(ch, w, zeta, k, t, f));
  return bits;
}

/// Channel dispersion V = 1 - (1 + gamma)^-2.
inline double dispersion(double gamma) {
  if (gamma < 0) throw std::domain_error("dispersion: negative SINR");
  const double a = 1.0 / (1.0 + gamma);
  return 1.0 - a * a;
}

/// Gaussian tail Q(x) = P(N(0,1) > x).
inline double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Q^-1(eps) via Acklam's rational approximation of the normal quantile
/// followed by one Halley refinement on erfc.
inline double q_inverse(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::domain_error("q_inverse: eps outside (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  // Lower-tail quantile z = Phi^-1(eps); Q^-1(eps) = -z.
  const double p = eps;
  double z;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    z = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    z = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley step on Phi(z) - p, Phi(z) = erfc(-z/sqrt2)/2.
  const double e = 0.5 * std::erfc(-z / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * z * z);
  z -= u / (1.0 + 0.5 * z * u);
  return -z;
}

struct FblBits {
  double raw = 0.0;
  double clamped = 0.0;
};

/// Normal-approximation bits: sum log2(1+gamma) - Q^-1(eps) sqrt(sum V).
inline FblBits fbl_bits_from_sinrs(const std::vector<double>& gammas, double eps) {
  double capacity = 0.0;
  double v = 0.0;
  for (double g : gammas) {
    capacity += std::log2(1.0 + g);
    v += dispersion(g);
  }
  const double raw = capacity - q_inverse(eps) * std::sqrt(v);
  return {raw, std::max(0.0, raw)};
}

inline FblBits fbl_bits(const ChannelRealization& ch, const BeamformerSet& w, const ScheduleMatrix& zeta, int k,
                        double eps) {
  std::vector<double> gammas;
  for (int t = 0; t < ch.slots(); ++t)
    for (int f = 0; f < ch.subcarriers(); ++f)
      if (zeta(k, t, f)) gammas.push_back(sinr(ch, w, zeta, k, t, f));
  return fbl_bits_from_sinrs(gammas, eps);
}

/// L_k^f = number of scheduled slots of user k on subcarrier f (row-major K x F).
inline std::vector<int> blocklengths(const ScheduleMatrix& zeta) {
  std::vector<int> out(static_cast<std::size_t>(zeta.users()) * zeta.subcarriers(), 0);
  for (int k = 0; k < zeta.users(); ++k)
    for (int f = 0; f < zeta.subcarriers(); ++f)
      for (int t = 0; t < zeta.slots(); ++t) out[static_cast<std::size_t>(k) * zeta.subcarriers() + f] += zeta(k, t, f);
  return out;
}

inline constexpr double kFeasibilitySlack = 1e-9;

/// A zero requirement imposes nothing, even on negative normal-approximation bits.
inline bool meets_bits(double bits, double required) {
  if (!(required > 0)) return true;
  return bits >= required - kFeasibilitySlack * std::max(1.0, required);
}

/// Assembles an AllocationResult from per-user bit counts.
inline AllocationResult make_result(const SystemConfig& cfg, std::vector<double> raw_bits, Regime regime,
                                    bool power_ok, const ScheduleMatrix& zeta) {
  AllocationResult r;
  r.per_user_raw_bits = std::move(raw_bits);
  r.per_user_bits.resize(r.per_user_raw_bits.size());
  r.qos_met = true;
  for (std::size_t k = 0; k < r.per_user_raw_bits.size(); ++k) {
    const double raw = r.per_user_raw_bits[k];
    r.per_user_bits[k] = regime == Regime::FBL ? std::max(0.0, raw) : raw;
    r.weighted_throughput += cfg.weight(static_cast<int>(k)) * r.per_user_bits[k];
    r.qos_met = r.qos_met && meets_bits(raw, cfg.required_bits(static_cast<int>(k)));
  }
  r.power_ok = power_ok;
  r.feasible = r.qos_met && r.power_ok;
  r.per_user_blocklength = blocklengths(zeta);
  return r;
}

inline bool power_feasible(const BeamformerSet& w, double budget) {
  for (int t = 0; t < w.slots(); ++t)
    if (w.slot_power(t) > budget * (1.0 + 1e-9)) return false;
  return true;
}

inline AllocationResult weighted_throughput(const ChannelRealization& ch, const BeamformerSet& w,
                                            const ScheduleMatrix& zeta, const SystemConfig& cfg, Regime regime) {
  check_shapes(ch, w, zeta);
  std::vector<double> raw(static_cast<std::size_t>(ch.users()));
  for (int k = 0; k < ch.users(); ++k)
    raw[k] = regime == Regime::INFBL ? shannon_bits(ch, w, zeta, k) : fbl_bits(ch, w, zeta, k, cfg.bler).raw;
  return make_result(cfg, std::move(raw), regime, power_feasible(w, derive_power_budget(cfg)), zeta);
}

}  // namespace cfmimo
