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
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "cfmimo/core.hpp"

namespace cfmimo {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  double norm() const { return std::hypot(x, y); }
};

inline double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Site and user layout. A centralized deployment has a single site at the
/// origin carrying all N*M antennas.
struct Topology {
  std::vector<Point2> ap_positions;
  std::vector<Point2> user_positions;
  Deployment deployment = Deployment::CellFree;
};

namespace detail {
inline Point2 uniform_in_disc(Rng& rng, double radius) {
  const double r = radius * std::sqrt(rng.uniform());
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  return {r * std::cos(phi), r * std::sin(phi)};
}
}  // namespace detail

/// Users are drawn first, so the same seed places users identically in both
/// deployments (paired CF/CAS comparisons).
inline Topology generate_topology(const SystemConfig& cfg, Deployment deployment) {
  Rng rng(derive_seed(cfg.rng_seed, Stream::Topology));
  Topology topo;
  topo.deployment = deployment;
  topo.user_positions.reserve(cfg.n_users);
  for (int k = 0; k < cfg.n_users; ++k) topo.user_positions.push_back(detail::uniform_in_disc(rng, cfg.cell_radius_m));
  if (deployment == Deployment::CellFree) {
    for (int n = 0; n < cfg.n_aps; ++n) topo.ap_positions.push_back(detail::uniform_in_disc(rng, cfg.cell_radius_m));
  } else {
    topo.ap_positions.push_back({0.0, 0.0});
  }
  return topo;
}

/// Amplitude gain 1 / (1 + (d/D)^eta0).
inline double path_gain(double distance_m, const SystemConfig& cfg) {
  if (distance_m < 0) throw std::invalid_argument("path_gain: negative distance");
  return 1.0 / (1.0 + std::pow(distance_m / cfg.reference_distance_m, cfg.path_loss_exponent));
}

inline constexpr double kMinLinkDistance = 1.0;

/// Channel tensor h over (user, antenna, slot, subcarrier). Storage keeps the
/// antenna vector of one (k, t, f) contiguous.
class ChannelRealization {
 public:
  ChannelRealization() = default;
  ChannelRealization(int users, int antennas, int slots, int subcarriers)
      : users_(users),
        antennas_(antennas),
        slots_(slots),
        subcarriers_(subcarriers),
        h_(static_cast<std::size_t>(users) * antennas * slots * subcarriers),
        noise_(static_cast<std::size_t>(users) * slots * subcarriers, 0.0) {}

  int users() const { return users_; }
  int antennas() const { return antennas_; }
  int slots() const { return slots_; }
  int subcarriers() const { return subcarriers_; }

  Eigen::Map<const Eigen::VectorXcd> h(int k, int t, int f) const { return {h_.data() + offset(k, t, f), antennas_}; }
  Eigen::Map<Eigen::VectorXcd> h(int k, int t, int f) { return {h_.data() + offset(k, t, f), antennas_}; }

  /// H = h h^H.
  Eigen::MatrixXcd gram(int k, int t, int f) const {
    const auto v = h(k, t, f);
    return v * v.adjoint();
  }

  /// sigma_e^2 * Tr(H) + sigma_k^2.
  double combined_noise(int k, int t, int f) const { return noise_[re_index(k, t, f)]; }

  void refresh_noise(double quantization_noise_power, double noise_power) {
    for (int k = 0; k < users_; ++k)
      for (int t = 0; t < slots_; ++t)
        for (int f = 0; f < subcarriers_; ++f)
          noise_[re_index(k, t, f)] = quantization_noise_power * h(k, t, f).squaredNorm() + noise_power;
  }

 private:
  std::size_t re_index(int k, int t, int f) const {
    return (static_cast<std::size_t>(k) * slots_ + t) * subcarriers_ + f;
  }
  std::size_t offset(int k, int t, int f) const { return re_index(k, t, f) * antennas_; }

  int users_ = 0, antennas_ = 0, slots_ = 0, subcarriers_ = 0;
  std::vector<cplx> h_;
  std::vector<double> noise_;
};

/// Per-(user, antenna) amplitude gains for a topology.
inline Eigen::MatrixXd link_gains(const Topology& topo, const SystemConfig& cfg) {
  const int antennas = cfg.total_antennas();
  Eigen::MatrixXd gains(cfg.n_users, antennas);
  for (int k = 0; k < cfg.n_users; ++k) {
    for (int a = 0; a < antennas; ++a) {
      const Point2& site = topo.deployment == Deployment::CellFree
                               ? topo.ap_positions.at(static_cast<std::size_t>(a / cfg.antennas_per_ap))
                               : topo.ap_positions.front();
      const double d = std::max(kMinLinkDistance, distance(topo.user_positions[k], site));
      gains(k, a) = path_gain(d, cfg);
    }
  }
  return gains;
}

/// Draw order: k, t, f, antenna; one CN(0,1) per entry, scaled by path gain.
inline ChannelRealization generate_channels(const Topology& topo, const SystemConfig& cfg) {
  if (static_cast<int>(topo.user_positions.size()) != cfg.n_users)
    throw std::invalid_argument("generate_channels: topology/user count mismatch");
  const Eigen::MatrixXd gains = link_gains(topo, cfg);
  ChannelRealization ch(cfg.n_users, cfg.total_antennas(), cfg.n_slots, cfg.n_subcarriers);
  Rng rng(derive_seed(cfg.rng_seed, Stream::Channel));
  for (int k = 0; k < cfg.n_users; ++k)
    for (int t = 0; t < cfg.n_slots; ++t)
      for (int f = 0; f < cfg.n_subcarriers; ++f) {
        auto v = ch.h(k, t, f);
        for (int a = 0; a < ch.antennas(); ++a) v(a) = gains(k, a) * rng.complex_normal();
      }
  ch.refresh_noise(quantization_noise(cfg), cfg.noise_power);
  return ch;
}

/// Path-loss-only capacity difference (bits) between the distributed APs of
/// `topo` and a single site at the origin, seen from `user`.
inline double capacity_gap(const Point2& user, const Topology& topo, const SystemConfig& cfg) {
  if (topo.deployment != Deployment::CellFree || topo.ap_positions.empty())
    throw std::invalid_argument("capacity_gap: needs a cell-free topology with at least one AP");
  const double d0 = user.norm();
  if (d0 == 0.0) throw std::domain_error("capacity_gap: user at the central site (d0 = 0)");
  const double D = cfg.reference_distance_m;
  const double eta = cfg.path_loss_exponent;
  double sum = 0.0;
  for (const auto& ap : topo.ap_positions) {
    const double dn = distance(user, ap);
    if (dn == 0.0) throw std::domain_error("capacity_gap: user co-located with an AP (d_n = 0)");
    sum += std::pow(D / dn, eta);
  }
  return std::log2(sum) - std::log2(std::pow(D / d0, eta));
}

/// CSV dump: k,antenna,t,f,re,im with 17 significant digits.
inline void write_channel_csv(std::ostream& os, const ChannelRealization& ch) {
  os << "k,antenna,t,f,re,im\n";
  char buf[96];
  for (int k = 0; k < ch.users(); ++k)
    for (int a = 0; a < ch.antennas(); ++a)
      for (int t = 0; t < ch.slots(); ++t)
        for (int f = 0; f < ch.subcarriers(); ++f) {
          const cplx v = ch.h(k, t, f)(a);
          std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.17g,%.17g\n", k, a, t, f, v.real(), v.imag());
          os << buf;
        }
}

}  // namespace cfmimo
