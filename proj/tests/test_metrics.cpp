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
#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/metrics.hpp"

namespace cfmimo {
namespace {

// Deterministic channel with zero quantization noise and unit thermal noise.
ChannelRealization fixed_channel(const std::vector<std::vector<cplx>>& per_user, int slots = 1, int subs = 1) {
  const int users = static_cast<int>(per_user.size());
  const int antennas = static_cast<int>(per_user[0].size());
  ChannelRealization ch(users, antennas, slots, subs);
  for (int k = 0; k < users; ++k)
    for (int t = 0; t < slots; ++t)
      for (int f = 0; f < subs; ++f)
        for (int a = 0; a < antennas; ++a) ch.h(k, t, f)(a) = per_user[k][a];
  ch.refresh_noise(0.0, 1.0);
  return ch;
}

TEST(Sinr, SingleUserUnitGain) {
  const auto ch = fixed_channel({{1.0, 0.0}});
  BeamformerSet w(1, 2, 1, 1);
  w.w(0, 0, 0) << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(sinr(ch, w, ScheduleMatrix::all_ones(1, 1, 1), 0, 0, 0), 1.0);
  EXPECT_EQ(sinr(ch, w, ScheduleMatrix(1, 1, 1), 0, 0, 0), 0.0);
}

TEST(Sinr, OrthogonalUsersSeeNoInterference) {
  const auto ch = fixed_channel({{1.0, 0.0}, {0.0, 1.0}});
  BeamformerSet w(2, 2, 1, 1);
  w.w(0, 0, 0) << 2.0, 0.0;
  w.w(1, 0, 0) << 0.0, 2.0;
  const auto zeta = ScheduleMatrix::all_ones(2, 1, 1);
  EXPECT_DOUBLE_EQ(sinr(ch, w, zeta, 0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(sinr(ch, w, zeta, 1, 0, 0), 4.0);
}

TEST(Sinr, UnscheduledInterfererIsIgnored) {
  const auto ch = fixed_channel({{1.0, 1.0}, {1.0, -1.0}});
  BeamformerSet w(2, 2, 1, 1);
  w.w(0, 0, 0) << 1.0, 0.0;
  w.w(1, 0, 0) << 1.0, 0.0;
  auto zeta = ScheduleMatrix::all_ones(2, 1, 1);
  EXPECT_DOUBLE_EQ(sinr(ch, w, zeta, 0, 0, 0), 0.5);
  zeta.set(1, 0, 0, false);
  EXPECT_DOUBLE_EQ(sinr(ch, w, zeta, 0, 0, 0), 1.0);
}

TEST(ShannonBits, Examples) {
  const auto ch = fixed_channel({{1.0}}, 1, 2);
  BeamformerSet w(1, 1, 1, 2);
  w.w(0, 0, 0) << 1.0;
  ScheduleMatrix one(1, 1, 2);
  one.set(0, 0, 0, true);
  EXPECT_DOUBLE_EQ(shannon_bits(ch, w, one, 0), 1.0);

  w.w(0, 0, 0) << std::sqrt(3.0);
  w.w(0, 0, 1) << std::sqrt(3.0);
  EXPECT_NEAR(shannon_bits(ch, w, ScheduleMatrix::all_ones(1, 1, 2), 0), 4.0, 1e-14);
  EXPECT_EQ(shannon_bits(ch, w, ScheduleMatrix(1, 1, 2), 0), 0.0);
}

TEST(Dispersion, Examples) {
  EXPECT_EQ(dispersion(0.0), 0.0);
  EXPECT_DOUBLE_EQ(dispersion(1.0), 0.75);
  EXPECT_NEAR(dispersion(1e6), 1.0 - 1e-12, 1e-15);
  EXPECT_LT(dispersion(1e6), 1.0);
  EXPECT_THROW(dispersion(-0.1), std::domain_error);
}

// Reference values computed with mpmath at 30 digits: -sqrt(2)*erfinv(2*eps-1).
struct QRef {
  double eps, x;
};
constexpr QRef kQRefs[] = {
    {1e-1, 1.281551565544600467}, {1e-2, 2.326347874040841101}, {1e-3, 3.090232306167813542},
    {1e-4, 3.719016485455680564}, {1e-5, 4.264890793922824628}, {1e-6, 4.753424308822898948},
    {1e-7, 5.199337582192816932}, {1e-8, 5.612001244174788732}, {1e-9, 5.997807015007686872},
    {0.3, 0.5244005127080407840}, {0.05, 1.644853626951472715},
};

TEST(QInverse, MatchesHighPrecisionReference) {
  for (const auto& r : kQRefs) EXPECT_NEAR(q_inverse(r.eps), r.x, 1e-9 * std::max(1.0, r.x)) << r.eps;
  EXPECT_NEAR(q_inverse(1e-5), 4.264890794, 1e-8);
  EXPECT_EQ(q_inverse(0.5), 0.0);
  EXPECT_NEAR(q_inverse(0.02275013194817920720), 2.0, 1e-9);
  EXPECT_NEAR(q_inverse(0.9), -kQRefs[0].x, 1e-9);
}

TEST(QInverse, InvertsTailFunction) {
  for (double eps = 1e-12; eps < 1.0; eps *= 1.7) EXPECT_NEAR(q_function(q_inverse(eps)), eps, 1e-9) << eps;
  EXPECT_NEAR(q_function(2.0), 0.02275013194817920720, 1e-16);
}

TEST(QInverse, DomainErrors) {
  EXPECT_THROW(q_inverse(0.0), std::domain_error);
  EXPECT_THROW(q_inverse(1.0), std::domain_error);
  EXPECT_THROW(q_inverse(-0.5), std::domain_error);
  EXPECT_THROW(q_inverse(std::nan("")), std::domain_error);
}

TEST(FblBits, Examples) {
  EXPECT_EQ(fbl_bits_from_sinrs({}, 1e-5).raw, 0.0);
  const auto one = fbl_bits_from_sinrs({1.0}, 1e-5);
  EXPECT_NEAR(one.raw, -2.693503771903549313, 1e-9);
  EXPECT_EQ(one.clamped, 0.0);

  const auto ch = fixed_channel({{1.0}}, 2, 2);
  BeamformerSet w(1, 1, 2, 2);
  for (int t = 0; t < 2; ++t)
    for (int f = 0; f < 2; ++f) w.w(0, t, f) << 1.5 + t + f;
  const auto zeta = ScheduleMatrix::all_ones(1, 2, 2);
  EXPECT_EQ(fbl_bits(ch, w, ScheduleMatrix(1, 2, 2), 0, 1e-5).raw, 0.0);
  EXPECT_DOUBLE_EQ(fbl_bits(ch, w, zeta, 0, 0.5).raw, shannon_bits(ch, w, zeta, 0));
}

TEST(FblBits, MonotoneInSingleSinrWhereDerivativeIsPositive) {
  // dPhi/dgamma_j > 0 iff (1+gamma_j)^2 sqrt(sum V) > Q ln 2, and the left side
  // only grows with gamma_j, so Phi increases along the whole perturbation.
  Rng rng(31);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(6));
    std::vector<double> g(static_cast<std::size_t>(n));
    for (auto& x : g) x = std::pow(10.0, -2.0 + 5.0 * rng.uniform());
    const double eps = std::pow(10.0, -9.0 + 8.0 * rng.uniform());
    const auto j = rng.index(static_cast<std::size_t>(n));
    double sv = 0;
    for (double x : g) sv += dispersion(x);
    if ((1 + g[j]) * (1 + g[j]) * std::sqrt(sv) <= q_inverse(eps) * std::numbers::ln2) continue;
    ++checked;
    const double before = fbl_bits_from_sinrs(g, eps).raw;
    g[j] *= 1.0 + rng.uniform();
    EXPECT_GE(fbl_bits_from_sinrs(g, eps).raw, before - 1e-12);
  }
  EXPECT_GT(checked, 1000);
}

TEST(FblBits, NotMonotoneNearZeroDispersion) {
  const double eps = 1e-5;
  const double a = fbl_bits_from_sinrs({1000.0, 0.0}, eps).raw;
  const double b = fbl_bits_from_sinrs({1000.0, 0.01}, eps).raw;
  EXPECT_LT(b, a);
}

TEST(FblBits, NeverExceedsShannonForEpsBelowHalf) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> g(1 + rng.index(8));
    double cap = 0;
    for (auto& x : g) {
      x = std::pow(10.0, -3.0 + 6.0 * rng.uniform());
      cap += std::log2(1 + x);
    }
    const double eps = std::pow(10.0, -9.0 + 8.0 * rng.uniform()) * 0.49;
    const auto r = fbl_bits_from_sinrs(g, eps);
    EXPECT_LE(r.raw, cap);
    EXPECT_LE(r.clamped, cap);
    EXPECT_GE(r.clamped, 0.0);
  }
}

TEST(WeightedThroughput, WeightedSumOfBits) {
  const auto ch = fixed_channel({{1.0, 0.0}, {0.0, 1.0}});
  BeamformerSet w(2, 2, 1, 1);
  w.w(0, 0, 0) << std::sqrt(3.0), 0.0;
  w.w(1, 0, 0) << 0.0, std::sqrt(7.0);
  SystemConfig cfg;
  cfg.n_users = 2;
  cfg.n_aps = 2;
  cfg.antennas_per_ap = 1;
  cfg.n_slots = 1;
  cfg.n_subcarriers = 1;
  cfg.snr_db = 10.0;
  cfg.weights = {1.0, 1.0};
  cfg.min_bits = {0.0};
  const auto zeta = ScheduleMatrix::all_ones(2, 1, 1);
  auto r = weighted_throughput(ch, w, zeta, cfg, Regime::INFBL);
  EXPECT_NEAR(r.weighted_throughput, 5.0, 1e-12);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.per_user_blocklength, (std::vector<int>{1, 1}));

  cfg.weights = {2.0, 0.5};
  r = weighted_throughput(ch, w, zeta, cfg, Regime::INFBL);
  EXPECT_NEAR(r.weighted_throughput, 2.0 * 2.0 + 0.5 * 3.0, 1e-12);

  cfg.min_bits = {2.0, 3.5};
  r = weighted_throughput(ch, w, zeta, cfg, Regime::INFBL);
  EXPECT_FALSE(r.qos_met);
  EXPECT_FALSE(r.feasible);

  cfg.min_bits = {0.0};
  w.w(0, 0, 0) *= 1.01;
  r = weighted_throughput(ch, w, zeta, cfg, Regime::INFBL);
  EXPECT_FALSE(r.power_ok);
  EXPECT_FALSE(r.feasible);
}

TEST(WeightedThroughput, FblNeverAboveInfblOnRandomInstances) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    SystemConfig cfg;
    cfg.n_aps = 3;
    cfg.antennas_per_ap = 2;
    cfg.n_users = 4;
    cfg.n_slots = 2;
    cfg.n_subcarriers = 2;
    cfg.rng_seed = seed;
    cfg.weights = {1.0, 2.0, 0.5, 1.5};
    const auto ch = generate_channels(generate_topology(cfg, Deployment::CellFree), cfg);
    Rng rng(seed * 7);
    ScheduleMatrix zeta(4, 2, 2);
    BeamformerSet w(4, 6, 2, 2);
    for (int k = 0; k < 4; ++k)
      for (int t = 0; t < 2; ++t)
        for (int f = 0; f < 2; ++f) {
          zeta.set(k, t, f, rng.bernoulli(0.6));
          for (int a = 0; a < 6; ++a) w.w(k, t, f)(a) = 10.0 * rng.complex_normal();
        }
    const auto inf = weighted_throughput(ch, w, zeta, cfg, Regime::INFBL);
    const auto fbl = weighted_throughput(ch, w, zeta, cfg, Regime::FBL);
    EXPECT_LE(fbl.weighted_throughput, inf.weighted_throughput + 1e-12);
    double sum = 0;
    for (int k = 0; k < 4; ++k) sum += cfg.weight(k) * inf.per_user_bits[k];
    EXPECT_NEAR(inf.weighted_throughput, sum, 1e-9 * std::max(1.0, sum));
  }
}

TEST(MeetsBits, ZeroRequirementIgnoresNegativeBits) {
  EXPECT_TRUE(meets_bits(-3.0, 0.0));
  EXPECT_TRUE(meets_bits(1.0, 1.0));
  EXPECT_TRUE(meets_bits(1.0 - 1e-10, 1.0));
  EXPECT_FALSE(meets_bits(0.999, 1.0));
}

TEST(PowerProjection, RespectsBudgetPerSlot) {
  Rng rng(9);
  BeamformerSet w(3, 4, 3, 2);
  for (int k = 0; k < 3; ++k)
    for (int t = 0; t < 3; ++t)
      for (int f = 0; f < 2; ++f)
        for (int a = 0; a < 4; ++a) w.w(k, t, f)(a) = (t + 1.0) * rng.complex_normal();
  const double budget = 10.0;
  const double low_slot = w.slot_power(0) < budget ? w.slot_power(0) : -1;
  w.project_power(budget);
  for (int t = 0; t < 3; ++t) EXPECT_LE(w.slot_power(t), budget * (1 + 1e-9));
  if (low_slot >= 0) {
    EXPECT_DOUBLE_EQ(w.slot_power(0), low_slot);
  }
  EXPECT_TRUE(power_feasible(w, budget));
}

TEST(Blocklengths, Examples) {
  EXPECT_EQ(blocklengths(ScheduleMatrix::all_ones(2, 4, 3)), std::vector<int>(6, 4));
  EXPECT_EQ(blocklengths(ScheduleMatrix(2, 4, 3)), std::vector<int>(6, 0));
  ScheduleMatrix z(1, 6, 1);
  for (int t : {0, 2, 4}) z.set(0, t, 0, true);
  EXPECT_EQ(blocklengths(z), std::vector<int>{3});
}

TEST(Blocklengths, BoundedBySlots) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    ScheduleMatrix z(3, 5, 2);
    for (std::size_t i = 0; i < z.size(); ++i) z.set_bit(i, rng.bernoulli(0.5));
    int total = 0;
    for (int l : blocklengths(z)) {
      EXPECT_LE(l, 5);
      total += l;
    }
    int ones = 0;
    for (auto b : z.bits()) ones += b;
    EXPECT_EQ(total, ones);
  }
}

TEST(ScheduleMatrix, SchemeTags) {
  auto z = ScheduleMatrix::all_ones(2, 1, 2);
  EXPECT_TRUE(z.respects(Scheme::FU));
  EXPECT_FALSE(z.respects(Scheme::SU));
  z.set(1, 0, 0, false);
  z.set(0, 0, 1, false);
  EXPECT_TRUE(z.respects(Scheme::SU));
  EXPECT_FALSE(z.respects(Scheme::FU));
  EXPECT_TRUE(z.respects(Scheme::MU));
}

}  // namespace
}  // namespace cfmimo
