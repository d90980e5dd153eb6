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
 * @file beamforming.hpp
 * @brief Beamformers under a fixed schedule: regularized MMSE, and the two
 * SDR/SCA designs for the Shannon and normal-approximation objectives.
 *
 * Both SCA designs lift every scheduled w_k^{tf} to X = w w^H. Within one
 * resource element only the span of the scheduled users' channels matters
 * (every trace term and the power budget are invariant under projecting X
 * onto it, and projection never raises power), so each lifted block lives in
 * that subspace: X = U Y U^H with U an orthonormal basis of
 * span{h_j : j scheduled in the RE}. The reduction is exact.
 */
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "cfmimo/channel.hpp"
#include "cfmimo/conic.hpp"
#include "cfmimo/core.hpp"
#include "cfmimo/metrics.hpp"

namespace cfmimo {

// ---- surrogates -------------------------------------------------------------

/// log2(Y1) - [log2(Y2hat) + (Y2 - Y2hat) / (Y2hat ln 2)]: the tangent of the
/// concave log2(Y2) at Y2hat bounds it from above, so this never exceeds
/// log2(Y1 / Y2) and matches it at Y2 = Y2hat.
inline double dc_surrogate(double upsilon1, double upsilon2, double upsilon2_hat) {
  return std::log2(upsilon1) - std::log2(upsilon2_hat) - (upsilon2 - upsilon2_hat) / (upsilon2_hat * std::numbers::ln2);
}

/// 2 c pi - c^2 theta with c = pi_hat / theta_hat; a global lower bound of
/// pi^2 / theta on theta > 0, tight at (pi_hat, theta_hat).
inline double sinr_ratio_surrogate(double pi, double theta, double pi_hat, double theta_hat) {
  const double c = pi_hat / theta_hat;
  return 2.0 * c * pi - c * c * theta;
}

inline constexpr double kDispersionFloor = 1e-12;

/// G(z) = Q^-1(eps) sqrt(sum_i V(z_i)).
inline double fbl_penalty(const std::vector<double>& z, double eps) {
  double v = 0.0;
  for (double zi : z) v += dispersion(std::max(0.0, zi));
  return q_inverse(eps) * std::sqrt(v);
}

/// dG/dz_i = Q^-1(eps) (1 + z_i)^-3 / sqrt(sum V), with sum V floored.
inline std::vector<double> fbl_penalty_gradient(const std::vector<double>& z, double eps) {
  double v = 0.0;
  for (double zi : z) v += dispersion(std::max(0.0, zi));
  const double root = std::sqrt(std::max(v, kDispersionFloor));
  const double q = q_inverse(eps);
  std::vector<double> g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) g[i] = q * std::pow(1.0 + std::max(0.0, z[i]), -3.0) / root;
  return g;
}

/// First-order expansion of G at z_hat. G is concave on z >= 0 (a concave
/// nondecreasing sqrt of a sum of concave terms), so this overestimates it.
inline double fbl_penalty_tangent(const std::vector<double>& z, const std::vector<double>& z_hat, double eps) {
  const auto g = fbl_penalty_gradient(z_hat, eps);
  double out = fbl_penalty(z_hat, eps);
  for (std::size_t i = 0; i < z.size(); ++i) out += g[i] * (z[i] - z_hat[i]);
  return out;
}

/// Lifted beamformers X_k^{tf} in full antenna dimension (zero when unscheduled).
class LiftedSet {
 public:
  LiftedSet(int users, int antennas, int slots, int subcarriers)
      : users_(users), slots_(slots), subcarriers_(subcarriers),
        x_(static_cast<std::size_t>(users) * slots * subcarriers, Eigen::MatrixXcd::Zero(antennas, antennas)) {}
  static LiftedSet from_beamformers(const BeamformerSet& w) {
    LiftedSet s(w.users(), w.antennas(), w.slots(), w.subcarriers());
    for (int k = 0; k < w.users(); ++k)
      for (int t = 0; t < w.slots(); ++t)
        for (int f = 0; f < w.subcarriers(); ++f) s.X(k, t, f) = w.w(k, t, f) * w.w(k, t, f).adjoint();
    return s;
  }
  Eigen::MatrixXcd& X(int k, int t, int f) { return x_[index(k, t, f)]; }
  const Eigen::MatrixXcd& X(int k, int t, int f) const { return x_[index(k, t, f)]; }

 private:
  std::size_t index(int k, int t, int f) const { return (static_cast<std::size_t>(k) * slots_ + t) * subcarriers_ + f; }
  int users_, slots_, subcarriers_;
  std::vector<Eigen::MatrixXcd> x_;
};

namespace detail {
inline double lifted_gain(const ChannelRealization& ch, int k, int t, int f, const Eigen::MatrixXcd& X) {
  const auto h = ch.h(k, t, f);
  return (h.adjoint() * X * h)(0, 0).real();
}
/// (Upsilon1, Upsilon2) of user k on (t, f).
inline std::pair<double, double> upsilons(const ChannelRealization& ch, const ScheduleMatrix& zeta, const LiftedSet& X,
                                          int k, int t, int f) {
  double interference = 0.0, signal = 0.0;
  for (int j = 0; j < ch.users(); ++j) {
    if (!zeta(j, t, f)) continue;
    const double g = lifted_gain(ch, k, t, f, X.X(j, t, f));
    (j == k ? signal : interference) += g;
  }
  const double n = ch.combined_noise(k, t, f);
  return {signal + interference + n, interference + n};
}
}  // namespace detail

/// Shannon bits of user k evaluated on lifted matrices.
inline double lifted_shannon_bits(const ChannelRealization& ch, const ScheduleMatrix& zeta, const LiftedSet& X, int k) {
  double bits = 0.0;
  for (int t = 0; t < ch.slots(); ++t)
    for (int f = 0; f < ch.subcarriers(); ++f) {
      if (!zeta(k, t, f)) continue;
      const auto [u1, u2] = detail::upsilons(ch, zeta, X, k, t, f);
      bits += std::log2(u1 / u2);
    }
  return bits;
}

/// DC surrogate of user k's Shannon bits around X_hat.
inline double infbl_surrogate_bits(const ChannelRealization& ch, const ScheduleMatrix& zeta, const LiftedSet& X,
                                   const LiftedSet& X_hat, int k) {
  double bits = 0.0;
  for (int t = 0; t < ch.slots(); ++t)
    for (int f = 0; f < ch.subcarriers(); ++f) {
      if (!zeta(k, t, f)) continue;
      const auto [u1, u2] = detail::upsilons(ch, zeta, X, k, t, f);
      const auto [h1, h2] = detail::upsilons(ch, zeta, X_hat, k, t, f);
      (void)h1;
      bits += dc_surrogate(u1, u2, h2);
    }
  return bits;
}

// ---- MMSE ----------------------------------------------------------------------

/// Regularized MMSE per RE with p_t / F per RE split equally among the
/// scheduled users, then per-slot power projection.
inline BeamformerSet mmse_beamformer(const ChannelRealization& ch, const ScheduleMatrix& zeta, const SystemConfig& cfg) {
  const int A = ch.antennas();
  BeamformerSet w(ch.users(), A, ch.slots(), ch.subcarriers());
  const double pt = derive_power_budget(cfg);
  const double p_re = pt / ch.subcarriers();
  for (int t = 0; t < ch.slots(); ++t)
    for (int f = 0; f < ch.subcarriers(); ++f) {
      const int n = zeta.users_in(t, f);
      if (n == 0) continue;
      Eigen::MatrixXcd Am = (static_cast<double>(n) * cfg.noise_power / p_re) * Eigen::MatrixXcd::Identity(A, A);
      for (int j = 0; j < ch.users(); ++j)
        if (zeta(j, t, f)) Am.noalias() += ch.h(j, t, f) * ch.h(j, t, f).adjoint();
      const Eigen::LLT<Eigen::MatrixXcd> llt(Am);
      for (int k = 0; k < ch.users(); ++k) {
        if (!zeta(k, t, f)) continue;
        Eigen::VectorXcd v = llt.solve(Eigen::VectorXcd(ch.h(k, t, f)));
        const double norm = v.norm();
        if (norm > 0) v *= std::sqrt(p_re / n) / norm;
        w.w(k, t, f) = v;
      }
    }
  w.project_power(pt);
  return w;
}

// ---- SCA state and outcome -------------------------------------------------------

/// SCA iterate. Lifted blocks are stored in per-RE subspace coordinates, one
/// per scheduled (k, t, f) in the order of `block_index`.
struct ScaState {
  std::vector<Eigen::MatrixXcd> X_hat;
  std::vector<double> z_hat, pi_hat, theta_hat;
  int iteration = 0;
  std::vector<double> objective_trace;
};

struct BeamformingOutcome {
  BeamformerSet w;
  AllocationResult result;
  ScaState state;
  int solver_calls = 0;
  /// Solves spent raising the smallest QoS margin before the first feasible iterate.
  int restoration_iterations = 0;
  bool converged = false;
  /// The MMSE initialization was returned because it beat the SCA output.
  bool returned_initialization = false;
  conic::SolveStatus last_status = conic::SolveStatus::Optimal;
  std::string diagnostic;
};

/// Better of two allocations: feasible first, then larger throughput.
inline bool better_allocation(const AllocationResult& a, const AllocationResult& b) {
  if (a.feasible != b.feasible) return a.feasible;
  if (a.feasible) return a.weighted_throughput > b.weighted_throughput;
  double da = 0.0, db = 0.0;
  for (double x : a.per_user_raw_bits) da += x;
  for (double x : b.per_user_raw_bits) db += x;
  return da > db;
}

namespace detail {

struct ReducedRe {
  int t = 0, f = 0;
  std::vector<int> users;
  std::vector<int> blocks;
  Eigen::MatrixXcd basis;               // antennas x r
  std::vector<Eigen::VectorXcd> h;      // reduced channel per scheduled user
  std::vector<Eigen::MatrixXcd> gram;   // h h^H per scheduled user
  std::vector<double> noise;            // combined noise per scheduled user
};

struct Block {
  int k, t, f;
  int re;     // index into res
  int local;  // position of k within the RE
};

struct Reduced {
  std::vector<ReducedRe> res;
  std::vector<Block> blocks;
  std::vector<std::vector<int>> user_blocks;
  std::vector<std::vector<int>> slot_blocks;
  bool has_interference = false;
};

inline Reduced reduce(const ChannelRealization& ch, const ScheduleMatrix& zeta) {
  Reduced rp;
  rp.user_blocks.assign(ch.users(), {});
  rp.slot_blocks.assign(ch.slots(), {});
  for (int t = 0; t < ch.slots(); ++t)
    for (int f = 0; f < ch.subcarriers(); ++f) {
      ReducedRe re;
      re.t = t;
      re.f = f;
      for (int k = 0; k < ch.users(); ++k)
        if (zeta(k, t, f)) re.users.push_back(k);
      if (re.users.empty()) continue;
      Eigen::MatrixXcd Hs(ch.antennas(), static_cast<Eigen::Index>(re.users.size()));
      for (std::size_t i = 0; i < re.users.size(); ++i) Hs.col(static_cast<Eigen::Index>(i)) = ch.h(re.users[i], t, f);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(Hs);
      qr.setThreshold(1e-12);
      const Eigen::Index r = std::max<Eigen::Index>(1, qr.rank());
      re.basis = Eigen::MatrixXcd(qr.householderQ()) .leftCols(r);
      for (int k : re.users) {
        re.h.push_back(re.basis.adjoint() * ch.h(k, t, f));
        re.gram.push_back(re.h.back() * re.h.back().adjoint());
        re.noise.push_back(ch.combined_noise(k, t, f));
      }
      const int idx = static_cast<int>(rp.res.size());
      for (std::size_t i = 0; i < re.users.size(); ++i) {
        const int b = static_cast<int>(rp.blocks.size());
        rp.blocks.push_back({re.users[i], t, f, idx, static_cast<int>(i)});
        re.blocks.push_back(b);
        rp.user_blocks[re.users[i]].push_back(b);
        rp.slot_blocks[t].push_back(b);
      }
      rp.has_interference = rp.has_interference || re.users.size() > 1;
      rp.res.push_back(std::move(re));
    }
  return rp;
}

inline int block_dim(const Reduced& rp, int b) { return static_cast<int>(rp.res[rp.blocks[b].re].basis.cols()); }

/// Reduced lifted start Y = (U^H w)(U^H w)^H.
inline std::vector<Eigen::MatrixXcd> lift(const Reduced& rp, const BeamformerSet& w) {
  std::vector<Eigen::MatrixXcd> Y;
  Y.reserve(rp.blocks.size());
  for (const auto& b : rp.blocks) {
    const Eigen::VectorXcd y = rp.res[b.re].basis.adjoint() * w.w(b.k, b.t, b.f);
    Y.push_back(y * y.adjoint());
  }
  return Y;
}

/// (1 - d)[(1 - d) Y + d (Tr Y / r) I]: positive definite, trace scaled by (1 - d).
inline Eigen::MatrixXcd strict_interior(const Eigen::MatrixXcd& Y, double delta, double fallback_trace) {
  const auto r = Y.rows();
  double tr = Y.trace().real();
  if (!(tr > 0)) tr = fallback_trace;
  Eigen::MatrixXcd out = (1.0 - delta) * Y;
  out.diagonal().array() += delta * tr / static_cast<double>(r);
  return (1.0 - delta) * 0.5 * (out + out.adjoint());
}

/// sum_{j in RE} Tr(H_k Y_j) split into (signal, interference) for block b's user.
inline std::pair<double, double> block_powers(const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y, int b) {
  const auto& blk = rp.blocks[b];
  const auto& re = rp.res[blk.re];
  double s = 0.0, i = 0.0;
  for (std::size_t j = 0; j < re.blocks.size(); ++j) {
    const double g = conic::trace_product(re.gram[blk.local], Y[re.blocks[j]]);
    (static_cast<int>(j) == blk.local ? s : i) += g;
  }
  return {s, i};
}

inline double relaxed_sinr(const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y, int b) {
  const auto [s, i] = block_powers(rp, Y, b);
  return std::max(0.0, s) / (std::max(0.0, i) + rp.res[rp.blocks[b].re].noise[rp.blocks[b].local]);
}

inline double relaxed_shannon_wtp(const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y, const SystemConfig& cfg,
                                  std::vector<double>* per_user = nullptr) {
  std::vector<double> bits(rp.user_blocks.size(), 0.0);
  for (std::size_t b = 0; b < rp.blocks.size(); ++b)
    bits[rp.blocks[b].k] += std::log2(1.0 + relaxed_sinr(rp, Y, static_cast<int>(b)));
  double wtp = 0.0;
  for (std::size_t k = 0; k < bits.size(); ++k) wtp += cfg.weight(static_cast<int>(k)) * bits[k];
  if (per_user) *per_user = std::move(bits);
  return wtp;
}

inline std::uint64_t schedule_hash(const ScheduleMatrix& zeta) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : zeta.bits()) h = (h ^ b) * 1099511628211ULL;
  return h;
}

/// Rank-1 recovery of every block, randomization scored by the RE's weighted
/// Shannon rate, then per-slot power projection.
inline BeamformerSet recover(const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y, const ChannelRealization& ch,
                             const ScheduleMatrix& zeta, const SystemConfig& cfg, const SolverConfig& scfg) {
  BeamformerSet w(ch.users(), ch.antennas(), ch.slots(), ch.subcarriers());
  std::vector<Eigen::VectorXcd> y(rp.blocks.size());
  Rng rng(derive_seed(cfg.rng_seed, Stream::Randomization, schedule_hash(zeta)));
  SolverConfig principal = scfg;
  principal.rank1_ratio_threshold = 0.0;
  for (std::size_t b = 0; b < rp.blocks.size(); ++b) y[b] = conic::recover_rank1(Y[b], principal, rng).vector;
  for (std::size_t b = 0; b < rp.blocks.size(); ++b) {
    const auto& blk = rp.blocks[b];
    const auto& re = rp.res[blk.re];
    auto re_rate = [&](const Eigen::VectorXcd& cand) {
      double rate = 0.0;
      for (std::size_t i = 0; i < re.blocks.size(); ++i) {
        double s = 0.0, in = 0.0;
        for (std::size_t j = 0; j < re.blocks.size(); ++j) {
          const Eigen::VectorXcd& v = re.blocks[j] == static_cast<int>(b) ? cand : y[re.blocks[j]];
          const double g = std::norm(re.h[i].dot(v));
          (i == j ? s : in) += g;
        }
        rate += cfg.weight(re.users[i]) * std::log2(1.0 + s / (in + re.noise[i]));
      }
      return rate;
    };
    const auto rec = conic::recover_rank1(Y[b], scfg, rng, re_rate);
    if (rec.randomized && re_rate(rec.vector) > re_rate(y[b])) y[b] = rec.vector;
  }
  for (std::size_t b = 0; b < rp.blocks.size(); ++b) {
    const auto& blk = rp.blocks[b];
    w.w(blk.k, blk.t, blk.f) = rp.res[blk.re].basis * y[b];
  }
  w.project_power(derive_power_budget(cfg));
  return w;
}

inline bool relative_change_below(double prev, double cur, double tol) {
  return std::abs(cur - prev) <= tol * std::max(std::abs(prev), 1e-12);
}

/// Common tail: rank-1 recovery, true evaluation, best-of against the
/// initialization.
inline void finish(BeamformingOutcome& out, const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y,
                   const ChannelRealization& ch, const ScheduleMatrix& zeta, const SystemConfig& cfg,
                   const SolverConfig& scfg, Regime regime, const BeamformerSet& init, const AllocationResult& init_res,
                   bool have_solution) {
  if (have_solution) {
    out.w = recover(rp, Y, ch, zeta, cfg, scfg);
    out.result = weighted_throughput(ch, out.w, zeta, cfg, regime);
    if (better_allocation(init_res, out.result)) {
      out.w = init;
      out.result = init_res;
      out.returned_initialization = true;
    }
  } else {
    out.w = init;
    out.result = init_res;
    out.returned_initialization = true;
  }
  out.result.trace = out.state.objective_trace;
}

inline bool qos_unreachable(const Reduced& rp, const SystemConfig& cfg) {
  for (std::size_t k = 0; k < rp.user_blocks.size(); ++k)
    if (cfg.required_bits(static_cast<int>(k)) > 0 && rp.user_blocks[k].empty()) return true;
  return false;
}

inline constexpr double kInteriorShrink = 1e-3;

}  // namespace detail

namespace detail {

/// A surrogate QoS margin above this counts as strictly feasible.
inline constexpr double kRestoreMargin = 1e-6;

inline bool qos_ok(const std::vector<double>& per_user, const SystemConfig& cfg) {
  for (std::size_t k = 0; k < per_user.size(); ++k)
    if (!meets_bits(per_user[k], cfg.required_bits(static_cast<int>(k)))) return false;
  return true;
}

inline conic::AffineExpr power_row(const Reduced& rp, int t, double pt) {
  conic::AffineExpr power = conic::AffineExpr::constant_term(pt);
  for (int b : rp.slot_blocks[t]) {
    const int d = block_dim(rp, b);
    power.add_trace(b, -Eigen::MatrixXcd::Identity(d, d));
  }
  return power;
}

inline void add_power_rows(conic::ConicProgram& prog, const Reduced& rp, int slots, double pt) {
  for (int t = 0; t < slots; ++t)
    if (!rp.slot_blocks[t].empty()) prog.add_nonnegative(power_row(rp, t, pt), "power");
}

inline std::vector<Eigen::MatrixXcd> interior_start(const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y,
                                                    double fallback_trace) {
  std::vector<Eigen::MatrixXcd> out;
  out.reserve(Y.size());
  for (const auto& y : Y) out.push_back(strict_interior(y, kInteriorShrink, fallback_trace));
  (void)rp;
  return out;
}

/// Upsilon1 = sum_j Tr(H_k Y_j) + noise, and the tangent of log2(Upsilon2)
/// at the current Y, per block.
struct DcTerms {
  std::vector<conic::AffineExpr> ups1, lin2;
};

inline DcTerms dc_terms(const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y) {
  const double ln2 = std::numbers::ln2;
  const int nb = static_cast<int>(rp.blocks.size());
  DcTerms d;
  d.ups1.resize(nb);
  d.lin2.resize(nb);
  for (int b = 0; b < nb; ++b) {
    const auto& blk = rp.blocks[b];
    const auto& re = rp.res[blk.re];
    const double n = re.noise[blk.local];
    const double u2hat = std::max(0.0, block_powers(rp, Y, b).second) + n;
    d.ups1[b] = conic::AffineExpr::constant_term(n);
    d.lin2[b] = conic::AffineExpr::constant_term(std::log2(u2hat) + (n - u2hat) / (u2hat * ln2));
    for (std::size_t j = 0; j < re.blocks.size(); ++j) {
      d.ups1[b].add_trace(re.blocks[j], re.gram[blk.local]);
      if (static_cast<int>(j) != blk.local) d.lin2[b].add_trace(re.blocks[j], re.gram[blk.local] / (u2hat * ln2));
    }
  }
  return d;
}

/// Raises the smallest Shannon-bit margin sum log2(1 + gamma) - target_k
/// over users with a positive target by DC iterations until it is strictly
/// positive. Returns true on success; Y holds the last iterate either way.
inline bool restore_qos(const Reduced& rp, std::vector<Eigen::MatrixXcd>& Y, const std::vector<double>& targets,
                        int slots, double pt, double fallback_trace, const SolverConfig& scfg,
                        BeamformingOutcome& out) {
  using conic::AffineExpr;
  const double ln2 = std::numbers::ln2;
  const int nb = static_cast<int>(rp.blocks.size());
  double last = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < scfg.max_sca_iters; ++iter) {
    conic::ConicProgram prog;
    for (int b = 0; b < nb; ++b) prog.add_psd_block(block_dim(rp, b));
    const DcTerms dc = dc_terms(rp, Y);
    conic::ConicPoint x0{interior_start(rp, Y, fallback_trace), Eigen::VectorXd()};
    const int sigma = prog.add_scalar("sigma");
    std::vector<double> start{0.0};
    double worst = 0.0;
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (!(targets[k] > 0)) continue;
      AffineExpr qos = AffineExpr::constant_term(-targets[k]) + AffineExpr::scalar(sigma);
      double at_start = -targets[k];
      for (int b : rp.user_blocks[k]) {
        const int u = prog.add_scalar("u");
        prog.add_log_ge(dc.ups1[b], AffineExpr::scalar(u));
        qos += AffineExpr::scalar(u, 1.0 / ln2);
        qos += (-1.0) * dc.lin2[b];
        const double ub = std::log(prog.evaluate(dc.ups1[b], x0)) - 1.0;
        start.push_back(ub);
        at_start += ub / ln2 - prog.evaluate(dc.lin2[b], x0);
      }
      worst = std::max(worst, -at_start);
      prog.add_nonnegative(qos, "qos");
    }
    add_power_rows(prog, rp, slots, pt);
    prog.maximize(AffineExpr::scalar(sigma, -1.0));
    start[0] = worst + 1.0;
    x0.scalars = Eigen::Map<Eigen::VectorXd>(start.data(), static_cast<Eigen::Index>(start.size()));
    prog.set_initial_point(x0);

    const conic::ConicSolution sol = conic::solve(prog, scfg);
    ++out.solver_calls;
    ++out.restoration_iterations;
    out.last_status = sol.status;
    if (sol.status != conic::SolveStatus::Optimal) {
      out.diagnostic = std::string("restoration subproblem ") + conic::to_string(sol.status) + ": " + sol.message;
      return false;
    }
    Y = sol.psd_blocks;
    const double s = sol.scalars(sigma);
    if (s < -kRestoreMargin) return true;
    if (std::isfinite(last) && last - s <= scfg.convergence_tol * std::max(1.0, std::abs(last))) {
      out.diagnostic = "QoS restoration stalled at deficit " + std::to_string(s);
      return false;
    }
    last = s;
  }
  out.diagnostic = "QoS restoration did not finish within the iteration limit";
  return false;
}

}  // namespace detail

// ---- BF-INFBL ----------------------------------------------------------------------

/// SDR + DC-programming beamformer for the Shannon objective. If the MMSE
/// start misses a QoS target, DC iterations on the smallest QoS margin run
/// first; the objective trace starts at the first QoS-feasible iterate.
inline BeamformingOutcome bf_infbl(const ChannelRealization& ch, const ScheduleMatrix& zeta, const SystemConfig& cfg,
                                   const SolverConfig& scfg) {
  using conic::AffineExpr;
  BeamformingOutcome out;
  const BeamformerSet init = mmse_beamformer(ch, zeta, cfg);
  const AllocationResult init_res = weighted_throughput(ch, init, zeta, cfg, Regime::INFBL);
  const detail::Reduced rp = detail::reduce(ch, zeta);
  if (rp.blocks.empty() || detail::qos_unreachable(rp, cfg)) {
    out.diagnostic = rp.blocks.empty() ? "nothing scheduled" : "a user with a bit requirement has no resource element";
    detail::finish(out, rp, {}, ch, zeta, cfg, scfg, Regime::INFBL, init, init_res, false);
    return out;
  }
  const double pt = derive_power_budget(cfg);
  const double fallback = pt / (ch.subcarriers() * ch.users());
  const double ln2 = std::numbers::ln2;
  const int nb = static_cast<int>(rp.blocks.size());
  auto& trace = out.state.objective_trace;

  std::vector<Eigen::MatrixXcd> Y = detail::lift(rp, init);
  std::vector<double> per_user;
  detail::relaxed_shannon_wtp(rp, Y, cfg, &per_user);
  if (!detail::qos_ok(per_user, cfg)) {
    std::vector<double> targets(ch.users());
    for (int k = 0; k < ch.users(); ++k) targets[k] = cfg.required_bits(k);
    if (!detail::restore_qos(rp, Y, targets, ch.slots(), pt, fallback, scfg, out)) {
      out.state.X_hat = Y;
      detail::finish(out, rp, Y, ch, zeta, cfg, scfg, Regime::INFBL, init, init_res, true);
      return out;
    }
  }
  trace.push_back(detail::relaxed_shannon_wtp(rp, Y, cfg));

  for (int iter = 0; iter < scfg.max_sca_iters; ++iter) {
    conic::ConicProgram prog;
    for (int b = 0; b < nb; ++b) prog.add_psd_block(detail::block_dim(rp, b));
    const detail::DcTerms dc = detail::dc_terms(rp, Y);
    conic::ConicPoint x0{detail::interior_start(rp, Y, fallback), Eigen::VectorXd()};
    std::vector<double> start;
    for (int k = 0; k < ch.users(); ++k) {
      const double rho = cfg.weight(k);
      const double bk = cfg.required_bits(k);
      if (bk > 0) {
        // F_bar_k >= b_k through epigraph scalars u_b <= log(Upsilon1_b).
        AffineExpr qos = AffineExpr::constant_term(-bk);
        for (int b : rp.user_blocks[k]) {
          const int u = prog.add_scalar("u");
          prog.add_log_ge(dc.ups1[b], AffineExpr::scalar(u));
          qos += AffineExpr::scalar(u, 1.0 / ln2);
          qos += (-1.0) * dc.lin2[b];
          prog.maximize(AffineExpr::scalar(u, rho / ln2));
          prog.maximize((-rho) * dc.lin2[b]);
          start.push_back(std::log(prog.evaluate(dc.ups1[b], x0)) - 1.0);
        }
        prog.add_nonnegative(qos, "qos");
      } else {
        for (int b : rp.user_blocks[k]) {
          prog.maximize_log(rho / ln2, dc.ups1[b]);
          prog.maximize((-rho) * dc.lin2[b]);
        }
      }
    }
    detail::add_power_rows(prog, rp, ch.slots(), pt);
    x0.scalars = Eigen::Map<Eigen::VectorXd>(start.data(), static_cast<Eigen::Index>(start.size()));
    prog.set_initial_point(x0);

    const conic::ConicSolution sol = conic::solve(prog, scfg);
    ++out.solver_calls;
    out.last_status = sol.status;
    if (sol.status != conic::SolveStatus::Optimal) {
      out.diagnostic = std::string("subproblem ") + conic::to_string(sol.status) + ": " + sol.message;
      break;
    }
    Y = sol.psd_blocks;
    out.state.iteration = iter + 1;
    const double prev = trace.back();
    trace.push_back(detail::relaxed_shannon_wtp(rp, Y, cfg));
    // Without interference the surrogate is exact and one solve is optimal.
    if (!rp.has_interference || detail::relative_change_below(prev, trace.back(), scfg.convergence_tol)) {
      out.converged = true;
      break;
    }
  }
  out.state.X_hat = Y;
  detail::finish(out, rp, Y, ch, zeta, cfg, scfg, Regime::INFBL, init, init_res, true);
  return out;
}

// ---- BF-FBL ------------------------------------------------------------------------

namespace detail {
/// U(z) = sum_k rho_k (sum log2(1 + z) - G_k(z)) over each user's blocks.
inline double fbl_surrogate_objective(const Reduced& rp, const std::vector<double>& z, const SystemConfig& cfg,
                                      std::vector<double>* per_user = nullptr) {
  std::vector<double> bits(rp.user_blocks.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < rp.user_blocks.size(); ++k) {
    if (rp.user_blocks[k].empty()) continue;
    std::vector<double> zk;
    double cap = 0.0;
    for (int b : rp.user_blocks[k]) {
      zk.push_back(z[b]);
      cap += std::log2(1.0 + z[b]);
    }
    bits[k] = cap - fbl_penalty(zk, cfg.bler);
    total += cfg.weight(static_cast<int>(k)) * bits[k];
  }
  if (per_user) *per_user = std::move(bits);
  return total;
}

/// pi_hat = sqrt(Tr(H Y_k)), theta_hat = interference + noise at Y.
inline void ratio_hats_from(const Reduced& rp, const std::vector<Eigen::MatrixXcd>& Y, ScaState& st) {
  for (std::size_t b = 0; b < rp.blocks.size(); ++b) {
    const auto [s, i] = block_powers(rp, Y, static_cast<int>(b));
    st.theta_hat[b] = std::max(i, 0.0) + rp.res[rp.blocks[b].re].noise[rp.blocks[b].local];
    // c = pi_hat / theta_hat must stay positive or z is pinned at zero.
    st.pi_hat[b] = std::max(std::sqrt(std::max(s, 0.0)), 1e-9 * std::sqrt(st.theta_hat[b]));
  }
}
}  // namespace detail

/// SDR + SCA beamformer for the normal-approximation objective with per-block
/// auxiliaries z <= pi^2 / theta, pi^2 <= Tr(H Y), theta >= interference + noise.
/// After each solve z_hat = z*, while (pi_hat, theta_hat) are re-read from Y*;
/// the previous z* stays feasible, so U(z) is nondecreasing. QoS restoration
/// targets b_k + Q^-1(eps) sqrt(L_k) Shannon bits, which implies b_k here.
inline BeamformingOutcome bf_fbl(const ChannelRealization& ch, const ScheduleMatrix& zeta, const SystemConfig& cfg,
                                 const SolverConfig& scfg) {
  using conic::AffineExpr;
  BeamformingOutcome out;
  const BeamformerSet init = mmse_beamformer(ch, zeta, cfg);
  const AllocationResult init_res = weighted_throughput(ch, init, zeta, cfg, Regime::FBL);
  const detail::Reduced rp = detail::reduce(ch, zeta);
  if (rp.blocks.empty() || detail::qos_unreachable(rp, cfg)) {
    out.diagnostic = rp.blocks.empty() ? "nothing scheduled" : "a user with a bit requirement has no resource element";
    detail::finish(out, rp, {}, ch, zeta, cfg, scfg, Regime::FBL, init, init_res, false);
    return out;
  }
  const double pt = derive_power_budget(cfg);
  const double fallback = pt / (ch.subcarriers() * ch.users());
  const double ln2 = std::numbers::ln2;
  const int nb = static_cast<int>(rp.blocks.size());
  const double z_floor = cfg.min_sinr_floor;
  auto& st = out.state;
  auto& trace = st.objective_trace;
  st.z_hat.resize(nb);
  st.pi_hat.resize(nb);
  st.theta_hat.resize(nb);
  auto sinr_hats = [&](const std::vector<Eigen::MatrixXcd>& Y) {
    detail::ratio_hats_from(rp, Y, st);
    for (int b = 0; b < nb; ++b) st.z_hat[b] = std::max(z_floor, st.pi_hat[b] * st.pi_hat[b] / st.theta_hat[b]);
  };

  std::vector<Eigen::MatrixXcd> Y = detail::lift(rp, init);
  sinr_hats(Y);
  std::vector<double> per_user;
  detail::fbl_surrogate_objective(rp, st.z_hat, cfg, &per_user);
  if (!detail::qos_ok(per_user, cfg)) {
    std::vector<double> targets(ch.users(), 0.0);
    const double q = q_inverse(cfg.bler);
    for (int k = 0; k < ch.users(); ++k)
      if (cfg.required_bits(k) > 0)
        targets[k] = cfg.required_bits(k) + q * std::sqrt(static_cast<double>(rp.user_blocks[k].size()));
    const bool ok = detail::restore_qos(rp, Y, targets, ch.slots(), pt, fallback, scfg, out);
    sinr_hats(Y);
    if (!ok) {
      st.X_hat = Y;
      detail::finish(out, rp, Y, ch, zeta, cfg, scfg, Regime::FBL, init, init_res, true);
      return out;
    }
  }
  trace.push_back(detail::fbl_surrogate_objective(rp, st.z_hat, cfg));

  for (int iter = 0; iter < scfg.max_sca_iters; ++iter) {
    conic::ConicProgram prog;
    for (int b = 0; b < nb; ++b) prog.add_psd_block(detail::block_dim(rp, b));
    std::vector<int> zi(nb), pii(nb), thi(nb), ui(nb);
    for (int b = 0; b < nb; ++b) {
      zi[b] = prog.add_scalar("z");
      pii[b] = prog.add_scalar("pi");
      thi[b] = prog.add_scalar("theta");
      ui[b] = prog.add_scalar("u");
    }
    conic::ConicPoint x0{detail::interior_start(rp, Y, fallback), Eigen::VectorXd::Zero(prog.scalar_count())};

    for (int b = 0; b < nb; ++b) {
      const auto& blk = rp.blocks[b];
      const auto& re = rp.res[blk.re];
      const double n = re.noise[blk.local];
      const double c = st.pi_hat[b] / st.theta_hat[b];
      // log(1 + z) >= u
      prog.add_log_ge(AffineExpr::constant_term(1.0) + AffineExpr::scalar(zi[b]), AffineExpr::scalar(ui[b]));
      // z >= z0
      prog.add_nonnegative(AffineExpr::scalar(zi[b]) + AffineExpr::constant_term(-z_floor));
      // z <= 2 c pi - c^2 theta
      prog.add_nonnegative(AffineExpr::scalar(pii[b], 2.0 * c) + AffineExpr::scalar(thi[b], -c * c) +
                           AffineExpr::scalar(zi[b], -1.0));
      // pi^2 <= Tr(H_k Y_k)
      prog.add_square_le(AffineExpr::scalar(pii[b]), AffineExpr::trace(b, re.gram[blk.local]));
      // theta >= sum_{j != k} Tr(H_k Y_j) + noise
      AffineExpr th = AffineExpr::scalar(thi[b]) + AffineExpr::constant_term(-n);
      for (std::size_t j = 0; j < re.blocks.size(); ++j)
        if (static_cast<int>(j) != blk.local) th.add_trace(re.blocks[j], -re.gram[blk.local]);
      prog.add_nonnegative(th);

      // Start strictly inside the per-block constraints where possible.
      const double sig = conic::trace_product(re.gram[blk.local], x0.blocks[b]);
      double interf = 0.0;
      for (std::size_t j = 0; j < re.blocks.size(); ++j)
        if (static_cast<int>(j) != blk.local) interf += conic::trace_product(re.gram[blk.local], x0.blocks[re.blocks[j]]);
      const double pi0 = std::sqrt(std::max(sig, 0.0)) * (1.0 - detail::kInteriorShrink);
      const double th0 = (interf + n) * (1.0 + detail::kInteriorShrink);
      const double zmax = 2.0 * c * pi0 - c * c * th0;
      double z0 = z_floor + 0.5 * (zmax - z_floor);
      if (!(zmax > z_floor)) z0 = z_floor + 1e-6 * (1.0 + z_floor);
      x0.scalars(zi[b]) = z0;
      x0.scalars(pii[b]) = pi0;
      x0.scalars(thi[b]) = th0;
      x0.scalars(ui[b]) = std::log1p(z0) - 1.0;
    }
    // Objective and QoS: sum u / ln2 - G_bar(z).
    for (int k = 0; k < ch.users(); ++k) {
      const auto& blocks = rp.user_blocks[k];
      if (blocks.empty()) continue;
      std::vector<double> zk_hat;
      for (int b : blocks) zk_hat.push_back(st.z_hat[b]);
      const auto grad = fbl_penalty_gradient(zk_hat, cfg.bler);
      double g0 = fbl_penalty(zk_hat, cfg.bler);
      AffineExpr bits;
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        bits += AffineExpr::scalar(ui[blocks[i]], 1.0 / ln2);
        bits += AffineExpr::scalar(zi[blocks[i]], -grad[i]);
        g0 -= grad[i] * zk_hat[i];
      }
      bits.add_constant(-g0);
      prog.maximize(cfg.weight(k) * bits);
      if (cfg.required_bits(k) > 0) prog.add_nonnegative(bits + AffineExpr::constant_term(-cfg.required_bits(k)), "qos");
    }
    detail::add_power_rows(prog, rp, ch.slots(), pt);
    prog.set_initial_point(x0);

    const conic::ConicSolution sol = conic::solve(prog, scfg);
    ++out.solver_calls;
    out.last_status = sol.status;
    if (sol.status != conic::SolveStatus::Optimal) {
      out.diagnostic = std::string("subproblem ") + conic::to_string(sol.status) + ": " + sol.message;
      break;
    }
    Y = sol.psd_blocks;
    detail::ratio_hats_from(rp, Y, st);
    for (int b = 0; b < nb; ++b) st.z_hat[b] = std::max(sol.scalars(zi[b]), z_floor);
    // Per user, move z_hat up to the attained SINR pi_hat^2 / theta_hat >= z*
    // when that does not lower the user's U_k; both points are feasible next.
    for (int k = 0; k < ch.users(); ++k) {
      const auto& blocks = rp.user_blocks[k];
      if (blocks.empty()) continue;
      std::vector<double> zs, za;
      double cs = 0.0, ca = 0.0;
      for (int b : blocks) {
        zs.push_back(st.z_hat[b]);
        za.push_back(std::max(st.z_hat[b], st.pi_hat[b] * st.pi_hat[b] / st.theta_hat[b]));
        cs += std::log2(1.0 + zs.back());
        ca += std::log2(1.0 + za.back());
      }
      if (ca - fbl_penalty(za, cfg.bler) >= cs - fbl_penalty(zs, cfg.bler))
        for (std::size_t i = 0; i < blocks.size(); ++i) st.z_hat[blocks[i]] = za[i];
    }
    st.iteration = iter + 1;
    const double prev = trace.back();
    trace.push_back(detail::fbl_surrogate_objective(rp, st.z_hat, cfg));
    if (detail::relative_change_below(prev, trace.back(), scfg.convergence_tol)) {
      out.converged = true;
      break;
    }
  }
  st.X_hat = Y;
  detail::finish(out, rp, Y, ch, zeta, cfg, scfg, Regime::FBL, init, init_res, true);
  return out;
}

/// Dispatch by evaluator; the MMSE evaluator reports in `regime`.
inline BeamformingOutcome run_beamformer(const ChannelRealization& ch, const ScheduleMatrix& zeta,
                                         const SystemConfig& cfg, const SolverConfig& scfg, Evaluator evaluator,
                                         Regime regime) {
  switch (evaluator) {
    case Evaluator::BF_INFBL: return bf_infbl(ch, zeta, cfg, scfg);
    case Evaluator::BF_FBL: return bf_fbl(ch, zeta, cfg, scfg);
    case Evaluator::MMSE: break;
  }
  BeamformingOutcome out;
  out.w = mmse_beamformer(ch, zeta, cfg);
  out.result = weighted_throughput(ch, out.w, zeta, cfg, regime);
  out.returned_initialization = true;
  return out;
}

}  // namespace cfmimo
