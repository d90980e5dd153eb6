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
 * @file conic.hpp
 * @brief Convex subproblem layer: program builder, a primal barrier
 * interior-point solver, and rank-1 recovery of lifted beamformers.
 *
 * Supported families (exactly what the beamforming SCA loops need):
 *  - Hermitian PSD matrix blocks and free real scalars,
 *  - objective: maximize affine + sum_i w_i log(affine_i), w_i > 0,
 *  - constraints: affine >= 0, affine == 0, log(affine) >= affine,
 *    (affine)^2 <= affine, and implicit PSD membership of every block.
 *
 * Each inequality family carries a self-concordant barrier
 * (-log s, -log(log a - b) - log a, -log(a - p^2), -log det X). The Newton
 * system is never formed in the lifted variable space: the PSD Hessian
 * X^-1 (.) X^-1 is inverted in closed form (D -> X D X) and the constraint
 * rows enter through a Schur complement whose size is the number of rows that
 * touch matrix blocks plus the number of scalars.
 */
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfmimo/core.hpp"

namespace cfmimo::conic {

/// c + sum_i a_i s_i + sum_b Re Tr(C_b X_b) with Hermitian C_b.
struct AffineExpr {
  double constant = 0.0;
  std::vector<std::pair<int, double>> scalars;
  std::vector<std::pair<int, Eigen::MatrixXcd>> blocks;

  static AffineExpr constant_term(double c) {
    AffineExpr e;
    e.constant = c;
    return e;
  }
  static AffineExpr scalar(int index, double coeff = 1.0) {
    AffineExpr e;
    e.scalars.emplace_back(index, coeff);
    return e;
  }
  static AffineExpr trace(int block, Eigen::MatrixXcd coeff) {
    AffineExpr e;
    e.blocks.emplace_back(block, std::move(coeff));
    return e;
  }

  AffineExpr& add_constant(double c) {
    constant += c;
    return *this;
  }
  AffineExpr& add_scalar(int index, double coeff) {
    scalars.emplace_back(index, coeff);
    return *this;
  }
  AffineExpr& add_trace(int block, Eigen::MatrixXcd coeff) {
    blocks.emplace_back(block, std::move(coeff));
    return *this;
  }
  AffineExpr& operator+=(const AffineExpr& o) {
    constant += o.constant;
    scalars.insert(scalars.end(), o.scalars.begin(), o.scalars.end());
    blocks.insert(blocks.end(), o.blocks.begin(), o.blocks.end());
    return *this;
  }
  AffineExpr& operator*=(double a) {
    constant *= a;
    for (auto& [i, c] : scalars) c *= a;
    for (auto& [b, C] : blocks) C *= a;
    return *this;
  }
  friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
  friend AffineExpr operator*(double s, AffineExpr a) { return a *= s; }
  friend AffineExpr operator-(AffineExpr a, AffineExpr b) { return a += (-1.0) * std::move(b); }
};

/// Re Tr(C X) for Hermitian C, X.
inline double trace_product(const Eigen::MatrixXcd& C, const Eigen::MatrixXcd& X) {
  return (C.array() * X.transpose().array()).sum().real();
}

enum class ConstraintKind { NonNegative, Equality, LogHypograph, SquareEpigraph };

inline const char* to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::NonNegative: return "nonneg";
    case ConstraintKind::Equality: return "eq";
    case ConstraintKind::LogHypograph: return "log_ge";
    case ConstraintKind::SquareEpigraph: return "square_le";
  }
  return "?";
}

/// Rows: NonNegative {e}, Equality {e}, LogHypograph {arg, rhs} meaning
/// log(arg) >= rhs, SquareEpigraph {a, p} meaning p^2 <= a.
struct Constraint {
  ConstraintKind kind = ConstraintKind::NonNegative;
  std::vector<AffineExpr> rows;
  std::string label;
};

struct ConicPoint {
  std::vector<Eigen::MatrixXcd> blocks;
  Eigen::VectorXd scalars;
};

class ConicProgram {
 public:
  int add_psd_block(int dim, std::string name = {}) {
    if (dim < 1) throw std::invalid_argument("add_psd_block: dimension must be positive");
    block_dims_.push_back(dim);
    block_names_.push_back(std::move(name));
    return static_cast<int>(block_dims_.size()) - 1;
  }
  int add_scalar(std::string name = {}) {
    scalar_names_.push_back(std::move(name));
    return static_cast<int>(scalar_names_.size()) - 1;
  }

  void maximize(const AffineExpr& e) { objective_ += e; }
  void maximize_log(double weight, AffineExpr arg) {
    if (!(weight > 0)) throw std::invalid_argument("maximize_log: weight must be positive");
    objective_logs_.emplace_back(weight, std::move(arg));
  }

  void add_nonnegative(AffineExpr e, std::string label = {}) {
    constraints_.push_back({ConstraintKind::NonNegative, {std::move(e)}, std::move(label)});
  }
  void add_less_equal(const AffineExpr& lhs, const AffineExpr& rhs, std::string label = {}) {
    add_nonnegative(rhs - lhs, std::move(label));
  }
  void add_equal(AffineExpr e, std::string label = {}) {
    constraints_.push_back({ConstraintKind::Equality, {std::move(e)}, std::move(label)});
  }
  void add_log_ge(AffineExpr arg, AffineExpr rhs, std::string label = {}) {
    constraints_.push_back({ConstraintKind::LogHypograph, {std::move(arg), std::move(rhs)}, std::move(label)});
  }
  void add_square_le(AffineExpr p, AffineExpr a, std::string label = {}) {
    constraints_.push_back({ConstraintKind::SquareEpigraph, {std::move(a), std::move(p)}, std::move(label)});
  }

  void set_initial_point(ConicPoint p) { initial_ = std::move(p); }
  const ConicPoint& initial_point() const { return initial_; }

  const std::vector<int>& block_dims() const { return block_dims_; }
  int scalar_count() const { return static_cast<int>(scalar_names_.size()); }
  const std::vector<std::string>& block_names() const { return block_names_; }
  const std::vector<std::string>& scalar_names() const { return scalar_names_; }
  const AffineExpr& objective_affine() const { return objective_; }
  const std::vector<std::pair<double, AffineExpr>>& objective_logs() const { return objective_logs_; }
  const std::vector<Constraint>& constraints() const { return constraints_; }

  double evaluate(const AffineExpr& e, const ConicPoint& x) const {
    double v = e.constant;
    for (const auto& [i, c] : e.scalars) v += c * x.scalars(i);
    for (const auto& [b, C] : e.blocks) v += trace_product(C, x.blocks[b]);
    return v;
  }

  double objective_value(const ConicPoint& x) const {
    double v = evaluate(objective_, x);
    for (const auto& [w, arg] : objective_logs_) v += w * std::log(evaluate(arg, x));
    return v;
  }

  void dump(std::ostream& os, bool realified = false) const;

 private:
  std::vector<int> block_dims_;
  std::vector<std::string> block_names_;
  std::vector<std::string> scalar_names_;
  AffineExpr objective_;
  std::vector<std::pair<double, AffineExpr>> objective_logs_;
  std::vector<Constraint> constraints_;
  ConicPoint initial_;
};

// ---- real embedding -------------------------------------------------------

/// [[Re A, -Im A], [Im A, Re A]]. Hermitian PSD maps to symmetric PSD with
/// every eigenvalue doubled in multiplicity, so Tr(embed(X)) = 2 Tr(X) and
/// Tr(C X) = Tr(embed(C) embed(X)) / 2.
inline Eigen::MatrixXd realify(const Eigen::MatrixXcd& A) {
  const auto n = A.rows();
  Eigen::MatrixXd R(2 * n, 2 * n);
  R.topLeftCorner(n, n) = A.real();
  R.topRightCorner(n, n) = -A.imag();
  R.bottomLeftCorner(n, n) = A.imag();
  R.bottomRightCorner(n, n) = A.real();
  return R;
}

/// Inverse of realify; averages the redundant copies.
inline Eigen::MatrixXcd derealify(const Eigen::MatrixXd& R) {
  if (R.rows() != R.cols() || R.rows() % 2 != 0) throw std::invalid_argument("derealify: need a 2n x 2n matrix");
  const auto n = R.rows() / 2;
  const Eigen::MatrixXd re = 0.5 * (R.topLeftCorner(n, n) + R.bottomRightCorner(n, n));
  const Eigen::MatrixXd im = 0.5 * (R.bottomLeftCorner(n, n) - R.topRightCorner(n, n));
  Eigen::MatrixXcd A(n, n);
  A.real() = re;
  A.imag() = im;
  return A;
}

namespace detail {
inline void dump_expr(std::ostream& os, const AffineExpr& e, bool realified) {
  os << "  const " << e.constant << "\n";
  for (const auto& [i, c] : e.scalars) os << "  s " << i << " " << c << "\n";
  for (const auto& [b, C] : e.blocks) {
    if (realified) {
      const Eigen::MatrixXd R = 0.5 * realify(C);
      for (Eigen::Index i = 0; i < R.rows(); ++i)
        for (Eigen::Index j = i; j < R.cols(); ++j)
          if (R(i, j) != 0.0) os << "  b " << b << " " << i << " " << j << " " << R(i, j) << "\n";
    } else {
      for (Eigen::Index i = 0; i < C.rows(); ++i)
        for (Eigen::Index j = i; j < C.cols(); ++j)
          if (C(i, j) != 0.0) os << "  b " << b << " " << i << " " << j << " " << C(i, j).real() << " " << C(i, j).imag() << "\n";
    }
  }
}
}  // namespace detail

/// Plain-text interchange listing. Block triplets cover the upper triangle
/// of each coefficient matrix; with `realified` the blocks are the 2n x 2n
/// real embeddings (coefficients pre-scaled by 1/2 so inner products match).
inline void ConicProgram::dump(std::ostream& os, bool realified) const {
  const auto prec = os.precision(17);
  os << "cfmimo-conic 1 " << (realified ? "real" : "hermitian") << "\n";
  os << "blocks " << block_dims_.size() << "\n";
  for (std::size_t b = 0; b < block_dims_.size(); ++b)
    os << "block " << b << " " << (realified ? 2 * block_dims_[b] : block_dims_[b]) << " " << block_names_[b] << "\n";
  os << "scalars " << scalar_names_.size() << "\n";
  for (std::size_t i = 0; i < scalar_names_.size(); ++i) os << "scalar " << i << " " << scalar_names_[i] << "\n";
  os << "objective affine\n";
  detail::dump_expr(os, objective_, realified);
  for (const auto& [w, arg] : objective_logs_) {
    os << "objective log " << w << "\n";
    detail::dump_expr(os, arg, realified);
  }
  for (std::size_t c = 0; c < constraints_.size(); ++c) {
    const auto& con = constraints_[c];
    os << "constraint " << c << " " << to_string(con.kind) << " " << con.rows.size() << " " << con.label << "\n";
    for (const auto& row : con.rows) {
      os << " row\n";
      detail::dump_expr(os, row, realified);
    }
  }
  os.precision(prec);
}

// ---- solver ---------------------------------------------------------------

enum class SolveStatus { Optimal, Infeasible, MaxIters, NumericalFailure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::MaxIters: return "MaxIters";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
  }
  return "?";
}

struct ConicSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective_value = 0.0;
  std::vector<Eigen::MatrixXcd> psd_blocks;
  Eigen::VectorXd scalars;
  /// Barrier duality-gap bound nu / t at termination.
  double duality_gap = std::numeric_limits<double>::infinity();
  /// Phase-I optimum when infeasibility was declared (> 0 certifies it).
  double infeasibility = 0.0;
  int newton_steps = 0;
  bool used_phase1 = false;
  std::string message;
};

struct BarrierSettings {
  double mu = 20.0;
  /// Stop when nu / t <= gap_tol * max(1, |objective|).
  double gap_tol = 1e-9;
  double newton_tol = 1e-10;
  /// A numerical breakdown after reaching this relative gap still counts as
  /// solved; the reported duality gap says how far the path got.
  double acceptable_gap_tol = 1e-6;
  int max_newton_steps = 600;
  int max_centering_steps = 80;
};

namespace detail {

struct Row {
  double constant = 0.0;
  std::vector<std::pair<int, double>> scalars;
  std::vector<std::pair<int, const Eigen::MatrixXcd*>> blocks;
};

struct Group {
  ConstraintKind kind;
  int first_row;
  int rows;
  bool coupled;
};

/// Flattened program: objective logs become epigraph scalars, optional
/// phase-I slack added to violated constraints.
struct Compiled {
  std::vector<int> dims;
  int scalars = 0;
  std::vector<Row> rows;
  std::vector<Group> groups;
  Row objective;
  double nu = 0.0;
  std::vector<Eigen::MatrixXcd> owned;  // coefficient storage for synthetic rows

  // Coupled-row index (position in the Schur system) per row, -1 otherwise.
  std::vector<int> coupled_index;
  std::vector<int> coupled_rows;
  // Per block: (coupled position, coefficient).
  std::vector<std::vector<std::pair<int, const Eigen::MatrixXcd*>>> block_rows;
  bool has_equality = false;

  void finalize() {
    nu = 0.0;
    for (int d : dims) nu += d;
    coupled_index.assign(rows.size(), -1);
    coupled_rows.clear();
    has_equality = false;
    for (auto& g : groups) {
      g.coupled = g.kind == ConstraintKind::Equality;
      for (int r = g.first_row; r < g.first_row + g.rows; ++r) g.coupled = g.coupled || !rows[r].blocks.empty();
      if (g.coupled)
        for (int r = g.first_row; r < g.first_row + g.rows; ++r) {
          coupled_index[r] = static_cast<int>(coupled_rows.size());
          coupled_rows.push_back(r);
        }
      switch (g.kind) {
        case ConstraintKind::NonNegative: nu += 1.0; break;
        case ConstraintKind::LogHypograph: nu += 2.0; break;
        case ConstraintKind::SquareEpigraph: nu += 1.0; break;
        case ConstraintKind::Equality: has_equality = true; break;
      }
    }
    block_rows.assign(dims.size(), {});
    for (int r : coupled_rows)
      for (const auto& [b, C] : rows[r].blocks) block_rows[b].emplace_back(coupled_index[r], C);
  }
};

inline Row to_row(const AffineExpr& e) {
  Row r;
  r.constant = e.constant;
  r.scalars = e.scalars;
  for (const auto& [b, C] : e.blocks) r.blocks.emplace_back(b, &C);
  return r;
}

struct State {
  std::vector<Eigen::MatrixXcd> X;
  Eigen::VectorXd s;
};

inline double row_value(const Row& r, const State& x) {
  double v = r.constant;
  for (const auto& [i, c] : r.scalars) v += c * x.s(i);
  for (const auto& [b, C] : r.blocks) v += trace_product(*C, x.X[b]);
  return v;
}

/// Barrier value and gradient of one group in its row coordinates, with the
/// Hessian written as sum_i d_i c_i c_i^T over as many terms as the group has
/// rows (c_i stored row-major in `coef`). The factored form stays accurate
/// near the boundary, where the explicit 2 x 2 Hessians become singular.
/// Returns false outside the domain.
inline bool group_barrier(ConstraintKind kind, const double* v, double& phi, double* grad, double* coef, double* d) {
  switch (kind) {
    case ConstraintKind::NonNegative: {
      if (!(v[0] > 0)) return false;
      phi = -std::log(v[0]);
      grad[0] = -1.0 / v[0];
      coef[0] = 1.0;
      d[0] = 1.0 / (v[0] * v[0]);
      return true;
    }
    case ConstraintKind::LogHypograph: {
      // g = log a - b; Hess = grad g grad g^T / g^2 + (1/g + 1) e_a e_a^T / a^2.
      const double a = v[0], b = v[1];
      if (!(a > 0)) return false;
      const double g = std::log(a) - b;
      if (!(g > 0)) return false;
      phi = -std::log(g) - std::log(a);
      grad[0] = -1.0 / (a * g) - 1.0 / a;
      grad[1] = 1.0 / g;
      coef[0] = 1.0 / a;
      coef[1] = -1.0;
      d[0] = 1.0 / (g * g);
      coef[2] = 1.0;
      coef[3] = 0.0;
      d[1] = (1.0 / g + 1.0) / (a * a);
      return true;
    }
    case ConstraintKind::SquareEpigraph: {
      // q = a - p^2; Hess = grad q grad q^T / q^2 + (2/q) e_p e_p^T.
      const double a = v[0], p = v[1];
      const double q = a - p * p;
      if (!(q > 0)) return false;
      phi = -std::log(q);
      grad[0] = -1.0 / q;
      grad[1] = 2.0 * p / q;
      coef[0] = 1.0;
      coef[1] = -2.0 * p;
      d[0] = 1.0 / (q * q);
      coef[2] = 0.0;
      coef[3] = 1.0;
      d[1] = 2.0 / q;
      return true;
    }
    case ConstraintKind::Equality: phi = 0.0; return true;
  }
  return false;
}

/// Slack of a group at a point (positive = strictly inside); for log groups
/// returns -inf when the argument itself is not positive.
inline double group_slack(ConstraintKind kind, const double* v) {
  switch (kind) {
    case ConstraintKind::NonNegative: return v[0];
    case ConstraintKind::LogHypograph:
      return v[0] > 0 ? std::log(v[0]) - v[1] : -std::numeric_limits<double>::infinity();
    case ConstraintKind::SquareEpigraph: return v[0] - v[1] * v[1];
    case ConstraintKind::Equality: return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

/// Cholesky of a matrix that is positive definite in exact arithmetic; on
/// failure retries with a diagonal shift growing from 1e-14 of the largest
/// diagonal entry.
inline bool factor_pd(const Eigen::MatrixXd& A, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(A);
  if (llt.info() == Eigen::Success) return true;
  const double scale = A.size() ? A.diagonal().cwiseAbs().maxCoeff() : 0.0;
  if (!(scale > 0) || !std::isfinite(scale)) return false;
  for (double shift = 1e-14; shift <= 1e-8; shift *= 100.0) {
    Eigen::MatrixXd B = A;
    B.diagonal().array() += shift * scale;
    llt.compute(B);
    if (llt.info() == Eigen::Success) return true;
  }
  return false;
}

class BarrierEngine {
 public:
  explicit BarrierEngine(const Compiled& p) : p_(p) {}

  /// f_t(x) = -t c'x + barrier(x); +inf outside the domain.
  double value(const State& x, double t) const {
    double f = -t * row_value(p_.objective, x);
    for (std::size_t b = 0; b < x.X.size(); ++b) {
      Eigen::LLT<Eigen::MatrixXcd> llt(x.X[b]);
      if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
      double logdet = 0.0;
      for (Eigen::Index i = 0; i < x.X[b].rows(); ++i) {
        const double d = std::real(llt.matrixLLT()(i, i));
        if (!(d > 0)) return std::numeric_limits<double>::infinity();
        logdet += 2.0 * std::log(d);
      }
      f -= logdet;
    }
    double v[2], g[2], c[4], d[2], phi;
    for (const auto& grp : p_.groups) {
      for (int i = 0; i < grp.rows; ++i) v[i] = row_value(p_.rows[grp.first_row + i], x);
      if (grp.kind == ConstraintKind::Equality) continue;
      if (!group_barrier(grp.kind, v, phi, g, c, d)) return std::numeric_limits<double>::infinity();
      f += phi;
    }
    return f;
  }

  struct Step {
    std::vector<Eigen::MatrixXcd> dX;
    Eigen::VectorXd ds;
    double decrement = 0.0;
    double directional = 0.0;
    double equality_residual = 0.0;
  };

  /// Newton direction of f_t at x. Returns false on a singular system.
  ///
  /// Unknowns: block steps dY, scalar steps ds and one multiplier per
  /// coupled Hessian term, v_i = d_i (l_i . step). Block steps are eliminated
  /// through dY = -X (G + sum_i v_i C_i) X, leaving
  ///   [R  -Ls] [v ]   [-q - res]
  ///   [Ls' S ] [ds] = [-g_s    ],   R = D^-1 + M0,
  /// with M0_ij = Tr(C_i X C_j X) and q_i = Tr(C_i X G X).
  bool newton(const State& x, double t, Step& out) const {
    const int nb = static_cast<int>(p_.dims.size());
    const int ns = p_.scalars;
    const int mc = static_cast<int>(p_.coupled_rows.size());

    std::vector<Eigen::MatrixXcd> G(nb), XGX(nb);
    for (int b = 0; b < nb; ++b) {
      Eigen::LLT<Eigen::MatrixXcd> llt(x.X[b]);
      if (llt.info() != Eigen::Success) return fail("block lost positive definiteness");
      G[b] = -llt.solve(Eigen::MatrixXcd::Identity(p_.dims[b], p_.dims[b]));
    }
    Eigen::VectorXd gs = Eigen::VectorXd::Zero(ns);
    for (const auto& [i, c] : p_.objective.scalars) gs(i) -= t * c;
    for (const auto& [b, C] : p_.objective.blocks) G[b] -= t * (*C);

    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(ns, ns);
    Eigen::VectorXd Dinv = Eigen::VectorXd::Zero(mc);
    Eigen::VectorXd residual = Eigen::VectorXd::Zero(mc);
    // Cc maps coupled rows to coupled Hessian terms (block diagonal per group).
    Eigen::MatrixXd Cc = Eigen::MatrixXd::Zero(mc, mc);
    Eigen::MatrixXd LsRows = Eigen::MatrixXd::Zero(mc, ns);
    double eq_res = 0.0;

    double v[2], gr[2], coef[4], dd[2], phi;
    for (const auto& grp : p_.groups) {
      for (int i = 0; i < grp.rows; ++i) v[i] = row_value(p_.rows[grp.first_row + i], x);
      if (grp.kind == ConstraintKind::Equality) {
        const int ci = p_.coupled_index[grp.first_row];
        residual(ci) = -v[0];
        Cc(ci, ci) = 1.0;
        eq_res = std::max(eq_res, std::abs(v[0]));
        for (const auto& [i, c] : p_.rows[grp.first_row].scalars) LsRows(ci, i) += c;
        continue;
      }
      if (!group_barrier(grp.kind, v, phi, gr, coef, dd)) return fail("iterate left the barrier domain");
      for (int i = 0; i < grp.rows; ++i) {
        const Row& row = p_.rows[grp.first_row + i];
        for (const auto& [si, c] : row.scalars) gs(si) += gr[i] * c;
        for (const auto& [b, C] : row.blocks) G[b] += gr[i] * (*C);
      }
      if (grp.coupled) {
        const int c0 = p_.coupled_index[grp.first_row];
        for (int h = 0; h < grp.rows; ++h) {
          Dinv(c0 + h) = 1.0 / dd[h];
          for (int i = 0; i < grp.rows; ++i) Cc(c0 + h, c0 + i) = coef[h * grp.rows + i];
        }
        for (int i = 0; i < grp.rows; ++i)
          for (const auto& [si, c] : p_.rows[grp.first_row + i].scalars) LsRows(c0 + i, si) += c;
      } else {
        for (int h = 0; h < grp.rows; ++h) {
          Eigen::VectorXd l = Eigen::VectorXd::Zero(ns);
          for (int i = 0; i < grp.rows; ++i)
            for (const auto& [si, c] : p_.rows[grp.first_row + i].scalars) l(si) += coef[h * grp.rows + i] * c;
          S.noalias() += dd[h] * l * l.transpose();
        }
      }
    }

    // Row-level M0 and q, then mapped to Hessian terms through Cc.
    Eigen::MatrixXd M0 = Eigen::MatrixXd::Zero(mc, mc);
    Eigen::VectorXd qrows = Eigen::VectorXd::Zero(mc);
    std::vector<std::vector<Eigen::MatrixXcd>> W(nb);
    for (int b = 0; b < nb; ++b) {
      const Eigen::MatrixXcd& Xb = x.X[b];
      XGX[b] = Xb * G[b] * Xb;
      const auto& rows = p_.block_rows[b];
      W[b].resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        W[b][i] = Xb * (*rows[i].second) * Xb;
        qrows(rows[i].first) += trace_product(*rows[i].second, XGX[b]);
      }
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i; j < rows.size(); ++j) {
          const double m = trace_product(*rows[j].second, W[b][i]);
          M0(rows[i].first, rows[j].first) += m;
          if (j != i) M0(rows[j].first, rows[i].first) += m;
        }
    }
    Eigen::MatrixXd R = Cc * M0 * Cc.transpose();
    R.diagonal() += Dinv;
    const Eigen::VectorXd q = Cc * qrows;
    const Eigen::MatrixXd Ls = Cc * LsRows;

    Eigen::VectorXd vmult(mc), ds = Eigen::VectorXd::Zero(ns);
    const Eigen::VectorXd rhs_c = -q - residual;
    if (!p_.has_equality) {
      Eigen::LLT<Eigen::MatrixXd> llt;
      if (!factor_pd(R, llt)) return fail("coupled Schur system singular");
      if (ns > 0) {
        const Eigen::MatrixXd Z = llt.solve(Ls);
        Eigen::MatrixXd Seff = S + Ls.transpose() * Z;
        Seff = 0.5 * (Seff + Seff.transpose()).eval();
        const Eigen::VectorXd rhs_s = -gs - Ls.transpose() * llt.solve(rhs_c);
        Eigen::LLT<Eigen::MatrixXd> sl;
        if (!factor_pd(Seff, sl)) return fail("scalar Schur complement not positive definite");
        ds = sl.solve(rhs_s);
      }
      vmult = llt.solve(rhs_c + Ls * ds);
    } else {
      Eigen::MatrixXd K(mc + ns, mc + ns);
      K << R, -Ls, Ls.transpose(), S;
      Eigen::VectorXd rhs(mc + ns);
      rhs << rhs_c, -gs;
      const Eigen::VectorXd sol = Eigen::PartialPivLU<Eigen::MatrixXd>(K).solve(rhs);
      vmult = sol.head(mc);
      ds = sol.tail(ns);
    }
    if (!vmult.allFinite() || !ds.allFinite()) return fail("non-finite Newton step");
    const Eigen::VectorXd vrows = Cc.transpose() * vmult;

    out.dX.resize(nb);
    double dir = gs.dot(ds);
    for (int b = 0; b < nb; ++b) {
      Eigen::MatrixXcd step = -XGX[b];
      const auto& rows = p_.block_rows[b];
      for (std::size_t i = 0; i < rows.size(); ++i) step -= vrows(rows[i].first) * W[b][i];
      out.dX[b] = 0.5 * (step + step.adjoint());
      dir += trace_product(G[b], out.dX[b]);
    }
    out.ds = ds;
    out.directional = dir;
    out.decrement = -dir;
    out.equality_residual = eq_res;
    return true;
  }

 const char* failure() const { return failure_; }

 private:
  bool fail(const char* why) const {
    failure_ = why;
    return false;
  }
  const Compiled& p_;
  mutable const char* failure_ = "";
};

inline State advance(const State& x, const BarrierEngine::Step& s, double alpha) {
  State y = x;
  for (std::size_t b = 0; b < y.X.size(); ++b) y.X[b] += alpha * s.dX[b];
  if (y.s.size() > 0) y.s += alpha * s.ds;
  return y;
}

enum class PathOutcome { Converged, Stopped, MaxIters, Numerical };

/// Barrier path following from a strictly feasible x. `stop` is polled after
/// every Newton step (phase I uses it to exit on the first feasible point).
inline PathOutcome follow_path(const Compiled& p, State& x, const BarrierSettings& set, int& steps, double& t_out,
                               std::string& reason, const std::function<bool(const State&)>& stop = {}) {
  BarrierEngine eng(p);
  const double obj0 = std::abs(row_value(p.objective, x));
  double t = std::max(1e-3, p.nu / (1.0 + obj0));
  BarrierEngine::Step step;
  double t_centered = 0.0;
  auto breakdown = [&]() {
    const double obj = std::abs(row_value(p.objective, x));
    if (t_centered > 0 && p.nu / t_centered <= set.acceptable_gap_tol * std::max(1.0, obj)) {
      t_out = t_centered;
      return PathOutcome::Converged;
    }
    t_out = t;
    return PathOutcome::Numerical;
  };
  for (;;) {
    // Centering.
    for (int inner = 0;; ++inner) {
      if (steps >= set.max_newton_steps || inner >= set.max_centering_steps) {
        reason = "Newton step limit reached";
        const PathOutcome b = breakdown();
        if (b == PathOutcome::Converged) return b;
        t_out = t;
        return PathOutcome::MaxIters;
      }
      if (!eng.newton(x, t, step)) {
        reason = eng.failure();
        return breakdown();
      }
      ++steps;
      const bool infeasible_start = step.equality_residual > 1e-12;
      if (!infeasible_start && step.decrement * 0.5 <= set.newton_tol) break;
      const double f0 = eng.value(x, t);
      double alpha = 1.0;
      State trial;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
        trial = advance(x, step, alpha);
        const double f1 = eng.value(trial, t);
        if (!std::isfinite(f1)) continue;
        // The slack absorbs rounding in f, which carries the factor t.
        if (infeasible_start || f1 <= f0 + 0.01 * alpha * step.directional + 1e-13 * std::max(1.0, std::abs(f0))) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (step.decrement < 1e-3) break;
        reason = "line search stalled";
        return breakdown();
      }
      x = std::move(trial);
      if (stop && stop(x)) {
        t_out = t;
        return PathOutcome::Stopped;
      }
    }
    if (stop && stop(x)) {
      t_out = t;
      return PathOutcome::Stopped;
    }
    t_centered = t;
    const double obj = std::abs(row_value(p.objective, x));
    if (p.nu / t <= set.gap_tol * std::max(1.0, obj)) {
      t_out = t;
      return PathOutcome::Converged;
    }
    t *= set.mu;
  }
}

}  // namespace detail

/// Solves `prog` from its initial point. The initial point must have every
/// PSD block positive definite and every log argument positive; inequality
/// constraints violated there are restored by a phase-I problem first.
inline ConicSolution solve(const ConicProgram& prog, const SolverConfig& /*cfg*/, const BarrierSettings& set = {}) {
  using namespace detail;
  ConicSolution out;
  const ConicPoint& x0 = prog.initial_point();
  const int nb = static_cast<int>(prog.block_dims().size());
  const int nuser = prog.scalar_count();
  if (static_cast<int>(x0.blocks.size()) != nb || x0.scalars.size() != nuser)
    throw std::invalid_argument("conic::solve: initial point does not match the program layout");
  for (int b = 0; b < nb; ++b)
    if (x0.blocks[b].rows() != prog.block_dims()[b] || x0.blocks[b].cols() != prog.block_dims()[b])
      throw std::invalid_argument("conic::solve: initial block has the wrong dimension");

  // Phase II program.
  Compiled P;
  P.dims = prog.block_dims();
  P.scalars = nuser;
  P.objective = to_row(prog.objective_affine());
  State x;
  x.X = x0.blocks;
  for (auto& X : x.X) X = 0.5 * (X + X.adjoint()).eval();
  x.s = x0.scalars;

  for (const auto& con : prog.constraints()) {
    Group g{con.kind, static_cast<int>(P.rows.size()), static_cast<int>(con.rows.size()), false};
    for (const auto& r : con.rows) P.rows.push_back(to_row(r));
    P.groups.push_back(g);
  }
  std::vector<double> epi_start;
  for (const auto& [w, arg] : prog.objective_logs()) {
    const int u = P.scalars++;
    Row rhs;
    rhs.scalars.emplace_back(u, 1.0);
    P.groups.push_back({ConstraintKind::LogHypograph, static_cast<int>(P.rows.size()), 2, false});
    P.rows.push_back(to_row(arg));
    P.rows.push_back(rhs);
    P.objective.scalars.emplace_back(u, w);
    epi_start.push_back(0.0);
  }
  x.s.conservativeResize(P.scalars);
  for (std::size_t i = 0; i < epi_start.size(); ++i) {
    const int u = nuser + static_cast<int>(i);
    const Row& arg = P.rows[P.groups[P.groups.size() - epi_start.size() + i].first_row];
    x.s(u) = 0.0;
    const double a = row_value(arg, x);
    if (!(a > 0)) {
      out.status = SolveStatus::NumericalFailure;
      out.message = "objective log argument not positive at the initial point";
      return out;
    }
    x.s(u) = std::log(a) - 1.0;
  }
  P.finalize();

  for (int b = 0; b < nb; ++b) {
    Eigen::LLT<Eigen::MatrixXcd> llt(x.X[b]);
    if (llt.info() != Eigen::Success) {
      out.status = SolveStatus::NumericalFailure;
      out.message = "initial PSD block " + std::to_string(b) + " is not positive definite";
      return out;
    }
  }

  // Which groups are violated at x0?
  std::vector<int> violated;
  double worst = 0.0, scale = 1.0;
  for (std::size_t gi = 0; gi < P.groups.size(); ++gi) {
    const auto& g = P.groups[gi];
    if (g.kind == ConstraintKind::Equality) continue;
    double v[2];
    for (int i = 0; i < g.rows; ++i) v[i] = row_value(P.rows[g.first_row + i], x);
    if (g.kind == ConstraintKind::LogHypograph && !(v[0] > 0)) {
      out.status = SolveStatus::NumericalFailure;
      out.message = "log argument not positive at the initial point";
      return out;
    }
    const double s = group_slack(g.kind, v);
    scale = std::max(scale, std::abs(v[0]));
    if (!(s > 0)) {
      violated.push_back(static_cast<int>(gi));
      worst = std::max(worst, -s);
    }
  }

  int steps = 0;
  double t_final = 1.0;
  std::string reason;
  if (!violated.empty()) {
    out.used_phase1 = true;
    Compiled P1 = P;
    const int sigma = P1.scalars++;
    State x1 = x;
    x1.s.conservativeResize(P1.scalars);
    const double sigma0 = 1.1 * worst + 1e-6 * scale + 1e-9;
    x1.s(sigma) = sigma0;
    for (int gi : violated) {
      auto& g = P1.groups[gi];
      switch (g.kind) {
        case ConstraintKind::NonNegative: P1.rows[g.first_row].scalars.emplace_back(sigma, 1.0); break;
        case ConstraintKind::LogHypograph: P1.rows[g.first_row + 1].scalars.emplace_back(sigma, -1.0); break;
        case ConstraintKind::SquareEpigraph: P1.rows[g.first_row].scalars.emplace_back(sigma, 1.0); break;
        case ConstraintKind::Equality: break;
      }
    }
    auto add_nonneg = [&P1](Row r) {
      P1.groups.push_back({ConstraintKind::NonNegative, static_cast<int>(P1.rows.size()), 1, false});
      P1.rows.push_back(std::move(r));
    };
    // sigma >= -(worst + 1): keeps the phase-I objective bounded.
    {
      Row r;
      r.constant = worst + 1.0;
      r.scalars.emplace_back(sigma, 1.0);
      add_nonneg(r);
    }
    // Phase-I-only box around the start so the centering problems have minimizers.
    for (int i = 0; i < P.scalars; ++i) {
      const double R = 1e4 * (1.0 + std::abs(x.s(i)));
      Row lo, hi;
      lo.constant = R - x.s(i);
      lo.scalars.emplace_back(i, 1.0);
      hi.constant = R + x.s(i);
      hi.scalars.emplace_back(i, -1.0);
      add_nonneg(lo);
      add_nonneg(hi);
    }
    P1.owned.reserve(nb);
    for (int b = 0; b < nb; ++b) P1.owned.push_back(Eigen::MatrixXcd::Identity(P.dims[b], P.dims[b]));
    for (int b = 0; b < nb; ++b) {
      Row r;
      r.constant = 1e4 * (1.0 + x.X[b].trace().real());
      r.blocks.emplace_back(b, &P1.owned[b]);
      // Coefficient -I: store the negated identity.
      P1.owned[b] *= -1.0;
      add_nonneg(r);
    }
    P1.objective = Row{};
    P1.objective.scalars.emplace_back(sigma, -1.0);
    P1.finalize();

    const double margin = 1e-9 * scale;
    auto feasible = [sigma, margin](const State& s) { return s.s(sigma) < -margin; };
    BarrierSettings s1 = set;
    const PathOutcome r1 = follow_path(P1, x1, s1, steps, t_final, reason, feasible);
    if (r1 != PathOutcome::Stopped) {
      out.newton_steps = steps;
      out.infeasibility = x1.s(sigma);
      if (r1 == PathOutcome::Converged) {
        out.status = SolveStatus::Infeasible;
        out.message = "phase I optimum sigma = " + std::to_string(x1.s(sigma));
      } else {
        out.status = r1 == PathOutcome::MaxIters ? SolveStatus::MaxIters : SolveStatus::NumericalFailure;
        out.message = "phase I did not reach a strictly feasible point: " + reason;
      }
      return out;
    }
    x.X = x1.X;
    x.s = x1.s.head(P.scalars);
  }

  const PathOutcome r2 = follow_path(P, x, set, steps, t_final, reason);
  out.newton_steps = steps;
  out.duality_gap = P.nu / t_final;
  out.psd_blocks = x.X;
  out.scalars = x.s.head(nuser);
  ConicPoint cp{out.psd_blocks, out.scalars};
  out.objective_value = prog.objective_value(cp);
  switch (r2) {
    case PathOutcome::Converged:
    case PathOutcome::Stopped: out.status = SolveStatus::Optimal; break;
    case PathOutcome::MaxIters:
      out.status = SolveStatus::MaxIters;
      out.message = "Newton step limit reached";
      break;
    case PathOutcome::Numerical:
      out.status = SolveStatus::NumericalFailure;
      out.message = reason;
      break;
  }
  return out;
}

// ---- rank-1 recovery ------------------------------------------------------

struct Rank1Recovery {
  Eigen::VectorXcd vector;
  bool randomized = false;
  /// lambda_max / Tr(X).
  double eigen_ratio = 1.0;
};

/// Beamformer from a lifted matrix: dominant eigenpair when X is close enough
/// to rank one, otherwise Gaussian randomization scored by `score` (first
/// maximum wins). Without a score, candidates are ranked by chi^H X chi.
inline Rank1Recovery recover_rank1(const Eigen::MatrixXcd& X, const SolverConfig& cfg, Rng& rng,
                                   const std::function<double(const Eigen::VectorXcd&)>& score = {}) {
  const Eigen::MatrixXcd Xh = 0.5 * (X + X.adjoint());
  const double tr = Xh.trace().real();
  Rank1Recovery out;
  if (tr <= 0.0) {
    if (tr < 0.0) throw std::invalid_argument("recover_rank1: negative trace");
    out.vector = Eigen::VectorXcd::Zero(X.rows());
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(Xh);
  const Eigen::VectorXd lam = es.eigenvalues();
  if (lam(0) < -1e-8 * tr) throw std::invalid_argument("recover_rank1: matrix is not positive semidefinite");
  const Eigen::Index top = lam.size() - 1;
  out.eigen_ratio = lam(top) / tr;
  Eigen::VectorXcd principal = std::sqrt(std::max(0.0, lam(top))) * es.eigenvectors().col(top);
  if (out.eigen_ratio >= cfg.rank1_ratio_threshold || cfg.randomization_trials == 0) {
    out.vector = principal;
    return out;
  }
  out.randomized = true;
  const Eigen::VectorXd root = lam.cwiseMax(0.0).cwiseSqrt();
  auto rank = [&](const Eigen::VectorXcd& c) {
    return score ? score(c) : (c.adjoint() * Xh * c)(0, 0).real();
  };
  double best = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < cfg.randomization_trials; ++trial) {
    Eigen::VectorXcd xi(X.rows());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = rng.complex_normal();
    Eigen::VectorXcd c = es.eigenvectors() * (root.cast<cplx>().cwiseProduct(xi));
    const double n2 = c.squaredNorm();
    if (n2 <= 0.0) continue;
    c *= std::sqrt(tr / n2);
    const double s = rank(c);
    if (s > best) {
      best = s;
      out.vector = c;
    }
  }
  if (out.vector.size() == 0) out.vector = principal;
  return out;
}

}  // namespace cfmimo::conic
