#pragma once

// System in variations, the dual backward equation and the duality identity.
//
// The backward sweep is the transpose of the forward IMEX step
//   X_{n+1} = S (I + dt F) X_n + dt S B u_n + S dW_n,   S = (I - dt A)^-1,
// taken in the weighted H product, so S* = (I - dt A*)^-1. With the cost
//   sum_{n<N} dt (g(X_n) + h(u_n)) + g0(X_N)
// two views of the costate fall out of the transposition:
//   control-stage  q_n = S* P_{n+1}            (pairs with u_n; exact gradient)
//   nodal          p_n = (I + dt DF(X_n)) q_n  (transpose of the whole step)
// with P_N = p_N = -Dg0(X_N) and P_{n+1} = p_{n+1} - dt Dg(X_{n+1}) otherwise.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "fhnopt/cost.hpp"
#include "fhnopt/forward.hpp"

namespace fhnopt {

struct VariationPath {
  std::vector<StateX> z;  // N + 1 nodes, z[0] = 0
};

struct AdjointPath {
  std::vector<StateX> p;          // nodal costate, N + 1 nodes, p[N] = -Dg0(X_N)
  std::vector<StateX> p_control;  // control-stage costate, N + 1 nodes (last = p[N])
  std::vector<StateX> kappa;      // martingale part per step, zero when deterministic
};

// Linearised step along the frozen trajectory: exact derivative of the
// discrete forward map in the direction of the control.
inline VariationPath solve_variational(const Model& m, const Trajectory& tr, const ControlPath& direction) {
  const int N = m.time().steps;
  if (tr.states.size() != static_cast<std::size_t>(N) + 1) throw ContractError("solve_variational: incomplete trajectory");
  require_control_shape(m.grid(), m.time(), direction, "solve_variational");
  VariationPath out;
  out.z.reserve(tr.states.size());
  out.z.push_back(StateX::zeros(m.grid()));
  const double dt = m.dt();
  for (int n = 0; n < N; ++n) {
    const auto sn = static_cast<std::size_t>(n);
    const StateX& z = out.z.back();
    StateX rhs = z + dt * (df_apply(m.params(), tr.states[sn], z) + actuator_apply(m.actuator(), direction[sn]));
    out.z.push_back(m.solver().solve(rhs));
    check_state(m, out.z.back(), n + 1);
  }
  return out;
}

// Pathwise backward sweep. Exact for Q = 0; for Q > 0 it is the anticipating
// (non-adapted) costate of one noise realisation.
inline AdjointPath solve_adjoint_deterministic(const Model& m, const Trajectory& tr, const CostSpec& cost) {
  const int N = m.time().steps;
  if (tr.states.size() != static_cast<std::size_t>(N) + 1) throw ContractError("solve_adjoint: incomplete trajectory");
  const double dt = m.dt();
  const auto sN = static_cast<std::size_t>(N);
  AdjointPath a;
  a.p.resize(sN + 1);
  a.p_control.resize(sN + 1);
  a.kappa.assign(sN, StateX::zeros(m.grid()));
  a.p[sN] = -1.0 * cost.terminal_grad(tr.states[sN]);
  a.p_control[sN] = a.p[sN];
  for (int n = N - 1; n >= 0; --n) {
    const auto sn = static_cast<std::size_t>(n);
    StateX next = a.p[sn + 1];
    if (n + 1 < N) next -= dt * cost.running_grad(n + 1, tr.states[sn + 1]);
    a.p_control[sn] = m.solver().solve_adjoint(next);
    a.p[sn] = a.p_control[sn] + dt * df_apply(m.params(), tr.states[sn], a.p_control[sn]);
  }
  return a;
}

struct RegressionOptions {
  int basis_size = 9;  // constant + leading modal coefficients of (v, w)
  double ridge = 1e-8;
  bool keep_paths = true;
};

struct RegressionAdjoint {
  std::vector<AdjointPath> paths;      // per path when keep_paths
  std::vector<StateX> mean_p;          // ensemble mean of the nodal costate
  std::vector<StateX> mean_p_control;  // ensemble mean of the control-stage costate
  int degraded_steps = 0;              // steps where features were dropped or ridge raised
  std::vector<std::string> warnings;
};

namespace detail {

// Feature matrix: constant column plus <v, e_k>, <w, e_k> for leading modes.
class RegressionFeatures {
 public:
  RegressionFeatures(const Grid& g, int basis_size) : grid_(g) {
    if (basis_size < 1) throw ConfigError("regression basis must contain at least the constant");
    n_v_ = basis_size / 2;
    n_w_ = (basis_size - 1) / 2;
    const int modes = std::max(n_v_, n_w_);
    if (modes > g.size()) throw ConfigError("regression basis larger than the grid mode count");
    for (int k = 1; k <= modes; ++k) modes_.push_back(neumann_eigenmode(g, k).cwiseProduct(g.weights()));
  }

  int size() const noexcept { return 1 + n_v_ + n_w_; }

  void fill(const StateX& x, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const {
    row(0) = 1.0;
    int c = 1;
    for (int k = 0; k < n_v_; ++k) row(c++) = modes_[static_cast<std::size_t>(k)].dot(x.v);
    for (int k = 0; k < n_w_; ++k) row(c++) = modes_[static_cast<std::size_t>(k)].dot(x.w);
  }

 private:
  Grid grid_;
  int n_v_ = 0;
  int n_w_ = 0;
  std::vector<Field> modes_;  // weighted, so a dot product is the L2 projection
};

inline StateX unpack(const Eigen::Ref<const Eigen::RowVectorXd>& row, Eigen::Index g) {
  return {row.head(g).transpose(), row.tail(g).transpose()};
}

}  // namespace detail

// Backward sweep with conditional expectations E[. | X_n] replaced by a
// least-squares fit over the ensemble. The fit keeps the intercept
// unpenalised, so the ensemble mean of the fitted values equals the mean of
// the targets. kappa holds the regression residual scaled by dt^-1/2.
inline RegressionAdjoint solve_adjoint_regression(const Model& m, const std::vector<Trajectory>& ensemble,
                                                  const CostSpec& cost, const RegressionOptions& opt = {}) {
  const detail::RegressionFeatures features(m.grid(), opt.basis_size);
  const auto M = static_cast<Eigen::Index>(ensemble.size());
  if (M < 10 * features.size()) {
    throw ConfigError("regression adjoint needs at least 10x basis size paths (" + std::to_string(10 * features.size()) +
                      "), got " + std::to_string(M));
  }
  const int N = m.time().steps;
  const auto sN = static_cast<std::size_t>(N);
  for (const auto& tr : ensemble) {
    if (tr.states.size() != sN + 1) throw ContractError("solve_adjoint_regression: incomplete trajectory");
  }
  const Eigen::Index G = m.grid().size();
  const double dt = m.dt();
  const int B = features.size();

  RegressionAdjoint out;
  out.mean_p.assign(sN + 1, StateX::zeros(m.grid()));
  out.mean_p_control.assign(sN + 1, StateX::zeros(m.grid()));
  if (opt.keep_paths) {
    out.paths.resize(static_cast<std::size_t>(M));
    for (auto& a : out.paths) {
      a.p.resize(sN + 1);
      a.p_control.resize(sN + 1);
      a.kappa.resize(sN);
    }
  }

  // Current nodal costate per path, rows = paths, [v | w].
  Eigen::MatrixXd current(M, 2 * G);
  parallel_for(static_cast<std::size_t>(M), [&](std::size_t i) {
    const StateX pN = -1.0 * cost.terminal_grad(ensemble[i].states[sN]);
    current.row(static_cast<Eigen::Index>(i)) << pN.v.transpose(), pN.w.transpose();
  });
  auto store_mean = [&](std::vector<StateX>& dst, std::size_t n, const Eigen::MatrixXd& rows) {
    dst[n] = detail::unpack(rows.colwise().mean(), G);
  };
  store_mean(out.mean_p, sN, current);
  out.mean_p_control[sN] = out.mean_p[sN];
  if (opt.keep_paths) {
    for (Eigen::Index i = 0; i < M; ++i) {
      auto& a = out.paths[static_cast<std::size_t>(i)];
      a.p[sN] = detail::unpack(current.row(i), G);
      a.p_control[sN] = a.p[sN];
    }
  }

  Eigen::MatrixXd target(M, 2 * G);
  Eigen::MatrixXd phi(M, B);
  Eigen::MatrixXd stage(M, 2 * G);
  for (int n = N - 1; n >= 0; --n) {
    const auto sn = static_cast<std::size_t>(n);
    parallel_for(static_cast<std::size_t>(M), [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      target.row(r) = current.row(r);
      if (n + 1 < N) {
        const StateX dg = cost.running_grad(n + 1, ensemble[i].states[sn + 1]);
        target.row(r).head(G) -= dt * dg.v.transpose();
        target.row(r).tail(G) -= dt * dg.w.transpose();
      }
      features.fill(ensemble[i].states[sn], phi.row(r));
    });

    // Standardise the non-constant columns; drop those with no spread.
    std::vector<Eigen::Index> kept{0};
    Eigen::MatrixXd design(M, B);
    design.col(0).setOnes();
    bool degraded = false;
    for (Eigen::Index j = 1; j < B; ++j) {
      const double mean = phi.col(j).mean();
      const double sd = std::sqrt((phi.col(j).array() - mean).square().mean());
      if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
        degraded = true;
        continue;
      }
      design.col(static_cast<Eigen::Index>(kept.size())) = (phi.col(j).array() - mean) / sd;
      kept.push_back(j);
    }
    const auto K = static_cast<Eigen::Index>(kept.size());
    const Eigen::MatrixXd X = design.leftCols(K);
    Eigen::MatrixXd gram = X.transpose() * X;
    double ridge = opt.ridge * static_cast<double>(M);
    Eigen::MatrixXd beta;
    for (int attempt = 0;; ++attempt) {
      Eigen::MatrixXd reg = gram;
      reg.diagonal().tail(K - 1).array() += ridge;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
      const bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                      ldlt.vectorD().minCoeff() > 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff());
      if (ok) {
        beta = ldlt.solve(X.transpose() * target);
        break;
      }
      if (attempt >= 6) throw NumericalError("regression adjoint: normal equations singular at step " + std::to_string(n));
      degraded = true;
      ridge = std::max(ridge * 1e3, 1e-10 * static_cast<double>(M));
    }
    if (degraded) {
      ++out.degraded_steps;
      if (out.warnings.size() < 8) {
        out.warnings.push_back("degraded regression basis at step " + std::to_string(n) + " (" +
                               std::to_string(K) + " of " + std::to_string(B) + " features kept)");
      }
    }

    // S* is linear: apply it to each coefficient row instead of each path.
    Eigen::MatrixXd beta_stage(K, 2 * G);
    for (Eigen::Index j = 0; j < K; ++j) {
      const StateX s = m.solver().solve_adjoint(detail::unpack(beta.row(j), G));
      beta_stage.row(j) << s.v.transpose(), s.w.transpose();
    }
    const Eigen::MatrixXd fitted = X * beta;
    stage = X * beta_stage;

    parallel_for(static_cast<std::size_t>(M), [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      const StateX q = detail::unpack(stage.row(r), G);
      const StateX p = q + dt * df_apply(m.params(), ensemble[i].states[sn], q);
      current.row(r) << p.v.transpose(), p.w.transpose();
      if (opt.keep_paths) {
        auto& a = out.paths[i];
        a.p_control[sn] = q;
        a.p[sn] = p;
        a.kappa[sn] = detail::unpack((target.row(r) - fitted.row(r)) / std::sqrt(dt), G);
      }
    });
    store_mean(out.mean_p, sn, current);
    store_mean(out.mean_p_control, sn, stage);
  }
  return out;
}

struct DualityTerms {
  double lhs = 0.0;  // int <Dg(X), Z> dt + <Dg0(X_T), Z_T>
  double rhs = 0.0;  // int <Bv, p> dt
};

// Both sides of the duality identity for one path, left-rectangle quadrature
// matching the cost functional.
inline DualityTerms duality_terms(const Model& m, const Trajectory& tr, const AdjointPath& adj,
                                  const ControlPath& direction, const CostSpec& cost) {
  const int N = m.time().steps;
  const auto sN = static_cast<std::size_t>(N);
  if (adj.p.size() != sN + 1) throw ContractError("duality_gap: adjoint path has the wrong length");
  const VariationPath z = solve_variational(m, tr, direction);
  const Grid& g = m.grid();
  const double gamma = m.gamma();
  const double dt = m.dt();
  DualityTerms t;
  for (int n = 0; n < N; ++n) {
    const auto sn = static_cast<std::size_t>(n);
    t.lhs += dt * inner_h(g, gamma, cost.running_grad(n, tr.states[sn]), z.z[sn]);
    t.rhs += dt * inner_h(g, gamma, actuator_apply(m.actuator(), direction[sn]), adj.p[sn]);
  }
  t.lhs += inner_h(g, gamma, cost.terminal_grad(tr.states[sN]), z.z[sN]);
  return t;
}

// Relative residual of the identity. With p(T) = -Dg0(X(T)) the identity
// reads lhs = -rhs, so the gap is (lhs + rhs) / |rhs|.
inline double duality_gap(const Model& m, const Trajectory& tr, const AdjointPath& adj, const ControlPath& direction,
                          const CostSpec& cost) {
  const DualityTerms t = duality_terms(m, tr, adj, direction, cost);
  const double scale = std::abs(t.rhs);
  if (scale == 0.0) return std::abs(t.lhs + t.rhs);
  return (t.lhs + t.rhs) / scale;
}

}  // namespace fhnopt
