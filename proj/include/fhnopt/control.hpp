#pragma once

// Cost functional, gradient, contraction margin and the Ekeland-regularised
// fixed-point loop u = (dh)^-1(B* p).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fhnopt/adjoint.hpp"
#include "fhnopt/cost.hpp"
#include "fhnopt/forward.hpp"

namespace fhnopt {

enum class AdjointMethod {
  regression,  // adapted costate via least-squares conditional expectations
  pathwise,    // per-path anticipating costate; exact gradient of the sample average
};

// Everything the control loop needs besides the control itself. In
// deterministic models the ensemble collapses to one noiseless path.
struct ControlProblem {
  Model model;
  StateX x0;
  CostSpec cost;
  std::uint64_t seed = 0;
  int ensemble = 1;
  AdjointMethod adjoint = AdjointMethod::regression;
  RegressionOptions regression;

  int paths() const { return model.deterministic() ? 1 : ensemble; }
};

struct PsiEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// Left-rectangle value of the cost along one path.
inline double psi_path(const CostSpec& cost, const Model& m, const Trajectory& tr, const ControlPath& u) {
  const int N = m.time().steps;
  if (tr.states.size() != static_cast<std::size_t>(N) + 1) throw ContractError("psi_path: incomplete trajectory");
  require_control_shape(m.grid(), m.time(), u, "psi_path");
  double running = 0.0;
  for (int n = 0; n < N; ++n) {
    const auto sn = static_cast<std::size_t>(n);
    running += cost.running(n, tr.states[sn]) + cost.control(u[sn]);
  }
  return m.dt() * running + cost.terminal(tr.states.back());
}

inline PsiEstimate summarize(const std::vector<double>& values) {
  PsiEstimate e;
  if (values.empty()) return e;
  const double M = static_cast<double>(values.size());
  for (double v : values) e.mean += v;
  e.mean /= M;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - e.mean) * (v - e.mean);
    e.std_error = std::sqrt(ss / (M - 1.0) / M);
  }
  return e;
}

// Paths 0..M-1 of the problem seed are reused for every control, so two
// estimates differ only through u (common random numbers).
inline PsiEstimate psi_estimate(const ControlProblem& prob, const ControlPath& u, int ensemble) {
  if (ensemble < 1) throw ConfigError("psi_estimate: ensemble size must be at least 1");
  const std::size_t M = prob.model.deterministic() ? 1 : static_cast<std::size_t>(ensemble);
  auto shared = std::make_shared<const ControlPath>(u);
  std::vector<double> values(M);
  parallel_for(M, [&](std::size_t p) {
    const Trajectory tr = integrate(prob.model, prob.x0, shared, prob.seed, p, false);
    values[p] = psi_path(prob.cost, prob.model, tr, u);
  });
  return summarize(values);
}

inline PsiEstimate psi_estimate(const ControlProblem& prob, const ControlPath& u) {
  return psi_estimate(prob, u, prob.paths());
}

// U-gradient of Psi at u: dh(u) - B* pbar, node by node. `pbar` is the
// control-stage costate (ensemble mean).
inline ControlPath gradient(const CostSpec& cost, const Model& m, const ControlPath& u, const std::vector<StateX>& pbar) {
  require_control_shape(m.grid(), m.time(), u, "gradient");
  if (pbar.size() != u.size()) {
    throw ContractError("gradient: adjoint has " + std::to_string(pbar.size()) + " nodes, control has " +
                        std::to_string(u.size()));
  }
  ControlPath g;
  g.nodes.reserve(u.size());
  for (std::size_t n = 0; n < u.size(); ++n) {
    g.nodes.push_back(cost.control_grad(u[n]) - actuator_adjoint(m.actuator(), m.gamma(), pbar[n]));
  }
  return g;
}

// (dh)^-1(B* pbar + shift): the candidate of the optimality map.
inline ControlPath optimality_map(const CostSpec& cost, const Model& m, const std::vector<StateX>& pbar,
                                  const ControlPath* shift = nullptr) {
  ControlPath out;
  out.nodes.reserve(pbar.size());
  for (std::size_t n = 0; n < pbar.size(); ++n) {
    Field q = actuator_adjoint(m.actuator(), m.gamma(), pbar[n]);
    if (shift) q += (*shift)[n];
    out.nodes.push_back(cost.control_inverse(q));
  }
  return out;
}

// Forward ensemble plus costate at one control.
struct Evaluation {
  PsiEstimate psi;
  std::vector<Trajectory> paths;
  std::vector<StateX> mean_p;          // nodal costate
  std::vector<StateX> mean_p_control;  // control-stage costate
  double sup_energy = 0.0;             // sup_t of the ensemble mean of |X|_H^2
  std::vector<std::string> warnings;
};

inline Evaluation evaluate(const ControlProblem& prob, const ControlPath& u) {
  const Model& m = prob.model;
  const std::size_t M = static_cast<std::size_t>(prob.paths());
  auto shared = std::make_shared<const ControlPath>(u);
  Evaluation ev;
  ev.paths = integrate_ensemble(m, prob.x0, shared, prob.seed, M);
  std::vector<double> values(M);
  for (std::size_t p = 0; p < M; ++p) values[p] = psi_path(prob.cost, m, ev.paths[p], u);
  ev.psi = summarize(values);
  ev.sup_energy = ensemble_energy(m.grid(), m.gamma(), m.dt(), ev.paths).sup_mean_h_sq;

  if (M == 1 || prob.adjoint == AdjointMethod::pathwise) {
    std::vector<AdjointPath> adj(M);
    parallel_for(M, [&](std::size_t p) { adj[p] = solve_adjoint_deterministic(m, ev.paths[p], prob.cost); });
    const std::size_t nodes = adj.front().p.size();
    ev.mean_p.assign(nodes, StateX::zeros(m.grid()));
    ev.mean_p_control.assign(nodes, StateX::zeros(m.grid()));
    for (const auto& a : adj) {
      for (std::size_t n = 0; n < nodes; ++n) {
        ev.mean_p[n] += a.p[n];
        ev.mean_p_control[n] += a.p_control[n];
      }
    }
    const double inv = 1.0 / static_cast<double>(M);
    for (std::size_t n = 0; n < nodes; ++n) {
      ev.mean_p[n] *= inv;
      ev.mean_p_control[n] *= inv;
    }
  } else {
    RegressionOptions ro = prob.regression;
    ro.keep_paths = false;
    RegressionAdjoint ra = solve_adjoint_regression(m, ev.paths, prob.cost, ro);
    ev.mean_p = std::move(ra.mean_p);
    ev.mean_p_control = std::move(ra.mean_p_control);
    ev.warnings = std::move(ra.warnings);
  }
  return ev;
}

struct ContractionMargin {
  double margin = 0.0;                 // L T + ||Dg0||_Lip
  std::optional<double> threshold;     // calibrated empirically, if known
  bool below_threshold() const { return threshold && margin < *threshold; }
};

inline ContractionMargin contraction_margin(const CostSpec& cost, double horizon,
                                            std::optional<double> threshold = std::nullopt) {
  if (!(horizon >= 0.0)) throw ConfigError("contraction_margin: horizon must be nonnegative");
  return {cost.inverse_lipschitz * horizon + cost.terminal_lipschitz, threshold};
}

struct OptimizeOptions {
  double epsilon0 = 1e-14;  // eps_k = epsilon0 4^-k
  double tolerance = 1e-8;  // on the fixed-point residual |(dh)^-1(B* p(u)) - u|
  int max_iterations = 60;
  bool use_theta = true;    // false: plain fixed-point iteration
  bool line_search = true;
  int max_backtracks = 20;
  std::optional<double> threshold;  // calibrated contraction threshold for the report
};

struct IterationRecord {
  int iteration = 0;
  double psi = 0.0;
  double psi_stderr = 0.0;
  double residual = 0.0;  // |(dh)^-1(B* p(u_k)) - u_k|_U
  double epsilon = 0.0;
  double margin = 0.0;
  bool accepted = false;
  double step = 0.0;      // |u_{k+1} - u_k|_U
  double sup_energy = 0.0;
  int backtracks = 0;
  double slope = 0.0;     // <gradient(u_k), u_{k+1} - u_k>_U
};

struct OptimizeReport {
  std::vector<IterationRecord> history;
  bool converged = false;
  int iterations = 0;
  ControlPath control;                // u*
  std::vector<Trajectory> states;     // X* ensemble
  std::vector<StateX> mean_p;         // nodal costate at u*
  double certificate = 0.0;           // |u* - (dh)^-1(B* p(u*))|_U, p recomputed at u*
  ContractionMargin margin;
  std::vector<std::string> warnings;
};

// Ekeland-regularised loop. Each iteration evaluates u_k, forms the candidate
// (dh)^-1(B* p + sqrt(eps_k) theta_k) with theta_k the unit direction of the
// previous accepted step, and backtracks from it towards u_k until
//   Psi(u_k + s d) + sqrt(eps_k) s |d| <= Psi(u_k).
// A failed search keeps u_k; eps still follows its schedule.
inline OptimizeReport optimize(const ControlProblem& prob, const OptimizeOptions& opt, ControlPath u0) {
  const Model& m = prob.model;
  const Grid& g = m.grid();
  const TimeGrid& t = m.time();
  require_control_shape(g, t, u0, "optimize: initial control");
  if (!(opt.epsilon0 >= 0.0)) throw ConfigError("epsilon0 must be nonnegative");
  if (!(opt.tolerance > 0.0)) throw ConfigError("optimize tolerance must be positive");
  if (opt.max_iterations < 1) throw ConfigError("max_iterations must be at least 1");

  OptimizeReport rep;
  rep.margin = contraction_margin(prob.cost, t.horizon, opt.threshold);
  ControlPath u = std::move(u0);
  ControlPath theta = ControlPath::zeros(g, t);
  Evaluation ev = evaluate(prob, u);
  auto note = [&rep](const std::vector<std::string>& w) {
    for (const auto& s : w) {
      if (rep.warnings.size() < 16 && std::find(rep.warnings.begin(), rep.warnings.end(), s) == rep.warnings.end()) {
        rep.warnings.push_back(s);
      }
    }
  };
  note(ev.warnings);

  for (int k = 0; k < opt.max_iterations; ++k) {
    const double eps = opt.epsilon0 * std::pow(4.0, -k);
    const double root_eps = std::sqrt(eps);
    IterationRecord rec;
    rec.iteration = k;
    rec.psi = ev.psi.mean;
    rec.psi_stderr = ev.psi.std_error;
    rec.epsilon = eps;
    rec.margin = rep.margin.margin;
    rec.sup_energy = ev.sup_energy;

    const ControlPath fixed = optimality_map(prob.cost, m, ev.mean_p_control);
    rec.residual = control_norm(g, t, fixed - u);
    if (rec.residual < opt.tolerance) {
      rep.history.push_back(rec);
      rep.converged = true;
      break;
    }

    ControlPath shift = root_eps * theta;
    const ControlPath candidate =
        opt.use_theta && root_eps > 0.0 ? optimality_map(prob.cost, m, ev.mean_p_control, &shift) : fixed;
    const ControlPath d = candidate - u;
    const double dnorm = control_norm(g, t, d);
    const ControlPath grad = gradient(prob.cost, m, u, ev.mean_p_control);

    double s = 1.0;
    std::optional<Evaluation> next;
    for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
      Evaluation trial = evaluate(prob, u + s * d);
      const bool ok = !opt.line_search || trial.psi.mean + root_eps * s * dnorm <= ev.psi.mean;
      if (ok) {
        next = std::move(trial);
        rec.backtracks = bt;
        break;
      }
      s *= 0.5;
    }
    if (next) {
      rec.accepted = true;
      rec.step = s * dnorm;
      rec.slope = s * control_inner(g, t, grad, d);
      u += s * d;
      theta = (1.0 / dnorm) * d;
      ev = std::move(*next);
      note(ev.warnings);
    } else {
      rec.backtracks = opt.max_backtracks + 1;
    }
    rep.history.push_back(rec);
  }

  rep.iterations = static_cast<int>(rep.history.size());
  // Certificate: costate recomputed from scratch at the returned control.
  Evaluation fin = evaluate(prob, u);
  rep.certificate = control_norm(g, t, u - optimality_map(prob.cost, m, fin.mean_p_control));
  rep.states = std::move(fin.paths);
  rep.mean_p = std::move(fin.mean_p);
  rep.control = std::move(u);
  return rep;
}

inline OptimizeReport optimize(const ControlProblem& prob, const OptimizeOptions& opt = {}) {
  return optimize(prob, opt, ControlPath::zeros(prob.model.grid(), prob.model.time()));
}

// Largest successive residual ratio r_{k+1}/r_k over iterations >= from.
inline double worst_residual_ratio(const OptimizeReport& rep, int from = 3) {
  double worst = 0.0;
  for (std::size_t k = static_cast<std::size_t>(std::max(from, 0)) + 1; k < rep.history.size(); ++k) {
    const double prev = rep.history[k - 1].residual;
    if (prev > 0.0) worst = std::max(worst, rep.history[k].residual / prev);
  }
  return worst;
}

struct MarginSweepRow {
  double horizon = 0.0;
  double margin = 0.0;
  int iterations = 0;
  bool converged = false;
  double worst_ratio = 0.0;
  double final_residual = 0.0;
  bool geometric = false;  // converged with every ratio after iteration 3 <= 0.9
};

struct MarginSweep {
  std::vector<MarginSweepRow> rows;
  std::optional<double> threshold;  // smallest margin where geometric decay is lost
};

// Reruns plain fixed-point iteration over a set of horizons at fixed dt and
// reports where geometric residual decay stops. A diagnostic, not a proof.
inline MarginSweep margin_sweep(const ControlProblem& base, const std::vector<double>& horizons, OptimizeOptions opt) {
  opt.use_theta = false;
  opt.line_search = false;
  MarginSweep out;
  const double dt = base.model.dt();
  for (double T : horizons) {
    const int steps = std::max(1, static_cast<int>(std::lround(T / dt)));
    ControlProblem prob = base;
    prob.model = Model(base.model.grid(), base.model.params(), base.model.covariance(), base.model.actuator(),
                       TimeGrid::make(T, steps));
    MarginSweepRow row;
    row.horizon = T;
    row.margin = contraction_margin(base.cost, T).margin;
    try {
      const OptimizeReport rep = optimize(prob, opt);
      row.iterations = rep.iterations;
      row.converged = rep.converged;
      row.worst_ratio = worst_residual_ratio(rep);
      row.final_residual = rep.history.empty() ? 0.0 : rep.history.back().residual;
    } catch (const BlowUpError&) {
      row.converged = false;
      row.worst_ratio = std::numeric_limits<double>::infinity();
      row.final_residual = std::numeric_limits<double>::infinity();
    }
    row.geometric = row.converged && row.worst_ratio <= 0.9;
    if (!row.geometric && (!out.threshold || row.margin < *out.threshold)) out.threshold = row.margin;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace fhnopt
