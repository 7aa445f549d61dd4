#pragma once

// Cost triple (g, g0, h) of the control problem. The quadratic trackers are
// the default; any triple with Lipschitz Dg, Dg0 and Lipschitz (dh)^-1 can be
// supplied through the callbacks.

#include <functional>
#include <memory>
#include <vector>

#include "fhnopt/grid.hpp"

namespace fhnopt {

struct CostSpec {
  // Running cost g and its H-gradient Dg; `node` is the time node index.
  std::function<double(int node, const StateX&)> running;
  std::function<StateX(int node, const StateX&)> running_grad;
  // Terminal cost g0 and Dg0.
  std::function<double(const StateX&)> terminal;
  std::function<StateX(const StateX&)> terminal_grad;
  // Control cost h on U, its (single-valued) subdifferential and inverse.
  std::function<double(const Field&)> control;
  std::function<Field(const Field&)> control_grad;
  std::function<Field(const Field&)> control_inverse;

  double terminal_lipschitz = 0.0;  // ||Dg0||_Lip
  double inverse_lipschitz = 0.0;   // L = ||(dh)^-1||_Lip
};

struct QuadraticCostParams {
  double alpha = 2.0;            // h(u) = alpha/2 |u|_U^2
  double terminal_weight = 0.1;  // c0 in g0(X) = c0/2 |X - X_T|_H^2
  // g(X) = 1/2 |X - X_ref(t)|_H^2. One entry means a constant reference,
  // otherwise one entry per time node.
  std::vector<StateX> reference;
  StateX target;
};

inline CostSpec quadratic_cost(const Grid& g, double gamma, QuadraticCostParams q) {
  if (!(q.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(q.terminal_weight >= 0.0)) throw ConfigError("terminal weight c0 must be nonnegative");
  if (q.reference.empty()) q.reference.push_back(StateX::zeros(g));
  if (q.target.v.size() == 0) q.target = StateX::zeros(g);
  for (const auto& r : q.reference) require_on_grid(g, r, "reference path");
  require_on_grid(g, q.target, "terminal target");

  auto ref = std::make_shared<const std::vector<StateX>>(std::move(q.reference));
  auto target = std::make_shared<const StateX>(std::move(q.target));
  auto ref_at = [ref](int node) -> const StateX& {
    return ref->size() == 1 ? ref->front() : ref->at(static_cast<std::size_t>(node));
  };
  const double alpha = q.alpha;
  const double c0 = q.terminal_weight;

  CostSpec c;
  c.running = [g, gamma, ref_at](int node, const StateX& x) { return 0.5 * norm_h_sq(g, gamma, x - ref_at(node)); };
  c.running_grad = [ref_at](int node, const StateX& x) { return x - ref_at(node); };
  c.terminal = [g, gamma, c0, target](const StateX& x) { return 0.5 * c0 * norm_h_sq(g, gamma, x - *target); };
  c.terminal_grad = [c0, target](const StateX& x) { return c0 * (x - *target); };
  c.control = [g, alpha](const Field& u) { return 0.5 * alpha * norm_l2_sq(g, u); };
  c.control_grad = [alpha](const Field& u) -> Field { return alpha * u; };
  c.control_inverse = [alpha](const Field& q) -> Field { return q / alpha; };
  c.terminal_lipschitz = c0;
  c.inverse_lipschitz = 1.0 / alpha;
  return c;
}

// (c g, c g0, h): the state-dependent part scaled by c.
inline CostSpec scale_state_costs(CostSpec c, double factor) {
  auto run = c.running;
  auto run_grad = c.running_grad;
  auto term = c.terminal;
  auto term_grad = c.terminal_grad;
  c.running = [run, factor](int n, const StateX& x) { return factor * run(n, x); };
  c.running_grad = [run_grad, factor](int n, const StateX& x) { return factor * run_grad(n, x); };
  c.terminal = [term, factor](const StateX& x) { return factor * term(x); };
  c.terminal_grad = [term_grad, factor](const StateX& x) { return factor * term_grad(x); };
  c.terminal_lipschitz *= std::abs(factor);
  return c;
}

inline Field subdiff_inverse(const CostSpec& cost, const Field& q) { return cost.control_inverse(q); }

// Directional derivative h'(u, v) = <dh(u), v>_U for differentiable h.
inline double control_directional(const CostSpec& cost, const Grid& g, const Field& u, const Field& v) {
  return inner_l2(g, cost.control_grad(u), v);
}

}  // namespace fhnopt
