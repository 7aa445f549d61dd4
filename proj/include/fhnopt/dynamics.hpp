#pragma once

// FitzHugh-Nagumo reaction terms, the linear operator A and their
// derivatives.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "fhnopt/grid.hpp"

namespace fhnopt {

struct FhnParams {
  double a = 0.25;
  double b = 1.0;
  double gamma = 0.5;
  double delta = 0.8;
  // External forcing f; empty means f = 0.
  Field forcing;
  // false drops F entirely (linear test mode).
  bool reaction = true;

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    if (!std::isfinite(a) || !std::isfinite(b)) throw ConfigError("cubic roots a, b must be finite");
    if (forcing.size() > 0 && !forcing.allFinite()) throw ConfigError("forcing must be finite");
  }

  // One-sided Lipschitz constant of -I_ion: max_v -I_ion'(v) clipped at 0.
  double eta() const { return std::max(0.0, (a + b) * (a + b) / 3.0 - a * b); }
};

inline double i_ion(const FhnParams& p, double v) { return v * (v - p.a) * (v - p.b); }

inline double i_ion_prime(const FhnParams& p, double v) { return 3.0 * v * v - 2.0 * (p.a + p.b) * v + p.a * p.b; }

// F(v, w) = (-I_ion(v) + f, 0).
inline StateX f_apply(const FhnParams& p, const StateX& x) {
  if (!p.reaction) return {Field::Zero(x.v.size()), Field::Zero(x.w.size())};
  if (x.v.size() != x.w.size()) throw ContractError("f_apply: v and w sizes differ");
  Field fv = x.v.unaryExpr([&](double v) { return -i_ion(p, v); });
  if (p.forcing.size() > 0) {
    if (p.forcing.size() != fv.size()) throw ContractError("f_apply: forcing not on the state grid");
    fv += p.forcing;
  }
  return {std::move(fv), Field::Zero(x.w.size())};
}

// DF(X) Z = (-I_ion'(v) z_v, 0).
inline StateX df_apply(const FhnParams& p, const StateX& x, const StateX& z) {
  if (x.v.size() != z.v.size() || z.v.size() != z.w.size()) throw ContractError("df_apply: size mismatch");
  if (!p.reaction) return {Field::Zero(z.v.size()), Field::Zero(z.w.size())};
  Field out = x.v.unaryExpr([&](double v) { return -i_ion_prime(p, v); }).cwiseProduct(z.v);
  return {std::move(out), Field::Zero(z.w.size())};
}

// A X = (Lap v - w, gamma v - delta w).
inline StateX a_apply(const FhnParams& p, const Grid& g, const StateX& x) {
  require_on_grid(g, x, "a_apply");
  return {neumann_laplacian(g, x.v) - x.w, p.gamma * x.v - p.delta * x.w};
}

// H-adjoint of A under the weighted product: (Lap p_v + p_w, -gamma p_v - delta p_w).
inline StateX a_adjoint_apply(const FhnParams& p, const Grid& g, const StateX& x) {
  require_on_grid(g, x, "a_adjoint_apply");
  return {neumann_laplacian(g, x.v) + x.w, -p.gamma * x.v - p.delta * x.w};
}

struct MarginReport {
  double sampled = 0.0;
  double analytic = 0.0;
};

// Largest sampled <F(x) - F(y), x - y>_H / |x - y|_H^2 over random pairs,
// next to the analytic eta. Pairs mix scales and cluster some samples around
// the vertex (a+b)/3 where the bound is attained.
inline MarginReport one_sided_margin(const FhnParams& p, const Grid& g, int samples, std::mt19937_64& rng) {
  if (samples < 1) throw ConfigError("one_sided_margin needs at least one sample");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double vertex = (p.a + p.b) / 3.0;
  const Eigen::Index m = g.size();
  double best = -std::numeric_limits<double>::infinity();
  StateX x{Field(m), Field(m)}, y{Field(m), Field(m)};
  for (int s = 0; s < samples; ++s) {
    const double centre = (s % 2 == 0) ? vertex : -3.0 + 6.0 * unit(rng);
    const double spread = std::pow(10.0, -4.0 + 5.0 * unit(rng));
    const double gap = std::pow(10.0, -6.0 + 6.0 * unit(rng));
    const bool with_w = s % 3 == 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      x.v(i) = centre + spread * normal(rng);
      y.v(i) = x.v(i) + gap * normal(rng);
      x.w(i) = with_w ? normal(rng) : 0.0;
      y.w(i) = with_w ? normal(rng) : 0.0;
    }
    const StateX d = x - y;
    const double denom = norm_h_sq(g, p.gamma, d);
    if (!(denom > 0.0)) continue;
    const StateX df = f_apply(p, x) - f_apply(p, y);
    best = std::max(best, inner_h(g, p.gamma, df, d) / denom);
  }
  return {best, p.eta()};
}

// The m-dissipativity argument wants omega - eta > 0; the Neumann operator
// has omega = 0 on the constant mode, so any eta > 0 is reported.
inline std::optional<std::string> dissipativity_warning(const FhnParams& p) {
  if (!p.reaction || p.eta() <= 0.0) return std::nullopt;
  std::ostringstream os;
  os << "omega - eta > 0 is not guaranteed: the Neumann operator has no decay on constants "
        "(omega = 0) while eta = "
     << p.eta();
  return os.str();
}

}  // namespace fhnopt
