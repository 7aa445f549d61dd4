#pragma once

// Refinement and consistency studies shared by the CLI and the test suites.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fhnopt/control.hpp"

namespace fhnopt {

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("loglog_slope: need two or more matching points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

// Random state with Gaussian cosine coefficients decaying like
// ((1+j1)(1+j2))^-decay, so that decay >= 2 draws behave like elements of
// the operator domain independently of the grid size.
inline StateX random_smooth_state(const Grid& g, std::mt19937_64& rng, double scale = 1.0, double decay = 2.0) {
  std::normal_distribution<double> normal(0.0, scale);
  const ModalBasis basis(g, g.points());
  auto draw = [&] {
    Eigen::MatrixXd c(g.points(), g.dimension() == 1 ? 1 : g.points());
    for (Eigen::Index j2 = 0; j2 < c.cols(); ++j2) {
      for (Eigen::Index j1 = 0; j1 < c.rows(); ++j1) {
        c(j1, j2) = normal(rng) * std::pow(double(1 + j1) * double(1 + j2), -decay);
      }
    }
    return basis.synthesize(c);
  };
  Field v = draw();
  return {std::move(v), draw()};
}

// Gaussian node values scaled to unit U-norm; node N is left at zero since
// it carries no quadrature weight.
inline ControlPath random_direction(const Grid& g, const TimeGrid& t, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ControlPath d = ControlPath::zeros(g, t);
  for (int n = 0; n < t.steps; ++n) {
    for (Eigen::Index i = 0; i < g.size(); ++i) d[static_cast<std::size_t>(n)](i) = normal(rng);
  }
  return (1.0 / control_norm(g, t, d)) * d;
}

// Smooth nonzero control used as the base point of gradient checks.
inline ControlPath probe_control(const Grid& g, const TimeGrid& t, double amplitude = 0.1) {
  ControlPath u = ControlPath::zeros(g, t);
  for (int n = 0; n <= t.steps; ++n) {
    const double s = std::sin(M_PI * t.time(n) / t.horizon);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      u[static_cast<std::size_t>(n)](i) = amplitude * s * std::cos(M_PI * g.coordinate(i, 0) / g.length());
    }
  }
  return u;
}

struct GradientCheckRow {
  int direction = 0;
  double finite_difference = 0.0;  // (Psi(u + h d) - Psi(u - h d)) / 2h
  double adjoint = 0.0;            // <gradient, d>_U
  double relative_error = 0.0;
};

// Central differences of the sample-average Psi against the adjoint
// gradient. With noise the pathwise costate is used, which is the exact
// derivative of the sample average under common random numbers.
inline std::vector<GradientCheckRow> gradient_check(ControlProblem prob, const ControlPath& u, int directions,
                                                    double h, std::uint64_t direction_seed) {
  if (directions < 1) throw ConfigError("gradient_check: need at least one direction");
  if (!(h > 0.0)) throw ConfigError("gradient_check: step must be positive");
  prob.adjoint = AdjointMethod::pathwise;
  const Model& m = prob.model;
  const Evaluation ev = evaluate(prob, u);
  const ControlPath grad = gradient(prob.cost, m, u, ev.mean_p_control);
  auto rng = stream_for(direction_seed, 0xd1ec, 0);
  std::vector<GradientCheckRow> rows;
  for (int k = 0; k < directions; ++k) {
    const ControlPath d = random_direction(m.grid(), m.time(), rng);
    GradientCheckRow r;
    r.direction = k;
    const double plus = psi_estimate(prob, u + h * d).mean;
    const double minus = psi_estimate(prob, u - h * d).mean;
    r.finite_difference = (plus - minus) / (2.0 * h);
    r.adjoint = control_inner(m.grid(), m.time(), grad, d);
    const double scale = std::max(std::abs(r.finite_difference), std::abs(r.adjoint));
    r.relative_error = scale > 0.0 ? std::abs(r.finite_difference - r.adjoint) / scale : 0.0;
    rows.push_back(r);
  }
  return rows;
}

struct GapRow {
  double dt = 0.0;
  double gap = 0.0;
};

// Deterministic duality gap of the nodal costate for a sequence of step
// sizes at fixed horizon. The direction is the smooth probe control.
inline std::vector<GapRow> duality_gap_study(const Model& base, const StateX& x0, const CostSpec& cost,
                                             const std::vector<double>& dts) {
  std::vector<GapRow> rows;
  for (double dt : dts) {
    const int steps = static_cast<int>(std::lround(base.time().horizon / dt));
    const Model m = Model(base.grid(), base.params(), SpectralCovariance::zero(base.grid().dimension(), 1),
                          base.actuator(), TimeGrid::make(base.time().horizon, steps));
    const ControlPath u = ControlPath::zeros(m.grid(), m.time());
    const Trajectory tr = integrate(m, x0, u, 0);
    const AdjointPath adj = solve_adjoint_deterministic(m, tr, cost);
    rows.push_back({m.dt(), duality_gap(m, tr, adj, probe_control(m.grid(), m.time(), 1.0), cost)});
  }
  return rows;
}

struct RefinementRow {
  double dt = 0.0;
  double difference = 0.0;  // RMS over paths of |X^dt(T) - X^(dt/2)(T)|_H
};

// Coupled refinement: the finest level draws the increments, coarser levels
// sum them. Level l uses base_steps 2^l steps; rows compare l with l + 1.
inline std::vector<RefinementRow> self_convergence(const Model& base, const StateX& x0, std::uint64_t seed, int paths,
                                                   int base_steps, int levels) {
  if (levels < 2) throw ConfigError("self_convergence: need at least two levels");
  if (paths < 1) throw ConfigError("self_convergence: need at least one path");
  const double T = base.time().horizon;
  std::vector<Model> models;
  for (int l = 0; l < levels; ++l) models.push_back(base.with_steps(base_steps << l));
  const Model& finest = models.back();
  std::vector<std::vector<double>> sq(static_cast<std::size_t>(levels - 1),
                                      std::vector<double>(static_cast<std::size_t>(paths), 0.0));
  parallel_for(static_cast<std::size_t>(paths), [&](std::size_t p) {
    std::vector<WienerIncrement> inc;
    for (int n = 0; n < finest.time().steps; ++n) inc.push_back(increment_for(finest, seed, p, n));
    std::vector<StateX> terminal(static_cast<std::size_t>(levels));
    for (int l = levels - 1; l >= 0; --l) {
      const int factor = 1 << (levels - 1 - l);
      auto coarse = coarsen_increments(inc, factor);
      terminal[static_cast<std::size_t>(l)] =
          integrate_with_increments(models[static_cast<std::size_t>(l)], x0, nullptr, std::move(coarse), false)
              .states.back();
    }
    for (int l = 0; l + 1 < levels; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      sq[sl][p] = norm_h_sq(base.grid(), base.gamma(), terminal[sl] - terminal[sl + 1]);
    }
  });
  std::vector<RefinementRow> rows;
  for (int l = 0; l + 1 < levels; ++l) {
    double mean = 0.0;
    for (double v : sq[static_cast<std::size_t>(l)]) mean += v;
    rows.push_back({T / (base_steps << l), std::sqrt(mean / paths)});
  }
  return rows;
}

}  // namespace fhnopt
