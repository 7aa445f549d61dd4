#pragma once

// Semi-implicit Euler-Maruyama integration of the controlled state equation
//   dX = [AX + F(X)] dt + Bu dt + sqrt(Q) dW,
// with A implicit and F, Bu and the noise explicit:
//   (I - dt A) X+ = X + dt (F(X) + Bu) + dW.

#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "fhnopt/dynamics.hpp"
#include "fhnopt/noise.hpp"
#include "fhnopt/parallel.hpp"

namespace fhnopt {

struct TimeGrid {
  double horizon = 0.5;
  int steps = 500;

  static TimeGrid make(double horizon, int steps) {
    if (steps < 1) throw ConfigError("time grid needs at least one step");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
    return {horizon, steps};
  }
  double dt() const noexcept { return horizon / steps; }
  double time(int n) const noexcept { return horizon * n / steps; }
};

// One U-element per time node. The 𝒰 product weights nodes 0..N-1 by dt
// (left rectangle); the terminal node is carried for export and the
// optimality map but has zero quadrature weight.
struct ControlPath {
  std::vector<Field> nodes;

  static ControlPath zeros(const Grid& g, const TimeGrid& t) {
    return {std::vector<Field>(static_cast<std::size_t>(t.steps) + 1, g.zeros())};
  }
  std::size_t size() const noexcept { return nodes.size(); }
  const Field& operator[](std::size_t n) const { return nodes[n]; }
  Field& operator[](std::size_t n) { return nodes[n]; }

  ControlPath& operator+=(const ControlPath& o) {
    for (std::size_t n = 0; n < nodes.size(); ++n) nodes[n] += o.nodes[n];
    return *this;
  }
  ControlPath& operator*=(double s) {
    for (auto& f : nodes) f *= s;
    return *this;
  }
  friend ControlPath operator+(ControlPath a, const ControlPath& b) { return a += b; }
  friend ControlPath operator-(ControlPath a, const ControlPath& b) {
    for (std::size_t n = 0; n < a.nodes.size(); ++n) a.nodes[n] -= b.nodes[n];
    return a;
  }
  friend ControlPath operator*(double s, ControlPath a) { return a *= s; }
};

inline void require_control_shape(const Grid& g, const TimeGrid& t, const ControlPath& u, const char* what) {
  if (u.size() != static_cast<std::size_t>(t.steps) + 1) {
    throw ContractError(std::string(what) + ": control has " + std::to_string(u.size()) + " nodes, expected " +
                        std::to_string(t.steps + 1));
  }
  for (const auto& f : u.nodes) require_on_grid(g, f, what);
}

inline double control_inner(const Grid& g, const TimeGrid& t, const ControlPath& a, const ControlPath& b) {
  require_control_shape(g, t, a, "control_inner");
  require_control_shape(g, t, b, "control_inner");
  double acc = 0.0;
  for (int n = 0; n < t.steps; ++n) acc += inner_l2(g, a[n], b[n]);
  return t.dt() * acc;
}

inline double control_norm(const Grid& g, const TimeGrid& t, const ControlPath& a) {
  return std::sqrt(control_inner(g, t, a, a));
}

struct ActuatorSpec {
  Field mask;

  static ActuatorSpec full(const Grid& g) { return {g.constant(1.0)}; }
  // Indicator of lower <= x <= upper along the first axis (fractions of l).
  static ActuatorSpec interval(const Grid& g, double lower, double upper) {
    if (!(lower >= 0.0 && upper <= 1.0 && lower < upper)) {
      throw ConfigError("actuator support must satisfy 0 <= lower < upper <= 1");
    }
    Field m(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double x = g.coordinate(i, 0) / g.length();
      m(i) = (x >= lower - 1e-12 && x <= upper + 1e-12) ? 1.0 : 0.0;
    }
    return {m};
  }
  void validate(const Grid& g) const {
    require_on_grid(g, mask, "actuator mask");
    if (mask.minCoeff() < 0.0 || mask.maxCoeff() > 1.0) throw ConfigError("actuator mask must lie in [0, 1]");
  }
};

// Bu = (mask u, 0).
inline StateX actuator_apply(const ActuatorSpec& spec, const Field& u) {
  if (u.size() != spec.mask.size()) throw ContractError("actuator_apply: control not on the actuator grid");
  return {spec.mask.cwiseProduct(u), Field::Zero(u.size())};
}

// B*X with <B*X, u>_U = <X, Bu>_H, i.e. gamma mask v.
inline Field actuator_adjoint(const ActuatorSpec& spec, double gamma, const StateX& x) {
  if (x.v.size() != spec.mask.size()) throw ContractError("actuator_adjoint: state not on the actuator grid");
  return gamma * spec.mask.cwiseProduct(x.v);
}

// Solves (I - dt A) X = R and its H-adjoint (I - dt A*) P = R. Eliminating w
// leaves one SPD system ((1 + c) I - dt Lap) v = r' with c = dt^2 gamma / (1 + dt delta).
class ImplicitSolver {
 public:
  ImplicitSolver(const Grid& g, const FhnParams& p, double dt)
      : grid_(g), dt_(dt), gamma_(p.gamma), denom_(1.0 + dt * p.delta) {
    if (!(dt > 0.0)) throw ConfigError("implicit solver needs dt > 0");
    const double shift = 1.0 + dt * dt * p.gamma / denom_;
    const double h = g.spacing();
    const double k = dt / (h * h);
    if (g.dimension() == 1) {
      factor_tridiagonal(shift, k);
    } else {
      factor_sparse(shift, k);
    }
  }

  double dt() const noexcept { return dt_; }

  StateX solve(const StateX& r) const {
    StateX x;
    x.v = solve_v(r.v - (dt_ / denom_) * r.w);
    x.w = (r.w + (dt_ * gamma_) * x.v) / denom_;
    return x;
  }

  StateX solve_adjoint(const StateX& r) const {
    StateX x;
    x.v = solve_v(r.v + (dt_ / denom_) * r.w);
    x.w = (r.w - (dt_ * gamma_) * x.v) / denom_;
    return x;
  }

 private:
  void factor_tridiagonal(double shift, double k) {
    const int n = grid_.points();
    lower_ = Field::Constant(n, -k);
    diag_ = Field::Constant(n, shift + 2.0 * k);
    upper_ = Field::Constant(n, -k);
    upper_(0) = -2.0 * k;
    lower_(n - 1) = -2.0 * k;
    lower_(0) = upper_(n - 1) = 0.0;
    // Thomas factorisation: store modified super-diagonal and pivots.
    pivot_ = Field(n);
    cprime_ = Field(n);
    pivot_(0) = diag_(0);
    cprime_(0) = upper_(0) / pivot_(0);
    for (int i = 1; i < n; ++i) {
      pivot_(i) = diag_(i) - lower_(i) * cprime_(i - 1);
      if (!(pivot_(i) > 0.0)) throw NumericalError("implicit solver: non-positive pivot at row " + std::to_string(i));
      cprime_(i) = upper_(i) / pivot_(i);
    }
  }

  void factor_sparse(double shift, double k) {
    // Symmetrised with the quadrature weights: W M is SPD.
    const int n = grid_.points();
    const Eigen::Index m = grid_.size();
    const Field& wts = grid_.weights();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(m) * 5);
    auto idx = [n](int i, int j) { return Eigen::Index(i) + Eigen::Index(n) * j; };
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const Eigen::Index r = idx(i, j);
        double d = shift;
        auto couple = [&](int ni, int nj, double coeff) { trip.emplace_back(r, idx(ni, nj), -k * coeff * wts(r)); };
        // x axis
        if (i == 0) {
          couple(1, j, 2.0);
        } else if (i == n - 1) {
          couple(n - 2, j, 2.0);
        } else {
          couple(i - 1, j, 1.0);
          couple(i + 1, j, 1.0);
        }
        if (j == 0) {
          couple(i, 1, 2.0);
        } else if (j == n - 1) {
          couple(i, n - 2, 2.0);
        } else {
          couple(i, j - 1, 1.0);
          couple(i, j + 1, 1.0);
        }
        d += 4.0 * k;
        trip.emplace_back(r, r, d * wts(r));
      }
    }
    Eigen::SparseMatrix<double> wm(m, m);
    wm.setFromTriplets(trip.begin(), trip.end());
    sparse_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(wm);
    if (sparse_->info() != Eigen::Success) throw NumericalError("implicit solver: sparse factorisation failed");
  }

  Field solve_v(const Field& r) const {
    if (grid_.dimension() == 1) {
      const int n = grid_.points();
      Field y(n);
      y(0) = r(0) / pivot_(0);
      for (int i = 1; i < n; ++i) y(i) = (r(i) - lower_(i) * y(i - 1)) / pivot_(i);
      for (int i = n - 2; i >= 0; --i) y(i) -= cprime_(i) * y(i + 1);
      return y;
    }
    Field out = sparse_->solve(grid_.weights().cwiseProduct(r));
    if (sparse_->info() != Eigen::Success) throw NumericalError("implicit solver: sparse solve failed");
    return out;
  }

  Grid grid_;
  double dt_;
  double gamma_;
  double denom_;
  Field lower_, diag_, upper_, pivot_, cprime_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> sparse_;
};

// Everything needed to advance the state: discretisation, coefficients,
// noise and actuator. Cheap to copy; the factorisation is shared.
class Model {
 public:
  Model(Grid grid, FhnParams params, SpectralCovariance cov, ActuatorSpec actuator, TimeGrid time)
      : grid_(std::move(grid)),
        params_(std::move(params)),
        actuator_(std::move(actuator)),
        time_(time),
        sampler_(std::make_shared<NoiseSampler>(grid_, std::move(cov))) {
    params_.validate();
    if (params_.forcing.size() > 0) require_on_grid(grid_, params_.forcing, "forcing");
    actuator_.validate(grid_);
    time_ = TimeGrid::make(time.horizon, time.steps);
    solver_ = std::make_shared<ImplicitSolver>(grid_, params_, time_.dt());
  }

  const Grid& grid() const noexcept { return grid_; }
  const FhnParams& params() const noexcept { return params_; }
  const SpectralCovariance& covariance() const noexcept { return sampler_->covariance(); }
  const NoiseSampler& sampler() const noexcept { return *sampler_; }
  const ActuatorSpec& actuator() const noexcept { return actuator_; }
  const TimeGrid& time() const noexcept { return time_; }
  const ImplicitSolver& solver() const noexcept { return *solver_; }
  double dt() const noexcept { return time_.dt(); }
  double gamma() const noexcept { return params_.gamma; }
  bool deterministic() const { return sampler_->covariance().is_zero(); }

  Model with_steps(int steps) const {
    return Model(grid_, params_, covariance(), actuator_, TimeGrid::make(time_.horizon, steps));
  }
  Model with_params(FhnParams p) const { return Model(grid_, std::move(p), covariance(), actuator_, time_); }
  Model with_covariance(SpectralCovariance c) const { return Model(grid_, params_, std::move(c), actuator_, time_); }

 private:
  Grid grid_;
  FhnParams params_;
  ActuatorSpec actuator_;
  TimeGrid time_;
  std::shared_ptr<const NoiseSampler> sampler_;
  std::shared_ptr<const ImplicitSolver> solver_;
};

// One IMEX step. An empty control field means u = 0.
inline StateX step(const Model& m, const StateX& x, const Field& u, const WienerIncrement& dw) {
  StateX rhs = x;
  StateX drift = f_apply(m.params(), x);
  if (u.size() > 0) drift += actuator_apply(m.actuator(), u);
  rhs += m.dt() * drift;
  rhs.v += dw.dbeta1;
  rhs.w += dw.dbeta2;
  return m.solver().solve(rhs);
}

struct Trajectory {
  std::vector<StateX> states;               // N + 1 nodes
  std::vector<WienerIncrement> increments;  // N steps, empty when not retained
  std::shared_ptr<const ControlPath> control;
  std::uint64_t seed = 0;
  std::uint64_t path = 0;
};

inline constexpr double kBlowUpThreshold = 1e6;

inline void check_state(const Model& m, const StateX& x, int node) {
  if (!x.all_finite()) throw BlowUpError("non-finite state", node);
  if (std::sqrt(norm_h_sq(m.grid(), m.gamma(), x)) > kBlowUpThreshold) {
    throw BlowUpError("state norm exceeded blow-up threshold", node);
  }
}

// Increment for (seed, path, step); zero when the covariance vanishes.
inline WienerIncrement increment_for(const Model& m, std::uint64_t seed, std::uint64_t path, int n) {
  if (m.deterministic()) return WienerIncrement::zeros(m.grid());
  auto rng = stream_for(seed, path, static_cast<std::uint64_t>(n));
  return m.sampler().sample(m.dt(), rng);
}

// Integrates with caller-supplied increments (used for coupled refinement).
inline Trajectory integrate_with_increments(const Model& m, const StateX& x0, std::shared_ptr<const ControlPath> control,
                                            std::vector<WienerIncrement> increments, bool keep_increments = true) {
  require_on_grid(m.grid(), x0, "integrate: initial state");
  const int N = m.time().steps;
  if (increments.size() != static_cast<std::size_t>(N)) throw ContractError("integrate: increment count != steps");
  if (control) require_control_shape(m.grid(), m.time(), *control, "integrate");
  Trajectory tr;
  tr.control = control;
  tr.states.reserve(static_cast<std::size_t>(N) + 1);
  tr.states.push_back(x0);
  check_state(m, x0, 0);
  static const Field kNoControl;
  for (int n = 0; n < N; ++n) {
    const Field& u = control ? (*control)[static_cast<std::size_t>(n)] : kNoControl;
    tr.states.push_back(step(m, tr.states.back(), u, increments[static_cast<std::size_t>(n)]));
    check_state(m, tr.states.back(), n + 1);
  }
  if (keep_increments) tr.increments = std::move(increments);
  return tr;
}

inline Trajectory integrate(const Model& m, const StateX& x0, std::shared_ptr<const ControlPath> control,
                            std::uint64_t seed, std::uint64_t path, bool keep_increments = true) {
  const int N = m.time().steps;
  std::vector<WienerIncrement> inc;
  inc.reserve(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) inc.push_back(increment_for(m, seed, path, n));
  Trajectory tr = integrate_with_increments(m, x0, std::move(control), std::move(inc), keep_increments);
  tr.seed = seed;
  tr.path = path;
  return tr;
}

inline Trajectory integrate(const Model& m, const StateX& x0, const ControlPath& control, std::uint64_t seed,
                            std::uint64_t path = 0) {
  return integrate(m, x0, std::make_shared<const ControlPath>(control), seed, path);
}

inline std::vector<Trajectory> integrate_ensemble(const Model& m, const StateX& x0,
                                                  std::shared_ptr<const ControlPath> control, std::uint64_t seed,
                                                  std::size_t paths, bool keep_increments = false) {
  std::vector<Trajectory> out(paths);
  parallel_for(paths, [&](std::size_t p) { out[p] = integrate(m, x0, control, seed, p, keep_increments); });
  return out;
}

// Sums consecutive groups of `factor` increments: the coarse-level driving
// noise of a coupled refinement pair.
inline std::vector<WienerIncrement> coarsen_increments(const std::vector<WienerIncrement>& fine, int factor) {
  if (factor < 1 || fine.size() % static_cast<std::size_t>(factor) != 0) {
    throw ContractError("coarsen_increments: step count not divisible by factor");
  }
  std::vector<WienerIncrement> out;
  out.reserve(fine.size() / static_cast<std::size_t>(factor));
  for (std::size_t i = 0; i < fine.size(); i += static_cast<std::size_t>(factor)) {
    WienerIncrement acc = fine[i];
    for (int j = 1; j < factor; ++j) acc += fine[i + static_cast<std::size_t>(j)];
    out.push_back(std::move(acc));
  }
  return out;
}

struct EnergyReport {
  double sup_h_sq = 0.0;     // sup_t |X|_H^2
  double v_integral = 0.0;   // trapezoid quadrature of |X|_V^2
};

inline EnergyReport energy_report(const Grid& g, double gamma, double dt, const Trajectory& tr) {
  EnergyReport r;
  const std::size_t last = tr.states.size() - 1;
  for (std::size_t n = 0; n < tr.states.size(); ++n) {
    r.sup_h_sq = std::max(r.sup_h_sq, norm_h_sq(g, gamma, tr.states[n]));
    const double wgt = (n == 0 || n == last) ? 0.5 * dt : dt;
    r.v_integral += wgt * norm_v_sq(g, gamma, tr.states[n]);
  }
  return r;
}

struct EnsembleEnergy {
  double mean_sup_h_sq = 0.0;  // E sup_t |X|_H^2
  double sup_mean_h_sq = 0.0;  // sup_t E |X|_H^2
  double mean_v_integral = 0.0;
  std::vector<EnergyReport> per_path;
};

inline EnsembleEnergy ensemble_energy(const Grid& g, double gamma, double dt, const std::vector<Trajectory>& paths) {
  EnsembleEnergy e;
  if (paths.empty()) return e;
  const std::size_t nodes = paths.front().states.size();
  std::vector<double> mean_t(nodes, 0.0);
  for (const auto& tr : paths) {
    e.per_path.push_back(energy_report(g, gamma, dt, tr));
    e.mean_sup_h_sq += e.per_path.back().sup_h_sq;
    e.mean_v_integral += e.per_path.back().v_integral;
    for (std::size_t n = 0; n < nodes; ++n) mean_t[n] += norm_h_sq(g, gamma, tr.states[n]);
  }
  const double inv = 1.0 / static_cast<double>(paths.size());
  e.mean_sup_h_sq *= inv;
  e.mean_v_integral *= inv;
  for (double v : mean_t) e.sup_mean_h_sq = std::max(e.sup_mean_h_sq, v * inv);
  return e;
}

}  // namespace fhnopt
