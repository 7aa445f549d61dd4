#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "fhnopt/studies.hpp"

using namespace fhnopt;

namespace {

Model make(const Grid& g, FhnParams p, SpectralCovariance c, double T, int N) {
  return Model(g, std::move(p), std::move(c), ActuatorSpec::full(g), TimeGrid::make(T, N));
}

Field random_field(const Grid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Field f(g.size());
  for (auto& x : f) x = n(rng);
  return f;
}

StateX bump(const Grid& g) {
  StateX x = StateX::zeros(g);
  for (Eigen::Index i = 0; i < g.size(); ++i) x.v(i) = 0.2 + 0.4 * std::cos(M_PI * g.coordinate(i, 0));
  return x;
}

}  // namespace

TEST(TimeGrid, Validation) {
  EXPECT_THROW(TimeGrid::make(1.0, 0), ConfigError);
  EXPECT_THROW(TimeGrid::make(0.0, 10), ConfigError);
  EXPECT_DOUBLE_EQ(TimeGrid::make(0.5, 500).dt(), 1e-3);
}

TEST(Actuator, ApplyExamples) {
  const Grid g = Grid::make(1, 21);
  std::mt19937_64 rng(1);
  const Field u = random_field(g, rng);
  EXPECT_EQ(actuator_apply(ActuatorSpec::full(g), g.zeros()).v.cwiseAbs().maxCoeff(), 0.0);
  const StateX full = actuator_apply(ActuatorSpec::full(g), u);
  EXPECT_TRUE(full.v == u);
  EXPECT_EQ(full.w.cwiseAbs().maxCoeff(), 0.0);
  const StateX left = actuator_apply(ActuatorSpec::interval(g, 0.0, 0.5), u);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (g.coordinate(i, 0) > 0.5 + 1e-12) {
      EXPECT_EQ(left.v(i), 0.0);
    }
  }
  EXPECT_THROW(ActuatorSpec::interval(g, 0.6, 0.4), ConfigError);
  EXPECT_THROW(actuator_apply(ActuatorSpec::full(g), Field::Zero(3)), ContractError);
}

TEST(Actuator, AdjointIdentity) {
  std::mt19937_64 rng(2);
  for (int d : {1, 2}) {
    const Grid g = Grid::make(d, 13);
    const ActuatorSpec spec = ActuatorSpec::interval(g, 0.2, 0.7);
    for (int k = 0; k < 10; ++k) {
      const StateX x{random_field(g, rng), random_field(g, rng)};
      const Field u = random_field(g, rng);
      EXPECT_LE(std::abs(inner_l2(g, actuator_adjoint(spec, 0.6, x), u) - inner_h(g, 0.6, x, actuator_apply(spec, u))),
                1e-12);
    }
  }
  const Grid g = Grid::make(1, 9);
  const StateX x{random_field(g, rng), random_field(g, rng)};
  EXPECT_TRUE(actuator_adjoint(ActuatorSpec::full(g), 1.0, x) == x.v);
  EXPECT_EQ(actuator_adjoint(ActuatorSpec::full(g), 1.0, StateX::zeros(g)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ImplicitSolver, SolvesBothSystems) {
  std::mt19937_64 rng(3);
  for (int d : {1, 2}) {
    const Grid g = Grid::make(d, 10, 1.3);
    const FhnParams p;
    const double dt = 0.01;
    const ImplicitSolver s(g, p, dt);
    const StateX r{random_field(g, rng), random_field(g, rng)};
    const StateX x = s.solve(r);
    const StateX back = x - dt * a_apply(p, g, x);
    EXPECT_LE((back - r).v.cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_LE((back - r).w.cwiseAbs().maxCoeff(), 1e-11);
    const StateX y = s.solve_adjoint(r);
    const StateX back2 = y - dt * a_adjoint_apply(p, g, y);
    EXPECT_LE((back2 - r).v.cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_LE((back2 - r).w.cwiseAbs().maxCoeff(), 1e-11);
  }
}

TEST(Step, ZeroIsFixed) {
  const Grid g = Grid::make(1, 16);
  const Model m = make(g, FhnParams{}, SpectralCovariance::zero(1, 4), 1.0, 10);
  const StateX y = step(m, StateX::zeros(g), g.zeros(), WienerIncrement::zeros(g));
  EXPECT_EQ(y.v.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(y.w.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Step, PreservesForcedEquilibrium) {
  for (int d : {1, 2}) {
    const Grid g = Grid::make(d, 9);
    FhnParams p;
    const double r = 0.7, w = p.gamma * r / p.delta;
    p.forcing = g.constant(i_ion(p, r) + w);
    const Model m = make(g, p, SpectralCovariance::zero(d, 2), 1.0, 20);
    const StateX x{g.constant(r), g.constant(w)};
    const StateX y = step(m, x, Field(), WienerIncrement::zeros(g));
    EXPECT_LE(std::sqrt(norm_h_sq(g, p.gamma, y - x)), 1e-13);
  }
}

TEST(Step, LinearModeIsContractive) {
  std::mt19937_64 rng(4);
  const Grid g = Grid::make(2, 12);
  FhnParams p;
  p.reaction = false;
  const Model m = make(g, p, SpectralCovariance::zero(2, 2), 10.0, 20);  // dt = 0.5
  StateX x{random_field(g, rng), random_field(g, rng)};
  for (int n = 0; n < 20; ++n) {
    const StateX y = step(m, x, Field(), WienerIncrement::zeros(g));
    EXPECT_LE(norm_h_sq(g, p.gamma, y), norm_h_sq(g, p.gamma, x) * (1.0 + 1e-14));
    x = y;
  }
}

TEST(Integrate, ZeroTrajectory) {
  const Grid g = Grid::make(1, 16);
  const Model m = make(g, FhnParams{}, SpectralCovariance::zero(1, 4), 0.5, 50);
  const Trajectory tr = integrate(m, StateX::zeros(g), nullptr, 1, 0);
  ASSERT_EQ(tr.states.size(), 51u);
  ASSERT_EQ(tr.increments.size(), 50u);
  for (const auto& x : tr.states) EXPECT_EQ(x.v.cwiseAbs().maxCoeff() + x.w.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Integrate, CommonRandomNumbersAreBitIdentical) {
  const Grid g = Grid::make(1, 24);
  const Model m = make(g, FhnParams{}, SpectralCovariance::inverse_square(1, 16, 0.1, 0.1), 0.5, 100);
  const Trajectory a = integrate(m, bump(g), nullptr, 99, 4);
  const Trajectory b = integrate(m, bump(g), nullptr, 99, 4);
  for (std::size_t n = 0; n < a.states.size(); ++n) {
    EXPECT_TRUE(a.states[n].v == b.states[n].v && a.states[n].w == b.states[n].w);
  }
  // Ensemble fan-out order does not change any path.
  const auto ens = integrate_ensemble(m, bump(g), nullptr, 99, 6);
  EXPECT_TRUE(ens[4].states.back().v == a.states.back().v);
}

TEST(Integrate, BlowUpNamesTheStep) {
  const Grid g = Grid::make(1, 8);
  const Model m = make(g, FhnParams{}, SpectralCovariance::zero(1, 2), 1.0, 10);
  try {
    integrate(m, StateX{g.constant(2e6), g.zeros()}, nullptr, 0, 0);
    FAIL() << "expected blow-up";
  } catch (const BlowUpError& e) {
    EXPECT_EQ(e.step(), 0);
  }
  StateX nan = StateX::zeros(g);
  nan.v(3) = std::nan("");
  EXPECT_THROW(integrate(m, nan, nullptr, 0, 0), BlowUpError);
}

TEST(Integrate, HomogeneousReductionConvergesToOdeOracle) {
  // Spatially constant states stay constant; the IMEX scheme is first order
  // against the two-variable ODE.
  const Grid g = Grid::make(1, 5);
  const FhnParams p;
  const auto ref = oracle::fhn_ode(p.a, p.b, p.gamma, p.delta, 0.0, 0.4, 0.0, 1.0);
  std::vector<double> dts, errs;
  for (int N : {1000, 2000, 4000, 8000}) {
    const Model m = make(g, p, SpectralCovariance::zero(1, 1), 1.0, N);
    const StateX x = integrate(m, StateX{g.constant(0.4), g.zeros()}, nullptr, 0, 0, false).states.back();
    EXPECT_LE(x.v.maxCoeff() - x.v.minCoeff(), 1e-12);
    dts.push_back(1.0 / N);
    errs.push_back(std::hypot(x.v(0) - ref[0], x.w(0) - ref[1]) / std::hypot(ref[0], ref[1]));
  }
  EXPECT_NEAR(loglog_slope(dts, errs), 1.0, 0.05);
}

TEST(Integrate, HomogeneousReductionAtSmallStep) {
  const Grid g = Grid::make(1, 3);
  const FhnParams p;
  const auto ref = oracle::fhn_ode(p.a, p.b, p.gamma, p.delta, 0.0, 0.4, 0.0, 1.0);
  const Model m = make(g, p, SpectralCovariance::zero(1, 1), 1.0, 1000000);
  const StateX x = integrate(m, StateX{g.constant(0.4), g.zeros()}, nullptr, 0, 0, false).states.back();
  EXPECT_LE(std::hypot(x.v(0) - ref[0], x.w(0) - ref[1]) / std::hypot(ref[0], ref[1]), 1e-6);
}

TEST(Integrate, DeterministicSelfConvergence) {
  const Grid g = Grid::make(1, 32);
  const Model m = make(g, FhnParams{}, SpectralCovariance::zero(1, 1), 0.5, 50);
  std::vector<double> x, y;
  for (const auto& r : self_convergence(m, bump(g), 0, 1, 25, 5)) {
    x.push_back(r.dt);
    y.push_back(r.difference);
  }
  EXPECT_GE(loglog_slope(x, y), 0.9);
}

TEST(Integrate, StrongSelfConvergenceWithNoise) {
  const Grid g = Grid::make(1, 32);
  const Model m = make(g, FhnParams{}, SpectralCovariance::inverse_square(1, 16, 0.1, 0.1), 1.0, 25);
  std::vector<double> x, y;
  for (const auto& r : self_convergence(m, bump(g), 17, 200, 25, 4)) {
    x.push_back(r.dt);
    y.push_back(r.difference);
  }
  EXPECT_GE(loglog_slope(x, y), 0.4);
}

TEST(Integrate, LinearModalVarianceMatchesDiscreteLyapunov) {
  // F off, u = 0: the coefficient of one cosine mode is a 2x2 linear
  // recursion Y+ = S (Y + xi), S = (I - dt M)^-1, xi ~ N(0, dt diag(l1, l2)).
  // Its stationary covariance P = S (P + D) S^T is the oracle.
  const Grid g = Grid::make(1, 12);
  FhnParams p;
  p.reaction = false;
  const auto cov = SpectralCovariance::inverse_square(1, 8, 0.5, 0.3);
  const double dt = 0.02;
  const int burn = 2000, steps = 200000;
  const Model m = make(g, p, cov, dt * (burn + steps), burn + steps);
  const int k = 2;  // frequency j = 1
  const double mu = neumann_eigenvalue(g, k);
  Eigen::Matrix2d M;
  M << mu, -1.0, p.gamma, -p.delta;
  const Eigen::Matrix2d S = (Eigen::Matrix2d::Identity() - dt * M).inverse();
  Eigen::Matrix2d D = Eigen::Matrix2d::Zero();
  D(0, 0) = cov.lambda1(k - 1, 0) * dt;
  D(1, 1) = cov.lambda2(k - 1, 0) * dt;
  // vec(P) = (I - S kron S)^-1 vec(S D S^T)
  Eigen::Matrix4d K;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) K.block<2, 2>(2 * i, 2 * j) = S(i, j) * S;
  const Eigen::Matrix2d SDS = S * D * S.transpose();
  const Eigen::Vector4d vecP = (Eigen::Matrix4d::Identity() - K).lu().solve(Eigen::Map<const Eigen::Vector4d>(SDS.data()));
  const double var_v = vecP(0), var_w = vecP(3);

  const Field e = neumann_eigenmode(g, k);
  const Trajectory tr = integrate(m, StateX::zeros(g), nullptr, 5, 0, false);
  // Batch means for the standard error.
  const int batches = 50, per = steps / batches;
  std::vector<double> bv, bw;
  for (int b = 0; b < batches; ++b) {
    double sv = 0.0, sw = 0.0;
    for (int n = 0; n < per; ++n) {
      const StateX& x = tr.states[static_cast<std::size_t>(burn + b * per + n)];
      const double cv = inner_l2(g, x.v, e), cw = inner_l2(g, x.w, e);
      sv += cv * cv;
      sw += cw * cw;
    }
    bv.push_back(sv / per);
    bw.push_back(sw / per);
  }
  auto check = [&](const std::vector<double>& b, double target) {
    double mean = 0.0, sq = 0.0;
    for (double x : b) mean += x;
    mean /= b.size();
    for (double x : b) sq += (x - mean) * (x - mean);
    const double se = std::sqrt(sq / (b.size() - 1) / b.size());
    EXPECT_LE(std::abs(mean - target), 4.0 * se) << "mean " << mean << " target " << target;
  };
  check(bv, var_v);
  check(bw, var_w);
}

TEST(EnergyReport, ZeroAndConstantTrajectories) {
  const Grid g = Grid::make(1, 16);
  FhnParams p;
  const Model m0 = make(g, p, SpectralCovariance::zero(1, 1), 0.5, 40);
  const EnergyReport z = energy_report(g, p.gamma, m0.dt(), integrate(m0, StateX::zeros(g), nullptr, 0, 0));
  EXPECT_EQ(z.sup_h_sq, 0.0);
  EXPECT_EQ(z.v_integral, 0.0);
  const double r = 0.7, w = p.gamma * r / p.delta;
  p.forcing = g.constant(i_ion(p, r) + w);
  const Model m = make(g, p, SpectralCovariance::zero(1, 1), 0.5, 40);
  const StateX xbar{g.constant(r), g.constant(w)};
  const EnergyReport e = energy_report(g, p.gamma, m.dt(), integrate(m, xbar, nullptr, 0, 0));
  EXPECT_NEAR(e.sup_h_sq, norm_h_sq(g, p.gamma, xbar), 1e-12);
  EXPECT_NEAR(e.v_integral, 0.5 * norm_v_sq(g, p.gamma, xbar), 1e-12);
}

TEST(EnergyReport, StableUnderRefinement) {
  const Grid g = Grid::make(1, 32);
  const auto cov = SpectralCovariance::inverse_square(1, 16, 0.1, 0.1);
  std::vector<double> sup;
  for (int N : {100, 200, 400}) {
    const Model m = make(g, FhnParams{}, cov, 0.5, N);
    const auto paths = integrate_ensemble(m, bump(g), nullptr, 3, 40);
    const EnsembleEnergy e = ensemble_energy(g, 0.5, m.dt(), paths);
    EXPECT_TRUE(std::isfinite(e.mean_sup_h_sq) && std::isfinite(e.mean_v_integral));
    sup.push_back(e.mean_sup_h_sq);
  }
  EXPECT_NEAR(sup[2], sup[1], 0.05 * sup[1]);
}

TEST(Increments, CoarseningSumsGroups) {
  const Grid g = Grid::make(1, 6);
  std::vector<WienerIncrement> fine;
  for (int k = 0; k < 4; ++k) fine.push_back({g.constant(k), g.constant(-k)});
  const auto c = coarsen_increments(fine, 2);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[1].dbeta1(0), 5.0);
  EXPECT_THROW(coarsen_increments(fine, 3), ContractError);
}
