#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fhnopt/studies.hpp"

using namespace fhnopt;

namespace {

StateX bump(const Grid& g) {
  StateX x = StateX::zeros(g);
  for (Eigen::Index i = 0; i < g.size(); ++i) x.v(i) = 0.2 + 0.4 * std::cos(M_PI * g.coordinate(i, 0));
  return x;
}

ControlProblem problem(const Grid& g, FhnParams p, SpectralCovariance cov, double T, int N, StateX x0,
                       QuadraticCostParams q = {}, int ensemble = 1) {
  Model m(g, p, std::move(cov), ActuatorSpec::full(g), TimeGrid::make(T, N));
  CostSpec c = quadratic_cost(g, p.gamma, std::move(q));
  return ControlProblem{std::move(m), std::move(x0), std::move(c), 7, ensemble, AdjointMethod::regression, {}};
}

ControlProblem default_problem(int N = 50) {
  const Grid g = Grid::make(1, 24);
  return problem(g, FhnParams{}, SpectralCovariance::zero(1, 1), 0.5, N, bump(g));
}

}  // namespace

TEST(SubdiffInverse, QuadraticExamplesAndLipschitz) {
  const Grid g = Grid::make(1, 10);
  QuadraticCostParams q;
  q.alpha = 2.0;
  const CostSpec c = quadratic_cost(g, 0.5, q);
  EXPECT_EQ(subdiff_inverse(c, g.zeros()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((subdiff_inverse(c, g.constant(3.0)) - g.constant(1.5)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(c.inverse_lipschitz, 0.5);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    Field a(g.size()), b(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      a(i) = n(rng);
      b(i) = n(rng);
    }
    const double lhs = std::sqrt(norm_l2_sq(g, subdiff_inverse(c, a) - subdiff_inverse(c, b)));
    EXPECT_LE(lhs, c.inverse_lipschitz * std::sqrt(norm_l2_sq(g, a - b)) * (1.0 + 1e-14));
  }
  q.alpha = 0.0;
  EXPECT_THROW(quadratic_cost(g, 0.5, q), ConfigError);
}

TEST(Psi, ZeroAtRestWithZeroTargets) {
  const Grid g = Grid::make(1, 12);
  const ControlProblem prob = problem(g, FhnParams{}, SpectralCovariance::zero(1, 1), 0.5, 20, StateX::zeros(g));
  EXPECT_EQ(psi_estimate(prob, ControlPath::zeros(g, prob.model.time())).mean, 0.0);
}

TEST(Psi, ControlCostOnly) {
  const Grid g = Grid::make(1, 12);
  ControlProblem prob = problem(g, FhnParams{}, SpectralCovariance::zero(1, 1), 0.8, 40, bump(g));
  prob.cost = scale_state_costs(prob.cost, 0.0);
  ControlPath u = ControlPath::zeros(g, prob.model.time());
  for (auto& f : u.nodes) f = g.constant(0.3);
  EXPECT_NEAR(psi_estimate(prob, u).mean, 0.5 * 2.0 * 0.09 * 0.8, 1e-14);
}

TEST(Psi, NoiseRaisesLinearQuadraticCost) {
  // For a linear model E|X|^2 = |E X|^2 + Var X, so the stochastic cost sits
  // above the noiseless one; larger ensembles agree within their errors.
  const Grid g = Grid::make(1, 16);
  FhnParams p;
  p.reaction = false;
  const ControlProblem det = problem(g, p, SpectralCovariance::zero(1, 1), 0.5, 50, bump(g));
  const ControlProblem sto = problem(g, p, SpectralCovariance::inverse_square(1, 8, 0.2, 0.2), 0.5, 50, bump(g));
  const ControlPath u = probe_control(g, det.model.time());
  const double base = psi_estimate(det, u).mean;
  const PsiEstimate small = psi_estimate(sto, u, 200);
  const PsiEstimate large = psi_estimate(sto, u, 2000);
  EXPECT_GT(large.mean - base, 3.0 * large.std_error);
  EXPECT_LE(std::abs(small.mean - large.mean), 3.0 * std::hypot(small.std_error, large.std_error));
  EXPECT_THROW(psi_estimate(sto, u, 0), ConfigError);
}

TEST(Gradient, ShapeMismatchIsContractViolation) {
  const ControlProblem prob = default_problem();
  const ControlPath u = ControlPath::zeros(prob.model.grid(), prob.model.time());
  std::vector<StateX> short_p(3, StateX::zeros(prob.model.grid()));
  EXPECT_THROW(gradient(prob.cost, prob.model, u, short_p), ContractError);
}

TEST(Gradient, MatchesCentralDifferences) {
  const ControlProblem prob = default_problem();
  const ControlPath u = probe_control(prob.model.grid(), prob.model.time());
  for (double h : {1e-5, 1e-4}) {
    for (const auto& r : gradient_check(prob, u, 4, h, 11)) EXPECT_LE(r.relative_error, 1e-6) << "h " << h;
  }
}

TEST(Gradient, PathwiseAdjointIsExactForSampleAverage) {
  const Grid g = Grid::make(1, 16);
  const ControlProblem prob = problem(g, FhnParams{}, SpectralCovariance::inverse_square(1, 8, 0.1, 0.1), 0.5, 50,
                                      bump(g), {}, 20);
  for (const auto& r : gradient_check(prob, probe_control(g, prob.model.time()), 3, 1e-5, 5)) {
    EXPECT_LE(r.relative_error, 1e-6);
  }
}

TEST(Gradient, ScalesWithStateCosts) {
  ControlProblem prob = default_problem();
  const Model& m = prob.model;
  const ControlPath u = probe_control(m.grid(), m.time());
  const auto grad_with = [&](const CostSpec& c) {
    ControlProblem q = prob;
    q.cost = c;
    return gradient(c, m, u, evaluate(q, u).mean_p_control);
  };
  const ControlPath g1 = grad_with(prob.cost);
  const ControlPath g37 = grad_with(scale_state_costs(prob.cost, 3.7));
  const ControlPath g0 = grad_with(scale_state_costs(prob.cost, 0.0));  // dh(u) alone
  // grad_c = dh(u) + c (grad_1 - dh(u))
  const ControlPath expect = g0 + 3.7 * (g1 - g0);
  EXPECT_LE(control_norm(m.grid(), m.time(), g37 - expect), 1e-12 * control_norm(m.grid(), m.time(), g37));
}

TEST(Margin, Examples) {
  const ControlProblem prob = default_problem();
  EXPECT_NEAR(contraction_margin(prob.cost, 0.5).margin, 0.35, 1e-15);
  EXPECT_DOUBLE_EQ(contraction_margin(prob.cost, 0.0).margin, 0.1);
  double prev = -1.0;
  for (double T : {0.1, 0.5, 1.0, 4.0}) {
    const double mgn = contraction_margin(prob.cost, T).margin;
    EXPECT_GT(mgn, prev);
    prev = mgn;
  }
  EXPECT_THROW(contraction_margin(prob.cost, -1.0), ConfigError);
  EXPECT_TRUE(contraction_margin(prob.cost, 0.5, 1.0).below_threshold());
}

TEST(Optimize, RestingStateIsImmediatelyOptimal) {
  const Grid g = Grid::make(1, 16);
  const ControlProblem prob = problem(g, FhnParams{}, SpectralCovariance::zero(1, 1), 0.5, 40, StateX::zeros(g));
  const OptimizeReport rep = optimize(prob);
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 1);
  EXPECT_EQ(control_norm(g, prob.model.time(), rep.control), 0.0);
}

TEST(Optimize, ForcedEquilibriumTrackedExactly) {
  const Grid g = Grid::make(1, 16);
  FhnParams p;
  const double r = 0.7, w = p.gamma * r / p.delta;
  p.forcing = g.constant(i_ion(p, r) + w);
  const StateX xbar{g.constant(r), g.constant(w)};
  QuadraticCostParams q;
  q.reference = {xbar};
  q.target = xbar;
  const ControlProblem prob = problem(g, p, SpectralCovariance::zero(1, 1), 0.5, 40, xbar, q);
  const OptimizeReport rep = optimize(prob);
  EXPECT_TRUE(rep.converged);
  EXPECT_LE(rep.iterations, 2);
  EXPECT_LE(control_norm(g, prob.model.time(), rep.control), 1e-10);
}

class OptimizeDefault : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    prob_ = std::make_unique<ControlProblem>(default_problem());
    rep_ = std::make_unique<OptimizeReport>(optimize(*prob_));
  }
  static void TearDownTestSuite() {
    rep_.reset();
    prob_.reset();
  }
  static inline std::unique_ptr<ControlProblem> prob_;
  static inline std::unique_ptr<OptimizeReport> rep_;
};

TEST_F(OptimizeDefault, ConvergesGeometricallyWithCertificate) {
  EXPECT_TRUE(rep_->converged);
  EXPECT_LE(worst_residual_ratio(*rep_), 0.9);
  EXPECT_LE(rep_->certificate, 1e-7);
  EXPECT_LT(rep_->margin.margin, 1.0);
}

TEST_F(OptimizeDefault, PsiNonincreasingAndDescentSteps) {
  for (std::size_t k = 0; k + 1 < rep_->history.size(); ++k) {
    if (rep_->history[k].accepted) {
      EXPECT_LE(rep_->history[k + 1].psi, rep_->history[k].psi);
      EXPECT_LE(rep_->history[k].slope, 0.0);
    }
  }
}

TEST_F(OptimizeDefault, GradientVanishesAtSolution) {
  const Model& m = prob_->model;
  const Evaluation ev = evaluate(*prob_, rep_->control);
  // For h = alpha/2 |u|^2 the gradient is alpha times the fixed-point defect.
  const double gnorm = control_norm(m.grid(), m.time(), gradient(prob_->cost, m, rep_->control, ev.mean_p_control));
  EXPECT_NEAR(gnorm, 2.0 * rep_->certificate, 1e-12);
  EXPECT_LE(gnorm, 1e-6);
}

TEST_F(OptimizeDefault, Deterministic) {
  const OptimizeReport again = optimize(*prob_);
  ASSERT_EQ(again.control.size(), rep_->control.size());
  for (std::size_t n = 0; n < again.control.size(); ++n) EXPECT_TRUE(again.control[n] == rep_->control[n]);
}

TEST(Optimize, StochasticRegressionRunDescends) {
  const Grid g = Grid::make(1, 16);
  const ControlProblem prob = problem(g, FhnParams{}, SpectralCovariance::inverse_square(1, 8, 0.1, 0.1), 0.5, 40,
                                      bump(g), {}, 100);
  OptimizeOptions opt;
  opt.max_iterations = 30;
  const OptimizeReport rep = optimize(prob, opt);
  for (std::size_t k = 0; k + 1 < rep.history.size(); ++k) {
    if (rep.history[k].accepted) {
      EXPECT_LE(rep.history[k + 1].psi, rep.history[k].psi);
    }
  }
  EXPECT_LT(rep.history.back().residual, 1e-3 * rep.history.front().residual);
}

TEST(Optimize, RejectsBadOptions) {
  const ControlProblem prob = default_problem();
  OptimizeOptions opt;
  opt.tolerance = 0.0;
  EXPECT_THROW(optimize(prob, opt), ConfigError);
  opt = {};
  opt.max_iterations = 0;
  EXPECT_THROW(optimize(prob, opt), ConfigError);
}
