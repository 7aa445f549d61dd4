#pragma once

// Command dispatch: each command writes its CSV artifacts and a manifest
// into the output directory and returns a RunRecord.

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fhnopt/io.hpp"
#include "fhnopt/scenario.hpp"
#include "fhnopt/studies.hpp"

namespace fhnopt {

inline constexpr const char* kToolVersion = "0.1.0";

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"simulate", "optimize", "verify-gradient", "verify-invariants",
                                              "convergence-study"};
  return names;
}

struct RunRecord {
  std::string digest;
  std::string command;
  std::vector<std::string> artifacts;  // file names relative to the output directory
  double wall_time = 0.0;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  std::vector<std::string> warnings;
  bool passed = true;
  std::string failure;  // first failing assertion
};

namespace detail {

class RunContext {
 public:
  RunContext(const Scenario& s, std::string command, std::filesystem::path out)
      : scenario(s), out_(std::move(out)) {
    record.command = std::move(command);
    record.digest = scenario_digest(s);
    std::filesystem::create_directories(out_);
  }

  std::filesystem::path artifact(const std::string& name) {
    record.artifacts.push_back(name);
    return out_ / name;
  }

  // Records an assertion; only the first failure is kept by name.
  bool check(const std::string& name, bool ok) {
    if (!ok && record.passed) {
      record.passed = false;
      record.failure = name;
    }
    return ok;
  }

  void warn(const std::string& w) {
    if (std::find(record.warnings.begin(), record.warnings.end(), w) == record.warnings.end()) {
      record.warnings.push_back(w);
    }
  }

  const Scenario& scenario;
  RunRecord record;

 private:
  std::filesystem::path out_;
};

inline nlohmann::ordered_json scenario_json(const Scenario& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  visit_fields(s, [&](const char* sec, const char* key, const auto& field) { j[sec][key] = format_value(field); });
  return j;
}

inline void write_manifest(const std::filesystem::path& out, const Scenario& s, const RunRecord& r) {
  nlohmann::ordered_json m;
  m["format"] = "manifest/1";
  m["tool_version"] = kToolVersion;
  m["command"] = r.command;
  m["seed"] = s.run.seed;
  m["scenario_digest"] = r.digest;
  m["scenario"] = scenario_json(s);
  m["scenario_text"] = emit_scenario(s);
  m["artifacts"] = r.artifacts;
  m["artifact_formats"] = {{"csv", kCsvFormatVersion}, {"snapshot", kSnapshotVersion}};
  m["status"] = r.passed ? "pass" : "fail";
  if (!r.passed) m["failure"] = r.failure;
  m["summary"] = r.summary;
  m["warnings"] = r.warnings;
  m["wall_time_seconds"] = r.wall_time;
  std::ofstream os(out / "manifest.json", std::ios::binary);
  os << m.dump(2) << '\n';
}

inline void run_simulate(RunContext& ctx) {
  const ControlProblem prob = make_problem(ctx.scenario);
  const Model& m = prob.model;
  if (auto w = dissipativity_warning(m.params())) ctx.warn(*w);
  const std::size_t M = static_cast<std::size_t>(prob.paths());
  std::vector<Trajectory> paths(M);
  parallel_for(M, [&](std::size_t p) { paths[p] = integrate(m, prob.x0, nullptr, prob.seed, p, p == 0); });
  write_trajectory_csv(ctx.artifact("trajectory.csv"), m.time(), paths.front());
  write_snapshot(ctx.artifact("trajectory.fhns"), m.grid(), m.time(), paths.front());
  const EnsembleEnergy e = ensemble_energy(m.grid(), m.gamma(), m.dt(), paths);
  CsvWriter csv(ctx.artifact("energy.csv"), "energy", {"path", "sup_h_sq", "v_integral"});
  for (std::size_t p = 0; p < M; ++p) {
    csv.cell(static_cast<int>(p)).cell(e.per_path[p].sup_h_sq).cell(e.per_path[p].v_integral).end_row();
  }
  ctx.record.summary["paths"] = M;
  ctx.record.summary["mean_sup_h_sq"] = e.mean_sup_h_sq;
  ctx.record.summary["sup_mean_h_sq"] = e.sup_mean_h_sq;
  ctx.record.summary["mean_v_integral"] = e.mean_v_integral;
}

inline void write_history_csv(const std::filesystem::path& path, const OptimizeReport& rep) {
  CsvWriter csv(path, "history",
                {"iteration", "psi", "psi_stderr", "residual", "epsilon", "margin", "accepted", "step", "sup_energy"});
  for (const auto& r : rep.history) {
    csv.cell(r.iteration)
        .cell(r.psi)
        .cell(r.psi_stderr)
        .cell(r.residual)
        .cell(r.epsilon)
        .cell(r.margin)
        .cell(r.accepted ? 1 : 0)
        .cell(r.step)
        .cell(r.sup_energy)
        .end_row();
  }
}

// Psi must not increase over an accepted step (only meaningful with the
// line search on).
inline bool psi_nonincreasing(const OptimizeReport& rep) {
  for (std::size_t k = 0; k + 1 < rep.history.size(); ++k) {
    if (rep.history[k].accepted && rep.history[k + 1].psi > rep.history[k].psi) return false;
  }
  return true;
}

inline void run_optimize(RunContext& ctx) {
  const ControlProblem prob = make_problem(ctx.scenario);
  const Model& m = prob.model;
  if (auto w = dissipativity_warning(m.params())) ctx.warn(*w);
  const OptimizeOptions opt = make_optimize_options(ctx.scenario);
  const OptimizeReport rep = optimize(prob, opt);
  for (const auto& w : rep.warnings) ctx.warn(w);
  write_history_csv(ctx.artifact("history.csv"), rep);
  write_control_csv(ctx.artifact("control.csv"), m.time(), rep.control);
  write_trajectory_csv(ctx.artifact("trajectory.csv"), m.time(), rep.states.front());
  write_adjoint_csv(ctx.artifact("adjoint.csv"), m.time(), rep.mean_p);
  auto& s = ctx.record.summary;
  s["converged"] = rep.converged;
  s["iterations"] = rep.iterations;
  s["psi"] = rep.history.empty() ? 0.0 : rep.history.back().psi;
  s["final_residual"] = rep.history.empty() ? 0.0 : rep.history.back().residual;
  s["certificate"] = rep.certificate;
  s["control_norm"] = control_norm(m.grid(), m.time(), rep.control);
  s["contraction_margin"] = rep.margin.margin;
  s["worst_residual_ratio_after_3"] = worst_residual_ratio(rep);
  if (!rep.converged) ctx.warn("iteration cap reached before the residual tolerance");
  if (rep.converged) ctx.check("fixed_point_certificate", rep.certificate <= 10.0 * opt.tolerance);
  if (opt.line_search) ctx.check("psi_nonincreasing", psi_nonincreasing(rep));
}

inline void run_verify_gradient(RunContext& ctx) {
  const ControlProblem prob = make_problem(ctx.scenario);
  const Model& m = prob.model;
  const auto rows = gradient_check(prob, probe_control(m.grid(), m.time()), 5, 1e-5, prob.seed);
  CsvWriter csv(ctx.artifact("gradient_check.csv"), "gradient_check",
                {"direction", "finite_difference", "adjoint", "relative_error"});
  double worst = 0.0;
  for (const auto& r : rows) {
    csv.cell(r.direction).cell(r.finite_difference).cell(r.adjoint).cell(r.relative_error).end_row();
    worst = std::max(worst, r.relative_error);
  }
  ctx.record.summary["max_relative_error"] = worst;
  ctx.record.summary["tolerance"] = 1e-4;
  ctx.check("gradient_relative_error", worst <= 1e-4);
}

struct InvariantRow {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
};

// Each check reports a nonnegative violation measure and its tolerance.
inline std::vector<InvariantRow> invariant_suite(const Scenario& s) {
  const ControlProblem prob = make_problem(s);
  const Model& m = prob.model;
  const Grid& g = m.grid();
  const FhnParams& par = m.params();
  const double gamma = par.gamma;
  auto rng = stream_for(s.run.seed, 0x1a7a, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_field = [&] { return Field(g.size()).unaryExpr([&](double) { return normal(rng); }); };
  auto random_state = [&] { return StateX{random_field(), random_field()}; };
  std::vector<InvariantRow> rows;

  {
    double worst = 0.0, semi = 0.0;
    for (int k = 0; k < 50; ++k) {
      const Field u = random_field(), w = random_field();
      const double l = inner_l2(g, neumann_laplacian(g, u), w);
      const double r = inner_l2(g, u, neumann_laplacian(g, w));
      worst = std::max(worst, std::abs(l - r) / std::max({std::abs(l), std::abs(r), 1.0}));
      semi = std::max(semi, inner_l2(g, neumann_laplacian(g, u), u) / norm_l2_sq(g, u));
    }
    rows.push_back({"laplacian_symmetry", worst, 1e-12});
    rows.push_back({"laplacian_semidefinite", std::max(0.0, semi), 1e-12});
  }
  {
    double worst = 0.0;
    for (int j = 1; j <= std::min<int>(8, static_cast<int>(g.size())); ++j) {
      for (int k = 1; k <= std::min<int>(8, static_cast<int>(g.size())); ++k) {
        const double ip = inner_l2(g, neumann_eigenmode(g, j), neumann_eigenmode(g, k));
        worst = std::max(worst, std::abs(ip - (j == k ? 1.0 : 0.0)));
      }
    }
    rows.push_back({"eigenmode_orthonormality", worst, 1e-10});
  }
  {
    double skew = 0.0, diss = 0.0;
    for (int k = 0; k < 200; ++k) {
      const StateX x = random_smooth_state(g, rng);
      const double lhs = inner_h(g, gamma, a_apply(par, g, x), x);
      const double rhs = gamma * inner_l2(g, neumann_laplacian(g, x.v), x.v) - par.delta * norm_l2_sq(g, x.w);
      const double scale = 1.0 + norm_h_sq(g, gamma, x);
      skew = std::max(skew, std::abs(lhs - rhs) / scale);
      diss = std::max(diss, (lhs + par.delta * norm_l2_sq(g, x.w)) / scale);
    }
    rows.push_back({"skew_cancellation", skew, 1e-12});
    rows.push_back({"operator_dissipativity", std::max(0.0, diss), 1e-12});
  }
  {
    const MarginReport r = one_sided_margin(par, g, 10000, rng);
    rows.push_back({"one_sided_lipschitz", std::max(0.0, r.sampled - r.analytic), 1e-9});
  }
  {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const StateX x = random_state();
      const Field u = random_field();
      const double l = inner_l2(g, actuator_adjoint(m.actuator(), gamma, x), u);
      const double r = inner_h(g, gamma, x, actuator_apply(m.actuator(), u));
      worst = std::max(worst, std::abs(l - r) / std::max(1.0, std::abs(r)));
    }
    rows.push_back({"actuator_adjointness", worst, 1e-12});
  }
  {
    // df is the derivative of f: first-order finite differences.
    const StateX x = random_state(), z = random_state();
    const StateX exact = df_apply(par, x, z);
    auto err = [&](double h) {
      const StateX fd = (1.0 / h) * (f_apply(par, x + h * z) - f_apply(par, x));
      return std::sqrt(norm_h_sq(g, gamma, fd - exact) / std::max(1e-300, norm_h_sq(g, gamma, exact)));
    };
    const double ratio = par.reaction ? err(1e-4) / err(2e-4) : 0.5;
    rows.push_back({"reaction_derivative_first_order", std::abs(ratio - 0.5), 0.05});
  }
  {
    // Equilibrium v = a, w = gamma a / delta is fixed when f balances it.
    FhnParams eq = par;
    const double r = par.a;
    const double w = par.gamma * r / par.delta;
    eq.forcing = g.constant(par.reaction ? i_ion(par, r) + w : w);
    const Model me = Model(g, eq, SpectralCovariance::zero(g.dimension(), 1), m.actuator(), m.time());
    const StateX x{g.constant(r), g.constant(w)};
    const StateX y = step(me, x, Field(), WienerIncrement::zeros(g));
    rows.push_back({"equilibrium_preserved", std::sqrt(norm_h_sq(g, gamma, y - x)), 1e-12});
  }
  {
    FhnParams lin = par;
    lin.reaction = false;
    lin.forcing = Field();
    const Model ml = m.with_params(lin).with_covariance(SpectralCovariance::zero(g.dimension(), 1));
    StateX x = random_state();
    double growth = 0.0;
    for (int n = 0; n < 50; ++n) {
      const StateX y = step(ml, x, Field(), WienerIncrement::zeros(g));
      growth = std::max(growth, std::sqrt(norm_h_sq(g, gamma, y)) - std::sqrt(norm_h_sq(g, gamma, x)));
      x = y;
    }
    rows.push_back({"linear_step_contractive", std::max(0.0, growth), 1e-12});
  }
  {
    // Identical seeds give identical trajectories, with the scenario's noise.
    const Model mn = m.with_covariance(make_covariance(s));
    const Trajectory a = integrate(mn, prob.x0, nullptr, s.run.seed, 3, false);
    const Trajectory b = integrate(mn, prob.x0, nullptr, s.run.seed, 3, false);
    double diff = 0.0;
    for (std::size_t n = 0; n < a.states.size(); ++n) {
      diff = std::max({diff, (a.states[n].v - b.states[n].v).cwiseAbs().maxCoeff(),
                       (a.states[n].w - b.states[n].w).cwiseAbs().maxCoeff()});
    }
    rows.push_back({"common_random_numbers", diff, 0.0});
  }
  const Model det = m.with_covariance(SpectralCovariance::zero(g.dimension(), 1));
  const ControlPath u = probe_control(g, det.time());
  const Trajectory tr = integrate(det, prob.x0, u, 0);
  const AdjointPath adj = solve_adjoint_deterministic(det, tr, prob.cost);
  {
    const StateX t = adj.p.back() + prob.cost.terminal_grad(tr.states.back());
    rows.push_back({"terminal_condition", std::sqrt(norm_h_sq(g, gamma, t)), 0.0});
  }
  {
    const double c = 3.7;
    const AdjointPath scaled = solve_adjoint_deterministic(det, tr, scale_state_costs(prob.cost, c));
    double worst = 0.0;
    for (std::size_t n = 0; n < adj.p.size(); ++n) {
      const double ref = std::sqrt(norm_h_sq(g, gamma, c * adj.p[n]));
      const double d = std::sqrt(norm_h_sq(g, gamma, scaled.p[n] - c * adj.p[n]));
      worst = std::max(worst, ref > 0.0 ? d / ref : d);
    }
    rows.push_back({"cost_scaling_equivariance", worst, 1e-10});
  }
  {
    FhnParams lin = par;
    lin.reaction = false;
    const Model ml = Model(g, lin, SpectralCovariance::zero(g.dimension(), 1), m.actuator(),
                           TimeGrid::make(m.time().horizon, static_cast<int>(std::lround(m.time().horizon / 1e-4))));
    const auto gap = duality_gap_study(ml, prob.x0, prob.cost, {1e-4});
    rows.push_back({"duality_gap_linear", std::abs(gap.front().gap), 1e-8});
  }
  {
    // At u = (dh)^-1(B* p) the gradient vanishes.
    const ControlPath fixed = optimality_map(prob.cost, det, adj.p_control);
    const ControlPath grad = gradient(prob.cost, det, fixed, adj.p_control);
    rows.push_back({"gradient_vanishes_at_fixed_point", control_norm(g, det.time(), grad), 1e-14});
  }
  {
    // Regression on identical noiseless paths collapses to the exact costate.
    const int paths = 10 * s.optimize.basis;
    std::vector<Trajectory> ens(static_cast<std::size_t>(paths), tr);
    RegressionOptions ro;
    ro.basis_size = s.optimize.basis;
    ro.ridge = s.optimize.ridge;
    ro.keep_paths = false;
    const RegressionAdjoint ra = solve_adjoint_regression(det, ens, prob.cost, ro);
    double worst = 0.0;
    for (std::size_t n = 0; n < adj.p.size(); ++n) {
      const double ref = std::max(1e-300, std::sqrt(norm_h_sq(g, gamma, adj.p[n])));
      worst = std::max(worst, std::sqrt(norm_h_sq(g, gamma, ra.mean_p[n] - adj.p[n])) / ref);
    }
    rows.push_back({"regression_noiseless_reduction", worst, 1e-8});
  }
  {
    // E|dbeta_1|^2 / dt against Tr Q_1, in standard errors.
    const SpectralCovariance cov = make_covariance(s);
    const NoiseSampler sampler(g, cov);
    const int draws = 4000;
    const double dt = m.dt();
    double mean = 0.0, sq = 0.0;
    for (int k = 0; k < draws; ++k) {
      auto r = stream_for(s.run.seed, 0x7a11, static_cast<std::uint64_t>(k));
      const double e = norm_l2_sq(g, sampler.sample(dt, r).dbeta1) / dt;
      mean += e;
      sq += e * e;
    }
    mean /= draws;
    const double se = std::sqrt(std::max(0.0, sq / draws - mean * mean) / draws);
    const double tr_q = trace_q(cov, 1);
    rows.push_back({"noise_trace_standard_errors", se > 0.0 ? std::abs(mean - tr_q) / se : std::abs(mean - tr_q), 3.0});
  }
  return rows;
}

inline void run_verify_invariants(RunContext& ctx) {
  const auto rows = invariant_suite(ctx.scenario);
  CsvWriter csv(ctx.artifact("invariants.csv"), "invariants", {"invariant", "violation", "tolerance", "pass"});
  int failed = 0;
  for (const auto& r : rows) {
    const bool ok = r.value <= r.tolerance;
    failed += ok ? 0 : 1;
    csv.cell(r.name).cell(r.value).cell(r.tolerance).cell(ok ? 1 : 0).end_row();
    ctx.check(r.name, ok);
  }
  ctx.record.summary["checks"] = rows.size();
  ctx.record.summary["failed"] = failed;
}

inline void run_convergence_study(RunContext& ctx) {
  const Scenario& s = ctx.scenario;
  const ControlProblem prob = make_problem(s);
  const Model& m = prob.model;
  CsvWriter csv(ctx.artifact("convergence.csv"), "convergence", {"study", "dt", "value"});
  auto& sum = ctx.record.summary;

  const int base = std::max(8, s.time.steps / 8);
  {
    const Model det = m.with_covariance(SpectralCovariance::zero(m.grid().dimension(), 1));
    const auto rows = self_convergence(det, prob.x0, s.run.seed, 1, base, 4);
    std::vector<double> x, y;
    for (const auto& r : rows) {
      csv.cell(std::string("deterministic_self_convergence")).cell(r.dt).cell(r.difference).end_row();
      x.push_back(r.dt);
      y.push_back(r.difference);
    }
    const double rate = loglog_slope(x, y);
    sum["deterministic_rate"] = rate;
    ctx.check("deterministic_rate_at_least_0.9", rate >= 0.9);
  }
  {
    const SpectralCovariance cov = make_covariance(s);
    if (!cov.is_zero()) {
      const Model noisy = m.with_covariance(cov);
      const auto rows = self_convergence(noisy, prob.x0, s.run.seed, s.run.ensemble, base, 4);
      std::vector<double> x, y;
      for (const auto& r : rows) {
        csv.cell(std::string("strong_self_convergence")).cell(r.dt).cell(r.difference).end_row();
        x.push_back(r.dt);
        y.push_back(r.difference);
      }
      const double rate = loglog_slope(x, y);
      sum["strong_rate"] = rate;
      ctx.check("strong_rate_at_least_0.4", rate >= 0.4);
    }
  }
  {
    const auto rows = duality_gap_study(m, prob.x0, prob.cost, {4e-3, 2e-3, 1e-3});
    std::vector<double> x, y;
    for (const auto& r : rows) {
      csv.cell(std::string("duality_gap")).cell(r.dt).cell(r.gap).end_row();
      x.push_back(r.dt);
      y.push_back(std::abs(r.gap));
    }
    bool nonzero = true;
    for (double v : y) nonzero = nonzero && v > 0.0;
    if (nonzero) {
      const double rate = loglog_slope(x, y);
      sum["duality_gap_rate"] = rate;
      ctx.check("duality_gap_rate_1_pm_0.3", std::abs(rate - 1.0) <= 0.3);
    } else {
      sum["duality_gap_rate"] = nullptr;
      ctx.warn("duality gap vanished at some step size; rate not defined");
    }
  }
  {
    ControlProblem det = prob;
    det.model = m.with_covariance(SpectralCovariance::zero(m.grid().dimension(), 1));
    OptimizeOptions opt = make_optimize_options(s);
    opt.max_iterations = std::max(opt.max_iterations, 100);
    const MarginSweep sweep = margin_sweep(det, {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}, opt);
    CsvWriter ms(ctx.artifact("margin_sweep.csv"), "margin_sweep",
                 {"horizon", "margin", "iterations", "converged", "worst_ratio", "final_residual", "geometric"});
    for (const auto& r : sweep.rows) {
      ms.cell(r.horizon)
          .cell(r.margin)
          .cell(r.iterations)
          .cell(r.converged ? 1 : 0)
          .cell(r.worst_ratio)
          .cell(r.final_residual)
          .cell(r.geometric ? 1 : 0)
          .end_row();
    }
    if (sweep.threshold) {
      sum["calibrated_threshold"] = *sweep.threshold;
    } else {
      sum["calibrated_threshold"] = nullptr;
      ctx.warn("geometric decay held over the whole margin sweep");
    }
  }
}

}  // namespace detail

// Runs one command. Configuration problems throw ConfigError; failed
// assertions are reported through RunRecord::passed.
inline RunRecord run(Scenario s, const std::string& command, const std::filesystem::path& out,
                     std::optional<std::uint64_t> seed = std::nullopt) {
  if (std::find(command_names().begin(), command_names().end(), command) == command_names().end()) {
    std::string valid;
    for (const auto& c : command_names()) valid += (valid.empty() ? "" : ", ") + c;
    throw ConfigError("unknown command '" + command + "'; valid commands: " + valid);
  }
  if (seed) s.run.seed = *seed;
  validate_scenario(s);
  const auto t0 = std::chrono::steady_clock::now();
  detail::RunContext ctx(s, command, out);
  if (command == "simulate") {
    detail::run_simulate(ctx);
  } else if (command == "optimize") {
    detail::run_optimize(ctx);
  } else if (command == "verify-gradient") {
    detail::run_verify_gradient(ctx);
  } else if (command == "verify-invariants") {
    detail::run_verify_invariants(ctx);
  } else {
    detail::run_convergence_study(ctx);
  }
  ctx.record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::write_manifest(out, s, ctx.record);
  return ctx.record;
}

}  // namespace fhnopt
