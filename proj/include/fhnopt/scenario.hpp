#pragma once

// Scenario files: INI sections of key = value pairs. Every field has a
// default, so an empty file is a valid scenario.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fhnopt/control.hpp"

namespace fhnopt {

struct Scenario {
  struct GridSection {
    int dimension = 1;
    int points = 64;
    double length = 1.0;
    bool operator==(const GridSection&) const = default;
  } grid;
  struct FhnSection {
    double a = 0.25;
    double b = 1.0;
    double gamma = 0.5;
    double delta = 0.8;
    double forcing = 0.0;
    bool reaction = true;
    bool operator==(const FhnSection&) const = default;
  } fhn;
  struct NoiseSection {
    double sigma1 = 0.1;
    double sigma2 = 0.1;
    int modes = 32;
    std::string spectrum = "inverse_square";
    bool operator==(const NoiseSection&) const = default;
  } noise;
  struct TimeSection {
    double horizon = 0.5;
    int steps = 500;
    bool operator==(const TimeSection&) const = default;
  } time;
  struct ActuatorSection {
    double lower = 0.0;
    double upper = 1.0;
    bool operator==(const ActuatorSection&) const = default;
  } actuator;
  struct CostSection {
    double alpha = 2.0;
    double terminal_weight = 0.1;
    double reference_v = 0.0;
    double reference_w = 0.0;
    double target_v = 0.0;
    double target_w = 0.0;
    bool operator==(const CostSection&) const = default;
  } cost;
  struct InitialSection {
    std::string kind = "modal";  // constant | modal | file
    double v = 0.2;
    double w = 0.0;
    std::vector<double> v_cosines{0.4};  // v += sum_k c_k cos(k pi x / l)
    std::string file;                    // CSV with columns v,w, one row per node
    double neumann_tolerance = 1e-6;
    bool operator==(const InitialSection&) const = default;
  } initial;
  struct RunSection {
    std::uint64_t seed = 20240611;
    int ensemble = 100;
    std::string mode = "deterministic";  // deterministic | stochastic
    std::string adjoint = "regression";  // regression | pathwise
    bool operator==(const RunSection&) const = default;
  } run;
  struct OptimizeSection {
    double epsilon0 = 1e-14;
    double tolerance = 1e-8;
    int max_iterations = 60;
    bool theta = true;
    bool line_search = true;
    int basis = 9;
    double ridge = 1e-8;
    bool operator==(const OptimizeSection&) const = default;
  } optimize;

  bool operator==(const Scenario&) const = default;
};

// Calls fn(section, key, field&) for every field in canonical order.
template <typename S, typename Fn>
void visit_fields(S& s, Fn&& fn) {
  fn("grid", "dimension", s.grid.dimension);
  fn("grid", "points", s.grid.points);
  fn("grid", "length", s.grid.length);
  fn("fhn", "a", s.fhn.a);
  fn("fhn", "b", s.fhn.b);
  fn("fhn", "gamma", s.fhn.gamma);
  fn("fhn", "delta", s.fhn.delta);
  fn("fhn", "forcing", s.fhn.forcing);
  fn("fhn", "reaction", s.fhn.reaction);
  fn("noise", "sigma1", s.noise.sigma1);
  fn("noise", "sigma2", s.noise.sigma2);
  fn("noise", "modes", s.noise.modes);
  fn("noise", "spectrum", s.noise.spectrum);
  fn("time", "horizon", s.time.horizon);
  fn("time", "steps", s.time.steps);
  fn("actuator", "lower", s.actuator.lower);
  fn("actuator", "upper", s.actuator.upper);
  fn("cost", "alpha", s.cost.alpha);
  fn("cost", "terminal_weight", s.cost.terminal_weight);
  fn("cost", "reference_v", s.cost.reference_v);
  fn("cost", "reference_w", s.cost.reference_w);
  fn("cost", "target_v", s.cost.target_v);
  fn("cost", "target_w", s.cost.target_w);
  fn("initial", "kind", s.initial.kind);
  fn("initial", "v", s.initial.v);
  fn("initial", "w", s.initial.w);
  fn("initial", "v_cosines", s.initial.v_cosines);
  fn("initial", "file", s.initial.file);
  fn("initial", "neumann_tolerance", s.initial.neumann_tolerance);
  fn("run", "seed", s.run.seed);
  fn("run", "ensemble", s.run.ensemble);
  fn("run", "mode", s.run.mode);
  fn("run", "adjoint", s.run.adjoint);
  fn("optimize", "epsilon0", s.optimize.epsilon0);
  fn("optimize", "tolerance", s.optimize.tolerance);
  fn("optimize", "max_iterations", s.optimize.max_iterations);
  fn("optimize", "theta", s.optimize.theta);
  fn("optimize", "line_search", s.optimize.line_search);
  fn("optimize", "basis", s.optimize.basis);
  fn("optimize", "ridge", s.optimize.ridge);
}

namespace detail {

inline std::string format_value(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
inline std::string format_value(int x) { return std::to_string(x); }
inline std::string format_value(std::uint64_t x) { return std::to_string(x); }
inline std::string format_value(bool x) { return x ? "true" : "false"; }
inline std::string format_value(const std::string& x) { return x; }
inline std::string format_value(const std::vector<double>& x) {
  std::string out;
  for (std::size_t i = 0; i < x.size(); ++i) out += (i ? "," : "") + format_value(x[i]);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

[[noreturn]] inline void bad_value(const std::string& field, const std::string& text, const char* expected) {
  throw ConfigError(field + ": cannot parse '" + text + "' as " + expected);
}

inline void parse_value(const std::string& field, const std::string& text, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    bad_value(field, text, "a number");
  }
  if (used != text.size()) bad_value(field, text, "a number");
}
inline void parse_value(const std::string& field, const std::string& text, int& out) {
  std::size_t used = 0;
  try {
    out = std::stoi(text, &used);
  } catch (const std::exception&) {
    bad_value(field, text, "an integer");
  }
  if (used != text.size()) bad_value(field, text, "an integer");
}
inline void parse_value(const std::string& field, const std::string& text, std::uint64_t& out) {
  std::size_t used = 0;
  if (text.empty() || text[0] == '-') bad_value(field, text, "a nonnegative integer");
  try {
    out = std::stoull(text, &used);
  } catch (const std::exception&) {
    bad_value(field, text, "a nonnegative integer");
  }
  if (used != text.size()) bad_value(field, text, "a nonnegative integer");
}
inline void parse_value(const std::string& field, const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "yes") {
    out = true;
  } else if (text == "false" || text == "0" || text == "no") {
    out = false;
  } else {
    bad_value(field, text, "a boolean");
  }
}
inline void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }
inline void parse_value(const std::string& field, const std::string& text, std::vector<double>& out) {
  out.clear();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    double x = 0.0;
    parse_value(field, item, x);
    out.push_back(x);
  }
}

}  // namespace detail

inline std::map<std::string, std::vector<std::string>> scenario_keys() {
  std::map<std::string, std::vector<std::string>> keys;
  Scenario s;
  visit_fields(s, [&](const char* sec, const char* key, auto&) { keys[sec].push_back(key); });
  return keys;
}

// Canonical text: sections and keys in a fixed order, round-trip precision.
inline std::string emit_scenario(const Scenario& s) {
  std::ostringstream os;
  std::string current;
  visit_fields(s, [&](const char* sec, const char* key, const auto& field) {
    if (current != sec) {
      if (!current.empty()) os << '\n';
      os << '[' << sec << "]\n";
      current = sec;
    }
    os << key << " = " << detail::format_value(field) << '\n';
  });
  return os.str();
}

// FNV-1a 64 over the canonical text, so key order in the source file does
// not matter.
inline std::string scenario_digest(const Scenario& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : emit_scenario(s)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void validate_scenario(const Scenario& s);

inline Scenario parse_scenario(std::istream& in, const std::string& origin = "<scenario>") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  const auto keys = scenario_keys();
  for (const auto& [section, body] : tree) {
    if (!body.data().empty() && body.empty()) {
      throw ConfigError(origin + ": key '" + section + "' outside any section");
    }
    const auto it = keys.find(section);
    if (it == keys.end()) {
      std::string valid;
      for (const auto& [name, _] : keys) valid += (valid.empty() ? "" : ", ") + name;
      throw ConfigError(origin + ": unknown section [" + section + "]; valid sections: " + valid);
    }
    for (const auto& [key, _] : body) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end()) {
        std::string valid;
        for (const auto& k : it->second) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]; valid keys: " + valid);
      }
    }
  }
  Scenario s;
  visit_fields(s, [&](const char* sec, const char* key, auto& field) {
    const auto value = tree.get_optional<std::string>(boost::property_tree::ptree::path_type(std::string(sec) + "." + key));
    if (value) detail::parse_value(std::string(sec) + "." + key, detail::trim(*value), field);
  });
  validate_scenario(s);
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scenario file " + path);
  return parse_scenario(in, path);
}

inline Scenario scenario_from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

// ---- construction of the numerical objects --------------------------------

inline bool stochastic(const Scenario& s) { return s.run.mode == "stochastic"; }

inline Grid make_grid(const Scenario& s) { return Grid::make(s.grid.dimension, s.grid.points, s.grid.length); }

inline FhnParams make_params(const Scenario& s, const Grid& g) {
  FhnParams p;
  p.a = s.fhn.a;
  p.b = s.fhn.b;
  p.gamma = s.fhn.gamma;
  p.delta = s.fhn.delta;
  p.reaction = s.fhn.reaction;
  if (s.fhn.forcing != 0.0) p.forcing = g.constant(s.fhn.forcing);
  p.validate();
  return p;
}

// The scenario's spectrum, regardless of mode.
inline SpectralCovariance make_covariance(const Scenario& s) {
  if (s.noise.spectrum == "zero") return SpectralCovariance::zero(s.grid.dimension, s.noise.modes);
  if (s.noise.spectrum == "inverse_square") {
    if (!(s.noise.sigma1 >= 0.0) || !(s.noise.sigma2 >= 0.0)) throw ConfigError("noise sigma must be nonnegative");
    return SpectralCovariance::inverse_square(s.grid.dimension, s.noise.modes, s.noise.sigma1, s.noise.sigma2);
  }
  throw ConfigError("noise.spectrum must be inverse_square or zero");
}

inline Model make_model(const Scenario& s) {
  const Grid g = make_grid(s);
  SpectralCovariance cov = stochastic(s) ? make_covariance(s) : SpectralCovariance::zero(s.grid.dimension, s.noise.modes);
  return Model(g, make_params(s, g), std::move(cov), ActuatorSpec::interval(g, s.actuator.lower, s.actuator.upper),
               TimeGrid::make(s.time.horizon, s.time.steps));
}

inline CostSpec make_cost(const Scenario& s, const Grid& g) {
  QuadraticCostParams q;
  q.alpha = s.cost.alpha;
  q.terminal_weight = s.cost.terminal_weight;
  q.reference = {StateX{g.constant(s.cost.reference_v), g.constant(s.cost.reference_w)}};
  q.target = StateX{g.constant(s.cost.target_v), g.constant(s.cost.target_w)};
  return quadratic_cost(g, s.fhn.gamma, std::move(q));
}

inline StateX read_state_csv(const Grid& g, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("initial.file: cannot read " + path);
  StateX x = StateX::zeros(g);
  std::string line;
  Eigen::Index row = 0;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#' || line[0] == 'v') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("initial.file: expected 'v,w' rows in " + path);
    if (row >= g.size()) throw ConfigError("initial.file: more rows than grid nodes in " + path);
    detail::parse_value("initial.file", detail::trim(line.substr(0, comma)), x.v(row));
    detail::parse_value("initial.file", detail::trim(line.substr(comma + 1)), x.w(row));
    ++row;
  }
  if (row != g.size()) {
    throw ConfigError("initial.file: " + std::to_string(row) + " rows, grid has " + std::to_string(g.size()) + " nodes");
  }
  return x;
}

// Discrete Neumann compatibility of v: one-sided boundary slopes below tol.
inline double boundary_slope(const Grid& g, const Field& v) {
  const int n = g.points();
  const double h = g.spacing();
  double worst = 0.0;
  const Eigen::Index stride2 = g.dimension() == 2 ? n : 0;
  const int lines = g.dimension() == 2 ? n : 1;
  for (int j = 0; j < lines; ++j) {
    // x edges of row j, and y edges of column j in 2-D
    const Eigen::Index r = Eigen::Index(j) * n;
    worst = std::max(worst, std::abs(v(r + 1) - v(r)) / h);
    worst = std::max(worst, std::abs(v(r + n - 1) - v(r + n - 2)) / h);
    if (stride2) {
      worst = std::max(worst, std::abs(v(j + stride2) - v(j)) / h);
      worst = std::max(worst, std::abs(v(j + stride2 * (n - 1)) - v(j + stride2 * (n - 2))) / h);
    }
  }
  return worst;
}

inline StateX make_initial(const Scenario& s, const Grid& g) {
  StateX x;
  if (s.initial.kind == "constant") {
    x = {g.constant(s.initial.v), g.constant(s.initial.w)};
  } else if (s.initial.kind == "modal") {
    x = {g.constant(s.initial.v), g.constant(s.initial.w)};
    for (std::size_t k = 0; k < s.initial.v_cosines.size(); ++k) {
      const double c = s.initial.v_cosines[k];
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        x.v(i) += c * std::cos(static_cast<double>(k + 1) * M_PI * g.coordinate(i, 0) / g.length());
      }
    }
  } else if (s.initial.kind == "file") {
    if (s.initial.file.empty()) throw ConfigError("initial.file must be set when initial.kind = file");
    x = read_state_csv(g, s.initial.file);
    const double slope = boundary_slope(g, x.v);
    if (slope > s.initial.neumann_tolerance) {
      throw ConfigError("initial.file: v violates the Neumann condition (boundary slope " +
                        detail::format_value(slope) + " > neumann_tolerance)");
    }
  } else {
    throw ConfigError("initial.kind must be constant, modal or file");
  }
  if (!x.all_finite()) throw ConfigError("initial state must be finite");
  return x;
}

inline ControlProblem make_problem(const Scenario& s) {
  Model m = make_model(s);
  StateX x0 = make_initial(s, m.grid());
  CostSpec cost = make_cost(s, m.grid());
  RegressionOptions ro;
  ro.basis_size = s.optimize.basis;
  ro.ridge = s.optimize.ridge;
  const AdjointMethod method = s.run.adjoint == "pathwise" ? AdjointMethod::pathwise : AdjointMethod::regression;
  ControlProblem p{std::move(m), std::move(x0), std::move(cost), s.run.seed, s.run.ensemble, method, ro};
  return p;
}

inline OptimizeOptions make_optimize_options(const Scenario& s) {
  OptimizeOptions o;
  o.epsilon0 = s.optimize.epsilon0;
  o.tolerance = s.optimize.tolerance;
  o.max_iterations = s.optimize.max_iterations;
  o.use_theta = s.optimize.theta;
  o.line_search = s.optimize.line_search;
  return o;
}

// Cross-field checks; each message names the offending field.
inline void validate_scenario(const Scenario& s) {
  if (s.run.mode != "deterministic" && s.run.mode != "stochastic") {
    throw ConfigError("run.mode must be deterministic or stochastic");
  }
  if (s.run.adjoint != "regression" && s.run.adjoint != "pathwise") {
    throw ConfigError("run.adjoint must be regression or pathwise");
  }
  if (s.run.ensemble < 1) throw ConfigError("run.ensemble must be at least 1");
  if (!(s.cost.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(s.cost.terminal_weight >= 0.0)) throw ConfigError("terminal_weight must be nonnegative");
  if (s.optimize.basis < 1) throw ConfigError("optimize.basis must be at least 1");
  if (!(s.optimize.ridge >= 0.0)) throw ConfigError("optimize.ridge must be nonnegative");
  if (!(s.optimize.tolerance > 0.0)) throw ConfigError("optimize.tolerance must be positive");
  if (!(s.optimize.epsilon0 >= 0.0)) throw ConfigError("optimize.epsilon0 must be nonnegative");
  if (s.optimize.max_iterations < 1) throw ConfigError("optimize.max_iterations must be at least 1");
  if (!(s.initial.neumann_tolerance >= 0.0)) throw ConfigError("initial.neumann_tolerance must be nonnegative");
  if (stochastic(s) && s.run.adjoint == "regression" && s.run.ensemble < 10 * s.optimize.basis) {
    throw ConfigError("run.ensemble must be at least 10x optimize.basis for the regression adjoint");
  }
  // Building every object runs the per-module checks.
  const ControlProblem p = make_problem(s);
  (void)make_covariance(s);
  (void)p;
}

}  // namespace fhnopt
