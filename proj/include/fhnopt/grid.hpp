#pragma once

// Uniform vertex-centred grids on [0, l]^d with homogeneous Neumann boundary
// conditions, trapezoid quadrature and the discrete cosine eigenbasis.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "fhnopt/errors.hpp"

namespace fhnopt {

using Field = Eigen::VectorXd;

class Grid {
 public:
  static Grid make(int dimension, int points, double length = 1.0) {
    if (dimension != 1 && dimension != 2) {
      throw ConfigError("grid dimension must be 1 or 2, got " + std::to_string(dimension));
    }
    if (points < 3) {
      throw ConfigError("grid needs at least 3 points per axis, got " + std::to_string(points));
    }
    if (!(length > 0.0) || !std::isfinite(length)) {
      throw ConfigError("grid length must be positive");
    }
    return Grid(dimension, points, length);
  }

  int dimension() const noexcept { return dim_; }
  int points() const noexcept { return n_; }
  double length() const noexcept { return length_; }
  double spacing() const noexcept { return length_ / (n_ - 1); }
  Eigen::Index size() const noexcept { return dim_ == 1 ? n_ : Eigen::Index(n_) * n_; }
  double measure() const noexcept { return std::pow(length_, dim_); }

  // Trapezoid weights along one axis.
  const Field& axis_weights() const noexcept { return axis_weights_; }
  // Tensor-product trapezoid weights, one per node.
  const Field& weights() const noexcept { return weights_; }

  // Node coordinate along `axis` for flat index `idx` (x fastest).
  double coordinate(Eigen::Index idx, int axis) const {
    const Eigen::Index i = axis == 0 ? idx % n_ : idx / n_;
    return spacing() * static_cast<double>(i);
  }

  Field zeros() const { return Field::Zero(size()); }
  Field constant(double c) const { return Field::Constant(size(), c); }

  bool operator==(const Grid& o) const noexcept {
    return dim_ == o.dim_ && n_ == o.n_ && length_ == o.length_;
  }

 private:
  Grid(int dim, int n, double length) : dim_(dim), n_(n), length_(length) {
    const double h = spacing();
    axis_weights_ = Field::Constant(n_, h);
    axis_weights_(0) = axis_weights_(n_ - 1) = 0.5 * h;
    if (dim_ == 1) {
      weights_ = axis_weights_;
    } else {
      weights_.resize(size());
      for (int j = 0; j < n_; ++j)
        for (int i = 0; i < n_; ++i) weights_(i + Eigen::Index(n_) * j) = axis_weights_(i) * axis_weights_(j);
    }
  }

  int dim_;
  int n_;
  double length_;
  Field axis_weights_;
  Field weights_;
};

struct StateX {
  Field v;
  Field w;

  static StateX zeros(const Grid& g) { return {g.zeros(), g.zeros()}; }

  StateX& operator+=(const StateX& o) {
    v += o.v;
    w += o.w;
    return *this;
  }
  StateX& operator-=(const StateX& o) {
    v -= o.v;
    w -= o.w;
    return *this;
  }
  StateX& operator*=(double s) {
    v *= s;
    w *= s;
    return *this;
  }
  friend StateX operator+(StateX a, const StateX& b) { return a += b; }
  friend StateX operator-(StateX a, const StateX& b) { return a -= b; }
  friend StateX operator*(double s, StateX a) { return a *= s; }

  bool all_finite() const { return v.allFinite() && w.allFinite(); }
};

inline void require_on_grid(const Grid& g, const Field& u, const char* what) {
  if (u.size() != g.size()) {
    throw ContractError(std::string(what) + ": field has " + std::to_string(u.size()) +
                        " values, grid has " + std::to_string(g.size()) + " nodes");
  }
}

inline void require_on_grid(const Grid& g, const StateX& x, const char* what) {
  require_on_grid(g, x.v, what);
  require_on_grid(g, x.w, what);
}

inline double inner_l2(const Grid& g, const Field& a, const Field& b) {
  require_on_grid(g, a, "inner_l2");
  require_on_grid(g, b, "inner_l2");
  return (g.weights().array() * a.array() * b.array()).sum();
}

inline double norm_l2_sq(const Grid& g, const Field& a) { return inner_l2(g, a, a); }

inline void require_positive_gamma(double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
}

// Weighted product gamma <v1,v2>_2 + <w1,w2>_2 on H = L2 x L2.
inline double inner_h(const Grid& g, double gamma, const StateX& x, const StateX& y) {
  require_positive_gamma(gamma);
  return gamma * inner_l2(g, x.v, y.v) + inner_l2(g, x.w, y.w);
}

inline double norm_h_sq(const Grid& g, double gamma, const StateX& x) { return inner_h(g, gamma, x, x); }

// Squared L2 norm of the one-sided difference gradient, edge-midpoint quadrature.
inline double gradient_norm_sq(const Grid& g, const Field& u) {
  require_on_grid(g, u, "gradient_norm_sq");
  const int n = g.points();
  const double h = g.spacing();
  double acc = 0.0;
  if (g.dimension() == 1) {
    for (int i = 0; i + 1 < n; ++i) {
      const double d = (u(i + 1) - u(i)) / h;
      acc += h * d * d;
    }
    return acc;
  }
  const Field& aw = g.axis_weights();
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i + 1 < n; ++i) {
      const double dx = (u(i + 1 + Eigen::Index(n) * j) - u(i + Eigen::Index(n) * j)) / h;
      const double dy = (u(j + Eigen::Index(n) * (i + 1)) - u(j + Eigen::Index(n) * i)) / h;
      acc += h * aw(j) * (dx * dx + dy * dy);
    }
  }
  return acc;
}

// |X|_V^2 = gamma (|v|_2^2 + |grad v|_2^2) + |w|_2^2.
inline double norm_v_sq(const Grid& g, double gamma, const StateX& x) {
  require_positive_gamma(gamma);
  return gamma * (norm_l2_sq(g, x.v) + gradient_norm_sq(g, x.v)) + norm_l2_sq(g, x.w);
}

// Second differences with ghost-node reflection (zero normal derivative).
inline Field neumann_laplacian(const Grid& g, const Field& u) {
  require_on_grid(g, u, "neumann_laplacian");
  const int n = g.points();
  const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
  auto axis_pass = [&](Field& out, Eigen::Index stride, Eigen::Index lines, Eigen::Index line_stride) {
    for (Eigen::Index l = 0; l < lines; ++l) {
      const Eigen::Index base = l * line_stride;
      for (int i = 0; i < n; ++i) {
        const Eigen::Index c = base + i * stride;
        const Eigen::Index left = base + (i == 0 ? 1 : i - 1) * stride;
        const Eigen::Index right = base + (i == n - 1 ? n - 2 : i + 1) * stride;
        out(c) += (u(left) - 2.0 * u(c) + u(right)) * inv_h2;
      }
    }
  };
  Field out = Field::Zero(u.size());
  if (g.dimension() == 1) {
    axis_pass(out, 1, 1, 0);
  } else {
    axis_pass(out, 1, n, n);
    axis_pass(out, n, n, 1);
  }
  return out;
}

// Eigenvalue of the reflected stencil for axis frequency j.
inline double axis_laplacian_eigenvalue(const Grid& g, int j) {
  const double h = g.spacing();
  return -(2.0 / (h * h)) * (1.0 - std::cos(std::numbers::pi * j / (g.points() - 1)));
}

// Orthonormal (under trapezoid quadrature) cosine functions along one axis,
// column j = frequency j. This is the DCT-I basis.
inline Eigen::MatrixXd axis_cosine_basis(const Grid& g) {
  const int n = g.points();
  const double l = g.length();
  Eigen::MatrixXd e(n, n);
  for (int j = 0; j < n; ++j) {
    const double scale = (j == 0 || j == n - 1) ? std::sqrt(1.0 / l) : std::sqrt(2.0 / l);
    for (int i = 0; i < n; ++i) e(i, j) = scale * std::cos(std::numbers::pi * j * i / (n - 1));
  }
  return e;
}

// Axis frequencies of the k-th mode (1-based) in leading order: sorted by
// the continuum |eigenvalue| ~ j1^2 + j2^2, ties broken by the y frequency then the x frequency.
inline std::vector<std::array<int, 2>> leading_mode_order(int dimension, int per_axis) {
  std::vector<std::array<int, 2>> order;
  if (dimension == 1) {
    for (int j = 0; j < per_axis; ++j) order.push_back({j, 0});
    return order;
  }
  for (int j2 = 0; j2 < per_axis; ++j2)
    for (int j1 = 0; j1 < per_axis; ++j1) order.push_back({j1, j2});
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    const int ra = a[0] * a[0] + a[1] * a[1];
    const int rb = b[0] * b[0] + b[1] * b[1];
    if (ra != rb) return ra < rb;
    return a[1] < b[1];
  });
  return order;
}

// Projection onto and synthesis from the truncated cosine eigenbasis.
// Coefficient arrays are K x K in 2-D (row = x frequency) and K x 1 in 1-D.
class ModalBasis {
 public:
  ModalBasis(const Grid& g, int per_axis) : grid_(g), per_axis_(per_axis) {
    if (per_axis < 1 || per_axis > g.points()) {
      throw ConfigError("modal truncation must lie in [1, " + std::to_string(g.points()) + "], got " +
                        std::to_string(per_axis));
    }
    axis_ = axis_cosine_basis(g).leftCols(per_axis);
    weighted_axis_ = g.axis_weights().asDiagonal() * axis_;
  }

  const Grid& grid() const noexcept { return grid_; }
  int per_axis() const noexcept { return per_axis_; }
  Eigen::Index mode_count() const noexcept {
    return grid_.dimension() == 1 ? per_axis_ : Eigen::Index(per_axis_) * per_axis_;
  }

  Eigen::MatrixXd project(const Field& u) const {
    require_on_grid(grid_, u, "ModalBasis::project");
    if (grid_.dimension() == 1) return weighted_axis_.transpose() * u;
    const int n = grid_.points();
    Eigen::Map<const Eigen::MatrixXd> U(u.data(), n, n);
    return weighted_axis_.transpose() * U * weighted_axis_;
  }

  Field synthesize(const Eigen::MatrixXd& c) const {
    if (grid_.dimension() == 1) return axis_ * c.col(0);
    const int n = grid_.points();
    Eigen::MatrixXd U = axis_ * c * axis_.transpose();
    return Eigen::Map<Field>(U.data(), Eigen::Index(n) * n);
  }

  const Eigen::MatrixXd& axis_functions() const noexcept { return axis_; }

 private:
  Grid grid_;
  int per_axis_;
  Eigen::MatrixXd axis_;
  Eigen::MatrixXd weighted_axis_;
};

inline Eigen::Index mode_count(const Grid& g) { return g.size(); }

// L2-normalised Neumann eigenmode number k (1-based, leading order); k = 1 is
// the normalised constant.
inline Field neumann_eigenmode(const Grid& g, int k) {
  if (k < 1 || k > g.size()) {
    throw std::out_of_range("eigenmode index " + std::to_string(k) + " outside [1, " +
                            std::to_string(g.size()) + "]");
  }
  const Eigen::MatrixXd e = axis_cosine_basis(g);
  if (g.dimension() == 1) return e.col(k - 1);
  const auto [j1, j2] = leading_mode_order(2, g.points())[k - 1];
  const int n = g.points();
  Field out(g.size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) out(i + Eigen::Index(n) * j) = e(i, j1) * e(j, j2);
  return out;
}

inline double neumann_eigenvalue(const Grid& g, int k) {
  if (k < 1 || k > g.size()) throw std::out_of_range("eigenvalue index out of range");
  if (g.dimension() == 1) return axis_laplacian_eigenvalue(g, k - 1);
  const auto [j1, j2] = leading_mode_order(2, g.points())[k - 1];
  return axis_laplacian_eigenvalue(g, j1) + axis_laplacian_eigenvalue(g, j2);
}

}  // namespace fhnopt
