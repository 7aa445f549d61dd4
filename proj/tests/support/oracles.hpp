#pragma once

// Reference solutions computed independently of the library's integrators.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <boost/numeric/odeint.hpp>

#include <array>
#include <vector>

namespace oracle {

// Spatially homogeneous FitzHugh-Nagumo ODE
//   v' = -v (v - a)(v - b) - w + f,  w' = gamma v - delta w,
// integrated with adaptive Dormand-Prince at tight tolerances.
inline std::array<double, 2> fhn_ode(double a, double b, double gamma, double delta, double f, double v0, double w0,
                                     double T, double tol = 1e-13) {
  using state = std::array<double, 2>;
  namespace ode = boost::numeric::odeint;
  state x{v0, w0};
  auto rhs = [=](const state& s, state& d, double) {
    d[0] = -s[0] * (s[0] - a) * (s[0] - b) - s[1] + f;
    d[1] = gamma * s[0] - delta * s[1];
  };
  ode::integrate_adaptive(ode::make_controlled<ode::runge_kutta_dopri5<state>>(tol, tol), rhs, x, 0.0, T, 1e-4);
  return x;
}

// Homogeneous linear state X' = A X with A = [[0, -1], [gamma, -delta]],
// running cost 1/2 |X|_H^2 and terminal cost c0/2 |X(T)|_H^2. The costate
// solves p' = -A* p + X, p(T) = -c0 X(T), where A* = [[0, 1], [-gamma,
// -delta]] is the adjoint in the gamma-weighted product. The pair (X, p) is
// propagated by one exponential of the block generator [[A, 0], [I, -A*]].
struct LinearAdjoint {
  Eigen::Matrix2d A, As;
  Eigen::Vector2d x0;
  Eigen::Vector2d p0;
  double T = 0.0;

  LinearAdjoint(double gamma, double delta, double c0, Eigen::Vector2d x, double horizon) : x0(x), T(horizon) {
    A << 0.0, -1.0, gamma, -delta;
    As << 0.0, 1.0, -gamma, -delta;
    const Eigen::Matrix4d phi = (generator() * T).exp();
    const Eigen::Matrix2d p11 = phi.topLeftCorner<2, 2>();
    const Eigen::Matrix2d p21 = phi.bottomLeftCorner<2, 2>();
    const Eigen::Matrix2d p22 = phi.bottomRightCorner<2, 2>();
    p0 = p22.lu().solve(-c0 * p11 * x0 - p21 * x0);
  }

  Eigen::Matrix4d generator() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    m.topLeftCorner<2, 2>() = A;
    m.bottomLeftCorner<2, 2>() = Eigen::Matrix2d::Identity();
    m.bottomRightCorner<2, 2>() = -As;
    return m;
  }

  Eigen::Vector2d state(double t) const { return (A * t).exp() * x0; }
  Eigen::Vector2d costate(double t) const {
    Eigen::Vector4d z;
    z << x0, p0;
    return ((generator() * t).exp() * z).tail<2>();
  }
};

}  // namespace oracle
