#pragma once

// Two independent Q_i-Wiener processes sharing the cosine eigenbasis,
// truncated to K modes per axis.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "fhnopt/grid.hpp"

namespace fhnopt {

struct SpectralCovariance {
  int dimension = 1;
  int per_axis = 0;
  // Eigenvalues laid out like ModalBasis coefficients (K x 1 or K x K).
  Eigen::MatrixXd lambda1;
  Eigen::MatrixXd lambda2;

  // lambda^i_(j1,j2) = sigma_i^2 ((j1+1)(j2+1))^-2; in 1-D sigma_i^2 k^-2.
  static SpectralCovariance inverse_square(int dimension, int per_axis, double sigma1, double sigma2) {
    SpectralCovariance c = zero(dimension, per_axis);
    for (Eigen::Index j2 = 0; j2 < c.lambda1.cols(); ++j2) {
      for (Eigen::Index j1 = 0; j1 < c.lambda1.rows(); ++j1) {
        const double k = double(j1 + 1) * double(j2 + 1);
        c.lambda1(j1, j2) = sigma1 * sigma1 / (k * k);
        c.lambda2(j1, j2) = sigma2 * sigma2 / (k * k);
      }
    }
    return c;
  }

  static SpectralCovariance zero(int dimension, int per_axis) {
    if (dimension != 1 && dimension != 2) throw ConfigError("noise dimension must be 1 or 2");
    if (per_axis < 1) throw ConfigError("noise truncation must be at least 1 mode");
    SpectralCovariance c;
    c.dimension = dimension;
    c.per_axis = per_axis;
    const Eigen::Index cols = dimension == 1 ? 1 : per_axis;
    c.lambda1 = Eigen::MatrixXd::Zero(per_axis, cols);
    c.lambda2 = Eigen::MatrixXd::Zero(per_axis, cols);
    return c;
  }

  void validate() const {
    if (!lambda1.allFinite() || !lambda2.allFinite() || lambda1.minCoeff() < 0.0 || lambda2.minCoeff() < 0.0) {
      throw ConfigError("covariance eigenvalues must be finite and nonnegative");
    }
    if (lambda1.rows() != per_axis || lambda2.rows() != per_axis || lambda1.cols() != lambda2.cols()) {
      throw ConfigError("covariance eigenvalue arrays have inconsistent shape");
    }
  }

  bool is_zero() const { return lambda1.isZero(0.0) && lambda2.isZero(0.0); }
};

inline double trace_q(const SpectralCovariance& cov, int which) {
  if (which != 1 && which != 2) throw ConfigError("trace_q: component must be 1 or 2");
  return which == 1 ? cov.lambda1.sum() : cov.lambda2.sum();
}

struct WienerIncrement {
  Field dbeta1;
  Field dbeta2;

  static WienerIncrement zeros(const Grid& g) { return {g.zeros(), g.zeros()}; }
  WienerIncrement& operator+=(const WienerIncrement& o) {
    dbeta1 += o.dbeta1;
    dbeta2 += o.dbeta2;
    return *this;
  }
};

// Independent generator per (seed, path, step). seed_seq and mt19937_64 are
// fully specified by the standard, so streams never depend on fan-out order.
inline std::mt19937_64 stream_for(std::uint64_t seed, std::uint64_t path, std::uint64_t step) {
  auto lo = [](std::uint64_t x) { return static_cast<std::uint32_t>(x & 0xffffffffu); };
  auto hi = [](std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(path), hi(path), lo(step), hi(step), 0x46484eu};
  return std::mt19937_64(seq);
}

// Karhunen-Loeve synthesis of truncated increments.
class NoiseSampler {
 public:
  NoiseSampler(const Grid& g, SpectralCovariance cov) : cov_(std::move(cov)), basis_(g, checked_axis(g, cov_)) {
    cov_.validate();
    sqrt1_ = cov_.lambda1.array().sqrt();
    sqrt2_ = cov_.lambda2.array().sqrt();
  }

  const SpectralCovariance& covariance() const noexcept { return cov_; }
  const ModalBasis& basis() const noexcept { return basis_; }

  // Standard Brownian modal increments dB ~ N(0, dt), both components. All
  // modes are drawn even when their eigenvalue is zero so the stream layout
  // does not depend on the spectrum.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> draw_modal(double dt, std::mt19937_64& rng) const {
    check_dt(dt);
    Eigen::MatrixXd b1(cov_.lambda1.rows(), cov_.lambda1.cols());
    Eigen::MatrixXd b2(b1.rows(), b1.cols());
    if (dt == 0.0) return {b1.setZero(), b2.setZero()};
    std::normal_distribution<double> normal(0.0, std::sqrt(dt));
    for (Eigen::Index i = 0; i < b1.size(); ++i) b1.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < b2.size(); ++i) b2.data()[i] = normal(rng);
    return {b1, b2};
  }

  WienerIncrement synthesize(const Eigen::MatrixXd& b1, const Eigen::MatrixXd& b2) const {
    return {basis_.synthesize(sqrt1_.cwiseProduct(b1)), basis_.synthesize(sqrt2_.cwiseProduct(b2))};
  }

  WienerIncrement sample(double dt, std::mt19937_64& rng) const {
    if (dt == 0.0) {
      check_dt(dt);
      return WienerIncrement::zeros(basis_.grid());
    }
    const auto [b1, b2] = draw_modal(dt, rng);
    return synthesize(b1, b2);
  }

 private:
  static int checked_axis(const Grid& g, const SpectralCovariance& cov) {
    if (cov.dimension != g.dimension()) throw ConfigError("covariance and grid dimensions differ");
    return cov.per_axis;
  }
  static void check_dt(double dt) {
    if (!(dt >= 0.0) || !std::isfinite(dt)) throw ConfigError("noise increment needs dt >= 0");
  }

  SpectralCovariance cov_;
  ModalBasis basis_;
  Eigen::MatrixXd sqrt1_;
  Eigen::MatrixXd sqrt2_;
};

inline WienerIncrement sample_increment(const SpectralCovariance& cov, const Grid& g, double dt,
                                        std::mt19937_64& rng) {
  return NoiseSampler(g, cov).sample(dt, rng);
}

namespace detail {
inline StateX spectral_multiply(const ModalBasis& basis, const StateX& x,
                                const Eigen::MatrixXd& m1, const Eigen::MatrixXd& m2) {
  return {basis.synthesize(m1.cwiseProduct(basis.project(x.v))),
          basis.synthesize(m2.cwiseProduct(basis.project(x.w)))};
}
}  // namespace detail

// Q^(1/2) X: project each component on e_k, scale by sqrt(lambda_k^i),
// re-synthesise. Components beyond the truncation are dropped.
inline StateX sqrt_q_apply(const SpectralCovariance& cov, const Grid& g, const StateX& x) {
  require_on_grid(g, x, "sqrt_q_apply");
  const ModalBasis basis(g, cov.per_axis);
  return detail::spectral_multiply(basis, x, cov.lambda1.array().sqrt().matrix(),
                                   cov.lambda2.array().sqrt().matrix());
}

inline StateX q_apply(const SpectralCovariance& cov, const Grid& g, const StateX& x) {
  require_on_grid(g, x, "q_apply");
  const ModalBasis basis(g, cov.per_axis);
  return detail::spectral_multiply(basis, x, cov.lambda1, cov.lambda2);
}

}  // namespace fhnopt
