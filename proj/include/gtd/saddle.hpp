#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "gtd/errors.hpp"
#include "gtd/features.hpp"
#include "gtd/mdp.hpp"
#include "gtd/sampling.hpp"

namespace gtd {

/// Choice of the weighting matrix M in the objective
/// L(theta, y) = <b - A theta, y> - 1/2 ||y||_M^2.
/// Identity recovers the unweighted TD-update norm, the covariance C the
/// projected Bellman error.
enum class MMode { Identity, Covariance };

inline const char* to_string(MMode m) { return m == MMode::Identity ? "identity" : "covariance"; }

/// The convex-concave objective L(theta, y) = <b - A theta, y> - 1/2 ||y||_M^2
/// together with the ball feasible sets it is optimized over. M must be
/// positive definite; covariance mode therefore requires lambda_min(C) > 0.
/// Immutable; the eigendecomposition of M is cached for the error function.
class SaddleObjective {
 public:
  SaddleObjective(MomentTriple moments, MMode mode, double radius_theta, double radius_y)
      : moments_(std::move(moments)), mode_(mode), radius_theta_(radius_theta),
        radius_y_(radius_y) {
    if (!(radius_theta_ > 0.0) || !(radius_y_ > 0.0))
      throw InvariantError("SaddleObjective: feasible radii must be positive");
    const int d = static_cast<int>(moments_.a_mat.rows());
    const Mat m = mode_ == MMode::Identity ? Mat(Mat::Identity(d, d)) : moments_.c_mat;
    Eigen::SelfAdjointEigenSolver<Mat> eig(m);
    m_evals_ = eig.eigenvalues();
    m_evecs_ = eig.eigenvectors();
    tau_ = m_evals_.maxCoeff();
    if (m_evals_.minCoeff() <= 1e-12 * std::max(1.0, tau_))
      throw ConditioningError("SaddleObjective: M is not positive definite",
                              m_evals_.minCoeff());
    theta_star_ = moments_.a_mat.completeOrthogonalDecomposition().solve(moments_.b_vec);
  }

  const MomentTriple& moments() const { return moments_; }
  const Mat& a() const { return moments_.a_mat; }
  const Vec& b() const { return moments_.b_vec; }
  MMode m_mode() const { return mode_; }
  double tau() const { return tau_; }
  double radius_theta() const { return radius_theta_; }
  double radius_y() const { return radius_y_; }
  double radius() const { return std::max(radius_theta_, radius_y_); }
  int dim() const { return static_cast<int>(moments_.a_mat.rows()); }

  Mat m_matrix() const {
    return m_evecs_ * m_evals_.asDiagonal() * m_evecs_.transpose();
  }

  /// Minimum-norm least-squares solution of A theta = b.
  const Vec& theta_star() const { return theta_star_; }

  double lagrangian(const Vec& theta, const Vec& y) const {
    const Vec g = moments_.b_vec - moments_.a_mat * theta;
    return g.dot(y) - 0.5 * quad_m(y);
  }

  /// Maximizer of L(theta, .): y*(theta) = M^-1 (b - A theta).
  Vec y_star(const Vec& theta) const {
    return solve_m(moments_.b_vec - moments_.a_mat * theta);
  }

  /// J(theta) = ||b - A theta||^2 in the M^-1 norm.
  double j_value(const Vec& theta) const {
    const Vec g = moments_.b_vec - moments_.a_mat * theta;
    return g.dot(solve_m(g));
  }

  /// Error function max_{y in Y} L(theta, y) - min_{theta' in Theta} L(theta', y).
  /// The inner max is a concave quadratic over a ball, solved exactly through
  /// the eigenbasis of M with safeguarded Newton/bisection on the multiplier
  /// (tolerance 1e-10, cap 200). The inner min is linear in theta', so it has
  /// the closed form <b, y> - 1/2 ||y||_M^2 - R_theta ||A' y||.
  double err(const Vec& theta, const Vec& y) const {
    const double max_part = ball_max(moments_.b_vec - moments_.a_mat * theta);
    const double min_part = moments_.b_vec.dot(y) - 0.5 * quad_m(y) -
                            radius_theta_ * (moments_.a_mat.transpose() * y).norm();
    return max_part - min_part;
  }

 private:
  double quad_m(const Vec& y) const {
    const Vec w = m_evecs_.transpose() * y;
    return (m_evals_.array() * w.array().square()).sum();
  }

  Vec solve_m(const Vec& g) const {
    const Vec w = m_evecs_.transpose() * g;
    return m_evecs_ * (w.array() / m_evals_.array()).matrix();
  }

  // max over ||y|| <= R_y of <g, y> - 1/2 y' M y.
  double ball_max(const Vec& g) const {
    const Vec gh = m_evecs_.transpose() * g;
    auto norm_at = [&](double mu) {
      return std::sqrt((gh.array() / (m_evals_.array() + mu)).square().sum());
    };
    auto value_at = [&](double mu) {
      return (gh.array().square() * (0.5 * m_evals_.array() + mu) /
              (m_evals_.array() + mu).square())
          .sum();
    };
    if (norm_at(0.0) <= radius_y_) return value_at(0.0);  // interior optimum

    // The boundary multiplier solves ||(M + mu I)^-1 g|| = R_y; the norm is
    // strictly decreasing in mu, bracketed by [0, ||g|| / R_y].
    double lo = 0.0;
    double hi = std::max(g.norm() / radius_y_, 1e-300);
    while (norm_at(hi) > radius_y_) {  // guard against rounding at the bracket edge
      lo = hi;
      hi *= 2.0;
      if (!std::isfinite(hi))
        throw ConvergenceError("SaddleObjective::err: multiplier bracket overflow", hi);
    }
    double mu = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
      const double n = norm_at(mu);
      if (std::abs(n - radius_y_) <= 1e-10 * radius_y_) return value_at(mu);
      if (n > radius_y_) lo = mu; else hi = mu;
      // Newton step on 1/||y(mu)|| - 1/R, the standard well-conditioned form.
      const Vec yv = (gh.array() / (m_evals_.array() + mu)).matrix();
      const double dn = -(yv.array().square() / (m_evals_.array() + mu)).sum() / n;
      const double f = 1.0 / n - 1.0 / radius_y_;
      const double df = -dn / (n * n);
      double next = mu - f / df;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      mu = next;
    }
    const double res = std::abs(norm_at(mu) - radius_y_);
    if (res <= 1e-8 * radius_y_) return value_at(mu);
    throw ConvergenceError("SaddleObjective::err: multiplier search stalled in [" +
                               std::to_string(lo) + ", " + std::to_string(hi) + "]",
                           res);
  }

  MomentTriple moments_;
  MMode mode_;
  double tau_;
  double radius_theta_, radius_y_;
  Vec m_evals_;
  Mat m_evecs_;
  Vec theta_star_;
};

/// Analytic saddle point of the objective: A theta* = b (minimum-norm
/// solution) and y* = M^-1 (b - A theta*) = 0 whenever the system is solvable.
struct SaddlePoint {
  Vec theta_star;
  Vec y_star;
};

inline SaddlePoint solve_saddle_point(const SaddleObjective& obj) {
  return SaddlePoint{obj.theta_star(), obj.y_star(obj.theta_star())};
}

/// Norm of the expected TD update, ||b - A theta||^2 (J with M = I).
inline double neu(const MomentTriple& moments, const Vec& theta) {
  return (moments.b_vec - moments.a_mat * theta).squaredNorm();
}

/// Objective metrics evaluated from exact moments. MSPBE uses the
/// pseudo-inverse of C, which coincides with the usual C^-1 form whenever C
/// is nonsingular and stays equal to the projected-Bellman-error reading for
/// the rank-deficient bases where the plain inverse does not exist.
class Metrics {
 public:
  explicit Metrics(MomentTriple moments) : moments_(std::move(moments)) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(moments_.c_mat);
    c_evals_ = eig.eigenvalues();
    c_evecs_ = eig.eigenvectors();
    const double scale = std::max(1.0, c_evals_.maxCoeff());
    c_singular_ = c_evals_.minCoeff() <= 1e-12 * scale;
    pinv_cut_ = 1e-12 * scale;
  }

  const MomentTriple& moments() const { return moments_; }
  bool c_singular() const { return c_singular_; }

  double neu(const Vec& theta) const { return gtd::neu(moments_, theta); }

  double mspbe(const Vec& theta) const {
    const Vec g = moments_.b_vec - moments_.a_mat * theta;
    const Vec w = c_evecs_.transpose() * g;
    double total = 0.0;
    for (int i = 0; i < w.size(); ++i)
      if (c_evals_[i] > pinv_cut_) total += w[i] * w[i] / c_evals_[i];
    return total;
  }

  /// Attach the target chain so Bellman-error and value-error metrics in state
  /// space are available.
  void attach_chain(InducedChain target_chain, double gamma, Mat basis_table,
                    StateDistribution xi, Vec true_value) {
    chain_ = std::move(target_chain);
    gamma_ = gamma;
    basis_table_ = std::move(basis_table);
    xi_ = std::move(xi);
    true_value_ = std::move(true_value);
  }

  bool has_chain() const { return chain_.has_value(); }

  /// ||T v - v||_xi^2 with v = Phi theta.
  double msbe(const Vec& theta) const {
    const Vec v = basis_table_ * theta;
    const Vec bellman = chain_->reward + gamma_ * chain_->kernel * v - v;
    const double n = xi_norm(bellman, *xi_);
    return n * n;
  }

  /// ||V - Phi theta||_xi.
  double value_error(const Vec& theta) const {
    return xi_norm(true_value_ - basis_table_ * theta, *xi_);
  }

 private:
  MomentTriple moments_;
  Vec c_evals_;
  Mat c_evecs_;
  bool c_singular_ = false;
  double pinv_cut_ = 0.0;

  std::optional<InducedChain> chain_;
  double gamma_ = 0.0;
  Mat basis_table_;
  std::optional<StateDistribution> xi_;
  Vec true_value_;
};

/// || Phi' Xi (T Phi theta - Phi theta) - (b - A theta) ||, where T is the
/// target policy's Bellman operator and (A, b) come from the importance-
/// weighted expectations. The two sides are computed through independent
/// paths, so this is an exact identity check up to rounding.
inline double moment_identity_residual(const Mdp& mdp, const PolicyTable& behavior,
                              const PolicyTable& target, const StateDistribution& xi,
                              const FeatureBasis& basis, const Vec& theta) {
  const InducedChain chain = induce_chain(mdp, target);
  const Vec v = basis.table * theta;
  const Vec bellman = chain.reward + mdp.discount * chain.kernel * v - v;
  const Vec lhs = basis.table.transpose() * xi.weights.asDiagonal() * bellman;
  const MomentTriple m = exact_moments(mdp, behavior, target, xi, basis);
  const Vec rhs = m.b_vec - m.a_mat * theta;
  return (lhs - rhs).norm();
}

/// Default ball radii for an objective. The theta ball holds the least-squares
/// solution with a factor-10 margin and the run's start point with a factor-2
/// margin; the y ball additionally holds y*(theta) for every feasible theta so
/// that the inner maximization of the error function attains the unconstrained
/// optimum throughout the feasible set.
inline std::pair<double, double> default_radii(const MomentTriple& moments, MMode mode,
                                               const Vec& theta_init) {
  const Vec theta_ls = moments.a_mat.completeOrthogonalDecomposition().solve(moments.b_vec);
  const double radius_theta =
      std::max({10.0 * theta_ls.norm(), 2.0 * theta_init.norm(), 1.0});
  double lambda_min_m = 1.0;
  if (mode == MMode::Covariance) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(moments.c_mat);
    lambda_min_m = eig.eigenvalues().minCoeff();
    if (lambda_min_m <= 0.0)
      throw ConditioningError("default_radii: covariance mode with singular C", lambda_min_m);
  }
  const double norm_a = moments.a_mat.jacobiSvd().singularValues()(0);
  const double radius_y = std::max(
      radius_theta, 1.05 * (moments.b_vec.norm() + norm_a * radius_theta) / lambda_min_m);
  return {radius_theta, radius_y};
}

}  // namespace gtd
