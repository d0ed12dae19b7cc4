#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "gtd/errors.hpp"
#include "gtd/mdp.hpp"

namespace gtd {

/// |S| x d feature table. `feature_bound` is the exact max absolute entry L;
/// `rank` is the numerical column rank, reported at construction. Rank
/// deficiency is tolerated here - only a singular covariance is fatal, and
/// that is checked where the covariance is actually inverted.
struct FeatureBasis {
  Mat table;
  double feature_bound = 0.0;
  int dim = 0;
  int rank = 0;
  bool truncated = false;  // set by constructors that may stop early

  explicit FeatureBasis(Mat phi, bool was_truncated = false)
      : table(std::move(phi)), truncated(was_truncated) {
    dim = static_cast<int>(table.cols());
    if (dim < 1) throw DimensionError("FeatureBasis: needs at least one feature");
    feature_bound = table.cwiseAbs().maxCoeff();
    rank = static_cast<int>(table.colPivHouseholderQr().rank());
  }

  Vec row(int s) const { return table.row(s).transpose(); }
};

inline double xi_dot(const Vec& u, const Vec& v, const StateDistribution& xi) {
  return (u.array() * v.array() * xi.weights.array()).sum();
}

/// Weighted L2 norm ||v||_xi = sqrt(sum_s xi(s) v(s)^2).
inline double xi_norm(const Vec& v, const StateDistribution& xi) {
  return std::sqrt((v.array().square() * xi.weights.array()).sum());
}

/// Xi-weighted orthogonal projector onto span(Phi):
/// Pi = Phi (Phi' Xi Phi)^-1 Phi' Xi, with C = Phi' Xi Phi and nu = lambda_min(C).
struct WeightedProjector {
  Mat matrix;
  Mat covariance;
  double nu = 0.0;
};

inline WeightedProjector build_projector(const FeatureBasis& basis, const StateDistribution& xi) {
  if (basis.table.rows() != xi.weights.size())
    throw DimensionError("build_projector: basis rows vs distribution length");
  const Mat weighted = xi.weights.asDiagonal() * basis.table;  // Xi Phi
  const Mat cov = basis.table.transpose() * weighted;
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const double nu = eig.eigenvalues().minCoeff();
  const double scale = std::max(1.0, eig.eigenvalues().maxCoeff());
  if (nu <= 1e-12 * scale)
    throw ConditioningError("build_projector: covariance Phi' Xi Phi is singular", nu);
  const Mat cinv_phit_xi = cov.llt().solve(weighted.transpose());  // C^-1 Phi' Xi
  return WeightedProjector{basis.table * cinv_phit_xi, cov, nu};
}

/// Bellman-error basis for the chain experiments. Feature 1 is the constant
/// vector normalized in ||.||_xi; feature j+1 is the Bellman error of the best
/// xi-weighted fit of the true value with features 1..j, orthonormalized in
/// the xi inner product. Stops early (truncated flag) once the Bellman error
/// norm falls below 1e-12, i.e. the value is already representable.
inline FeatureBasis bebf_basis(const Mdp& mdp, const PolicyTable& policy,
                               const StateDistribution& xi, int k) {
  if (k < 1) throw DimensionError("bebf_basis: k must be >= 1");
  const InducedChain chain = induce_chain(mdp, policy);
  const Vec value = exact_value(mdp, policy);
  const int n = mdp.num_states;

  Mat cols(n, k);
  Vec constant = Vec::Ones(n);
  cols.col(0) = constant / xi_norm(constant, xi);
  int built = 1;
  bool truncated = false;

  while (built < k) {
    // Best xi-weighted fit with the current columns (they are xi-orthonormal,
    // so the fit is a plain weighted inner-product expansion).
    Vec fit = Vec::Zero(n);
    for (int j = 0; j < built; ++j) fit += xi_dot(value, cols.col(j), xi) * cols.col(j);
    Vec bellman_error = bellman_apply(chain, fit, mdp.discount) - fit;
    // xi-orthogonalize against what we already have (modified Gram-Schmidt).
    for (int j = 0; j < built; ++j)
      bellman_error -= xi_dot(bellman_error, cols.col(j), xi) * cols.col(j);
    const double norm = xi_norm(bellman_error, xi);
    if (norm < 1e-12) {
      truncated = true;
      break;
    }
    cols.col(built) = bellman_error / norm;
    ++built;
  }
  return FeatureBasis(cols.leftCols(built), truncated);
}

}  // namespace gtd
