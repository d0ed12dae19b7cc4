#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "gtd/errors.hpp"
#include "gtd/features.hpp"
#include "gtd/mdp.hpp"
#include "gtd/rng.hpp"
#include "gtd/saddle.hpp"
#include "gtd/sampling.hpp"

namespace gtd {

/// Everything the closed-form bounds consume. Norm fields hold exact values
/// when `norms_exact` is set and otherwise fall back to the induced-norm
/// bounds below.
struct BoundInputs {
  double feature_bound = 0.0;  // L
  int dim = 0;                 // d
  double gamma = 0.0;
  double rho_max = 0.0;
  double r_max = 0.0;
  double radius = 0.0;  // R = max feasible radius
  double tau = 0.0;     // sigma_max(M)
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double xi_max = 0.0;
  double nu = 0.0;             // lambda_min(C)
  double tau_c = 0.0;          // sigma_max(C)
  double sigma_min_amia = 0.0; // sigma_min(A' M^-1 A); smallest positive one when A is rank-deficient
  double delta = 0.05;
  double norm_a = -1.0;
  double norm_b = -1.0;
  bool norms_exact = false;
  bool effective_sigma_min = false;  // sigma_min_amia skipped null directions

  double sigma() const { return std::hypot(sigma1, sigma2); }
};

/// ||A|| <= (1 + gamma) rho_max L^2 d and ||b|| <= rho_max L r_max.
inline std::pair<double, double> moment_norm_bounds(const BoundInputs& in) {
  return {(1.0 + in.gamma) * in.rho_max * in.feature_bound * in.feature_bound * in.dim,
          in.rho_max * in.feature_bound * in.r_max};
}

inline double norm_a_or_bound(const BoundInputs& in) {
  return in.norm_a >= 0.0 ? in.norm_a : moment_norm_bounds(in).first;
}

inline double norm_b_or_bound(const BoundInputs& in) {
  return in.norm_b >= 0.0 ? in.norm_b : moment_norm_bounds(in).second;
}

/// Exact variance constants: sigma_1^2 bounds Var[b_hat - A_hat theta - M_hat y]
/// and sigma_2^2 bounds Var[A_hat' y], both maximized over boundary points of
/// the feasible balls: `k_probe` seeded random directions plus deterministic
/// extremal directions read off the exact second-moment matrices (the top
/// eigendirection of E[A_hat A_hat'] - A A' drives the worst y for sigma_2,
/// and the top block-eigendirection of the joint quadratic drives sigma_1).
/// Each probe's variance is computed by enumeration over (s, a, s') - no
/// sampling - so the result is deterministic given the probe seed. A probe
/// max approximates the supremum over the whole boundary and is flagged as
/// such wherever it is reported.
inline std::pair<double, double> estimate_sigmas(const Mdp& mdp, const PolicyTable& behavior,
                                                 const PolicyTable& target,
                                                 const StateDistribution& xi,
                                                 const FeatureBasis& basis,
                                                 const SaddleObjective& objective, int k_probe,
                                                 std::uint64_t probe_seed = 20240501) {
  if (k_probe < 1) throw InvariantError("estimate_sigmas: k_probe must be >= 1");
  const int d = basis.dim;
  SplitMixRng rng(probe_seed);
  const bool covariance = objective.m_mode() == MMode::Covariance;
  const Mat m_mat = objective.m_matrix();
  const Mat& a_mat = objective.a();

  // Second moments of the per-sample estimates, enumerated once.
  Mat e_aat = Mat::Zero(d, d);   // E[A_hat A_hat']
  Mat e_ata = Mat::Zero(d, d);   // E[A_hat' A_hat]
  Mat e_atm = Mat::Zero(d, d);   // E[A_hat' M_hat]
  Mat e_mm = Mat::Zero(d, d);    // E[M_hat M_hat]
  for (int s = 0; s < mdp.num_states; ++s) {
    const double ws = xi.weights[s];
    if (ws == 0.0) continue;
    const Vec phi = basis.row(s);
    const double phi_sq = phi.squaredNorm();
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double wa = behavior.probs(s, a);
      if (wa == 0.0) continue;
      const double rho = target.probs(s, a) / wa;
      for (int t = 0; t < mdp.num_states; ++t) {
        const double p = mdp.transition[a](s, t);
        if (p == 0.0) continue;
        const double w = ws * wa * p;
        const Vec dphi = phi - mdp.discount * basis.row(t);
        e_aat += w * rho * rho * dphi.squaredNorm() * phi * phi.transpose();
        e_ata += w * rho * rho * phi_sq * dphi * dphi.transpose();
        if (covariance) {
          e_atm += w * rho * phi_sq * dphi * phi.transpose();
          e_mm += w * phi_sq * phi * phi.transpose();
        }
      }
    }
  }
  if (!covariance) {
    e_atm = a_mat.transpose();           // M_hat = I exactly
    e_mm = Mat::Identity(d, d);
  }

  auto top_eigvec = [](const Mat& sym) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (sym + sym.transpose()));
    return Vec(eig.eigenvectors().col(sym.rows() - 1));
  };
  auto to_boundary = [&](const Vec& v, double radius) {
    const double n = v.norm();
    return n > 0.0 ? Vec(v * (radius / n)) : Vec(Vec::Unit(d, 0) * radius);
  };

  std::vector<std::pair<Vec, Vec>> probes;
  for (int probe = 0; probe < k_probe; ++probe) {
    Vec vt(d), vy(d);
    for (int i = 0; i < d; ++i) vt[i] = rng.normal();
    for (int i = 0; i < d; ++i) vy[i] = rng.normal();
    probes.emplace_back(to_boundary(vt, objective.radius_theta()),
                        to_boundary(vy, objective.radius_y()));
  }
  // Extremal direction of Var(A_hat' y) = y' (E[A_hat A_hat'] - A A') y.
  const Vec y2 = to_boundary(top_eigvec(e_aat - a_mat * a_mat.transpose()),
                             objective.radius_y());
  probes.emplace_back(Vec(Vec::Zero(d)), y2);
  // Dominant block of the joint quadratic of Var(b_hat - A_hat theta - M_hat y).
  Mat joint(2 * d, 2 * d);
  joint.topLeftCorner(d, d) = e_ata - a_mat.transpose() * a_mat;
  joint.topRightCorner(d, d) = e_atm - a_mat.transpose() * m_mat;
  joint.bottomLeftCorner(d, d) = joint.topRightCorner(d, d).transpose();
  joint.bottomRightCorner(d, d) = e_mm - m_mat * m_mat;
  const Vec u = top_eigvec(joint);
  const Vec u_theta = to_boundary(u.head(d), objective.radius_theta());
  const Vec u_y = to_boundary(u.tail(d), objective.radius_y());
  for (double st : {1.0, -1.0})
    for (double sy : {1.0, -1.0}) probes.emplace_back(Vec(st * u_theta), Vec(sy * u_y));

  double var1_max = 0.0;
  double var2_max = 0.0;
  for (const auto& [theta, y] : probes) {
    Vec mean1 = Vec::Zero(d), mean2 = Vec::Zero(d);
    double sq1 = 0.0, sq2 = 0.0;
    for (int s = 0; s < mdp.num_states; ++s) {
      const double ws = xi.weights[s];
      if (ws == 0.0) continue;
      const Vec phi = basis.row(s);
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double wa = behavior.probs(s, a);
        if (wa == 0.0) continue;
        const double rho = target.probs(s, a) / wa;
        for (int t = 0; t < mdp.num_states; ++t) {
          const double p = mdp.transition[a](s, t);
          if (p == 0.0) continue;
          const double w = ws * wa * p;
          const Vec dphi = phi - mdp.discount * basis.row(t);
          const double delta = mdp.reward(s, a) - dphi.dot(theta);
          const Vec my = covariance ? Vec(phi.dot(y) * phi) : y;
          const Vec x1 = rho * delta * phi - my;  // b_hat - A_hat theta - M_hat y
          const Vec x2 = rho * phi.dot(y) * dphi; // A_hat' y
          mean1 += w * x1;
          mean2 += w * x2;
          sq1 += w * x1.squaredNorm();
          sq2 += w * x2.squaredNorm();
        }
      }
    }
    var1_max = std::max(var1_max, sq1 - mean1.squaredNorm());
    var2_max = std::max(var2_max, sq2 - mean2.squaredNorm());
  }
  return {std::sqrt(std::max(0.0, var1_max)), std::sqrt(std::max(0.0, var2_max))};
}

/// M* = R^2 (2 ||A|| + tau) + R (sigma + ||b||).
inline double m_star(const BoundInputs& in) {
  const double r = in.radius;
  return r * r * (2.0 * norm_a_or_bound(in) + in.tau) + r * (in.sigma() + norm_b_or_bound(in));
}

/// High-probability error bound at confidence 1 - delta:
/// sqrt(5/n) (8 + 2 log(2/delta)) R^2 (rho_max L (2(1+gamma)Ld + r_max/R) + tau + sigma/R).
inline double high_prob_err_bound(const BoundInputs& in, long n) {
  if (n < 1) throw InvariantError("high_prob_err_bound: n must be >= 1");
  const double r = in.radius;
  const double lead = std::sqrt(5.0 / static_cast<double>(n)) * (8.0 + 2.0 * std::log(2.0 / in.delta));
  const double body = in.rho_max * in.feature_bound *
                          (2.0 * (1.0 + in.gamma) * in.feature_bound * in.dim + in.r_max / r) +
                      in.tau + in.sigma() / r;
  return lead * r * r * body;
}

struct ResidualErrCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// 1/2 ||A theta_bar - b||^2, xi-weighted, against tau xi_max Err(theta_bar, y_bar).
/// The left side weights the d-dimensional residual by xi_max, the largest
/// weight any state-distribution norm could assign, which keeps the check at
/// least as strong as any consistent reading of the weighted norm.
inline ResidualErrCheck residual_err_check(const SaddleObjective& objective, const Vec& theta_bar,
                                    const Vec& y_bar, const StateDistribution& xi) {
  const double residual_sq = (objective.a() * theta_bar - objective.b()).squaredNorm();
  ResidualErrCheck out;
  out.lhs = 0.5 * xi.xi_max * residual_sq;
  out.rhs = objective.tau() * xi.xi_max * objective.err(theta_bar, y_bar);
  out.holds = out.lhs <= out.rhs + 1e-9;
  return out;
}

/// On-policy value-error bound:
/// (1/(1-gamma)) (||V - Pi V||_xi + (L/nu) sqrt(2 d tau xi_max err)).
/// Callers assert rho_max = 1 context; the formula itself has no rho term.
inline double on_policy_value_bound(const BoundInputs& in, double err_value, double v_proj_residual) {
  const double inner = in.feature_bound / in.nu *
                       std::sqrt(2.0 * in.dim * in.tau * in.xi_max * std::max(0.0, err_value));
  return (v_proj_residual + inner) / (1.0 - in.gamma);
}

struct LmiCheck {
  double min_eig = 0.0;
  bool holds = false;
};

/// Positive-semidefiniteness of [[Phi' Xi Phi, Phi' Xi P Phi],
///                               [Phi' P' Xi Phi, Phi' Xi Phi]]
/// with P the target policy's kernel.
inline LmiCheck kolter_lmi_check(const FeatureBasis& basis, const StateDistribution& xi,
                                 const InducedChain& chain_target) {
  const int d = basis.dim;
  const Mat xiphi = xi.weights.asDiagonal() * basis.table;
  const Mat c = basis.table.transpose() * xiphi;
  const Mat cross = basis.table.transpose() * xi.weights.asDiagonal() *
                    chain_target.kernel * basis.table;
  Mat block(2 * d, 2 * d);
  block.topLeftCorner(d, d) = c;
  block.topRightCorner(d, d) = cross;
  block.bottomLeftCorner(d, d) = cross.transpose();
  block.bottomRightCorner(d, d) = c;
  Eigen::SelfAdjointEigenSolver<Mat> eig(block);
  const double min_eig = eig.eigenvalues().minCoeff();
  return LmiCheck{min_eig, min_eig >= -1e-10};
}

struct OffPolicyValueBound {
  double value = 0.0;
  bool lmi_applicable = true;
};

/// Off-policy value-error bound:
/// ((1 + gamma sqrt(rho_max)) / (1 - gamma)) ||V - Pi V||_xi
///   + sqrt(2 tau_C tau xi_max / sigma_min(A' M^-1 A) * err).
/// Inapplicable (flagged) when the sampling distribution fails the LMI.
inline OffPolicyValueBound off_policy_value_bound(const BoundInputs& in, double err_value, double v_proj_residual,
                               bool lmi_holds = true) {
  const double head =
      (1.0 + in.gamma * std::sqrt(in.rho_max)) / (1.0 - in.gamma) * v_proj_residual;
  const double tail = std::sqrt(2.0 * in.tau_c * in.tau * in.xi_max / in.sigma_min_amia *
                                std::max(0.0, err_value));
  return OffPolicyValueBound{head + tail, lmi_holds};
}

struct RateTable {
  double gtd_rate = 0.0;
  double smp_rate = 0.0;
  double optimal_rate = 0.0;
};

/// Order-only rate expressions with unit constants. These gate slope tests,
/// never absolute comparisons.
inline RateTable rate_table(const BoundInputs& in, long n) {
  const double nd = static_cast<double>(n);
  const double na = norm_a_or_bound(in);
  const double s = in.sigma();
  return RateTable{(in.tau + na + s) / std::sqrt(nd),
                   (in.tau + na) / nd + s / std::sqrt(nd),
                   in.tau / (nd * nd) + na / nd + s / std::sqrt(nd)};
}

/// Biased-weight rate: the unit-constant GTD rate plus the epsilon floor.
inline double biased_weight_bound(const BoundInputs& in, long n, double epsilon) {
  if (epsilon < 0.0) throw InvariantError("biased_weight_bound: epsilon must be nonnegative");
  return rate_table(in, n).gtd_rate + epsilon;
}

struct LightTailConstants {
  double m_star_theta_sq = 0.0;  // sigma_2^2 + ||A||^2 R^2
  double m_star_y_sq = 0.0;      // (||b|| + (||A|| + tau) R)^2 + sigma_1^2
  double weighted_sum = 0.0;     // 2 R^2 (m_star_theta_sq + m_star_y_sq)
  double m_star_sq = 0.0;
};

inline LightTailConstants light_tail_constants(const BoundInputs& in) {
  const double na = norm_a_or_bound(in);
  const double nb = norm_b_or_bound(in);
  const double r = in.radius;
  LightTailConstants out;
  out.m_star_theta_sq = in.sigma2 * in.sigma2 + na * na * r * r;
  const double ycore = nb + (na + in.tau) * r;
  out.m_star_y_sq = ycore * ycore + in.sigma1 * in.sigma1;
  out.weighted_sum = 2.0 * r * r * (out.m_star_theta_sq + out.m_star_y_sq);
  const double ms = m_star(in);
  out.m_star_sq = ms * ms;
  return out;
}

inline nlohmann::json inputs_to_json(const BoundInputs& in) {
  return nlohmann::json{
      {"L", in.feature_bound}, {"d", in.dim},       {"gamma", in.gamma},
      {"rho_max", in.rho_max}, {"r_max", in.r_max}, {"R", in.radius},
      {"tau", in.tau},         {"sigma1", in.sigma1}, {"sigma2", in.sigma2},
      {"xi_max", in.xi_max},   {"nu", in.nu},       {"tau_c", in.tau_c},
      {"sigma_min_amia", in.sigma_min_amia},        {"delta", in.delta},
      {"norm_a", in.norm_a},   {"norm_b", in.norm_b}};
}

/// Wire format for one evaluated bound: {name, value, inputs, flags}.
inline nlohmann::json bound_report(const std::string& name, double value,
                                   const BoundInputs& in,
                                   const std::vector<std::string>& flags = {}) {
  return nlohmann::json{
      {"name", name}, {"value", value}, {"inputs", inputs_to_json(in)}, {"flags", flags}};
}

/// Fills a BoundInputs from exact quantities of a concrete problem.
inline BoundInputs bound_inputs_from(const Mdp& mdp, const PolicyTable& behavior,
                                     const PolicyTable& target, const StateDistribution& xi,
                                     const FeatureBasis& basis, const SaddleObjective& objective,
                                     double sigma1, double sigma2, double delta = 0.05) {
  BoundInputs in;
  in.feature_bound = basis.feature_bound;
  in.dim = basis.dim;
  in.gamma = mdp.discount;
  in.rho_max = rho_max_exact(behavior, target, xi);
  in.r_max = mdp.r_max;
  in.radius = objective.radius();
  in.tau = objective.tau();
  in.sigma1 = sigma1;
  in.sigma2 = sigma2;
  in.xi_max = xi.xi_max;
  in.delta = delta;

  Eigen::SelfAdjointEigenSolver<Mat> ceig(objective.moments().c_mat);
  in.nu = ceig.eigenvalues().minCoeff();
  in.tau_c = ceig.eigenvalues().maxCoeff();

  in.norm_a = objective.a().jacobiSvd().singularValues()(0);
  in.norm_b = objective.b().norm();
  in.norms_exact = true;

  const Mat m = objective.m_matrix();
  const Mat amia = objective.a().transpose() * m.llt().solve(objective.a());
  Eigen::SelfAdjointEigenSolver<Mat> aeig(amia);
  const Vec evals = aeig.eigenvalues();
  const double cut = 1e-10 * std::max(1.0, evals.maxCoeff());
  double smallest_positive = evals.maxCoeff();
  bool skipped = false;
  for (int i = 0; i < evals.size(); ++i) {
    if (evals[i] > cut)
      smallest_positive = std::min(smallest_positive, evals[i]);
    else
      skipped = true;
  }
  in.sigma_min_amia = smallest_positive;
  in.effective_sigma_min = skipped;
  return in;
}

}  // namespace gtd
