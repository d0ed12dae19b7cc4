#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "gtd/features.hpp"
#include "gtd/mdp.hpp"
#include "gtd/sampling.hpp"

namespace gtd {
namespace domains {

/// Everything an experiment needs: the MDP, the policy pair, the sampling
/// distribution, the feature basis, a start point, and construction notes.
struct DomainBundle {
  std::string name;
  Mdp mdp;
  PolicyTable behavior;
  PolicyTable target;
  StateDistribution xi;
  FeatureBasis basis;
  Vec theta_init;
  nlohmann::json metadata;
};

struct BairdParams {
  double gamma = 0.99;
  double dashed_prob = 6.0 / 7.0;  // behavior mass on the dashed action
  bool hard_start = true;          // theta_0 = (1,...,1,10,1)
};

/// Seven-state star counterexample. Action 0 ("solid") jumps to the hub,
/// action 1 ("dashed") moves uniformly over the six spokes. The behavior
/// policy mostly follows dashed while the target always follows solid, all
/// rewards are zero, and the basis is the canonical 8-feature star basis
/// (rank 7, so the feature covariance is singular by construction).
inline DomainBundle baird(const BairdParams& p = {}) {
  const int n = 7, hub = 6;
  std::vector<Mat> trans(2, Mat::Zero(n, n));
  for (int s = 0; s < n; ++s) {
    trans[0](s, hub) = 1.0;
    for (int t = 0; t < 6; ++t) trans[1](s, t) = 1.0 / 6.0;
  }
  Mdp mdp(std::move(trans), Mat::Zero(n, 2), p.gamma);

  Mat behavior(n, 2);
  behavior.col(0).setConstant(1.0 - p.dashed_prob);
  behavior.col(1).setConstant(p.dashed_prob);
  Mat target = Mat::Zero(n, 2);
  target.col(0).setOnes();

  Mat phi = Mat::Zero(n, 8);
  for (int s = 0; s < 6; ++s) {
    phi(s, s) = 2.0;
    phi(s, 7) = 1.0;
  }
  phi(hub, 6) = 1.0;
  phi(hub, 7) = 2.0;

  Vec theta0 = Vec::Ones(8);
  if (p.hard_start) theta0[6] = 10.0;

  StateDistribution xi = uniform_distribution(n);
  PolicyTable pb(behavior), pt(target);
  nlohmann::json meta;
  meta["rho_max"] = rho_max_exact(pb, pt, xi);
  meta["basis_rank"] = 7;
  meta["covariance_singular"] = true;
  meta["hard_start"] = p.hard_start;
  return DomainBundle{"baird", std::move(mdp), std::move(pb), std::move(pt), std::move(xi),
                      FeatureBasis(std::move(phi)), std::move(theta0), std::move(meta)};
}

struct Chain50Params {
  int bebf_features = 5;
  double gamma = 0.9;
  double success = 0.9;
};

/// 50-state chain, on-policy. Left/right actions succeed with probability 0.9
/// and move the agent the opposite way otherwise, clamped at the ends.
/// Reward +1 in states 10 and 41 (1-based). Both policies are uniform, xi is
/// the stationary distribution of the induced chain, and the basis is the
/// Bellman-error construction (k features, xi-orthonormal columns).
inline DomainBundle chain50(const Chain50Params& p = {}) {
  const int n = 50;
  std::vector<Mat> trans(2, Mat::Zero(n, n));
  for (int s = 0; s < n; ++s) {
    const int left = std::max(s - 1, 0);
    const int right = std::min(s + 1, n - 1);
    trans[0](s, left) += p.success;
    trans[0](s, right) += 1.0 - p.success;
    trans[1](s, right) += p.success;
    trans[1](s, left) += 1.0 - p.success;
  }
  Mat reward = Mat::Zero(n, 2);
  reward.row(9).setOnes();
  reward.row(40).setOnes();
  Mdp mdp(std::move(trans), std::move(reward), p.gamma);

  PolicyTable policy{Mat::Constant(n, 2, 0.5)};
  StateDistribution xi = stationary_distribution(induce_chain(mdp, policy));
  FeatureBasis basis = bebf_basis(mdp, policy, xi, p.bebf_features);
  const int d = basis.dim;

  nlohmann::json meta;
  meta["rho_max"] = 1.0;
  meta["on_policy"] = true;
  meta["bebf_features"] = d;
  meta["bebf_truncated"] = basis.truncated;
  return DomainBundle{"chain50", std::move(mdp), policy, policy, std::move(xi),
                      std::move(basis), Vec::Zero(d), std::move(meta)};
}

struct EnergyParams {
  int price_levels = 5;
  int storage_levels = 10;
  double gamma = 0.95;
  double price_scale = 1.0;
  double degradation = 0.5;   // penalty weight at full charge / full discharge
  double policy_mix = 0.5;    // behavior = mix * target + (1 - mix) * uniform
};

/// Energy arbitrage stand-in: a Markov price chain crossed with a discretized
/// storage level. Buying and selling move one storage step (no-ops at the
/// boundaries), trade reward is price-weighted flow, and a degradation
/// penalty discourages sitting at either storage extreme. The published
/// problem gives no transition model, so this is an explicitly parameterized
/// substitute; whether A theta = b is solvable is checked and recorded in the
/// metadata rather than assumed.
inline DomainBundle energy(const EnergyParams& p = {}) {
  const int np = p.price_levels, ns = p.storage_levels;
  const int n = np * ns;
  auto idx = [&](int price, int level) { return price * ns + level; };

  Mat price_chain = Mat::Zero(np, np);
  for (int i = 0; i < np; ++i) {
    price_chain(i, std::max(i - 1, 0)) += 0.25;
    price_chain(i, std::min(i + 1, np - 1)) += 0.25;
    price_chain(i, i) += 0.5;
  }

  auto price_of = [&](int i) { return p.price_scale * static_cast<double>(i + 1); };
  auto penalty = [&](int level) {
    const double x = 2.0 * level / (ns - 1.0) - 1.0;
    return p.degradation * x * x * x * x;
  };

  std::vector<Mat> trans(3, Mat::Zero(n, n));
  Mat reward = Mat::Zero(n, 3);
  for (int pr = 0; pr < np; ++pr) {
    for (int lv = 0; lv < ns; ++lv) {
      const int s = idx(pr, lv);
      const int buy_level = std::min(lv + 1, ns - 1);
      const int sell_level = std::max(lv - 1, 0);
      const double buy_flow = buy_level - lv;    // 1 or 0 at the top
      const double sell_flow = lv - sell_level;  // 1 or 0 at the bottom
      reward(s, 0) = -price_of(pr) * buy_flow - penalty(buy_level);
      reward(s, 1) = -penalty(lv);
      reward(s, 2) = price_of(pr) * sell_flow - penalty(sell_level);
      for (int pr2 = 0; pr2 < np; ++pr2) {
        const double w = price_chain(pr, pr2);
        if (w == 0.0) continue;
        trans[0](s, idx(pr2, buy_level)) += w;
        trans[1](s, idx(pr2, lv)) += w;
        trans[2](s, idx(pr2, sell_level)) += w;
      }
    }
  }
  Mdp mdp(std::move(trans), std::move(reward), p.gamma);

  // Target: buy low, sell high, with some exploration. Behavior: the target
  // blended with uniform, which keeps the importance weights mild.
  Mat target(n, 3);
  for (int pr = 0; pr < np; ++pr) {
    Eigen::RowVector3d row;
    const double frac = np > 1 ? static_cast<double>(pr) / (np - 1) : 0.5;
    if (frac < 0.4) row << 0.7, 0.2, 0.1;
    else if (frac > 0.6) row << 0.1, 0.2, 0.7;
    else row << 1.0 / 3, 1.0 / 3, 1.0 / 3;
    for (int lv = 0; lv < ns; ++lv) target.row(idx(pr, lv)) = row;
  }
  Mat behavior = p.policy_mix * target + (1.0 - p.policy_mix) * Mat::Constant(n, 3, 1.0 / 3);
  PolicyTable pt(std::move(target)), pb(std::move(behavior));

  StateDistribution xi = stationary_distribution(induce_chain(mdp, pb));

  const int d = 7;
  Mat phi(n, d);
  for (int pr = 0; pr < np; ++pr) {
    const double x = np > 1 ? 2.0 * pr / (np - 1.0) - 1.0 : 0.0;
    for (int lv = 0; lv < ns; ++lv) {
      const double z = ns > 1 ? 2.0 * lv / (ns - 1.0) - 1.0 : 0.0;
      const int s = idx(pr, lv);
      phi(s, 0) = 1.0;
      phi(s, 1) = x;
      phi(s, 2) = z;
      phi(s, 3) = x * z;
      phi(s, 4) = x * x;
      phi(s, 5) = z * z;
      phi(s, 6) = (lv == 0 || lv == ns - 1) ? 1.0 : 0.0;
    }
  }
  FeatureBasis basis(std::move(phi));

  const MomentTriple moments = exact_moments(mdp, pb, pt, xi, basis);
  Eigen::JacobiSVD<Mat> svd(moments.a_mat);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  const Vec theta_ls = moments.a_mat.completeOrthogonalDecomposition().solve(moments.b_vec);
  const double residual = (moments.a_mat * theta_ls - moments.b_vec).norm();

  nlohmann::json meta;
  meta["rho_max"] = rho_max_exact(pb, pt, xi);
  meta["a_min_singular_value"] = smin;
  meta["a_condition"] = smin > 0 ? smax / smin : std::numeric_limits<double>::infinity();
  meta["a_theta_eq_b_solvable"] = residual <= 1e-8 * std::max(1.0, moments.b_vec.norm());
  meta["a_theta_eq_b_residual"] = residual;
  return DomainBundle{"energy", std::move(mdp), std::move(pb), std::move(pt), std::move(xi),
                      std::move(basis), Vec::Zero(d), std::move(meta)};
}

/// Bundle manifest: the MDP in its wire format plus policies, xi, basis and
/// construction metadata.
inline nlohmann::json bundle_to_json(const DomainBundle& b) {
  nlohmann::json j;
  j["name"] = b.name;
  j["mdp"] = to_json(b.mdp);
  auto mat_to_json = [](const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["behavior"] = mat_to_json(b.behavior.probs);
  j["target"] = mat_to_json(b.target.probs);
  j["xi"] = std::vector<double>(b.xi.weights.data(), b.xi.weights.data() + b.xi.weights.size());
  j["basis"] = mat_to_json(b.basis.table);
  j["feature_bound"] = b.basis.feature_bound;
  j["theta_init"] =
      std::vector<double>(b.theta_init.data(), b.theta_init.data() + b.theta_init.size());
  j["metadata"] = b.metadata;
  return j;
}

}  // namespace domains
}  // namespace gtd
