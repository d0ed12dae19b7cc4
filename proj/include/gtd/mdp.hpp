#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "gtd/errors.hpp"

namespace gtd {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kProbTol = 1e-12;

/// Finite tabular MDP. `transition[a](s, s')` is the chance of landing in s'
/// after taking action a in s. Immutable after construction; all probability
/// invariants are checked once here and violations are hard errors.
struct Mdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<Mat> transition;  // one |S| x |S| kernel per action
  Mat reward;                   // (s, a)
  double discount = 0.0;
  double r_max = 0.0;

  Mdp(std::vector<Mat> trans, Mat rew, double gamma)
      : transition(std::move(trans)), reward(std::move(rew)), discount(gamma) {
    num_actions = static_cast<int>(transition.size());
    if (num_actions < 1) throw DimensionError("Mdp: no actions");
    num_states = static_cast<int>(transition[0].rows());
    if (num_states < 1) throw DimensionError("Mdp: no states");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvariantError("Mdp: discount must lie in [0,1)");
    if (reward.rows() != num_states || reward.cols() != num_actions)
      throw DimensionError("Mdp: reward table shape");
    for (const Mat& p : transition) {
      if (p.rows() != num_states || p.cols() != num_states)
        throw DimensionError("Mdp: transition kernel shape");
      if ((p.array() < 0.0).any()) throw InvariantError("Mdp: negative transition probability");
      for (int s = 0; s < num_states; ++s)
        if (std::abs(p.row(s).sum() - 1.0) > kProbTol)
          throw InvariantError("Mdp: transition row does not sum to 1");
    }
    r_max = reward.cwiseAbs().maxCoeff();
  }
};

/// Stationary stochastic policy pi(a|s).
struct PolicyTable {
  Mat probs;  // (s, a)

  explicit PolicyTable(Mat p) : probs(std::move(p)) {
    if ((probs.array() < 0.0).any()) throw InvariantError("PolicyTable: negative probability");
    for (int s = 0; s < probs.rows(); ++s)
      if (std::abs(probs.row(s).sum() - 1.0) > kProbTol)
        throw InvariantError("PolicyTable: row does not sum to 1");
  }
};

/// State chain induced by a policy: kernel P^pi and reward vector R^pi.
struct InducedChain {
  Mat kernel;
  Vec reward;
};

/// Distribution over states with its max entry cached.
struct StateDistribution {
  Vec weights;
  double xi_max = 0.0;
  double kernel_smoothing = 0.0;  // uniform blend applied before power iteration, 0 if none

  explicit StateDistribution(Vec w, double smoothing = 0.0)
      : weights(std::move(w)), kernel_smoothing(smoothing) {
    if ((weights.array() < 0.0).any()) throw InvariantError("StateDistribution: negative weight");
    if (std::abs(weights.sum() - 1.0) > kProbTol)
      throw InvariantError("StateDistribution: weights do not sum to 1");
    xi_max = weights.maxCoeff();
  }
};

inline StateDistribution uniform_distribution(int n) {
  return StateDistribution(Vec::Constant(n, 1.0 / n));
}

/// Collapses the action dimension under `policy`:
/// kernel(s,s') = sum_a pi(a|s) P[a](s,s'), reward(s) = sum_a pi(a|s) R(s,a).
inline InducedChain induce_chain(const Mdp& mdp, const PolicyTable& policy) {
  if (policy.probs.rows() != mdp.num_states || policy.probs.cols() != mdp.num_actions)
    throw DimensionError("induce_chain: policy shape does not match mdp");
  Mat kernel = Mat::Zero(mdp.num_states, mdp.num_states);
  for (int a = 0; a < mdp.num_actions; ++a)
    kernel += policy.probs.col(a).asDiagonal() * mdp.transition[a];
  Vec reward = (mdp.reward.array() * policy.probs.array()).rowwise().sum();
  return InducedChain{std::move(kernel), std::move(reward)};
}

/// One application of the Bellman operator: R^pi + gamma P^pi v.
inline Vec bellman_apply(const InducedChain& chain, const Vec& v, double gamma) {
  if (v.size() != chain.kernel.rows()) throw DimensionError("bellman_apply: value length");
  return chain.reward + gamma * chain.kernel * v;
}

/// Exact value function: the solution of (I - gamma P^pi) V = R^pi.
inline Vec exact_value(const Mdp& mdp, const PolicyTable& policy) {
  const InducedChain chain = induce_chain(mdp, policy);
  const int n = mdp.num_states;
  const Mat lhs = Mat::Identity(n, n) - mdp.discount * chain.kernel;
  Vec v = lhs.partialPivLu().solve(chain.reward);
  const double residual = (v - bellman_apply(chain, v, mdp.discount)).lpNorm<Eigen::Infinity>();
  if (!(residual <= 1e-9 * std::max(1.0, v.lpNorm<Eigen::Infinity>())))
    throw ConvergenceError("exact_value: fixed-point residual too large", residual);
  return v;
}

/// Stationary distribution of the chain by power iteration (cap 100000,
/// tolerance 1e-12 on the L1 step). Reducible or periodic chains that fail to
/// converge are retried on a kernel blended with 1e-8 uniform noise; the blend
/// is recorded in the returned metadata.
inline StateDistribution stationary_distribution(const InducedChain& chain) {
  const int n = static_cast<int>(chain.kernel.rows());
  const long cap = 100000;

  auto iterate = [&](const Mat& kernel) -> std::pair<Vec, bool> {
    Eigen::RowVectorXd xi = Eigen::RowVectorXd::Constant(n, 1.0 / n);
    for (long it = 0; it < cap; ++it) {
      Eigen::RowVectorXd next = xi * kernel;
      next /= next.sum();
      const double step = (next - xi).cwiseAbs().sum();
      xi = next;
      if (step <= 1e-13) return {xi.transpose(), true};
    }
    return {xi.transpose(), false};
  };

  auto [xi, ok] = iterate(chain.kernel);
  double smoothing = 0.0;
  if (!ok) {
    smoothing = 1e-8;
    const Mat blended =
        (1.0 - smoothing) * chain.kernel + Mat::Constant(n, n, smoothing / n);
    std::tie(xi, ok) = iterate(blended);
    if (!ok) {
      const double res = (xi.transpose() * chain.kernel - xi.transpose()).cwiseAbs().sum();
      throw ConvergenceError("stationary_distribution: power iteration did not converge", res);
    }
  }
  const double res = (xi.transpose() * chain.kernel - xi.transpose()).cwiseAbs().sum();
  if (smoothing == 0.0 && res > 1e-10)
    throw ConvergenceError("stationary_distribution: residual above tolerance", res);
  return StateDistribution(xi.cwiseMax(0.0) / xi.cwiseMax(0.0).sum(), smoothing);
}

// --- JSON serialization -----------------------------------------------------
// Format contract: {states, actions, transition, reward, gamma} with
// transition indexed [s][a][s'] and reward [s][a].

inline nlohmann::json to_json(const Mdp& mdp) {
  nlohmann::json j;
  j["states"] = mdp.num_states;
  j["actions"] = mdp.num_actions;
  auto& trans = j["transition"] = nlohmann::json::array();
  for (int s = 0; s < mdp.num_states; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    for (int a = 0; a < mdp.num_actions; ++a) {
      nlohmann::json row = nlohmann::json::array();
      for (int t = 0; t < mdp.num_states; ++t) row.push_back(mdp.transition[a](s, t));
      per_action.push_back(std::move(row));
    }
    trans.push_back(std::move(per_action));
  }
  auto& rew = j["reward"] = nlohmann::json::array();
  for (int s = 0; s < mdp.num_states; ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < mdp.num_actions; ++a) row.push_back(mdp.reward(s, a));
    rew.push_back(std::move(row));
  }
  j["gamma"] = mdp.discount;
  return j;
}

inline Mdp mdp_from_json(const nlohmann::json& j) {
  const int ns = j.at("states").get<int>();
  const int na = j.at("actions").get<int>();
  std::vector<Mat> trans(na, Mat::Zero(ns, ns));
  const auto& tj = j.at("transition");
  if (static_cast<int>(tj.size()) != ns) throw DimensionError("mdp_from_json: transition states");
  for (int s = 0; s < ns; ++s) {
    if (static_cast<int>(tj[s].size()) != na)
      throw DimensionError("mdp_from_json: transition actions");
    for (int a = 0; a < na; ++a)
      for (int t = 0; t < ns; ++t) trans[a](s, t) = tj[s][a][t].get<double>();
  }
  Mat reward = Mat::Zero(ns, na);
  const auto& rj = j.at("reward");
  for (int s = 0; s < ns; ++s)
    for (int a = 0; a < na; ++a) reward(s, a) = rj[s][a].get<double>();
  return Mdp(std::move(trans), std::move(reward), j.at("gamma").get<double>());
}

}  // namespace gtd
