#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "gtd/errors.hpp"
#include "gtd/features.hpp"
#include "gtd/mdp.hpp"
#include "gtd/rng.hpp"

namespace gtd {

/// One off-policy sample: s ~ xi, a ~ pi_b(.|s), s' ~ P(.|s,a), with the
/// importance weight rho = pi(a|s)/pi_b(a|s) computed exactly from the tables.
struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  double rho = 0.0;
};

struct SampleSet {
  std::vector<Transition> transitions;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::string meta;

  std::size_t size() const { return transitions.size(); }
};

/// Exact or per-sample (A, b, C).
struct MomentTriple {
  Mat a_mat;
  Vec b_vec;
  Mat c_mat;
};

/// Largest importance weight over state-action pairs reachable under xi.
inline double rho_max_exact(const PolicyTable& behavior, const PolicyTable& target,
                            const StateDistribution& xi) {
  double worst = 0.0;
  for (int s = 0; s < behavior.probs.rows(); ++s) {
    if (xi.weights[s] <= 0.0) continue;
    for (int a = 0; a < behavior.probs.cols(); ++a)
      if (behavior.probs(s, a) > 0.0)
        worst = std::max(worst, target.probs(s, a) / behavior.probs(s, a));
  }
  return worst;
}

/// n i.i.d. transitions from the three-stage scheme. (seed, stream) selects a
/// reproducible substream; the same pair regenerates the set bit-identically.
/// `meta` labels the generating (xi, behavior, target) triple for provenance.
/// Errors if the target policy is not absolutely continuous w.r.t. behavior
/// on the support of xi.
inline SampleSet draw_dataset(const Mdp& mdp, const PolicyTable& behavior,
                              const PolicyTable& target, const StateDistribution& xi,
                              std::size_t n, std::uint64_t seed, std::uint64_t stream = 0,
                              std::string meta = {}) {
  for (int s = 0; s < mdp.num_states; ++s) {
    if (xi.weights[s] <= 0.0) continue;
    for (int a = 0; a < mdp.num_actions; ++a)
      if (target.probs(s, a) > 0.0 && behavior.probs(s, a) == 0.0)
        throw AbsoluteContinuityError(
            "draw_dataset: target policy unsupported by behavior at (s=" + std::to_string(s) +
                ", a=" + std::to_string(a) + ")",
            s, a);
  }

  SplitMixRng rng(seed, stream);
  SampleSet set;
  set.seed = seed;
  set.stream = stream;
  set.meta = std::move(meta);
  set.transitions.reserve(n);
  const std::span<const double> xi_span(xi.weights.data(), static_cast<std::size_t>(xi.weights.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const int s = rng.categorical(xi_span);
    const Eigen::RowVectorXd& brow = behavior.probs.row(s);
    const int a = rng.categorical(std::span<const double>(brow.data(), static_cast<std::size_t>(brow.size())));
    const Eigen::RowVectorXd prow = mdp.transition[a].row(s);
    const int s_next = rng.categorical(std::span<const double>(prow.data(), static_cast<std::size_t>(prow.size())));
    const double rho = target.probs(s, a) / behavior.probs(s, a);
    set.transitions.push_back(Transition{s, a, mdp.reward(s, a), s_next, rho});
  }
  return set;
}

/// Unbiased per-sample estimates:
/// A_hat = rho phi (phi - gamma phi')', b_hat = rho r phi, C_hat = phi phi'.
inline MomentTriple per_sample_estimates(const Transition& t, const FeatureBasis& basis,
                                         double gamma) {
  if (t.s < 0 || t.s >= basis.table.rows() || t.s_next < 0 || t.s_next >= basis.table.rows())
    throw DimensionError("per_sample_estimates: state id outside basis");
  const Vec phi = basis.row(t.s);
  const Vec delta_phi = phi - gamma * basis.row(t.s_next);
  return MomentTriple{t.rho * phi * delta_phi.transpose(), t.rho * t.r * phi,
                      phi * phi.transpose()};
}

/// Closed-form expectations of the per-sample estimates over
/// s ~ xi, a ~ pi_b, s' ~ P. This is the oracle side of every unbiasedness
/// test, so it stays a plain sum over (s, a, s').
inline MomentTriple exact_moments(const Mdp& mdp, const PolicyTable& behavior,
                                  const PolicyTable& target, const StateDistribution& xi,
                                  const FeatureBasis& basis) {
  const int d = basis.dim;
  Mat a_mat = Mat::Zero(d, d);
  Vec b_vec = Vec::Zero(d);
  Mat c_mat = Mat::Zero(d, d);
  for (int s = 0; s < mdp.num_states; ++s) {
    const double ws = xi.weights[s];
    if (ws == 0.0) continue;
    const Vec phi = basis.row(s);
    c_mat += ws * phi * phi.transpose();
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double wa = behavior.probs(s, a);
      if (wa == 0.0) continue;
      const double rho = target.probs(s, a) / wa;
      if (rho == 0.0) continue;
      Vec mean_next = Vec::Zero(d);
      for (int t = 0; t < mdp.num_states; ++t) {
        const double p = mdp.transition[a](s, t);
        if (p > 0.0) mean_next += p * basis.row(t);
      }
      const Vec delta_phi = phi - mdp.discount * mean_next;
      a_mat += ws * wa * rho * phi * delta_phi.transpose();
      b_vec += ws * wa * rho * mdp.reward(s, a) * phi;
    }
  }
  return MomentTriple{std::move(a_mat), std::move(b_vec), std::move(c_mat)};
}

enum class RhoCorruption {
  AdditiveConstant,    // rho_hat = rho + epsilon; E[rho_hat - rho] = epsilon
  MultiplicativeClip,  // rho_hat = min(rho, (1 - epsilon) * max rho in the set)
};

inline const char* to_string(RhoCorruption mode) {
  return mode == RhoCorruption::AdditiveConstant ? "additive-constant" : "multiplicative-clip";
}

/// Biased importance weights with bias bounded by epsilon. Both modes are
/// deterministic given the input set; `seed` is kept in the signature for
/// stochastic modes and recorded in the metadata.
inline SampleSet corrupt_rho(const SampleSet& set, double epsilon, RhoCorruption mode,
                             std::uint64_t seed = 0) {
  if (epsilon < 0.0) throw InvariantError("corrupt_rho: epsilon must be nonnegative");
  SampleSet out = set;
  out.meta += std::string(out.meta.empty() ? "" : "; ") + "rho-corruption=" + to_string(mode) +
              " epsilon=" + std::to_string(epsilon) + " seed=" + std::to_string(seed);
  if (epsilon == 0.0) {
    out.meta = set.meta;  // identity contract: output indistinguishable from input
    return out;
  }
  if (mode == RhoCorruption::AdditiveConstant) {
    for (Transition& t : out.transitions) t.rho += epsilon;
  } else {
    double top = 0.0;
    for (const Transition& t : set.transitions) top = std::max(top, t.rho);
    const double cap = (1.0 - std::min(epsilon, 1.0)) * top;
    for (Transition& t : out.transitions) t.rho = std::min(t.rho, cap);
  }
  return out;
}

/// Rejection-sampling view of a dataset: drops transitions the target policy
/// never takes (rho = 0). Provided as a plain filter; no bound is attached.
inline SampleSet reject_zero_target(const SampleSet& set) {
  SampleSet out;
  out.seed = set.seed;
  out.stream = set.stream;
  out.meta = set.meta + (set.meta.empty() ? "" : "; ") + "filter=reject-zero-target";
  for (const Transition& t : set.transitions)
    if (t.rho > 0.0) out.transitions.push_back(t);
  return out;
}

inline void write_csv(const SampleSet& set, std::ostream& os) {
  os << "s,a,r,s_next,rho\n";
  char buf[128];
  for (const Transition& t : set.transitions) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%d,%.17g\n", t.s, t.a, t.r, t.s_next, t.rho);
    os << buf;
  }
}

}  // namespace gtd
