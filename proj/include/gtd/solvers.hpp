#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "gtd/errors.hpp"
#include "gtd/saddle.hpp"
#include "gtd/sampling.hpp"

namespace gtd {

enum class Variant { Gtd, Gtd2, GtdProj, Gtd2Proj, Gtd2Mp };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Gtd: return "gtd";
    case Variant::Gtd2: return "gtd2";
    case Variant::GtdProj: return "gtd-proj";
    case Variant::Gtd2Proj: return "gtd2-proj";
    case Variant::Gtd2Mp: return "gtd2-mp";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "gtd") return Variant::Gtd;
  if (s == "gtd2") return Variant::Gtd2;
  if (s == "gtd-proj") return Variant::GtdProj;
  if (s == "gtd2-proj") return Variant::Gtd2Proj;
  if (s == "gtd2-mp") return Variant::Gtd2Mp;
  throw InvariantError("unknown solver variant: " + s);
}

inline bool is_projected(Variant v) { return v == Variant::GtdProj || v == Variant::Gtd2Proj; }

/// Per-sample weighting: identity for the GTD family, phi phi' for GTD2.
inline bool uses_covariance(Variant v) {
  return v == Variant::Gtd2 || v == Variant::Gtd2Proj || v == Variant::Gtd2Mp;
}

struct StepPolicy {
  enum class Kind { Constant, Robust };
  Kind kind = Kind::Constant;
  double alpha = 0.0;  // constant policy
  double c = 1.0;      // robust policy scale

  static StepPolicy constant(double alpha) { return {Kind::Constant, alpha, 0.0}; }
  static StepPolicy robust(double c) { return {Kind::Robust, 0.0, c}; }
};

/// alpha = 2c / (M* sqrt(5 n)), constant across iterations.
inline double robust_step_size(double m_star, long n, double c) {
  if (!(m_star > 0.0)) throw InvariantError("robust_step_size: M* must be positive");
  if (n < 1) throw InvariantError("robust_step_size: n must be >= 1");
  if (!(c > 0.0)) throw InvariantError("robust_step_size: c must be positive");
  return 2.0 * c / (m_star * std::sqrt(5.0 * static_cast<double>(n)));
}

struct SolverConfig {
  Variant variant = Variant::Gtd2;
  StepPolicy step;
  double gamma = 0.0;
  double radius_theta = std::numeric_limits<double>::infinity();
  double radius_y = std::numeric_limits<double>::infinity();
  long n = 0;
  long record_every = 0;  // 0 records only endpoints
  double m_star = 0.0;    // feeds the robust step size

  void validate() const {
    if (n < 1) throw InvariantError("SolverConfig: n must be >= 1");
    if (step.kind == StepPolicy::Kind::Constant && !(step.alpha >= 0.0))
      throw InvariantError("SolverConfig: constant step needs alpha >= 0");
    if (step.kind == StepPolicy::Kind::Robust && !(step.c > 0.0))
      throw InvariantError("SolverConfig: robust step needs c > 0");
    if (is_projected(variant) && (!(radius_theta > 0.0) || !(radius_y > 0.0)))
      throw InvariantError("SolverConfig: projected variant needs positive radii");
  }
};

/// Euclidean ball projection; returns the input bit-for-bit when feasible.
inline Vec project_ball(const Vec& x, double radius) {
  const double n = x.norm();
  if (!(n > radius)) return x;
  return x * (radius / n);
}

/// Mutable iterate pair plus exact streaming step-size-weighted sums, so the
/// averaged output theta_bar = sum alpha_t theta_t / sum alpha_t never needs a
/// second pass.
struct SolverState {
  Vec theta;
  Vec y;
  double sum_alpha = 0.0;
  Vec sum_alpha_theta;
  Vec sum_alpha_y;

  explicit SolverState(Vec theta0, Vec y0)
      : theta(std::move(theta0)), y(std::move(y0)),
        sum_alpha_theta(Vec::Zero(theta.size())), sum_alpha_y(Vec::Zero(y.size())) {}

  void accumulate(double alpha) {
    sum_alpha += alpha;
    sum_alpha_theta += alpha * theta;
    sum_alpha_y += alpha * y;
  }

  Vec theta_bar() const { return sum_alpha > 0.0 ? Vec(sum_alpha_theta / sum_alpha) : theta; }
  Vec y_bar() const { return sum_alpha > 0.0 ? Vec(sum_alpha_y / sum_alpha) : y; }
};

/// One simultaneous GTD step: both sub-updates read the pre-step (theta, y).
inline void gtd_step(SolverState& st, const Transition& t, const FeatureBasis& basis,
                     double gamma, double alpha) {
  const Vec phi = basis.row(t.s);
  const Vec dphi = phi - gamma * basis.row(t.s_next);
  const double delta = t.r - dphi.dot(st.theta);
  const double y_phi = st.y.dot(phi);
  st.y += alpha * (t.rho * delta * phi - st.y);
  st.theta += alpha * t.rho * y_phi * dphi;
}

/// One simultaneous GTD2 step (the y residual is premultiplied by phi phi').
inline void gtd2_step(SolverState& st, const Transition& t, const FeatureBasis& basis,
                      double gamma, double alpha) {
  const Vec phi = basis.row(t.s);
  const Vec dphi = phi - gamma * basis.row(t.s_next);
  const double delta = t.r - dphi.dot(st.theta);
  const double y_phi = st.y.dot(phi);
  st.y += alpha * (t.rho * delta - y_phi) * phi;
  st.theta += alpha * t.rho * y_phi * dphi;
}

struct TracePoint {
  long iteration = 0;
  double mspbe = 0.0;
  double neu = 0.0;
  double err = 0.0;
  Vec theta;      // current iterate
  Vec theta_bar;  // averaged iterate so far
  Vec y_bar;
};

/// Iterate log at stride record_every plus the averaged terminal point.
/// mspbe/neu are evaluated at the current iterate (the quantity the
/// experiment curves plot); err at the running averaged pair, which is the
/// point the error-function analysis speaks about.
struct RunTrace {
  std::vector<TracePoint> points;
  double alpha = 0.0;  // realized constant step
  Vec theta_bar;
  Vec y_bar;
  Vec theta_final;
  Vec y_final;
  bool diverged = false;
  long diverged_at = -1;
};

namespace detail {

inline void record_point(RunTrace& trace, long iteration, const SolverState& st,
                         const Metrics& metrics, const SaddleObjective& objective) {
  TracePoint p;
  p.iteration = iteration;
  p.theta = st.theta;
  p.theta_bar = st.theta_bar();
  p.y_bar = st.y_bar();
  p.mspbe = metrics.mspbe(st.theta);
  p.neu = metrics.neu(st.theta);
  p.err = objective.err(p.theta_bar, p.y_bar);
  trace.points.push_back(std::move(p));
}

}  // namespace detail

/// Runs any variant over the first config.n transitions of `samples`.
/// Projection radii apply when finite; the robust step policy requires
/// config.m_star. `divergence_guard`, when positive, freezes a run whose NEU
/// exceeds the guard and marks it diverged instead of aborting.
inline RunTrace run_solver(const SolverConfig& config, const SampleSet& samples,
                           const FeatureBasis& basis, const SaddleObjective& objective,
                           const Metrics& metrics, const Vec& theta0, const Vec& y0,
                           double divergence_guard = 0.0) {
  config.validate();
  if (static_cast<long>(samples.size()) < config.n)
    throw InvariantError("run_solver: sample set shorter than iteration budget");

  double alpha = config.step.alpha;
  if (config.step.kind == StepPolicy::Kind::Robust)
    alpha = robust_step_size(config.m_star, config.n, config.step.c);

  const bool project = std::isfinite(config.radius_theta) || std::isfinite(config.radius_y);
  const bool covariance = uses_covariance(config.variant);
  const bool mirror_prox = config.variant == Variant::Gtd2Mp;

  SolverState st(theta0, y0);
  RunTrace trace;
  trace.alpha = alpha;
  detail::record_point(trace, 0, st, metrics, objective);

  for (long t = 0; t < config.n; ++t) {
    st.accumulate(alpha);
    const Transition& tr = samples.transitions[static_cast<std::size_t>(t)];
    const Vec phi = basis.row(tr.s);
    const Vec dphi = phi - config.gamma * basis.row(tr.s_next);

    if (!mirror_prox) {
      const double delta = tr.r - dphi.dot(st.theta);
      const double y_phi = st.y.dot(phi);
      Vec y_dir = covariance ? Vec((tr.rho * delta - y_phi) * phi)
                             : Vec(tr.rho * delta * phi - st.y);
      st.y += alpha * y_dir;
      st.theta += alpha * tr.rho * y_phi * dphi;
      if (project) {
        st.theta = project_ball(st.theta, config.radius_theta);
        st.y = project_ball(st.y, config.radius_y);
      }
    } else {
      // Extragradient: a half-step from the current gradients, then the real
      // step from the gradients at the midpoint, same sample both times.
      const double delta = tr.r - dphi.dot(st.theta);
      const double y_phi = st.y.dot(phi);
      Vec y_mid = st.y + alpha * (tr.rho * delta - y_phi) * phi;
      Vec theta_mid = st.theta + alpha * tr.rho * y_phi * dphi;
      if (project) {
        theta_mid = project_ball(theta_mid, config.radius_theta);
        y_mid = project_ball(y_mid, config.radius_y);
      }
      const double delta_mid = tr.r - dphi.dot(theta_mid);
      const double y_mid_phi = y_mid.dot(phi);
      st.y += alpha * (tr.rho * delta_mid - y_mid_phi) * phi;
      st.theta += alpha * tr.rho * y_mid_phi * dphi;
      if (project) {
        st.theta = project_ball(st.theta, config.radius_theta);
        st.y = project_ball(st.y, config.radius_y);
      }
    }

    if (divergence_guard > 0.0 && !trace.diverged &&
        (!st.theta.allFinite() || !st.y.allFinite() ||
         metrics.neu(st.theta) > divergence_guard)) {
      trace.diverged = true;
      trace.diverged_at = t + 1;
      break;
    }

    const long done = t + 1;
    if ((config.record_every > 0 && done % config.record_every == 0 && done < config.n) ||
        done == config.n)
      detail::record_point(trace, done, st, metrics, objective);
  }

  trace.theta_bar = st.theta_bar();
  trace.y_bar = st.y_bar();
  trace.theta_final = st.theta;
  trace.y_final = st.y;
  return trace;
}

/// Ball-projected entry point; requires a projected variant.
inline RunTrace projected_run(const SolverConfig& config, const SampleSet& samples,
                              const FeatureBasis& basis, const SaddleObjective& objective,
                              const Metrics& metrics, const Vec& theta0, const Vec& y0) {
  if (!is_projected(config.variant))
    throw InvariantError("projected_run: config.variant is not a projected variant");
  return run_solver(config, samples, basis, objective, metrics, theta0, y0);
}

inline RunTrace gtd2_mp_run(const SolverConfig& config, const SampleSet& samples,
                            const FeatureBasis& basis, const SaddleObjective& objective,
                            const Metrics& metrics, const Vec& theta0, const Vec& y0) {
  if (config.variant != Variant::Gtd2Mp)
    throw InvariantError("gtd2_mp_run: config.variant must be gtd2-mp");
  return run_solver(config, samples, basis, objective, metrics, theta0, y0);
}

inline void write_csv(const RunTrace& trace, std::ostream& os) {
  os << "iteration,mspbe,neu,err\n";
  char buf[160];
  for (const TracePoint& p : trace.points) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g\n", p.iteration, p.mspbe, p.neu,
                  p.err);
    os << buf;
  }
}

/// Terminal summary of one run: the averaged output and its metrics.
inline nlohmann::json terminal_summary(const RunTrace& trace, const Metrics& metrics,
                                       const SaddleObjective& objective) {
  nlohmann::json j;
  j["alpha"] = trace.alpha;
  j["diverged"] = trace.diverged;
  if (trace.diverged) j["diverged_at"] = trace.diverged_at;
  j["theta_bar"] = std::vector<double>(trace.theta_bar.data(),
                                       trace.theta_bar.data() + trace.theta_bar.size());
  j["mspbe"] = metrics.mspbe(trace.theta_bar);
  j["neu"] = metrics.neu(trace.theta_bar);
  j["err"] = objective.err(trace.theta_bar, trace.y_bar);
  j["jvalue"] = objective.j_value(trace.theta_bar);
  return j;
}

/// Deterministic full-gradient iterations on exact (A, b, M), for small
/// studies of the dynamics themselves. `extragradient` switches between plain
/// descent-ascent and the midpoint scheme.
inline std::pair<Vec, Vec> deterministic_saddle_run(const Mat& a, const Vec& b, const Mat& m,
                                                    Vec theta, Vec y, double alpha, long steps,
                                                    bool extragradient) {
  for (long t = 0; t < steps; ++t) {
    if (!extragradient) {
      const Vec y_next = y + alpha * (b - a * theta - m * y);
      const Vec theta_next = theta + alpha * a.transpose() * y;
      y = y_next;
      theta = theta_next;
    } else {
      const Vec y_mid = y + alpha * (b - a * theta - m * y);
      const Vec theta_mid = theta + alpha * a.transpose() * y;
      const Vec y_next = y + alpha * (b - a * theta_mid - m * y_mid);
      const Vec theta_next = theta + alpha * a.transpose() * y_mid;
      y = y_next;
      theta = theta_next;
    }
  }
  return {std::move(theta), std::move(y)};
}

}  // namespace gtd
