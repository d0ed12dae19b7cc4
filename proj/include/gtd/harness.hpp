#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gtd/bounds.hpp"
#include "gtd/domains.hpp"
#include "gtd/errors.hpp"
#include "gtd/saddle.hpp"
#include "gtd/solvers.hpp"

namespace gtd {
namespace harness {

using nlohmann::json;

struct VariantSpec {
  std::string name;
  Variant variant = Variant::Gtd2;
  StepPolicy step;
  long record_every = 50;
  std::optional<double> radius_theta;  // finite values switch projection on
  std::optional<double> radius_y;
  std::optional<MMode> m_mode;  // default: identity for gtd*, covariance for gtd2*
};

struct ExperimentSpec {
  json domain;  // {"name": ..., optional overrides}
  std::vector<VariantSpec> variants;
  long n_steps = 0;
  long n_runs = 0;
  std::uint64_t master_seed = 0;
  std::string outputs;
  std::vector<std::string> metrics = {"mspbe", "neu", "err", "msbe", "value_error"};
  double rho_epsilon = 0.0;
  RhoCorruption rho_mode = RhoCorruption::AdditiveConstant;
  double divergence_guard = 1e6;
  int parallel = 1;
  int sigma_probes = 16;
};

struct ValidationReport {
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
  std::string joined() const {
    std::string all;
    for (const auto& e : errors) all += e + "\n";
    return all;
  }
};

inline const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> m = {"mspbe", "neu", "err", "msbe", "value_error"};
  return m;
}

/// Parses the wire format. Every problem found is collected into the report;
/// nothing throws until the caller decides what to do with an invalid spec.
inline ExperimentSpec parse_spec(const json& j, ValidationReport& report) {
  ExperimentSpec spec;
  if (!j.contains("domain") || !j["domain"].is_object() || !j["domain"].contains("name"))
    report.errors.push_back("spec.domain must be an object with a \"name\"");
  else
    spec.domain = j["domain"];

  json variants = json::array();
  if (j.contains("variants")) variants = j["variants"];
  else if (j.contains("variant")) variants.push_back(j["variant"]);
  if (variants.empty()) report.errors.push_back("spec needs at least one variant");
  for (const auto& vj : variants) {
    VariantSpec v;
    try {
      v.variant = variant_from_string(vj.at("variant").get<std::string>());
      v.name = vj.value("name", std::string(to_string(v.variant)));
      const json& sp = vj.at("step_policy");
      const std::string type = sp.at("type").get<std::string>();
      if (type == "constant") v.step = StepPolicy::constant(sp.at("alpha").get<double>());
      else if (type == "robust") v.step = StepPolicy::robust(sp.value("c", 1.0));
      else report.errors.push_back("variant " + v.name + ": unknown step_policy type " + type);
      v.record_every = vj.value("record_every", static_cast<long>(50));
      if (vj.contains("radius_theta")) v.radius_theta = vj["radius_theta"].get<double>();
      if (vj.contains("radius_y")) v.radius_y = vj["radius_y"].get<double>();
      if (vj.contains("m_mode"))
        v.m_mode = vj["m_mode"].get<std::string>() == "identity" ? MMode::Identity
                                                                 : MMode::Covariance;
    } catch (const std::exception& e) {
      report.errors.push_back(std::string("variant parse error: ") + e.what());
      continue;
    }
    spec.variants.push_back(std::move(v));
  }

  spec.n_steps = j.value("n_steps", static_cast<long>(0));
  spec.n_runs = j.value("n_runs", static_cast<long>(0));
  spec.master_seed = j.value("master_seed", static_cast<std::uint64_t>(0));
  spec.outputs = j.value("outputs", std::string());
  if (j.contains("metrics")) spec.metrics = j["metrics"].get<std::vector<std::string>>();
  spec.rho_epsilon = j.value("rho_epsilon", 0.0);
  if (j.contains("rho_mode")) {
    const std::string m = j["rho_mode"].get<std::string>();
    if (m == "additive-constant") spec.rho_mode = RhoCorruption::AdditiveConstant;
    else if (m == "multiplicative-clip") spec.rho_mode = RhoCorruption::MultiplicativeClip;
    else report.errors.push_back("unknown rho_mode " + m);
  }
  spec.divergence_guard = j.value("divergence_guard", 1e6);
  spec.parallel = j.value("parallel", 1);
  spec.sigma_probes = j.value("sigma_probes", 16);

  if (spec.n_steps < 1) report.errors.push_back("n_steps must be >= 1");
  if (spec.n_runs < 1) report.errors.push_back("n_runs must be >= 1");
  for (const auto& m : spec.metrics)
    if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end())
      report.errors.push_back("unknown metric " + m);
  return spec;
}

inline domains::DomainBundle make_bundle(const json& domain) {
  const std::string name = domain.at("name").get<std::string>();
  if (name == "baird") {
    domains::BairdParams p;
    p.gamma = domain.value("gamma", p.gamma);
    p.dashed_prob = domain.value("dashed_prob", p.dashed_prob);
    p.hard_start = domain.value("hard_start", p.hard_start);
    return domains::baird(p);
  }
  if (name == "chain50") {
    domains::Chain50Params p;
    p.bebf_features = domain.value("bebf_features", p.bebf_features);
    p.gamma = domain.value("gamma", p.gamma);
    p.success = domain.value("success", p.success);
    return domains::chain50(p);
  }
  if (name == "energy") {
    domains::EnergyParams p;
    p.price_levels = domain.value("price_levels", p.price_levels);
    p.storage_levels = domain.value("storage_levels", p.storage_levels);
    p.gamma = domain.value("gamma", p.gamma);
    p.price_scale = domain.value("price_scale", p.price_scale);
    p.degradation = domain.value("degradation", p.degradation);
    p.policy_mix = domain.value("policy_mix", p.policy_mix);
    return domains::energy(p);
  }
  throw InvariantError("unknown domain " + name);
}

struct AggregatePoint {
  long iteration = 0;
  double mean = 0.0;
  double std_dev = 0.0;
  long count = 0;
};

struct AggregateCurve {
  std::string variant;
  std::string metric;
  std::vector<AggregatePoint> points;
};

/// Per-variant outcome kept in memory for tests and reporting. Terminal
/// metrics are evaluated at the averaged output (theta_bar, y_bar).
struct VariantResult {
  std::string name;
  double alpha = 0.0;
  MMode m_mode = MMode::Identity;
  bool m_mode_fallback = false;
  std::map<std::string, AggregateCurve> curves;
  std::map<std::string, std::vector<double>> terminal;  // metric -> per-run values
  long diverged_runs = 0;
  long err_inequality_points = 0;
  long err_inequality_violations = 0;
  double m_star_value = 0.0;
  double sigma1 = 0.0, sigma2 = 0.0;
};

struct ExperimentResult {
  std::vector<VariantResult> variants;
  json summary;
};

namespace detail {

inline void parallel_runs(long n_runs, int workers, const std::function<void(long)>& body) {
  workers = static_cast<int>(std::max<long>(1, std::min<long>(workers, n_runs)));
  if (workers == 1) {
    for (long r = 0; r < n_runs; ++r) body(r);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (long r = next.fetch_add(1); r < n_runs; r = next.fetch_add(1)) body(r);
    });
  for (auto& t : pool) t.join();
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline json summary_stats(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= std::max<std::size_t>(1, v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var = v.size() > 1 ? var / (v.size() - 1) : 0.0;
  return json{{"mean", mean}, {"median", median(v)}, {"std", std::sqrt(var)}};
}

}  // namespace detail

/// Fixed grid of recording iterations for a run: 0, every record_every, and n.
inline std::vector<long> record_grid(long n_steps, long record_every) {
  std::vector<long> grid{0};
  if (record_every > 0)
    for (long t = record_every; t < n_steps; t += record_every) grid.push_back(t);
  grid.push_back(n_steps);
  return grid;
}

/// ||V - Pi V||_xi via a rank-tolerant weighted least squares, so it stays
/// defined for rank-deficient bases where the explicit projector would not be.
inline double projection_residual(const domains::DomainBundle& bundle, const Vec& v) {
  const Vec half = bundle.xi.weights.cwiseSqrt();
  const Mat phi_w = half.asDiagonal() * bundle.basis.table;
  const Vec v_w = half.asDiagonal() * v;
  const Vec w = phi_w.colPivHouseholderQr().solve(v_w);
  return (v_w - phi_w * w).norm();
}

struct ExperimentResult;
inline void write_outputs(const ExperimentSpec& spec, const ExperimentResult& result);

/// Executes every (variant, run) pair on shared per-run datasets - run r of
/// every variant sees the same transitions, so cross-variant comparisons are
/// paired by seed. Substream r of the master seed drives run r; aggregation
/// is a deterministic reduction in run order, independent of the parallelism
/// degree. Returns in-memory results and, when spec.outputs is set, writes
/// one CSV per (variant, metric) plus a summary JSON.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  const domains::DomainBundle bundle = make_bundle(spec.domain);
  const MomentTriple moments =
      exact_moments(bundle.mdp, bundle.behavior, bundle.target, bundle.xi, bundle.basis);

  Metrics metrics(moments);
  const InducedChain target_chain = induce_chain(bundle.mdp, bundle.target);
  const Vec true_value = exact_value(bundle.mdp, bundle.target);
  metrics.attach_chain(target_chain, bundle.mdp.discount, bundle.basis.table, bundle.xi,
                       true_value);

  ExperimentResult result;
  json summary;
  summary["domain"] = {{"name", bundle.name}, {"metadata", bundle.metadata}};
  json variants_json = json::object();

  for (const VariantSpec& vs : spec.variants) {
    // Weighting-matrix mode: covariance where the variant calls for it and C
    // is invertible, identity otherwise (recorded as a fallback).
    MMode mode = vs.m_mode.value_or(uses_covariance(vs.variant) ? MMode::Covariance
                                                                : MMode::Identity);
    bool fallback = false;
    if (mode == MMode::Covariance && metrics.c_singular()) {
      mode = MMode::Identity;
      fallback = true;
    }

    auto [default_rt, default_ry] = default_radii(moments, mode, bundle.theta_init);
    const double obj_rt = vs.radius_theta.value_or(default_rt);
    const double obj_ry = vs.radius_y.value_or(default_ry);
    SaddleObjective objective(moments, mode, obj_rt, obj_ry);

    SolverConfig config;
    config.variant = vs.variant;
    config.step = vs.step;
    config.gamma = bundle.mdp.discount;
    config.n = spec.n_steps;
    config.record_every = vs.record_every;
    const bool wants_projection = is_projected(vs.variant) || vs.radius_theta.has_value() ||
                                  vs.radius_y.has_value();
    if (wants_projection) {
      config.radius_theta = obj_rt;
      config.radius_y = obj_ry;
    }

    const auto [sigma1, sigma2] =
        estimate_sigmas(bundle.mdp, bundle.behavior, bundle.target, bundle.xi, bundle.basis,
                        objective, spec.sigma_probes);
    BoundInputs inputs = bound_inputs_from(bundle.mdp, bundle.behavior, bundle.target,
                                           bundle.xi, bundle.basis, objective, sigma1, sigma2);
    config.m_star = m_star(inputs);

    const Vec theta0 = bundle.theta_init;
    const Vec y0 = Vec::Zero(bundle.basis.dim);

    std::vector<RunTrace> traces(static_cast<std::size_t>(spec.n_runs));
    detail::parallel_runs(spec.n_runs, spec.parallel, [&](long r) {
      SampleSet data = draw_dataset(bundle.mdp, bundle.behavior, bundle.target, bundle.xi,
                                    static_cast<std::size_t>(spec.n_steps), spec.master_seed,
                                    static_cast<std::uint64_t>(r),
                                    bundle.name + "/xi=sampling-distribution/run=" +
                                        std::to_string(r));
      if (spec.rho_epsilon > 0.0)
        data = corrupt_rho(data, spec.rho_epsilon, spec.rho_mode, spec.master_seed);
      traces[static_cast<std::size_t>(r)] = run_solver(config, data, bundle.basis, objective,
                                                       metrics, theta0, y0,
                                                       spec.divergence_guard);
    });

    VariantResult vr;
    vr.name = vs.name;
    vr.alpha = traces.empty() ? 0.0 : traces.front().alpha;
    vr.m_mode = mode;
    vr.m_mode_fallback = fallback;
    vr.m_star_value = config.m_star;
    vr.sigma1 = sigma1;
    vr.sigma2 = sigma2;

    // Metric series per run on the common grid; diverged runs carry their
    // last recorded value forward so every stride aggregates n_runs values.
    const std::vector<long> grid = record_grid(spec.n_steps, vs.record_every);
    auto metric_of = [&](const TracePoint& p, const std::string& m) -> double {
      if (m == "mspbe") return p.mspbe;
      if (m == "neu") return p.neu;
      if (m == "err") return p.err;
      if (m == "msbe") return metrics.msbe(p.theta);
      return metrics.value_error(p.theta);
    };

    for (const std::string& metric : spec.metrics) {
      AggregateCurve curve{vs.name, metric, {}};
      std::vector<double> column(traces.size());
      for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        for (std::size_t r = 0; r < traces.size(); ++r) {
          const RunTrace& trace = traces[r];
          const TracePoint& p =
              gi < trace.points.size() ? trace.points[gi] : trace.points.back();
          column[r] = metric_of(p, metric);
        }
        const double n = static_cast<double>(spec.n_runs);
        double mean = 0.0;
        for (double v : column) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : column) var += (v - mean) * (v - mean);
        var = spec.n_runs > 1 ? var / (n - 1.0) : 0.0;
        curve.points.push_back(AggregatePoint{grid[gi], mean, std::sqrt(var), spec.n_runs});
      }
      vr.curves[metric] = std::move(curve);
    }

    for (const RunTrace& trace : traces) {
      if (trace.diverged) ++vr.diverged_runs;
      vr.terminal["mspbe"].push_back(metrics.mspbe(trace.theta_bar));
      vr.terminal["neu"].push_back(metrics.neu(trace.theta_bar));
      vr.terminal["msbe"].push_back(metrics.msbe(trace.theta_bar));
      vr.terminal["value_error"].push_back(metrics.value_error(trace.theta_bar));
      vr.terminal["err"].push_back(objective.err(trace.theta_bar, trace.y_bar));
      vr.terminal["jvalue"].push_back(objective.j_value(trace.theta_bar));
      for (const TracePoint& p : trace.points) {
        const ResidualErrCheck chk = residual_err_check(objective, p.theta_bar, p.y_bar, bundle.xi);
        ++vr.err_inequality_points;
        if (!chk.holds) ++vr.err_inequality_violations;
      }
    }

    json vj;
    vj["alpha"] = vr.alpha;
    vj["m_mode"] = to_string(mode);
    vj["m_mode_fallback"] = fallback;
    vj["diverged_runs"] = vr.diverged_runs;
    vj["err_inequality"] = {{"points", vr.err_inequality_points}, {"violations", vr.err_inequality_violations}};
    json terminal = json::object();
    for (const auto& [metric, values] : vr.terminal)
      terminal[metric] = detail::summary_stats(values);
    vj["terminal"] = terminal;

    const auto [a_bound, b_bound] = moment_norm_bounds(inputs);
    const double v_proj_residual = projection_residual(bundle, true_value);
    const LmiCheck lmi = kolter_lmi_check(bundle.basis, bundle.xi, target_chain);
    const double mean_err = detail::summary_stats(vr.terminal["err"])["mean"].get<double>();
    const RateTable rates = rate_table(inputs, spec.n_steps);
    const std::vector<std::string> sigma_flags = {"probe-max"};
    const std::vector<std::string> order_flags = {"order-only", "unit constants"};
    std::vector<std::string> p5_flags;
    if (!lmi.holds) p5_flags.push_back("lmi-failed: bound inapplicable");
    if (inputs.effective_sigma_min) p5_flags.push_back("rank-deficient A: effective sigma_min");
    json reports = json::array();
    reports.push_back(bound_report("sigma1", sigma1, inputs, sigma_flags));
    reports.push_back(bound_report("sigma2", sigma2, inputs, sigma_flags));
    reports.push_back(bound_report("m_star", vr.m_star_value, inputs,
                                   inputs.norms_exact ? std::vector<std::string>{}
                                                      : std::vector<std::string>{"norm-bound-fallback"}));
    reports.push_back(bound_report("norm_bound_a", a_bound, inputs));
    reports.push_back(bound_report("norm_bound_b", b_bound, inputs));
    reports.push_back(bound_report("high_prob_err", high_prob_err_bound(inputs, spec.n_steps), inputs));
    reports.push_back(bound_report("on_policy_value", on_policy_value_bound(inputs, mean_err, v_proj_residual),
                                   inputs, {"err = observed mean"}));
    reports.push_back(bound_report(
        "off_policy_value", off_policy_value_bound(inputs, mean_err, v_proj_residual, lmi.holds).value, inputs,
        p5_flags));
    reports.push_back(bound_report("lmi_min_eig", lmi.min_eig, inputs,
                                   {lmi.holds ? "holds" : "violated"}));
    reports.push_back(bound_report("gtd_rate", rates.gtd_rate, inputs, order_flags));
    reports.push_back(bound_report("smp_rate", rates.smp_rate, inputs, order_flags));
    reports.push_back(bound_report("optimal_rate", rates.optimal_rate, inputs, order_flags));
    if (spec.rho_epsilon > 0.0)
      reports.push_back(bound_report("biased_weight_rate",
                                     biased_weight_bound(inputs, spec.n_steps, spec.rho_epsilon),
                                     inputs, order_flags));
    vj["bounds"] = std::move(reports);
    vj["norm_a"] = inputs.norm_a;
    vj["norm_b"] = inputs.norm_b;
    variants_json[vs.name] = vj;
    result.variants.push_back(std::move(vr));
  }

  summary["variants"] = variants_json;
  summary["config"] = {{"n_steps", spec.n_steps}, {"n_runs", spec.n_runs},
                       {"master_seed", spec.master_seed}, {"metrics", spec.metrics},
                       {"rho_epsilon", spec.rho_epsilon},
                       {"rho_mode", to_string(spec.rho_mode)},
                       {"divergence_guard", spec.divergence_guard},
                       {"domain", spec.domain}};
  result.summary = std::move(summary);

  if (!spec.outputs.empty()) write_outputs(spec, result);
  return result;
}

/// One CSV per (variant, metric) with columns iteration,mean,std,count, plus
/// summary.json. Doubles are printed with %.17g so identical results are
/// byte-identical files.
inline void write_outputs(const ExperimentSpec& spec, const ExperimentResult& result) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(spec.outputs, ec);
  if (ec || !fs::is_directory(spec.outputs))
    throw std::runtime_error("write_outputs: cannot create output directory " + spec.outputs);

  for (const VariantResult& vr : result.variants) {
    for (const auto& [metric, curve] : vr.curves) {
      const fs::path path = fs::path(spec.outputs) / (vr.name + "_" + metric + ".csv");
      std::ofstream os(path);
      if (!os) throw std::runtime_error("write_outputs: cannot open " + path.string());
      os << "iteration,mean,std,count\n";
      for (const AggregatePoint& p : curve.points)
        os << p.iteration << ',' << detail::format_double(p.mean) << ','
           << detail::format_double(p.std_dev) << ',' << p.count << '\n';
    }
  }
  std::ofstream os(fs::path(spec.outputs) / "summary.json");
  if (!os) throw std::runtime_error("write_outputs: cannot open summary.json");
  os << result.summary.dump(2) << '\n';
}

struct SweepEntry {
  double alpha = 0.0;
  std::map<std::string, double> terminal_value_error;  // variant -> mean over runs
  std::map<std::string, double> terminal_value_error_median;
  std::map<std::string, long> diverged;
  std::map<std::string, bool> divergence_flag;  // any run hit the guard
};

/// Step-size robustness sweep: re-runs the experiment at each alpha with the
/// variants' constant steps overridden, reporting the terminal value error
/// ||V - v_bar||_xi per (alpha, variant) and flagging divergence.
inline std::vector<SweepEntry> stepsize_sweep(const ExperimentSpec& base,
                                              const std::vector<double>& alphas) {
  std::vector<SweepEntry> table;
  for (double alpha : alphas) {
    if (alpha < 0.0) throw InvariantError("stepsize_sweep: alpha must be nonnegative");
    if (alpha == 0.0) {
      // Zero learning rate means no updates; the terminal error is the error
      // of the start point, evaluated directly.
      const domains::DomainBundle bundle = make_bundle(base.domain);
      const Vec v = exact_value(bundle.mdp, bundle.target);
      const double err0 = xi_norm(v - bundle.basis.table * bundle.theta_init, bundle.xi);
      SweepEntry entry;
      entry.alpha = 0.0;
      for (const VariantSpec& vs : base.variants) {
        entry.terminal_value_error[vs.name] = err0;
        entry.terminal_value_error_median[vs.name] = err0;
        entry.diverged[vs.name] = 0;
        entry.divergence_flag[vs.name] = false;
      }
      table.push_back(std::move(entry));
      continue;
    }
    ExperimentSpec spec = base;
    spec.outputs.clear();  // per-alpha curves stay in memory; the caller writes the table
    for (VariantSpec& v : spec.variants) v.step = StepPolicy::constant(alpha);
    const ExperimentResult result = run_experiment(spec);
    SweepEntry entry;
    entry.alpha = alpha;
    for (const VariantResult& vr : result.variants) {
      const auto& values = vr.terminal.at("value_error");
      double mean = 0.0;
      for (double v : values) mean += v;
      entry.terminal_value_error[vr.name] = values.empty() ? 0.0 : mean / values.size();
      entry.terminal_value_error_median[vr.name] = detail::median(values);
      entry.diverged[vr.name] = vr.diverged_runs;
      entry.divergence_flag[vr.name] = vr.diverged_runs > 0;
    }
    table.push_back(std::move(entry));
  }
  return table;
}

inline json sweep_to_json(const std::vector<SweepEntry>& table) {
  json out = json::array();
  for (const SweepEntry& e : table) {
    json row;
    row["alpha"] = e.alpha;
    for (const auto& [name, v] : e.terminal_value_error) {
      row["terminal_value_error"][name] = v;
      row["terminal_value_error_median"][name] = e.terminal_value_error_median.at(name);
      row["diverged_runs"][name] = e.diverged.at(name);
      row["diverged"][name] = e.divergence_flag.at(name);
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace harness
}  // namespace gtd
