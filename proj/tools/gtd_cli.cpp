// Experiment runner CLI. Subcommands:
//   run <spec.json>            execute an experiment spec, write CSV + summary
//   sweep <spec.json>          step-size robustness sweep over --alphas
//   bundle-export <domain>     write a domain bundle manifest as JSON
// Exit codes: 0 success, 2 spec validation failure, 3 runtime failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gtd/domains.hpp"
#include "gtd/harness.hpp"

namespace {

int load_spec(const std::string& path, std::optional<std::uint64_t> seed,
              const std::string& out_dir, int parallel, gtd::harness::ExperimentSpec& spec) {
  std::ifstream is(path);
  if (!is) {
    std::cerr << "cannot open spec file " << path << "\n";
    return 2;
  }
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    std::cerr << "spec is not valid JSON: " << e.what() << "\n";
    return 2;
  }
  gtd::harness::ValidationReport report;
  spec = gtd::harness::parse_spec(j, report);
  if (!report.ok()) {
    std::cerr << "invalid spec:\n" << report.joined();
    return 2;
  }
  if (seed) spec.master_seed = *seed;
  if (!out_dir.empty()) spec.outputs = out_dir;
  if (parallel > 0) spec.parallel = parallel;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient TD saddle-point experiment harness"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, domain_name;
  std::optional<std::uint64_t> seed;
  int parallel = 0;
  std::vector<double> alphas;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "master seed override");
    cmd->add_option("--out-dir", out_dir, "output directory override");
    cmd->add_option("--parallel", parallel, "worker thread count");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "run an experiment spec");
  run_cmd->add_option("spec", spec_path, "experiment spec JSON")->required();
  add_common(run_cmd);

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "step-size sweep over a spec");
  sweep_cmd->add_option("spec", spec_path, "experiment spec JSON")->required();
  sweep_cmd->add_option("--alphas", alphas, "step sizes to sweep")->expected(-1);
  add_common(sweep_cmd);

  CLI::App* export_cmd = app.add_subcommand("bundle-export", "export a domain bundle");
  export_cmd->add_option("domain", domain_name, "baird | chain50 | energy")->required();
  add_common(export_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      gtd::harness::ExperimentSpec spec;
      if (int rc = load_spec(spec_path, seed, out_dir, parallel, spec)) return rc;
      if (spec.outputs.empty()) {
        std::cerr << "no output directory (spec \"outputs\" or --out-dir)\n";
        return 2;
      }
      const auto result = gtd::harness::run_experiment(spec);
      std::cout << "wrote " << spec.outputs << " ("
                << result.summary["variants"].size() << " variants, " << spec.n_runs
                << " runs)\n";
      return 0;
    }
    if (sweep_cmd->parsed()) {
      gtd::harness::ExperimentSpec spec;
      if (int rc = load_spec(spec_path, seed, out_dir, parallel, spec)) return rc;
      if (alphas.empty()) {
        std::cerr << "sweep needs --alphas\n";
        return 2;
      }
      if (spec.outputs.empty()) {
        std::cerr << "no output directory (spec \"outputs\" or --out-dir)\n";
        return 2;
      }
      const auto table = gtd::harness::stepsize_sweep(spec, alphas);
      std::filesystem::create_directories(spec.outputs);
      std::ofstream os(std::filesystem::path(spec.outputs) / "sweep_summary.json");
      if (!os) throw std::runtime_error("cannot open sweep_summary.json");
      os << gtd::harness::sweep_to_json(table).dump(2) << '\n';
      std::cout << "wrote " << spec.outputs << "/sweep_summary.json (" << table.size()
                << " step sizes)\n";
      return 0;
    }
    if (export_cmd->parsed()) {
      nlohmann::json domain = {{"name", domain_name}};
      gtd::domains::DomainBundle bundle = gtd::harness::make_bundle(domain);
      const std::string dir = out_dir.empty() ? "." : out_dir;
      std::filesystem::create_directories(dir);
      const auto path = std::filesystem::path(dir) / (domain_name + "_bundle.json");
      std::ofstream os(path);
      if (!os) throw std::runtime_error("cannot open " + path.string());
      os << gtd::domains::bundle_to_json(bundle).dump(2) << '\n';
      std::cout << "wrote " << path.string() << "\n";
      return 0;
    }
  } catch (const gtd::InvariantError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
