#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "mrbsde/app/config.hpp"
#include "mrbsde/app/scenario.hpp"

int main(int argc, char** argv) {
  using namespace mrbsde::app;
  CLI::App cli{"Mean-reflected BSDE solver"};
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> study;
  std::optional<double> tol_flat;
  std::optional<double> tol_c;
  cli.add_option("scenario", scenario, "Scenario JSON file")->required();
  cli.add_option("--seed", seed, "Override ensemble.seed");
  cli.add_option("--out", out_dir, "Output directory (default: the scenario's \"output\")");
  cli.add_option("--study", study, "Convergence study: grid, paths, penalty or picard");
  cli.add_option("--tol-flat", tol_flat, "Flatness tolerance override");
  cli.add_option("--tol-c", tol_c, "Feasibility tolerance override");
  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  ScenarioConfig cfg;
  std::optional<StudyKind> kind;
  try {
    cfg = load_config(scenario);
    if (seed) cfg.seed = *seed;
    if (tol_flat) cfg.tol_flat = *tol_flat;
    if (tol_c) {
      cfg.tol_c = *tol_c;
      cfg.solver.options.tol_c = *tol_c;
    }
    if (study) kind = parse_study_kind(*study);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  const std::filesystem::path out = out_dir ? *out_dir : cfg.output_dir;

  if (!kind) return run_scenario(cfg, out, std::cerr);
  try {
    const StudyTable table = run_convergence_study(cfg, *kind);
    std::filesystem::create_directories(out);
    write_table_csv(out / "rates.csv", table);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const mrbsde::TerminalViolation& e) {
    std::cerr << "terminal infeasible: " << e.what() << '\n';
    return kTerminalInfeasible;
  } catch (const mrbsde::ConvergenceFailure& e) {
    std::cerr << "no convergence: " << e.what() << '\n';
    return kNonConvergence;
  } catch (const mrbsde::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
}
