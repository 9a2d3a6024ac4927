#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrbsde/app/config.hpp"
#include "mrbsde/solver.hpp"

namespace mrbsde::app {

enum ExitCode : int {
  kOk = 0,
  kInvariantFailure = 1,
  kConfigError = 2,
  kTerminalInfeasible = 3,
  kNonConvergence = 4,
};

struct ScenarioOutcome {
  SolutionTriple solution;
  nlohmann::json diagnostics;
  double scale = 1.0;
  double tol_c = 0.0;
  double tol_flat = 0.0;
  bool invariants_ok = false;
  nlohmann::json superhedge;  // null outside market mode
};

/// Simulates, solves and diagnoses one scenario. Throws on configuration problems, terminal
/// infeasibility and non-convergence; nothing is written.
ScenarioOutcome solve_scenario(const ScenarioConfig& cfg);

struct SuperhedgeOutcome {
  ScenarioOutcome run;
  double price = 0.0;  // empirical mean of Y at time 0
  std::vector<double> xi;
  PathEnsemble brownian;
};

/// Wealth-equation BSDE f(t, y, z) = -r_t y - theta_t . z with theta = sigma^{-1} (mu - r 1),
/// solved under the expected-shortfall constraint. The reported price is the flat
/// deterministic-consumption value.
SuperhedgeOutcome run_superhedge(const ScenarioConfig& cfg);

/// Throws InvalidArgument unless sigma sigma^T - eps I is positive semidefinite.
void check_ellipticity(const std::vector<std::vector<double>>& sigma, double epsilon);

enum class StudyKind { Grid, Paths, Penalty, Picard };
StudyKind parse_study_kind(const std::string& name);

struct StudyTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

StudyTable run_convergence_study(const ScenarioConfig& cfg, StudyKind kind);

void write_curve_csv(const std::filesystem::path& path, const TimeGrid& grid, const std::vector<double>& values);
void write_table_csv(const std::filesystem::path& path, const StudyTable& table);
/// JSON with every float printed to 17 significant digits.
std::string dump_json(const nlohmann::json& doc, int indent = 2);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

/// Writes meanY.csv, K.csv, diagnostics.json (and superhedge.json in market mode).
void write_outputs(const std::filesystem::path& dir, const ScenarioOutcome& outcome);

/// Full CLI flow for one scenario: maps failures to exit codes and logs to `log`.
int run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out, std::ostream& log);

}  // namespace mrbsde::app
