#include "mrbsde/app/scenario.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "mrbsde/reference.hpp"

namespace mrbsde::app {

using nlohmann::json;

namespace {

json to_json(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(x);
  return out;
}

json apriori_json(const AprioriReport& r) {
  return json{{"constant", r.constant},         {"path_sup_lhs", r.path_sup_lhs}, {"path_sup_rhs", r.path_sup_rhs},
              {"data_lhs", r.data_lhs},         {"data_rhs", r.data_rhs},         {"ratio", r.ratio}};
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double out = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a[i] - b[i]));
  return out;
}

SolutionTriple dispatch(const ScenarioConfig& cfg, const DriverSpec& driver, std::span<const double> xi,
                        const Constraint& constraint, const PathEnsemble& paths) {
  const SolverOptions& opts = cfg.solver.options;
  switch (cfg.solver.method) {
    case SolverConfig::Method::Constructive:
      return solve_constant_driver(std::get<DriverSpec::Constant>(driver.family).values, xi, constraint, paths, opts);
    case SolverConfig::Method::Picard:
      return solve_general(driver, xi, constraint, paths, opts);
    case SolverConfig::Method::Penalized:
      return solve_penalized(driver, xi, std::get<LossSpec>(constraint), cfg.solver.n_penalty, paths, opts);
  }
  throw ConfigError("solver.method", "unsupported");
}

ScenarioOutcome diagnose(const ScenarioConfig& cfg, SolutionTriple solution, std::span<const double> xi) {
  ScenarioOutcome out;
  out.scale = problem_scale(xi);
  const double K_T = solution.K.terminal();
  out.tol_c = cfg.tol_c > 0.0 ? cfg.tol_c : 1e-3 * out.scale;
  out.tol_flat = cfg.tol_flat > 0.0 ? cfg.tol_flat : 1e-2 * K_T * out.scale;
  const Diagnostics& d = solution.diagnostics;
  out.invariants_ok = d.max_violation >= -out.tol_c && std::abs(d.flatness_integral) <= out.tol_flat;

  double max_ridge = 0.0;
  std::size_t ridge_steps = 0;
  for (double w : d.ridge_weights) {
    max_ridge = std::max(max_ridge, w);
    if (w > 0.0) ++ridge_steps;
  }
  const std::vector<double> mean_y = solution.mean_y();
  json diag{{"flatness_integral", d.flatness_integral},
            {"max_violation", d.max_violation},
            {"picard_residuals", to_json(d.picard_residuals)},
            {"regression_residuals", to_json(d.regression_residuals)},
            {"apriori", apriori_json(d.apriori)},
            {"K_T", K_T},
            {"mean_Y0", mean_y.front()},
            {"scale", out.scale},
            {"tolerances", {{"tol_c", out.tol_c}, {"tol_flat", out.tol_flat}}},
            {"invariants_ok", out.invariants_ok},
            {"split_blocks", d.split_blocks},
            {"ridge", {{"steps", ridge_steps}, {"max_weight", max_ridge}}},
            {"warnings", d.warnings}};
  if (d.penalty_energy) diag["penalty_energy"] = *d.penalty_energy;
  if (cfg.reference) {
    const TimeGrid& grid = solution.Y.grid();
    const CounterexampleCurves ref =
        counterexample_solution(CounterexampleSpec{cfg.reference->gamma, cfg.reference->u, cfg.T, cfg.reference->mean_xi}, grid);
    diag["reference"] = json{{"t_star", ref.t_star},
                             {"t_star_cell", ref.cell},
                             {"sup_K_error", sup_diff(solution.K.K.values, ref.K.K.values)},
                             {"sup_meanY_error", sup_diff(mean_y, ref.mean_y.values)},
                             {"K_T_error", std::abs(K_T - ref.K.terminal())}};
  }
  out.diagnostics = std::move(diag);
  out.solution = std::move(solution);
  return out;
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void dump_value(const json& v, int indent, int depth, std::string& out) {
  const std::string pad = indent > 0 ? std::string(static_cast<std::size_t>(indent * (depth + 1)), ' ') : "";
  const std::string close_pad = indent > 0 ? std::string(static_cast<std::size_t>(indent * depth), ' ') : "";
  const char* nl = indent > 0 ? "\n" : "";
  if (v.is_object()) {
    if (v.empty()) {
      out += "{}";
      return;
    }
    out += "{";
    out += nl;
    bool first = true;
    for (const auto& [key, item] : v.items()) {
      if (!first) {
        out += ",";
        out += nl;
      }
      first = false;
      out += pad + json(key).dump() + (indent > 0 ? ": " : ":");
      dump_value(item, indent, depth + 1, out);
    }
    out += nl + close_pad + "}";
  } else if (v.is_array()) {
    if (v.empty()) {
      out += "[]";
      return;
    }
    out += "[";
    out += nl;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j) {
        out += ",";
        out += nl;
      }
      out += pad;
      dump_value(v[j], indent, depth + 1, out);
    }
    out += nl + close_pad + "]";
  } else if (v.is_number_float()) {
    const double x = v.get<double>();
    out += std::isfinite(x) ? format_double(x) : "null";
  } else {
    out += v.dump();
  }
}

Eigen::MatrixXd sigma_matrix(const std::vector<std::vector<double>>& sigma) {
  const auto d = static_cast<Eigen::Index>(sigma.size());
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    if (static_cast<Eigen::Index>(sigma[static_cast<std::size_t>(a)].size()) != d)
      throw InvalidArgument("volatility matrix must be square");
    for (Eigen::Index b = 0; b < d; ++b) m(a, b) = sigma[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
  }
  return m;
}

}  // namespace

ScenarioOutcome solve_scenario(const ScenarioConfig& cfg) {
  if (cfg.market) return run_superhedge(cfg).run;
  const TimeGrid grid = cfg.grid();
  const PathEnsemble paths = simulate_brownian(grid, cfg.n_paths, cfg.dim, cfg.seed);
  const std::vector<double> xi = cfg.terminal.evaluate(paths.state(grid.steps()));
  const DriverSpec driver = cfg.driver.build(grid, cfg.n_paths, cfg.dim);
  const Constraint constraint = cfg.constraint.build(grid);
  return diagnose(cfg, dispatch(cfg, driver, xi, constraint, paths), xi);
}

void check_ellipticity(const std::vector<std::vector<double>>& sigma, double epsilon) {
  const Eigen::MatrixXd s = sigma_matrix(sigma);
  const Eigen::MatrixXd gram = s * s.transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double lowest = eig.eigenvalues().minCoeff();
  if (lowest < epsilon) {
    std::ostringstream msg;
    msg << "sigma sigma^T - eps I is not positive semidefinite (smallest eigenvalue " << lowest << " < eps " << epsilon
        << ")";
    throw InvalidArgument(msg.str());
  }
}

SuperhedgeOutcome run_superhedge(const ScenarioConfig& cfg) {
  if (!cfg.market) throw ConfigError("market", "missing section");
  const MarketConfig& m = *cfg.market;
  try {
    check_ellipticity(m.sigma, m.epsilon);
  } catch (const InvalidArgument& e) {
    throw ConfigError("market.sigma", e.what());
  }
  const TimeGrid grid = cfg.grid();
  const std::size_t d = cfg.dim, n = cfg.n_paths;
  const DeterministicCurve r = m.r.resolve(grid);
  std::vector<DeterministicCurve> mu;
  for (const auto& c : m.mu) mu.push_back(c.resolve(grid));

  const Eigen::MatrixXd sigma = sigma_matrix(m.sigma);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(sigma);
  // Market price of risk per grid time.
  std::vector<std::vector<double>> theta(grid.size(), std::vector<double>(d));
  double theta_sup = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Eigen::VectorXd excess(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) excess(static_cast<Eigen::Index>(k)) = mu[k][i] - r[i];
    const Eigen::VectorXd th = lu.solve(excess);
    for (std::size_t k = 0; k < d; ++k) theta[i][k] = th(static_cast<Eigen::Index>(k));
    theta_sup = std::max(theta_sup, th.norm());
  }

  SuperhedgeOutcome out;
  out.brownian = simulate_brownian(grid, n, d, cfg.seed);
  // Log-Euler asset paths; only the terminal cross-section is kept.
  std::vector<std::vector<double>> log_s(d, std::vector<double>(n));
  for (std::size_t k = 0; k < d; ++k) std::fill(log_s[k].begin(), log_s[k].end(), std::log(m.s0[k]));
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double dt = grid.dt(i);
    for (std::size_t k = 0; k < d; ++k) {
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += sigma(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) *
                                               sigma(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      const double drift = (mu[k][i] - 0.5 * var) * dt;
      for (std::size_t p = 0; p < n; ++p) {
        double shock = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          shock += sigma(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) *
                   (out.brownian(p, i + 1, j) - out.brownian(p, i, j));
        log_s[k][p] += drift + shock;
      }
    }
  }
  std::vector<std::vector<double>> s_T(d, std::vector<double>(n));
  std::vector<std::span<const double>> state;
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t p = 0; p < n; ++p) s_T[k][p] = std::exp(log_s[k][p]);
    state.emplace_back(s_T[k]);
  }
  out.xi = cfg.terminal.evaluate(state);

  DeterministicCurve a{std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) a.values[i] = -r[i];
  const auto times = grid.times();
  auto h = [theta, times](double t, std::span<const double> z) {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    const std::size_t i = it == times.end() ? times.size() - 1 : static_cast<std::size_t>(it - times.begin());
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += theta[i][k] * z[k];
    return -s;
  };
  const DriverSpec driver = DriverSpec::linear_in_y(a, h, r.max_abs() + theta_sup);
  const Constraint constraint = cfg.constraint.build(grid);

  SolverOptions opts = cfg.solver.options;
  SolutionTriple solution = solve_general(driver, out.xi, constraint, out.brownian, opts);
  out.price = empirical_mean(solution.Y, 0);
  const double K_T = solution.K.terminal();
  out.run = diagnose(cfg, std::move(solution), out.xi);
  out.run.superhedge = json{{"label", "flat deterministic-consumption super-hedging price"},
                            {"Y0", out.price},
                            {"consumption_K_T", K_T},
                            {"market_price_of_risk_sup", theta_sup}};
  return out;
}

StudyKind parse_study_kind(const std::string& name) {
  if (name == "grid") return StudyKind::Grid;
  if (name == "paths") return StudyKind::Paths;
  if (name == "penalty") return StudyKind::Penalty;
  if (name == "picard") return StudyKind::Picard;
  throw ConfigError("--study", "unknown study '" + name + "' (grid, paths, penalty, picard)");
}

StudyTable run_convergence_study(const ScenarioConfig& cfg, StudyKind kind) {
  StudyTable table;
  auto reference_errors = [&](const ScenarioConfig& c) {
    const ScenarioOutcome o = solve_scenario(c);
    const json& ref = o.diagnostics.at("reference");
    return std::vector<double>{ref.at("K_T_error").get<double>(), ref.at("sup_K_error").get<double>(),
                               ref.at("sup_meanY_error").get<double>()};
  };
  switch (kind) {
    case StudyKind::Grid:
    case StudyKind::Paths: {
      if (!cfg.reference) throw ConfigError("reference", "grid and path studies need a counterexample reference");
      const bool grid = kind == StudyKind::Grid;
      table.header = {grid ? "M" : "n_paths", "K_T_error", "sup_K_error", "sup_meanY_error"};
      std::vector<std::size_t> sweep = grid ? cfg.study.grid_steps : cfg.study.path_counts;
      if (sweep.empty()) sweep = {std::max<std::size_t>(2, cfg.n_paths / 4), std::max<std::size_t>(2, cfg.n_paths / 2), cfg.n_paths};
      for (std::size_t v : sweep) {
        ScenarioConfig c = cfg;
        (grid ? c.M : c.n_paths) = v;
        std::vector<double> row{static_cast<double>(v)};
        for (double e : reference_errors(c)) row.push_back(e);
        table.rows.push_back(std::move(row));
      }
      break;
    }
    case StudyKind::Penalty: {
      if (cfg.constraint.kind != ConstraintConfig::Kind::Linear)
        throw ConfigError("constraint.kind", "penalty study needs a linear constraint");
      table.header = {"n_penalty", "sup_K_error", "penalty_energy", "flatness_defect", "K_T"};
      ScenarioConfig base = cfg;
      base.solver.method = cfg.driver.family == DriverConfig::Family::Constant ? SolverConfig::Method::Constructive
                                                                                : SolverConfig::Method::Picard;
      const ScenarioOutcome oracle = solve_scenario(base);
      const DeterministicCurve u = cfg.constraint.u.resolve(cfg.grid());
      for (int n : cfg.study.penalties) {
        ScenarioConfig c = cfg;
        c.solver.method = SolverConfig::Method::Penalized;
        c.solver.n_penalty = n;
        const ScenarioOutcome o = solve_scenario(c);
        const auto& K = o.solution.K.K.values;
        const std::vector<double> mean_y = o.solution.mean_y();
        double defect = 0.0;
        for (std::size_t i = 0; i + 1 < K.size(); ++i) defect += std::max(0.0, mean_y[i] - u[i]) * (K[i + 1] - K[i]);
        table.rows.push_back({static_cast<double>(n), sup_diff(K, oracle.solution.K.K.values),
                              o.solution.diagnostics.penalty_energy.value_or(0.0), defect, o.solution.K.terminal()});
      }
      break;
    }
    case StudyKind::Picard: {
      table.header = {"iteration", "residual", "ratio"};
      ScenarioConfig c = cfg;
      if (!c.market) c.solver.method = SolverConfig::Method::Picard;
      const ScenarioOutcome o = solve_scenario(c);
      const auto& res = o.solution.diagnostics.picard_residuals;
      for (std::size_t j = 0; j < res.size(); ++j) {
        const double ratio = j == 0 || res[j - 1] == 0.0 ? std::numeric_limits<double>::quiet_NaN() : res[j] / res[j - 1];
        table.rows.push_back({static_cast<double>(j + 1), res[j], ratio});
      }
      break;
    }
  }
  return table;
}

void write_curve_csv(const std::filesystem::path& path, const TimeGrid& grid, const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "time,value\n";
  for (std::size_t i = 0; i < grid.size(); ++i) out << format_double(grid[i]) << ',' << format_double(values[i]) << '\n';
}

void write_table_csv(const std::filesystem::path& path, const StudyTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < table.header.size(); ++j) out << (j ? "," : "") << table.header[j];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_double(row[j]);
    out << '\n';
  }
}

std::string dump_json(const json& doc, int indent) {
  std::string out;
  dump_value(doc, indent, 0, out);
  return out;
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << dump_json(doc) << '\n';
}

void write_outputs(const std::filesystem::path& dir, const ScenarioOutcome& outcome) {
  std::filesystem::create_directories(dir);
  const TimeGrid& grid = outcome.solution.Y.grid();
  write_curve_csv(dir / "meanY.csv", grid, outcome.solution.mean_y());
  write_curve_csv(dir / "K.csv", grid, outcome.solution.K.K.values);
  write_json(dir / "diagnostics.json", outcome.diagnostics);
  if (!outcome.superhedge.is_null()) write_json(dir / "superhedge.json", outcome.superhedge);
}

int run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  try {
    const ScenarioOutcome outcome = solve_scenario(cfg);
    write_outputs(out, outcome);
    log << "K_T=" << format_double(outcome.solution.K.terminal())
        << " flatness=" << format_double(outcome.solution.diagnostics.flatness_integral)
        << " max_violation=" << format_double(outcome.solution.diagnostics.max_violation) << '\n';
    if (!outcome.invariants_ok) {
      log << "invariants failed: need max_violation >= " << format_double(-outcome.tol_c)
          << " and |flatness| <= " << format_double(outcome.tol_flat) << '\n';
      return kInvariantFailure;
    }
    return kOk;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const TerminalViolation& e) {
    log << "terminal infeasible: " << e.what() << '\n';
    return kTerminalInfeasible;
  } catch (const ConvergenceFailure& e) {
    log << "no convergence: " << e.what() << '\n';
    return kNonConvergence;
  } catch (const UnsatisfiableConstraint& e) {
    log << "unsatisfiable constraint: " << e.what() << '\n';
    return kInvariantFailure;
  } catch (const InvalidArgument& e) {
    log << "invalid scenario: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace mrbsde::app
