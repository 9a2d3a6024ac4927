#include "mrbsde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mrbsde/errors.hpp"

namespace mrbsde {

DriverSpec DriverSpec::constant(ScalarEnsemble values) {
  return DriverSpec{Constant{std::move(values)}, 0.0};
}

DriverSpec DriverSpec::constant(const TimeGrid& grid, std::size_t n_paths, double value) {
  return constant(ScalarEnsemble(grid, n_paths, value));
}

DriverSpec DriverSpec::linear_in_y(DeterministicCurve a,
                                   std::function<double(double, std::span<const double>)> h,
                                   double lipschitz) {
  if (!h) throw InvalidArgument("linear-in-y driver needs h(t, z)");
  return DriverSpec{LinearInY{std::move(a), std::move(h)}, lipschitz};
}

DriverSpec DriverSpec::general(std::function<double(double, double, std::span<const double>)> f,
                               double lipschitz) {
  if (!f) throw InvalidArgument("general driver needs f(t, y, z)");
  return DriverSpec{General{std::move(f)}, lipschitz};
}

double DriverSpec::operator()(std::size_t i, std::size_t path, double t, double y,
                              std::span<const double> z) const {
  return std::visit(
      [&](const auto& fam) -> double {
        using F = std::decay_t<decltype(fam)>;
        if constexpr (std::is_same_v<F, Constant>) {
          return fam.values(path, i);
        } else if constexpr (std::is_same_v<F, LinearInY>) {
          return fam.a[i] * y + fam.h(t, z);
        } else {
          return fam.f(t, y, z);
        }
      },
      family);
}

double DriverSpec::a_sup() const {
  if (const auto* lin = std::get_if<LinearInY>(&family)) return lin->a.max_abs();
  return 0.0;
}

double probe_driver_lipschitz(const DriverSpec& driver, const TimeGrid& grid, std::size_t dim,
                              std::size_t probes, std::uint64_t seed) {
  if (!driver.depends_on_solution()) return 0.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
  std::vector<double> z1(dim), z2(dim);
  double worst = 0.0;
  for (std::size_t n = 0; n < probes; ++n) {
    const std::size_t i = pick(rng);
    const double y1 = normal(rng), y2 = normal(rng);
    double dz = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      z1[k] = normal(rng);
      z2[k] = normal(rng);
      dz += (z1[k] - z2[k]) * (z1[k] - z2[k]);
    }
    const double dist = std::abs(y1 - y2) + std::sqrt(dz);
    if (dist == 0.0) continue;
    const double df = std::abs(driver(i, 0, grid[i], y1, z1) - driver(i, 0, grid[i], y2, z2));
    worst = std::max(worst, df / dist);
  }
  if (worst > driver.lipschitz * (1.0 + 1e-6)) {
    std::ostringstream msg;
    msg << "driver Lipschitz probe observed " << worst << " above the declared constant "
        << driver.lipschitz;
    throw InvalidArgument(msg.str());
  }
  return worst;
}

void Compensator::validate() const {
  if (K.values.empty()) throw InvalidArgument("compensator is empty");
  if (K.values.front() != 0.0) throw InvalidArgument("compensator must start at 0");
  for (std::size_t i = 0; i + 1 < K.values.size(); ++i)
    if (K.values[i + 1] < K.values[i]) throw InvalidArgument("compensator must be nondecreasing");
  if (!std::isfinite(K.values.back())) throw InvalidArgument("compensator terminal value is not finite");
}

std::vector<double> SolutionTriple::mean_y() const {
  std::vector<double> out(Y.grid().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = empirical_mean(Y, i);
  return out;
}

double problem_scale(std::span<const double> xi) {
  double sum = 0.0;
  for (double v : xi) sum += v * v;
  return std::max(1.0, std::sqrt(sum / static_cast<double>(xi.size())));
}

namespace {

enum class Mode { Reflect, Given, Random, Penalty };

struct PassSpec {
  Mode mode = Mode::Reflect;
  const Constraint* constraint = nullptr;
  bool reflect_terminal = false;
  const DeterministicCurve* given_K = nullptr;
  const ScalarEnsemble* random_increments = nullptr;  // row i holds dK over [t_i, t_{i+1}]
  double n_penalty = 0.0;
  const DeterministicCurve* benchmark = nullptr;
  PushOptions push;
};

struct PassOutput {
  std::vector<double> local_R;  // block-local remaining push, entries a..b
  std::vector<double> push;     // Psi_i or penalty increment p_i
  std::vector<double> x_mean;
  std::vector<double> ridge;
};

// One backward sweep over rows [a, b]. Row b of Y receives the terminal values (plus
// Psi_b when reflect_terminal is set); rows [a, b) of Y and Z are overwritten.
void backward_pass(const PathEnsemble& paths, const BasisSpec& basis, std::size_t a, std::size_t b,
                   std::span<const double> terminal, const ScalarEnsemble& C, const PassSpec& spec,
                   ScalarEnsemble& Y, PathEnsemble& Z, PassOutput& out) {
  const std::size_t n = paths.n_paths();
  const std::size_t d = paths.dim();
  const TimeGrid& grid = paths.grid();

  std::vector<double> chain(terminal.begin(), terminal.end());
  std::copy(chain.begin(), chain.end(), Y.slice(b).begin());
  out.x_mean[b] = mean(chain);

  std::vector<std::vector<double>> increments(d);
  std::vector<double> product(n);
  for (std::size_t step = b; step > a; --step) {
    const std::size_t i = step - 1;
    const double dt = grid.dt(i);
    const ConditionalExpectation projector(paths.state(i), basis);
    out.ridge[i] = projector.ridge_weight();
    const std::vector<double> conditional = projector.project(chain);
    for (std::size_t k = 0; k < d; ++k) {
      increments[k] = paths.increment(i, k);
      for (std::size_t p = 0; p < n; ++p) product[p] = (chain[p] - conditional[p]) * increments[k][p];
      auto zk = Z.slice(i, k);
      projector.project(product, zk);
      for (double& v : zk) v /= dt;
    }
    auto Ci = C.slice(i);
    for (std::size_t p = 0; p < n; ++p) chain[p] = conditional[p] + Ci[p] * dt;
    if (spec.mode == Mode::Random) {
      auto inc = spec.random_increments->slice(i);
      for (std::size_t p = 0; p < n; ++p) chain[p] += inc[p];
    } else if (spec.mode == Mode::Penalty) {
      const double m = mean(chain);
      out.x_mean[i] = m;
      const double ndt = spec.n_penalty * dt;
      const double pen = ndt * std::max(0.0, (*spec.benchmark)[i] - m) / (1.0 + ndt);
      out.push[i] = pen;
      for (std::size_t p = 0; p < n; ++p) chain[p] += pen;
    }
    std::copy(chain.begin(), chain.end(), Y.slice(i).begin());
  }
  for (std::size_t k = 0; k < d; ++k) {
    if (b + 1 == grid.size()) std::fill(Z.slice(b, k).begin(), Z.slice(b, k).end(), 0.0);
  }

  switch (spec.mode) {
    case Mode::Reflect: {
      for (std::size_t i = a; i <= b; ++i) {
        out.x_mean[i] = mean(Y.slice(i));
        out.push[i] = (i < b || spec.reflect_terminal) ? push(*spec.constraint, i, Y.slice(i), spec.push) : 0.0;
      }
      out.local_R[b] = out.push[b];
      for (std::size_t i = b; i > a; --i) out.local_R[i - 1] = std::max(out.push[i - 1], out.local_R[i]);
      for (std::size_t i = a; i <= b; ++i) {
        const double r = out.local_R[i];
        if (r != 0.0)
          for (double& v : Y.slice(i)) v += r;
      }
      break;
    }
    case Mode::Given: {
      const auto& K = *spec.given_K;
      for (std::size_t i = a; i <= b; ++i) {
        out.x_mean[i] = mean(Y.slice(i));
        out.local_R[i] = K[b] - K[i];
        const double r = out.local_R[i];
        if (r != 0.0)
          for (double& v : Y.slice(i)) v += r;
      }
      break;
    }
    case Mode::Penalty: {
      out.local_R[b] = 0.0;
      for (std::size_t i = b; i > a; --i) out.local_R[i - 1] = out.local_R[i] + out.push[i - 1];
      break;
    }
    case Mode::Random:
      break;
  }
}

std::vector<std::pair<std::size_t, std::size_t>> make_blocks(const TimeGrid& grid, std::size_t count) {
  const std::size_t M = grid.steps();
  count = std::clamp<std::size_t>(count, 1, M);
  std::vector<std::size_t> cuts{0};
  for (std::size_t j = 1; j <= count; ++j) {
    const auto c = static_cast<std::size_t>(std::llround(static_cast<double>(j * M) / static_cast<double>(count)));
    if (c > cuts.back()) cuts.push_back(c);
  }
  cuts.back() = M;
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t j = 0; j + 1 < cuts.size(); ++j) blocks.emplace_back(cuts[j], cuts[j + 1]);
  return blocks;
}

double benchmark_scale(const Constraint& constraint) {
  if (const auto* loss = std::get_if<LossSpec>(&constraint)) {
    const DeterministicCurve* u = loss->benchmark();
    return u ? u->max_abs() : 0.0;
  }
  return std::get<RiskSpec>(constraint).q.max_abs();
}

double resolved(double value, double fallback) { return value > 0.0 ? value : fallback; }

void require_shapes(std::span<const double> xi, const PathEnsemble& paths) {
  if (xi.size() != paths.n_paths()) throw InvalidArgument("terminal samples and ensemble differ in number of paths");
}

void require_terminal(const Constraint& constraint, std::span<const double> xi, const TimeGrid& grid,
                      double tol_c) {
  const TerminalCheck check = check_terminal(constraint, grid.size() - 1, xi, tol_c);
  if (!check.ok) {
    std::ostringstream msg;
    msg << "terminal condition violates the constraint (gap " << check.gap << ")";
    throw TerminalViolation(msg.str(), check.gap);
  }
}

void validate_constraint(const Constraint& constraint, const TimeGrid& grid) {
  if (const auto* loss = std::get_if<LossSpec>(&constraint)) {
    if (const auto* u = loss->benchmark()) u->validate(grid);
    const LossProbeReport report = probe_loss(*loss, grid.size());
    if (!report.strictly_increasing) throw InvalidArgument("loss is not strictly increasing: " + report.message);
    if (!report.growth_ok) throw InvalidArgument("loss violates its growth bound: " + report.message);
    if (!report.bilipschitz_ok) throw InvalidArgument("loss violates its declared bi-Lipschitz bounds: " + report.message);
  } else {
    const auto& risk = std::get<RiskSpec>(constraint);
    risk.alpha.validate(grid);
    risk.q.validate(grid);
    for (double a : risk.alpha.values)
      if (!(a > 0.0 && a < 1.0)) throw InvalidArgument("ES level alpha must lie in (0, 1)");
  }
}

// Max per-path |Y_i - (Y_{i+1} + f dt - Z.dB + dK_i)| per step.
template <class DriverFn, class IncrementFn>
std::vector<double> residuals_with(const ScalarEnsemble& Y, const PathEnsemble& Z, const PathEnsemble& paths,
                                   DriverFn&& f, IncrementFn&& dK) {
  const TimeGrid& grid = paths.grid();
  const std::size_t n = paths.n_paths(), d = paths.dim();
  std::vector<double> out(grid.steps(), 0.0);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double dt = grid.dt(i);
    double worst = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double zdb = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        z[k] = Z(p, i, k);
        zdb += z[k] * (paths(p, i + 1, k) - paths(p, i, k));
      }
      const double rhs = Y(p, i + 1) + f(i, p, Y(p, i), std::span<const double>(z)) * dt - zdb + dK(i, p);
      worst = std::max(worst, std::abs(Y(p, i) - rhs));
    }
    out[i] = worst;
  }
  return out;
}

double picard_residual(const ScalarEnsemble& Y, const ScalarEnsemble& U, const PathEnsemble& Z,
                       const PathEnsemble& V, std::size_t a, std::size_t b) {
  const TimeGrid& grid = Y.grid();
  const std::size_t n = Y.n_paths(), d = Z.dim();
  double sup_y = 0.0, int_z = 0.0;
  for (std::size_t i = a; i < b; ++i) {
    double sy = 0.0, sz = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double dy = Y(p, i) - U(p, i);
      sy += dy * dy;
      for (std::size_t k = 0; k < d; ++k) {
        const double dz = Z(p, i, k) - V(p, i, k);
        sz += dz * dz;
      }
    }
    sup_y = std::max(sup_y, sy / static_cast<double>(n));
    int_z += sz / static_cast<double>(n) * grid.dt(i);
  }
  return std::sqrt(sup_y + int_z);
}

struct Workspace {
  ScalarEnsemble Y;
  PathEnsemble Z;
  PassOutput pass;
  Diagnostics diagnostics;
  std::vector<double> global_R;
};

Workspace make_workspace(const PathEnsemble& paths) {
  const TimeGrid& grid = paths.grid();
  Workspace w;
  w.Y = ScalarEnsemble(grid, paths.n_paths());
  w.Z = PathEnsemble(grid, paths.n_paths(), paths.dim());
  w.pass.local_R.assign(grid.size(), 0.0);
  w.pass.push.assign(grid.size(), 0.0);
  w.pass.x_mean.assign(grid.size(), 0.0);
  w.pass.ridge.assign(grid.size(), 0.0);
  w.global_R.assign(grid.size(), 0.0);
  return w;
}

// Picard loop over one block. For drivers that do not depend on the solution the second
// pass reproduces the first exactly and the loop stops with a zero residual.
void picard_block(const DriverSpec& driver, const PathEnsemble& paths, const SolverOptions& opts,
                  double tol_fix, double tol_mean, std::size_t a, std::size_t b,
                  std::span<const double> terminal, const PassSpec& spec, Workspace& w) {
  const TimeGrid& grid = paths.grid();
  const std::size_t n = paths.n_paths(), d = paths.dim();
  ScalarEnsemble C(grid, n);
  ScalarEnsemble U(grid, n);
  PathEnsemble V(grid, n, d);
  std::vector<double> previous_mean(grid.size(), 0.0);
  std::vector<double> z(d);
  std::vector<double> history;
  for (int iter = 1; iter <= opts.max_picard; ++iter) {
    for (std::size_t i = a; i < b; ++i) {
      auto Ci = C.slice(i);
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t k = 0; k < d; ++k) z[k] = V(p, i, k);
        Ci[p] = driver(i, p, grid[i], U(p, i), z);
      }
    }
    backward_pass(paths, opts.basis, a, b, terminal, C, spec, w.Y, w.Z, w.pass);
    const double residual = picard_residual(w.Y, U, w.Z, V, a, b);
    double mean_change = 0.0;
    for (std::size_t i = a; i < b; ++i) {
      const double m = mean(w.Y.slice(i));
      mean_change = std::max(mean_change, std::abs(m - previous_mean[i]));
      previous_mean[i] = m;
    }
    history.push_back(residual);
    w.diagnostics.picard_residuals.push_back(residual);
    if (residual < tol_fix && mean_change < tol_mean) return;
    for (std::size_t i = a; i < b; ++i) {
      std::copy(w.Y.slice(i).begin(), w.Y.slice(i).end(), U.slice(i).begin());
      for (std::size_t k = 0; k < d; ++k)
        std::copy(w.Z.slice(i, k).begin(), w.Z.slice(i, k).end(), V.slice(i, k).begin());
    }
  }
  std::ostringstream msg;
  msg << "Picard iteration did not reach tol_fix=" << tol_fix << " within " << opts.max_picard
      << " iterations (last residual " << history.back() << ")";
  throw ConvergenceFailure(msg.str(), history);
}

// Runs the block chain backward, stitching block-local pushes into one global curve.
void run_blocks(const DriverSpec* driver, const ScalarEnsemble* constant_values, const PathEnsemble& paths,
                const SolverOptions& opts, double tol_fix, double tol_mean, std::size_t block_count,
                std::span<const double> xi, PassSpec spec, Workspace& w) {
  const TimeGrid& grid = paths.grid();
  const auto blocks = make_blocks(grid, block_count);
  w.diagnostics.split_blocks = blocks.size();
  std::vector<double> terminal(xi.begin(), xi.end());
  const std::size_t M = grid.steps();
  for (std::size_t j = blocks.size(); j > 0; --j) {
    const auto [a, b] = blocks[j - 1];
    PassSpec block_spec = spec;
    block_spec.reflect_terminal = spec.reflect_terminal && b == M;
    if (constant_values) {
      backward_pass(paths, opts.basis, a, b, terminal, *constant_values, block_spec, w.Y, w.Z, w.pass);
    } else {
      picard_block(*driver, paths, opts, tol_fix, tol_mean, a, b, terminal, block_spec, w);
    }
    if (b == M) w.global_R[M] = w.pass.local_R[M];
    for (std::size_t i = a; i < b; ++i) w.global_R[i] = w.global_R[b] + (w.pass.local_R[i] - w.pass.local_R[b]);
    auto row = w.Y.slice(a);
    terminal.assign(row.begin(), row.end());
  }
}

Compensator compensator_from_R(const std::vector<double>& R) {
  Compensator K{DeterministicCurve{std::vector<double>(R.size())}};
  for (std::size_t i = 0; i < R.size(); ++i) K.K.values[i] = R.front() - R[i];
  return K;
}

void finish_apriori(SolutionTriple& s, std::span<const double> xi, const DriverSpec& driver, double scale) {
  s.diagnostics.apriori = apriori_check(s, xi, driver, scale);
}

void check_lipschitz_assumption(const Constraint& constraint, const SolutionTriple& s, Diagnostics& diag,
                                const PushOptions& push_opts) {
  const auto* loss = std::get_if<LossSpec>(&constraint);
  if (!loss || loss->is_linear()) return;
  const std::size_t size = s.Y.grid().size();
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  std::vector<std::size_t> times;
  for (std::size_t j = 0; j < 4; ++j) times.push_back(j * (size - 1) / 4);
  double worst = 0.0;
  for (std::size_t i : times) {
    auto row = s.Y.slice(i);
    std::vector<double> x(row.begin(), row.end()), y(row.size());
    const double spread = std::sqrt(variance(row)) + 1e-3;
    for (std::size_t p = 0; p < y.size(); ++p) y[p] = x[p] - spread * (1.0 + 0.5 * std::sin(static_cast<double>(p)));
    pairs.clear();
    pairs.emplace_back(std::move(x), std::move(y));
    worst = std::max(worst, lipschitz_ratio_probe(*loss, i, pairs, push_opts));
  }
  std::ostringstream msg;
  if (loss->bilipschitz()) {
    const double bound = loss->bilipschitz()->upper / loss->bilipschitz()->lower;
    if (worst > bound * (1.0 + 1e-6)) {
      msg << "push operator Lipschitz ratio " << worst << " exceeds C_l/c_l=" << bound;
      diag.warnings.push_back(msg.str());
    }
  } else {
    msg << "push operator Lipschitz ratio observed " << worst << " (no declared bound; contraction unverified)";
    diag.warnings.push_back(msg.str());
  }
}

void fill_constraint_diagnostics(const Constraint& constraint, SolutionTriple& s) {
  s.diagnostics.flatness_integral = flatness_integral(constraint, s.Y, s.K);
  const DeterministicCurve v = violation_profile(constraint, s.Y);
  s.diagnostics.max_violation = *std::min_element(v.values.begin(), v.values.end());
}

}  // namespace

SolutionTriple solve_constant_driver(const ScalarEnsemble& driver_values, std::span<const double> xi,
                                     const Constraint& constraint, const PathEnsemble& paths,
                                     const SolverOptions& opts) {
  require_shapes(xi, paths);
  if (driver_values.n_paths() != paths.n_paths() || !(driver_values.grid() == paths.grid()))
    throw InvalidArgument("driver values do not match the ensemble shape");
  validate_constraint(constraint, paths.grid());
  const double tol_c = resolved(opts.tol_c, 1e-3 * problem_scale(xi));
  require_terminal(constraint, xi, paths.grid(), tol_c);

  Workspace w = make_workspace(paths);
  PassSpec spec;
  spec.mode = Mode::Reflect;
  spec.constraint = &constraint;
  spec.reflect_terminal = true;
  spec.push = opts.push;
  run_blocks(nullptr, &driver_values, paths, opts, 0.0, 0.0, 1, xi, spec, w);

  SolutionTriple s{std::move(w.Y), std::move(w.Z), compensator_from_R(w.global_R), std::move(w.diagnostics)};
  s.diagnostics.push_curve = w.pass.push;
  s.diagnostics.running_max = w.global_R;
  s.diagnostics.x_mean = w.pass.x_mean;
  s.diagnostics.ridge_weights = w.pass.ridge;
  fill_constraint_diagnostics(constraint, s);
  s.diagnostics.regression_residuals = residuals_with(
      s.Y, s.Z, paths, [&](std::size_t i, std::size_t p, double, std::span<const double>) { return driver_values(p, i); },
      [&](std::size_t i, std::size_t) { return s.K.K[i + 1] - s.K.K[i]; });
  const DriverSpec as_driver{DriverSpec::Constant{driver_values}, 0.0};
  finish_apriori(s, xi, as_driver, benchmark_scale(constraint));
  return s;
}

SolutionTriple solve_general(const DriverSpec& driver, std::span<const double> xi, const Constraint& constraint,
                             const PathEnsemble& paths, const SolverOptions& opts) {
  require_shapes(xi, paths);
  validate_constraint(constraint, paths.grid());
  probe_driver_lipschitz(driver, paths.grid(), paths.dim());
  const double scale = problem_scale(xi);
  const double tol_c = resolved(opts.tol_c, 1e-3 * scale);
  const double tol_fix = resolved(opts.tol_fix, 1e-4 * scale);
  require_terminal(constraint, xi, paths.grid(), tol_c);

  std::size_t blocks = 1;
  if (opts.split) {
    const double T = paths.grid().horizon();
    blocks = static_cast<std::size_t>(std::ceil(std::sqrt(8.0 * driver.lipschitz * std::max(T, T * T)))) + 1;
  }
  Workspace w = make_workspace(paths);
  PassSpec spec;
  spec.mode = Mode::Reflect;
  spec.constraint = &constraint;
  spec.reflect_terminal = true;
  spec.push = opts.push;
  run_blocks(&driver, nullptr, paths, opts, tol_fix, std::numeric_limits<double>::infinity(), blocks, xi, spec, w);

  SolutionTriple s{std::move(w.Y), std::move(w.Z), compensator_from_R(w.global_R), std::move(w.diagnostics)};
  s.diagnostics.push_curve = w.pass.push;
  s.diagnostics.running_max = w.global_R;
  s.diagnostics.x_mean = w.pass.x_mean;
  s.diagnostics.ridge_weights = w.pass.ridge;
  fill_constraint_diagnostics(constraint, s);
  s.diagnostics.regression_residuals = dynamics_residuals(s, driver, paths);
  finish_apriori(s, xi, driver, benchmark_scale(constraint));
  if (driver.depends_on_solution()) check_lipschitz_assumption(constraint, s, s.diagnostics, opts.push);
  return s;
}

SolutionTriple solve_penalized(const DriverSpec& driver, std::span<const double> xi, const LossSpec& loss,
                               int n_penalty, const PathEnsemble& paths, const SolverOptions& opts) {
  require_shapes(xi, paths);
  if (n_penalty < 1) throw InvalidArgument("penalty strength must be a positive integer");
  const auto* lin = std::get_if<LinearLoss>(&loss.kind());
  if (!lin) throw InvalidArgument("penalized scheme requires a linear loss");
  lin->u.validate(paths.grid());
  if (!opts.allow_curve_benchmark) {
    for (double v : lin->u.values)
      if (v != lin->u.values.front())
        throw InvalidArgument("penalized scheme requires a constant benchmark (set allow_curve_benchmark to extend)");
  }
  probe_driver_lipschitz(driver, paths.grid(), paths.dim());
  const Constraint constraint{loss};
  const double scale = problem_scale(xi);
  const double tol_c = resolved(opts.tol_c, 1e-3 * scale);
  const double tol_fix = resolved(opts.tol_fix, 1e-4 * scale);
  const double tol_mean = resolved(opts.tol_mean, tol_fix);
  require_terminal(constraint, xi, paths.grid(), tol_c);

  Workspace w = make_workspace(paths);
  PassSpec spec;
  spec.mode = Mode::Penalty;
  spec.n_penalty = static_cast<double>(n_penalty);
  spec.benchmark = &lin->u;
  run_blocks(&driver, nullptr, paths, opts, tol_fix, tol_mean, 1, xi, spec, w);

  const TimeGrid& grid = paths.grid();
  Compensator K{DeterministicCurve{std::vector<double>(grid.size(), 0.0)}};
  for (std::size_t i = 0; i < grid.steps(); ++i) K.K.values[i + 1] = K.K.values[i] + w.pass.push[i];
  SolutionTriple s{std::move(w.Y), std::move(w.Z), std::move(K), std::move(w.diagnostics)};
  s.diagnostics.push_curve = w.pass.push;
  s.diagnostics.x_mean = w.pass.x_mean;
  s.diagnostics.ridge_weights = w.pass.ridge;
  fill_constraint_diagnostics(constraint, s);
  double energy = 0.0;
  const double nd = static_cast<double>(n_penalty);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double gap = std::max(0.0, lin->u[i] - empirical_mean(s.Y, i));
    energy += nd * nd * gap * gap * grid.dt(i);
  }
  s.diagnostics.penalty_energy = energy;
  s.diagnostics.regression_residuals = dynamics_residuals(s, driver, paths);
  finish_apriori(s, xi, driver, benchmark_scale(constraint));
  return s;
}

SolutionTriple solve_with_compensator(const DriverSpec& driver, std::span<const double> xi, const Compensator& K,
                                      const PathEnsemble& paths, const SolverOptions& opts) {
  require_shapes(xi, paths);
  K.validate();
  K.K.validate(paths.grid());
  probe_driver_lipschitz(driver, paths.grid(), paths.dim());
  const double tol_fix = resolved(opts.tol_fix, 1e-4 * problem_scale(xi));
  Workspace w = make_workspace(paths);
  PassSpec spec;
  spec.mode = Mode::Given;
  spec.given_K = &K.K;
  if (const auto* c = std::get_if<DriverSpec::Constant>(&driver.family)) {
    run_blocks(nullptr, &c->values, paths, opts, 0.0, 0.0, 1, xi, spec, w);
  } else {
    run_blocks(&driver, nullptr, paths, opts, tol_fix, std::numeric_limits<double>::infinity(), 1, xi, spec, w);
  }
  SolutionTriple s{std::move(w.Y), std::move(w.Z), K, std::move(w.diagnostics)};
  s.diagnostics.x_mean = w.pass.x_mean;
  s.diagnostics.ridge_weights = w.pass.ridge;
  s.diagnostics.regression_residuals = dynamics_residuals(s, driver, paths);
  finish_apriori(s, xi, driver, 0.0);
  return s;
}

double flatness_integral(const Constraint& constraint, const ScalarEnsemble& Y, const Compensator& K) {
  if (K.K.size() != Y.grid().size()) throw InvalidArgument("compensator and solution grids differ");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < K.K.size(); ++i) {
    const double dK = K.K[i + 1] - K.K[i];
    if (dK != 0.0) total += constraint_slack(constraint, i, Y.slice(i)) * dK;
  }
  return total;
}

DeterministicCurve violation_profile(const Constraint& constraint, const ScalarEnsemble& Y) {
  DeterministicCurve out{std::vector<double>(Y.grid().size())};
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values[i] = std::min(0.0, constraint_slack(constraint, i, Y.slice(i)));
  return out;
}

std::vector<double> dynamics_residuals(const SolutionTriple& solution, const DriverSpec& driver,
                                       const PathEnsemble& paths) {
  const TimeGrid& grid = paths.grid();
  return residuals_with(
      solution.Y, solution.Z, paths,
      [&](std::size_t i, std::size_t p, double y, std::span<const double> z) { return driver(i, p, grid[i], y, z); },
      [&](std::size_t i, std::size_t) { return solution.K.K[i + 1] - solution.K.K[i]; });
}

AprioriReport apriori_check(const SolutionTriple& solution, std::span<const double> xi, const DriverSpec& driver,
                            double scale) {
  const ScalarEnsemble& Y = solution.Y;
  const TimeGrid& grid = Y.grid();
  const std::size_t n = Y.n_paths(), d = solution.Z.dim();
  const double lambda = driver.lipschitz;
  const double T = grid.horizon();
  AprioriReport r;
  r.constant = 12.0 * std::exp((1.0 + 2.0 * lambda + 2.0 * lambda * lambda) * T);

  const std::vector<double> zero_z(d, 0.0);
  double f00 = 0.0, z_int = 0.0, sup_mean_sq = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double ysq = 0.0;
    for (std::size_t p = 0; p < n; ++p) ysq += Y(p, i) * Y(p, i);
    sup_mean_sq = std::max(sup_mean_sq, ysq / static_cast<double>(n));
    if (i + 1 == grid.size()) break;
    double fsq = 0.0, zsq = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double f = driver(i, p, grid[i], 0.0, zero_z);
      fsq += f * f;
      for (std::size_t k = 0; k < d; ++k) zsq += solution.Z(p, i, k) * solution.Z(p, i, k);
    }
    f00 += fsq / static_cast<double>(n) * grid.dt(i);
    z_int += zsq / static_cast<double>(n) * grid.dt(i);
  }
  double sup_path = 0.0, y0sq = 0.0, xisq = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    double m = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) m = std::max(m, Y(p, i) * Y(p, i));
    sup_path += m;
    y0sq += Y(p, 0) * Y(p, 0);
    xisq += xi[p] * xi[p];
  }
  sup_path /= static_cast<double>(n);
  y0sq /= static_cast<double>(n);
  xisq /= static_cast<double>(n);
  const double kT = solution.K.terminal();

  r.path_sup_lhs = sup_path;
  r.path_sup_rhs = r.constant * (y0sq + kT * kT + f00 + z_int);
  r.data_lhs = sup_mean_sq + z_int + kT * kT;
  r.data_rhs = r.constant * (xisq + f00 + scale * scale);
  r.ratio = r.data_rhs > 0.0 ? r.data_lhs / r.data_rhs : 0.0;
  return r;
}

RandomizedSolution random_compensator_variant(const SolutionTriple& base, double alpha,
                                              const ScalarEnsemble& driver_values, std::span<const double> xi,
                                              const Constraint& constraint, const PathEnsemble& paths,
                                              const SolverOptions& opts) {
  if (!std::isfinite(alpha)) throw InvalidArgument("alpha must be finite");
  require_shapes(xi, paths);
  const TimeGrid& grid = paths.grid();
  const std::size_t n = paths.n_paths();
  if (base.K.K.size() != grid.size()) throw InvalidArgument("base solution grid differs from the ensemble");

  ScalarEnsemble increments(grid, n);
  RandomizedSolution out;
  out.K = ScalarEnsemble(grid, n);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double dK = base.K.K[i + 1] - base.K.K[i];
    auto inc = increments.slice(i);
    auto Bi = paths.slice(i, 0);
    for (std::size_t p = 0; p < n; ++p) {
      const double martingale = alpha == 0.0 ? 1.0 : std::exp(alpha * Bi[p] - 0.5 * alpha * alpha * grid[i]);
      inc[p] = martingale * dK;
      out.K(p, i + 1) = out.K(p, i) + inc[p];
    }
  }

  Workspace w = make_workspace(paths);
  PassSpec spec;
  spec.mode = Mode::Random;
  spec.random_increments = &increments;
  backward_pass(paths, opts.basis, 0, grid.steps(), xi, driver_values, spec, w.Y, w.Z, w.pass);
  out.Y = std::move(w.Y);
  out.Z = std::move(w.Z);

  std::vector<double> slack(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) slack[i] = constraint_slack(constraint, i, out.Y.slice(i));
  for (std::size_t p = 0; p < n; ++p) {
    double flat = 0.0;
    for (std::size_t i = 0; i < grid.steps(); ++i) flat += slack[i] * increments(p, i);
    out.pathwise_flatness = std::max(out.pathwise_flatness, std::abs(flat));
  }
  out.violation = DeterministicCurve{std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) out.violation.values[i] = std::min(0.0, slack[i]);
  return out;
}

std::string to_string(MinimalityReport::Status status) {
  switch (status) {
    case MinimalityReport::Status::Minimal: return "minimal";
    case MinimalityReport::Status::NotMinimal: return "not-minimal";
    case MinimalityReport::Status::InfeasibleCompensator: return "infeasible-compensator";
    case MinimalityReport::Status::InvalidCompensator: return "invalid-compensator";
    case MinimalityReport::Status::UnsupportedDriver: return "unsupported-driver";
  }
  return "unknown";
}

MinimalityReport minimality_probe(const SolutionTriple& flat, const Compensator& alternative,
                                  const DriverSpec& driver, std::span<const double> xi,
                                  const Constraint& constraint, const PathEnsemble& paths, double tol_min,
                                  const SolverOptions& opts) {
  MinimalityReport report;
  if (std::holds_alternative<DriverSpec::General>(driver.family)) {
    report.status = MinimalityReport::Status::UnsupportedDriver;
    report.message = "minimality needs a driver of the form a_t y + h(t, z)";
    return report;
  }
  try {
    alternative.validate();
    alternative.K.validate(paths.grid());
  } catch (const InvalidArgument& e) {
    report.status = MinimalityReport::Status::InvalidCompensator;
    report.message = e.what();
    return report;
  }
  const SolutionTriple other = solve_with_compensator(driver, xi, alternative, paths, opts);
  const double tol_c = resolved(opts.tol_c, 1e-3 * problem_scale(xi));
  const DeterministicCurve v = violation_profile(constraint, other.Y);
  report.worst_violation = *std::min_element(v.values.begin(), v.values.end());
  if (report.worst_violation < -tol_c) {
    report.status = MinimalityReport::Status::InfeasibleCompensator;
    std::ostringstream msg;
    msg << "alternative compensator violates the constraint by " << -report.worst_violation;
    report.message = msg.str();
    return report;
  }
  double excess = 0.0;
  for (std::size_t i = 0; i < paths.grid().size(); ++i) {
    auto a = flat.Y.slice(i);
    auto b = other.Y.slice(i);
    for (std::size_t p = 0; p < a.size(); ++p) excess = std::max(excess, a[p] - b[p]);
  }
  report.max_excess = excess;
  report.status = excess <= tol_min ? MinimalityReport::Status::Minimal : MinimalityReport::Status::NotMinimal;
  return report;
}

}  // namespace mrbsde
