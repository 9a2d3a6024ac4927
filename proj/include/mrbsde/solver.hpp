#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mrbsde/constraints.hpp"
#include "mrbsde/regression.hpp"
#include "mrbsde/stochastic.hpp"

namespace mrbsde {

/// Driver f(t, y, z) of the backward dynamics with a declared Lipschitz constant.
struct DriverSpec {
  /// Per-path, per-time values that do not depend on (y, z).
  struct Constant {
    ScalarEnsemble values;
  };
  /// a_t * y + h(t, z) with deterministic bounded a.
  struct LinearInY {
    DeterministicCurve a;
    std::function<double(double t, std::span<const double> z)> h;
  };
  struct General {
    std::function<double(double t, double y, std::span<const double> z)> f;
  };

  std::variant<Constant, LinearInY, General> family;
  double lipschitz = 0.0;

  static DriverSpec constant(ScalarEnsemble values);
  static DriverSpec constant(const TimeGrid& grid, std::size_t n_paths, double value);
  static DriverSpec linear_in_y(DeterministicCurve a, std::function<double(double, std::span<const double>)> h,
                                double lipschitz);
  static DriverSpec general(std::function<double(double, double, std::span<const double>)> f,
                            double lipschitz);

  bool depends_on_solution() const noexcept {
    return !std::holds_alternative<Constant>(family);
  }
  double operator()(std::size_t i, std::size_t path, double t, double y,
                    std::span<const double> z) const;
  /// sup_t |a_t| for the linear-in-y family, 0 otherwise.
  double a_sup() const;
};

/// Max observed |f(t,y,z) - f(t,y',z')| / (|y-y'| + |z-z'|) on seeded random probes.
/// Throws InvalidArgument if it exceeds lipschitz * (1 + 1e-6).
double probe_driver_lipschitz(const DriverSpec& driver, const TimeGrid& grid, std::size_t dim,
                              std::size_t probes = 256, std::uint64_t seed = 7);

/// Deterministic nondecreasing curve with K_0 = 0.
struct Compensator {
  DeterministicCurve K;

  double terminal() const { return K.values.back(); }
  /// Throws InvalidArgument when K_0 != 0, K decreases, or K_T is not finite.
  void validate() const;
};

struct AprioriReport {
  double constant = 0.0;  // 12 exp((1 + 2 lambda + 2 lambda^2) T)
  // E sup|Y|^2 against C * E[|Y_0|^2 + K_T^2 + int |f(s,0,0)|^2 + int |Z|^2]
  double path_sup_lhs = 0.0;
  double path_sup_rhs = 0.0;
  // sup E|Y|^2 + E int|Z|^2 + K_T^2 against C * (E|xi|^2 + E int |f(s,0,0)|^2 + |u|_inf^2)
  double data_lhs = 0.0;
  double data_rhs = 0.0;
  double ratio = 0.0;  // data_lhs / data_rhs (0 when both vanish)
};

struct Diagnostics {
  double flatness_integral = 0.0;
  double max_violation = 0.0;  // min over t of min(0, slack); 0 means feasible
  std::vector<double> picard_residuals;
  std::vector<double> regression_residuals;  // per step: max per-path dynamics residual
  AprioriReport apriori;
  std::vector<double> ridge_weights;  // per step, 0 where no regularization was needed
  std::vector<double> push_curve;    // Psi_i (reflection) or the penalty increment
  std::vector<double> running_max;   // R_i with K_i = R_0 - R_i (reflection only)
  std::vector<double> x_mean;        // mean of the unreflected chain X_i
  std::optional<double> penalty_energy;  // n^2 sum ((u - y_i)_+)^2 dt_i
  std::size_t split_blocks = 1;
  std::vector<std::string> warnings;
};

struct SolutionTriple {
  ScalarEnsemble Y;
  PathEnsemble Z;  // Z at the last grid time is 0
  Compensator K;
  Diagnostics diagnostics;

  std::vector<double> mean_y() const;
};

struct SolverOptions {
  BasisSpec basis = BasisSpec::polynomial(2);
  int max_picard = 50;
  // <= 0 selects 1e-4 * problem scale.
  double tol_fix = 0.0;
  bool split = false;
  // <= 0 selects 1e-3 * problem scale.
  double tol_c = 0.0;
  // Mean-curve stopping tolerance for the penalized scheme (<= 0: same as tol_fix).
  double tol_mean = 0.0;
  // Allow a time-dependent benchmark in the penalized scheme.
  bool allow_curve_benchmark = false;
  PushOptions push;
};

/// max(1, RMS of xi): reference magnitude for default tolerances.
double problem_scale(std::span<const double> xi);

/// Solution of the mean-reflected BSDE whose driver does not depend on (y, z):
/// backward regression chain for X, push Psi_i on the law of X_i, backward running
/// maximum R_i, K_i = R_0 - R_i and Y_i = X_i + R_i.
SolutionTriple solve_constant_driver(const ScalarEnsemble& driver_values, std::span<const double> xi,
                                     const Constraint& constraint, const PathEnsemble& paths,
                                     const SolverOptions& opts = {});

/// Picard iteration over constant-driver solves, optionally on a backward chain of
/// sub-horizons.
SolutionTriple solve_general(const DriverSpec& driver, std::span<const double> xi,
                             const Constraint& constraint, const PathEnsemble& paths,
                             const SolverOptions& opts = {});

/// Penalized scheme with drift n (u - E[Y_t])_+ and K^n = int n (u - E[Y])_+ dt.
SolutionTriple solve_penalized(const DriverSpec& driver, std::span<const double> xi,
                               const LossSpec& loss, int n_penalty, const PathEnsemble& paths,
                               const SolverOptions& opts = {});

/// Plain BSDE with a prescribed deterministic compensator (no reflection).
SolutionTriple solve_with_compensator(const DriverSpec& driver, std::span<const double> xi,
                                      const Compensator& K, const PathEnsemble& paths,
                                      const SolverOptions& opts = {});

/// sum_i slack_i (K_{i+1} - K_i), left-point rule.
double flatness_integral(const Constraint& constraint, const ScalarEnsemble& Y, const Compensator& K);

/// min(0, slack_i) per grid time.
DeterministicCurve violation_profile(const Constraint& constraint, const ScalarEnsemble& Y);

/// Per step i < M: max_p |Y_i - (Y_{i+1} + f(t_i, Y_i, Z_i) dt - Z_i . dB_i + dK_i)|.
std::vector<double> dynamics_residuals(const SolutionTriple& solution, const DriverSpec& driver,
                                       const PathEnsemble& paths);

AprioriReport apriori_check(const SolutionTriple& solution, std::span<const double> xi,
                            const DriverSpec& driver, double benchmark_scale);

/// Solution driven by the random compensator K^a_t = int_0^t M^a_s dK^0_s with
/// M^a = exp(a B - a^2 t / 2) on the first Brownian coordinate.
struct RandomizedSolution {
  ScalarEnsemble Y;
  PathEnsemble Z;
  ScalarEnsemble K;
  // max over paths of |sum_i slack_i (K^a_{i+1} - K^a_i)|
  double pathwise_flatness = 0.0;
  DeterministicCurve violation;
};

RandomizedSolution random_compensator_variant(const SolutionTriple& base, double alpha,
                                              const ScalarEnsemble& driver_values,
                                              std::span<const double> xi, const Constraint& constraint,
                                              const PathEnsemble& paths, const SolverOptions& opts = {});

struct MinimalityReport {
  enum class Status { Minimal, NotMinimal, InfeasibleCompensator, InvalidCompensator, UnsupportedDriver };
  Status status = Status::Minimal;
  double max_excess = 0.0;  // max_i max_p (Y_i - Y'_i)_+
  double worst_violation = 0.0;
  std::string message;
};

std::string to_string(MinimalityReport::Status status);

MinimalityReport minimality_probe(const SolutionTriple& flat, const Compensator& alternative,
                                  const DriverSpec& driver, std::span<const double> xi,
                                  const Constraint& constraint, const PathEnsemble& paths,
                                  double tol_min, const SolverOptions& opts = {});

}  // namespace mrbsde
