#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mrbsde/stochastic.hpp"

namespace mrbsde {

/// Grid-aligned deterministic function of time.
struct DeterministicCurve {
  std::vector<double> values;

  static DeterministicCurve constant(const TimeGrid& grid, double value);
  /// Linear interpolation from `start` at t = 0 to `end` at t = T.
  static DeterministicCurve ramp(const TimeGrid& grid, double start, double end);
  /// Piecewise-linear through (time, value) nodes, flat beyond the outer nodes.
  static DeterministicCurve nodes(const TimeGrid& grid,
                                  const std::vector<std::pair<double, double>>& points);

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double max_abs() const;
  double max_jump() const;
  /// Finite values, grid-aligned, adjacent jumps bounded by `modulus` (if given).
  void validate(const TimeGrid& grid, std::optional<double> modulus = std::nullopt) const;

  friend bool operator==(const DeterministicCurve&, const DeterministicCurve&) = default;
};

class LossSpec;

/// l(t, y) = y - u_t
struct LinearLoss {
  DeterministicCurve u;
};

/// l(t, y) = sigmoid((y - u_t) / width) - v_t, a smoothed 1{y >= u_t} - v_t.
struct SmoothedIndicatorLoss {
  DeterministicCurve u;
  DeterministicCurve v;
  double width = 0.1;
};

/// l(t, y) = U(y) - u_t
struct UtilityLoss {
  std::string name;
  std::function<double(double)> utility;
  DeterministicCurve u;

  static UtilityLoss identity(DeterministicCurve u);
  static UtilityLoss affine(double slope, DeterministicCurve u);
  /// Concave piecewise-linear: y for y >= 0, kappa * y below (kappa >= 1).
  static UtilityLoss kinked(double kappa, DeterministicCurve u);
};

/// Time-independent piecewise-linear loss through (y, l) nodes, extrapolated with
/// the end slopes.
struct TabulatedLoss {
  std::vector<double> y_nodes;
  std::vector<double> values;
};

/// l(t, y) = base(t, factor_t * y). Produced by the discounting transform.
struct RescaledLoss {
  std::shared_ptr<const LossSpec> base;
  DeterministicCurve factor;
};

struct BiLipschitz {
  double lower = 1.0;  // c_l
  double upper = 1.0;  // C_l
};

class LossSpec {
 public:
  using Kind = std::variant<LinearLoss, SmoothedIndicatorLoss, UtilityLoss, TabulatedLoss, RescaledLoss>;

  explicit LossSpec(Kind kind, std::optional<BiLipschitz> bilipschitz = std::nullopt,
                    double growth = 0.0);

  static LossSpec linear(DeterministicCurve u);

  const Kind& kind() const noexcept { return kind_; }
  bool is_linear() const noexcept { return std::holds_alternative<LinearLoss>(kind_); }
  /// Benchmark curve u_t if the kind carries one.
  const DeterministicCurve* benchmark() const;
  const std::optional<BiLipschitz>& bilipschitz() const noexcept { return bilipschitz_; }
  double growth() const noexcept { return growth_; }
  bool monotone() const noexcept { return true; }

  double operator()(std::size_t i, double y) const;

 private:
  Kind kind_;
  std::optional<BiLipschitz> bilipschitz_;
  double growth_;
};

double eval_loss(const LossSpec& loss, std::size_t i, double y);

struct LossProbeReport {
  bool strictly_increasing = true;
  bool growth_ok = true;
  bool bilipschitz_ok = true;
  std::string message;
  bool ok() const { return strictly_increasing && growth_ok && bilipschitz_ok; }
};

/// Probes monotonicity, linear growth (when a growth constant is declared) and declared
/// bi-Lipschitz bounds on a ladder of 64 y-points per grid time. The ladder is centered
/// on the benchmark; its half-width is 20 smoothing widths for smoothed indicators
/// (wider ladders saturate in floating point) and 10 (1 + |u_t|) otherwise.
LossProbeReport probe_loss(const LossSpec& loss, std::size_t grid_size);

struct PushOptions {
  // Absolute bisection tolerance is tol_scale * (1 + max |sample|).
  double tol_scale = 1e-10;
  int max_doublings = 64;
};

/// Minimal deterministic x >= 0 with mean_p l(t, x + sample_p) >= 0. Closed form for the
/// linear kind, bracketing bisection otherwise. The returned value is always on the
/// feasible side of the root.
double l_operator(const LossSpec& loss, std::size_t i, std::span<const double> samples,
                  const PushOptions& opts = {});

/// Expected Shortfall at level alpha of the wealth samples: the mean of the worst alpha
/// fraction of losses (-sample), with a fractional weight on the boundary atom.
double es_value(std::span<const double> samples, double alpha);

struct RiskSpec {
  DeterministicCurve alpha;
  DeterministicCurve q;
};

/// (ES(t, samples) - q_t)_+
double risk_push(const RiskSpec& risk, std::size_t i, std::span<const double> samples);

using Constraint = std::variant<LossSpec, RiskSpec>;

/// Deterministic shift making the samples admissible at time index i.
double push(const Constraint& constraint, std::size_t i, std::span<const double> samples,
            const PushOptions& opts = {});

/// Signed constraint slack: mean l(t_i, Y) for losses, q_t - rho(t, Y) for risk measures.
double constraint_slack(const Constraint& constraint, std::size_t i, std::span<const double> samples);

/// Closed-form linear push (u - m)_+, nudged so that m + result >= u holds in floating
/// point.
double linear_push(double mean_value, double benchmark);

struct TerminalCheck {
  bool ok = true;
  double slack = 0.0;  // constraint_slack at maturity
  double gap = 0.0;    // push needed to restore admissibility (0 when ok)
};

TerminalCheck check_terminal(const Constraint& constraint, std::size_t terminal_index,
                             std::span<const double> xi, double tol_c);

/// max |L_t(X) - L_t(Y)| / mean|X - Y| over the probe pairs (pairs with X == Y skipped).
double lipschitz_ratio_probe(const LossSpec& loss, std::size_t i,
                             const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs,
                             const PushOptions& opts = {});

}  // namespace mrbsde
