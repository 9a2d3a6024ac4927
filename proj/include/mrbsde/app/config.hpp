#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mrbsde/constraints.hpp"
#include "mrbsde/errors.hpp"
#include "mrbsde/reference.hpp"
#include "mrbsde/regression.hpp"
#include "mrbsde/solver.hpp"

namespace mrbsde::app {

/// Malformed or inconsistent scenario document. `field` is the dotted path of the offender.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what) : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Curve given as a number, {"constant": c}, {"ramp": [v0, vT]}, {"nodes": [[t, v], ...]}
/// or {"values": [...]} (one value per grid time).
struct CurveSpec {
  enum class Kind { Constant, Ramp, Nodes, Values };
  Kind kind = Kind::Constant;
  double first = 0.0;
  double second = 0.0;
  std::vector<std::pair<double, double>> nodes;
  std::vector<double> values;
  std::string field;

  static CurveSpec constant(double v, std::string field = {});
  DeterministicCurve resolve(const TimeGrid& grid) const;
};

/// Terminal payoff of the terminal state x (B_T, or S_T in market mode):
/// affine c + w.x, positive-part affine (c + w.x)_+, exponential c + s exp(w.x).
struct PayoffSpec {
  enum class Kind { Affine, PositivePartAffine, Exponential };
  Kind kind = Kind::Affine;
  double intercept = 0.0;
  std::vector<double> weights{1.0};
  double scale = 1.0;

  std::vector<double> evaluate(const std::vector<std::span<const double>>& state) const;
};

/// f = c_t + y_linear y + y_sin sin(y) + z_linear . z + z_abs |z| for the general family,
/// a_t y + c_t + z_linear . z + z_abs |z| for linear_in_y, c_t for constant.
struct DriverConfig {
  enum class Family { Constant, LinearInY, General };
  Family family = Family::Constant;
  CurveSpec value = CurveSpec::constant(0.0, "driver.value");
  CurveSpec a = CurveSpec::constant(0.0, "driver.a");
  double y_linear = 0.0;
  double y_sin = 0.0;
  std::vector<double> z_linear;
  double z_abs = 0.0;

  DriverSpec build(const TimeGrid& grid, std::size_t n_paths, std::size_t dim) const;
};

struct ConstraintConfig {
  enum class Kind { Linear, SmoothedIndicator, Utility, Tabulated, ExpectedShortfall };
  Kind kind = Kind::Linear;
  CurveSpec u = CurveSpec::constant(0.0, "constraint.u");
  CurveSpec v = CurveSpec::constant(0.5, "constraint.v");
  CurveSpec alpha = CurveSpec::constant(0.05, "constraint.alpha");
  CurveSpec q = CurveSpec::constant(0.0, "constraint.q");
  double width = 0.1;
  std::string utility = "identity";
  double slope = 1.0;
  double kappa = 2.0;
  std::vector<double> y_nodes;
  std::vector<double> node_values;
  std::optional<BiLipschitz> bilipschitz;
  double growth = 0.0;

  Constraint build(const TimeGrid& grid) const;
};

struct SolverConfig {
  enum class Method { Constructive, Picard, Penalized };
  Method method = Method::Constructive;
  int n_penalty = 64;
  SolverOptions options;
};

struct MarketConfig {
  CurveSpec r = CurveSpec::constant(0.0, "market.r");
  std::vector<CurveSpec> mu;                // one curve per asset
  std::vector<std::vector<double>> sigma;  // constant d x d volatility matrix
  double epsilon = 1e-6;
  std::vector<double> s0;
};

struct StudyConfig {
  std::vector<std::size_t> grid_steps{50, 100, 200, 400};
  std::vector<std::size_t> path_counts;  // empty: n/4, n/2, n
  std::vector<int> penalties{4, 16, 64, 256};
};

struct ReferenceConfig {
  double gamma = 1.0;
  double u = 0.0;
  double mean_xi = 0.5;
};

struct ScenarioConfig {
  double T = 1.0;
  std::size_t M = 100;
  std::size_t n_paths = 1 << 14;
  std::size_t dim = 1;
  std::uint64_t seed = 1;
  BasisSpec basis = BasisSpec::polynomial(2);
  PayoffSpec terminal;
  DriverConfig driver;
  ConstraintConfig constraint;
  SolverConfig solver;
  std::optional<ReferenceConfig> reference;  // counterexample oracle for diagnostics
  std::optional<MarketConfig> market;
  StudyConfig study;
  double tol_c = 0.0;     // <= 0: 1e-3 * scale
  double tol_flat = 0.0;  // <= 0: 1e-2 * K_T * scale
  std::string output_dir = "out";

  TimeGrid grid() const { return build_grid(T, M); }
};

ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::filesystem::path& path);

}  // namespace mrbsde::app
