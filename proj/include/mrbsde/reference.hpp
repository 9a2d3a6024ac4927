#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mrbsde/constraints.hpp"
#include "mrbsde/solver.hpp"
#include "mrbsde/stochastic.hpp"

namespace mrbsde {

/// Driver -gamma, constant benchmark u and a terminal mean strictly inside (u, u + gamma T).
struct CounterexampleSpec {
  double gamma = 1.0;
  double u = 0.0;
  double T = 1.0;
  double mean_xi = 0.5;

  void validate() const;
  /// Solves E[xi] - gamma (T - t*) = u.
  double t_star() const;
};

struct SkorokhodCurves {
  DeterministicCurve y;
  Compensator K;
};

/// Discrete Skorokhod problem for the mean curve: psi_i = (u_i - x_i)_+, R_i = max_{j>=i} psi_j,
/// K_i = R_0 - R_i and y_i = x_i + R_i, which is x_i + (K_T - K_i) whenever x_T >= u_T.
SkorokhodCurves linear_closed_form(const DeterministicCurve& x, const DeterministicCurve& u);

struct CounterexampleCurves {
  DeterministicCurve mean_y;
  Compensator K;
  double t_star = 0.0;
  std::size_t cell = 0;  // index i with t_i <= t* < t_{i+1} (last cell when t* = T)
};

CounterexampleCurves counterexample_solution(const CounterexampleSpec& spec, const TimeGrid& grid);

/// Scenario after the change of variables Y~ = e^{C} Y with C_t = sum_{j<i} c_j dt_j.
struct DiscountedScenario {
  std::vector<double> xi;
  DriverSpec driver;
  LossSpec loss;
  DeterministicCurve exponent;  // C at every grid time
};

/// Discounts a linear-in-y scenario at rate c: a -> a - c, h~(t, z) = e^{C_t} h(t, e^{-C_t} z),
/// xi~ = e^{C_T} xi and l~(t, y) = l(t, e^{-C_t} y).
DiscountedScenario discount_transform(std::span<const double> xi, const DriverSpec& driver,
                                      const LossSpec& loss, const TimeGrid& grid,
                                      const DeterministicCurve& rate);

/// Discounts at the driver's own rate a, leaving a y-free driver.
DiscountedScenario discount_transform(std::span<const double> xi, const DriverSpec& driver,
                                      const LossSpec& loss, const TimeGrid& grid);

/// Maps a solution of the discounted scenario back: Y = e^{-C} Y~, Z = e^{-C} Z~ and
/// K_i = sum_{j<i} e^{-C_j} (K~_{j+1} - K~_j).
SolutionTriple undiscount(const SolutionTriple& discounted, const DeterministicCurve& exponent);

/// Discrete integral C_i = sum_{j<i} rate_j dt_j.
DeterministicCurve integrate_rate(const DeterministicCurve& rate, const TimeGrid& grid);

}  // namespace mrbsde
