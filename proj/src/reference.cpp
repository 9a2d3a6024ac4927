#include "mrbsde/reference.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mrbsde/errors.hpp"

namespace mrbsde {

void CounterexampleSpec::validate() const {
  if (!(gamma > 0.0)) throw InvalidArgument("counterexample needs gamma > 0");
  if (!(T > 0.0)) throw InvalidArgument("counterexample needs T > 0");
  if (!(u < mean_xi && mean_xi < u + gamma * T))
    throw InvalidArgument("counterexample needs u < E[xi] < u + gamma T");
}

double CounterexampleSpec::t_star() const { return T - (mean_xi - u) / gamma; }

SkorokhodCurves linear_closed_form(const DeterministicCurve& x, const DeterministicCurve& u) {
  if (x.size() != u.size() || x.size() == 0) throw InvalidArgument("curves must share a non-empty grid");
  const std::size_t n = x.size();
  std::vector<double> R(n);
  R[n - 1] = linear_push(x[n - 1], u[n - 1]);
  for (std::size_t i = n - 1; i > 0; --i) R[i - 1] = std::max(linear_push(x[i - 1], u[i - 1]), R[i]);
  SkorokhodCurves out{DeterministicCurve{std::vector<double>(n)},
                      Compensator{DeterministicCurve{std::vector<double>(n)}}};
  for (std::size_t i = 0; i < n; ++i) {
    out.K.K.values[i] = R[0] - R[i];
    out.y.values[i] = x[i] + R[i];
  }
  return out;
}

CounterexampleCurves counterexample_solution(const CounterexampleSpec& spec, const TimeGrid& grid) {
  spec.validate();
  if (std::abs(grid.horizon() - spec.T) > 1e-12 * spec.T)
    throw InvalidArgument("grid horizon differs from the counterexample horizon");
  CounterexampleCurves out;
  out.t_star = spec.t_star();
  out.mean_y.values.resize(grid.size());
  out.K.K.values.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    const double unconstrained = spec.mean_xi - spec.gamma * (spec.T - t);
    out.mean_y.values[i] = unconstrained + std::max(0.0, spec.u - unconstrained);
    out.K.K.values[i] = spec.gamma * std::min(t, out.t_star);
  }
  const auto& times = grid.times();
  const auto it = std::upper_bound(times.begin(), times.end(), out.t_star);
  out.cell = std::min<std::size_t>(static_cast<std::size_t>(it - times.begin()) - 1, grid.steps() - 1);
  return out;
}

DeterministicCurve integrate_rate(const DeterministicCurve& rate, const TimeGrid& grid) {
  if (rate.size() != grid.size()) throw InvalidArgument("rate curve is not grid-aligned");
  DeterministicCurve out{std::vector<double>(grid.size(), 0.0)};
  for (std::size_t i = 0; i < grid.steps(); ++i) out.values[i + 1] = out.values[i] + rate[i] * grid.dt(i);
  return out;
}

namespace {

// Exponent at time t: exact at grid instants, linear in between.
double exponent_at(const std::vector<double>& times, const std::vector<double>& C, double t) {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.end()) return C.back();
  const auto j = static_cast<std::size_t>(it - times.begin());
  if (*it == t || j == 0) return C[j];
  const double w = (t - times[j - 1]) / (times[j] - times[j - 1]);
  return (1.0 - w) * C[j - 1] + w * C[j];
}

}  // namespace

DiscountedScenario discount_transform(std::span<const double> xi, const DriverSpec& driver,
                                      const LossSpec& loss, const TimeGrid& grid,
                                      const DeterministicCurve& rate) {
  const auto* lin = std::get_if<DriverSpec::LinearInY>(&driver.family);
  if (!lin) throw InvalidArgument("discounting needs a driver of the form a_t y + h(t, z)");
  if (lin->a.size() != grid.size()) throw InvalidArgument("driver rate a is not grid-aligned");
  DeterministicCurve C = integrate_rate(rate, grid);

  std::vector<double> xi_out(xi.begin(), xi.end());
  const double growth_T = std::exp(C.values.back());
  for (double& v : xi_out) v *= growth_T;

  DeterministicCurve a_out{std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) a_out.values[i] = lin->a[i] - rate[i];
  auto h = lin->h;
  auto times = grid.times();
  auto h_out = [h, times, Cv = C.values](double t, std::span<const double> z) {
    const double c = exponent_at(times, Cv, t);
    const double up = std::exp(c), down = std::exp(-c);
    std::vector<double> scaled(z.begin(), z.end());
    for (double& v : scaled) v *= down;
    return up * h(t, scaled);
  };
  const double h_lipschitz = std::max(0.0, driver.lipschitz - lin->a.max_abs());
  DriverSpec driver_out = DriverSpec::linear_in_y(a_out, h_out, h_lipschitz + a_out.max_abs());

  DeterministicCurve factor{std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) factor.values[i] = std::exp(-C[i]);
  const auto [fmin, fmax] = std::minmax_element(factor.values.begin(), factor.values.end());
  std::optional<BiLipschitz> bilip;
  if (loss.bilipschitz()) bilip = BiLipschitz{loss.bilipschitz()->lower * *fmin, loss.bilipschitz()->upper * *fmax};
  LossSpec loss_out(RescaledLoss{std::make_shared<const LossSpec>(loss), factor}, bilip,
                    loss.growth() * std::max(1.0, *fmax));

  return DiscountedScenario{std::move(xi_out), std::move(driver_out), std::move(loss_out), std::move(C)};
}

DiscountedScenario discount_transform(std::span<const double> xi, const DriverSpec& driver,
                                      const LossSpec& loss, const TimeGrid& grid) {
  const auto* lin = std::get_if<DriverSpec::LinearInY>(&driver.family);
  if (!lin) throw InvalidArgument("discounting needs a driver of the form a_t y + h(t, z)");
  return discount_transform(xi, driver, loss, grid, lin->a);
}

SolutionTriple undiscount(const SolutionTriple& discounted, const DeterministicCurve& exponent) {
  const TimeGrid& grid = discounted.Y.grid();
  if (exponent.size() != grid.size()) throw InvalidArgument("exponent curve is not grid-aligned");
  SolutionTriple out = discounted;
  const std::size_t d = out.Z.dim();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double down = std::exp(-exponent[i]);
    for (double& v : out.Y.slice(i)) v *= down;
    for (std::size_t k = 0; k < d; ++k)
      for (double& v : out.Z.slice(i, k)) v *= down;
  }
  auto& K = out.K.K.values;
  K[0] = 0.0;
  for (std::size_t i = 0; i < grid.steps(); ++i)
    K[i + 1] = K[i] + std::exp(-exponent[i]) * (discounted.K.K[i + 1] - discounted.K.K[i]);
  return out;
}

}  // namespace mrbsde
