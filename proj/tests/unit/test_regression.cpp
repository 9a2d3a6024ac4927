#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mrbsde/errors.hpp"
#include "mrbsde/regression.hpp"

using namespace mrbsde;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) m = std::max(m, std::abs(a[p] - b[p]));
  return m;
}

double rms(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("constants are reproduced exactly by every basis") {
  const PathEnsemble B = simulate_brownian(build_grid(1.0, 4), 2000, 2, 3);
  const std::vector<double> seven(2000, 7.0);
  for (BasisSpec basis : {BasisSpec::polynomial(0), BasisSpec::polynomial(3), BasisSpec::partition(1),
                          BasisSpec::partition(16)}) {
    for (std::size_t i : {0u, 2u}) {
      const auto out = condexp(seven, B, i, basis);
      for (double v : out) CHECK(v == doctest::Approx(7.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("martingale projection recovers the current Brownian value") {
  const std::size_t n = 20000;
  const TimeGrid g = build_grid(1.0, 10);
  const PathEnsemble B = simulate_brownian(g, n, 1, 4);
  const std::size_t i = 5;
  const auto out = condexp(B.slice(i + 1, 0), B, i, BasisSpec::polynomial(1));
  auto bi = B.slice(i, 0);
  double max_std = 0.0;
  for (double v : bi) max_std = std::max(max_std, std::abs(v) / std::sqrt(g[i]));
  const double tol = 5.0 * std::sqrt(g.dt(i) / static_cast<double>(n)) * max_std;
  for (std::size_t p = 0; p < n; ++p) CHECK(std::abs(out[p] - bi[p]) <= tol);
}

TEST_CASE("conditional second moment adds the step variance") {
  const std::size_t n = 40000;
  const TimeGrid g = build_grid(1.0, 10);
  const PathEnsemble B = simulate_brownian(g, n, 1, 6);
  const std::size_t i = 4;
  std::vector<double> sq(n);
  for (std::size_t p = 0; p < n; ++p) sq[p] = B(p, i + 1, 0) * B(p, i + 1, 0);
  const auto out = condexp(sq, B, i, BasisSpec::polynomial(2));
  double err = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double exact = B(p, i, 0) * B(p, i, 0) + g.dt(i);
    err += std::abs(out[p] - exact);
  }
  CHECK(err / static_cast<double>(n) < 0.01);
}

TEST_CASE("zero-spread state reduces to the sample mean") {
  const PathEnsemble B = simulate_brownian(build_grid(1.0, 2), 100, 1, 1);
  const auto out = condexp(B.slice(2, 0), B, 0, BasisSpec::polynomial(3));
  const double m = mean(B.slice(2, 0));
  for (double v : out) CHECK(v == doctest::Approx(m).epsilon(1e-13));
}

TEST_CASE("Z of a constant is zero") {
  const std::size_t n = 5000;
  const TimeGrid g = build_grid(1.0, 20);
  const PathEnsemble B = simulate_brownian(g, n, 2, 12);
  const std::vector<double> c(n, 3.0);
  const auto z = extract_z(c, B, 7, BasisSpec::polynomial(2));
  const double bound = 5.0 * 3.0 / std::sqrt(static_cast<double>(n) * g.dt(7));
  for (double v : z) CHECK(std::abs(v) <= bound);
}

TEST_CASE("Z of Brownian motion is one") {
  const std::size_t n = 20000;
  const TimeGrid g = build_grid(1.0, 20);
  const PathEnsemble B = simulate_brownian(g, n, 1, 13);
  const auto z = extract_z(B.slice(11, 0), B, 10, BasisSpec::polynomial(2));
  double m = 0.0;
  for (double v : z) m += v;
  m /= static_cast<double>(n);
  CHECK(m == doctest::Approx(1.0).epsilon(0.02));
  double worst = 0.0;
  for (double v : z) worst = std::max(worst, std::abs(v - 1.0));
  CHECK(worst < 0.2);
}

TEST_CASE("Z of a target independent of the increment vanishes") {
  const std::size_t n = 20000;
  const TimeGrid g = build_grid(1.0, 20);
  const PathEnsemble B = simulate_brownian(g, n, 1, 14);
  const PathEnsemble other = simulate_brownian(g, n, 1, 15);
  const auto z = extract_z(other.slice(20, 0), B, 10, BasisSpec::polynomial(1));
  double m = 0.0;
  for (double v : z) m += v;
  m /= static_cast<double>(n);
  CHECK(std::abs(m) < 5.0 / std::sqrt(static_cast<double>(n) * g.dt(10)));
}

TEST_CASE("extract_z validates its inputs") {
  const PathEnsemble B = simulate_brownian(build_grid(1.0, 4), 10, 1, 1);
  CHECK_THROWS_AS(extract_z(B.slice(4, 0), B, 4, BasisSpec::polynomial(1)), InvalidArgument);
  const ConditionalExpectation proj(B.state(1), BasisSpec::polynomial(1));
  CHECK_THROWS_AS(extract_z(B.slice(2, 0), {B.increment(1, 0)}, 0.0, proj), InvalidArgument);
}

TEST_CASE("projection is linear in the target") {
  const std::size_t n = 3000;
  const PathEnsemble B = simulate_brownian(build_grid(1.0, 6), n, 2, 21);
  std::vector<double> x(n), y(n), combo(n);
  for (std::size_t p = 0; p < n; ++p) {
    x[p] = std::exp(B(p, 6, 0));
    y[p] = std::sin(B(p, 6, 1)) + B(p, 6, 0);
    combo[p] = 2.5 * x[p] - 1.5 * y[p];
  }
  for (BasisSpec basis : {BasisSpec::polynomial(3), BasisSpec::partition(10)}) {
    const ConditionalExpectation proj(B.state(3), basis);
    const auto px = proj.project(x), py = proj.project(y), pc = proj.project(combo);
    double worst = 0.0;
    for (std::size_t p = 0; p < n; ++p) worst = std::max(worst, std::abs(pc[p] - (2.5 * px[p] - 1.5 * py[p])));
    CHECK(worst < 1e-11);
  }
}

TEST_CASE("tower property holds for the chained regression") {
  const std::size_t n = 20000;
  const TimeGrid g = build_grid(1.0, 10);
  const PathEnsemble B = simulate_brownian(g, n, 1, 22);
  std::vector<double> xi(n);
  for (std::size_t p = 0; p < n; ++p) xi[p] = std::max(0.0, B(p, 10, 0));
  const auto inner = condexp(xi, B, 7, BasisSpec::polynomial(3));
  const auto chained = condexp(inner, B, 5, BasisSpec::polynomial(3));
  const auto direct = condexp(xi, B, 5, BasisSpec::polynomial(3));
  // Compared in empirical L2: the cubic fits disagree most in the sparse tails.
  double sq = 0.0;
  for (std::size_t p = 0; p < n; ++p) sq += (chained[p] - direct[p]) * (chained[p] - direct[p]);
  CHECK(std::sqrt(sq / static_cast<double>(n)) < 0.01);
}

TEST_CASE("projection contracts the empirical L2 norm") {
  const std::size_t n = 5000;
  const PathEnsemble B = simulate_brownian(build_grid(1.0, 4), n, 1, 23);
  std::vector<double> x(n);
  for (std::size_t p = 0; p < n; ++p) x[p] = B(p, 4, 0) * B(p, 4, 0) - std::cos(3.0 * B(p, 4, 0));
  for (BasisSpec basis : {BasisSpec::polynomial(4), BasisSpec::partition(20)}) {
    const ConditionalExpectation proj(B.state(2), basis);
    const auto px = proj.project(x);
    CHECK(rms(px) <= rms(x) * (1.0 + 1e-12) + proj.ridge_weight());
  }
}

TEST_CASE("rank deficient designs fall back to a recorded ridge") {
  // Two-valued state: a cubic basis has more columns than distinct points.
  const std::size_t n = 400;
  std::vector<double> s(n);
  for (std::size_t p = 0; p < n; ++p) s[p] = p % 2 == 0 ? -1.0 : 1.0;
  std::vector<std::span<const double>> state{s};
  const ConditionalExpectation proj(state, BasisSpec::polynomial(3));
  CHECK(proj.rank_deficient());
  CHECK(proj.ridge_weight() > 0.0);
  std::vector<double> target(n);
  for (std::size_t p = 0; p < n; ++p) target[p] = s[p] > 0 ? 5.0 : 1.0;
  const auto out = proj.project(target);
  for (std::size_t p = 0; p < n; ++p) CHECK(out[p] == doctest::Approx(target[p]).epsilon(1e-6));
}

TEST_CASE("partition cells keep tied values together") {
  std::vector<double> s{0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0};
  std::vector<std::span<const double>> state{s};
  const ConditionalExpectation proj(state, BasisSpec::partition(4));
  std::vector<double> t{1, 2, 3, 4, 10, 10, 20, 20};
  const auto out = proj.project(t);
  CHECK(out[0] == out[1]);
  CHECK(out[1] == out[2]);
  CHECK(out[2] == out[3]);
  CHECK(out[0] == doctest::Approx(2.5));
}

TEST_CASE("basis validation") {
  CHECK_THROWS_AS(BasisSpec::polynomial(-1).validate(), InvalidArgument);
  CHECK_THROWS_AS(BasisSpec::partition(0).validate(), InvalidArgument);
  CHECK_NOTHROW(BasisSpec::polynomial(0).validate());
}
