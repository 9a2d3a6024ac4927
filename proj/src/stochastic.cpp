#include "mrbsde/stochastic.hpp"

#include <array>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "mrbsde/errors.hpp"

namespace mrbsde {

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  for (std::size_t i = 0; i + 1 < times_.size(); ++i)
    max_step_ = std::max(max_step_, times_[i + 1] - times_[i]);
}

TimeGrid TimeGrid::from_times(std::vector<double> times) {
  if (times.size() < 2) throw InvalidArgument("time grid needs at least two instants");
  if (times.front() != 0.0) throw InvalidArgument("time grid must start at 0");
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    if (!std::isfinite(times[i + 1]) || !(times[i + 1] > times[i]))
      throw InvalidArgument("time grid must be finite and strictly increasing");
  }
  return TimeGrid(std::move(times));
}

TimeGrid build_grid(double horizon, std::size_t steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw InvalidArgument("horizon T must be positive and finite");
  if (steps < 1) throw InvalidArgument("number of steps M must be at least 1");
  std::vector<double> times(steps + 1);
  const double h = horizon / static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) times[i] = h * static_cast<double>(i);
  times[steps] = horizon;
  return TimeGrid::from_times(std::move(times));
}

ScalarEnsemble::ScalarEnsemble(TimeGrid grid, std::size_t n_paths, double fill)
    : grid_(std::move(grid)), n_paths_(n_paths), values_(grid_.size() * n_paths, fill) {}

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t n_paths, std::size_t dim,
                           std::uint64_t seed)
    : grid_(std::move(grid)),
      n_paths_(n_paths),
      dim_(dim),
      seed_(seed),
      values_(grid_.size() * dim * n_paths, 0.0) {}

std::vector<std::span<const double>> PathEnsemble::state(std::size_t i) const {
  std::vector<std::span<const double>> out;
  out.reserve(dim_);
  for (std::size_t k = 0; k < dim_; ++k) out.push_back(slice(i, k));
  return out;
}

std::vector<double> PathEnsemble::increment(std::size_t i, std::size_t k) const {
  auto from = slice(i, k);
  auto to = slice(i + 1, k);
  std::vector<double> out(n_paths_);
  for (std::size_t p = 0; p < n_paths_; ++p) out[p] = to[p] - from[p];
  return out;
}

namespace {

// Philox4x32-10 (Salmon et al., SC'11).
using Counter = std::array<std::uint32_t, 4>;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t prod = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(prod >> 32);
  lo = static_cast<std::uint32_t>(prod);
}

Counter philox4x32(Counter ctr, std::uint64_t key64) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  std::uint32_t k0 = static_cast<std::uint32_t>(key64);
  std::uint32_t k1 = static_cast<std::uint32_t>(key64 >> 32);
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, ctr[0], hi0, lo0);
    mulhilo(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += kW0;
    k1 += kW1;
  }
  return ctr;
}

// Open interval (0, 1).
inline double unit_open(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

double gaussian_at(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t dim) {
  const Counter ctr{static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(dim),
                    static_cast<std::uint32_t>(path >> 32) ^
                        (static_cast<std::uint32_t>(step >> 32) << 16)};
  const Counter r = philox4x32(ctr, seed);
  const double u1 = unit_open(r[0], r[1]);
  const double u2 = unit_open(r[2], r[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

PathEnsemble simulate_brownian(const TimeGrid& grid, std::size_t n_paths, std::size_t dim,
                               std::uint64_t seed) {
  if (n_paths < 2) throw InvalidArgument("n_paths must be at least 2");
  if (dim < 1) throw InvalidArgument("dimension must be at least 1");
  PathEnsemble out(grid, n_paths, dim, seed);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double sd = std::sqrt(grid.dt(i));
    for (std::size_t k = 0; k < dim; ++k) {
      auto from = out.slice(i, k);
      auto to = out.slice(i + 1, k);
      for (std::size_t p = 0; p < n_paths; ++p) to[p] = from[p] + sd * gaussian_at(seed, p, i, k);
    }
  }
  return out;
}

PathEnsemble subsample(const PathEnsemble& fine, std::size_t stride) {
  const std::size_t steps = fine.grid().steps();
  if (stride == 0 || steps % stride != 0)
    throw InvalidArgument("subsample stride must divide the number of steps");
  std::vector<double> times;
  for (std::size_t i = 0; i <= steps; i += stride) times.push_back(fine.grid()[i]);
  PathEnsemble out(TimeGrid::from_times(std::move(times)), fine.n_paths(), fine.dim(),
                   fine.seed());
  for (std::size_t j = 0; j < out.grid().size(); ++j)
    for (std::size_t k = 0; k < fine.dim(); ++k) {
      auto src = fine.slice(j * stride, k);
      auto dst = out.slice(j, k);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  return out;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of an empty sample");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double variance(std::span<const double> values) {
  const double m = mean(values);
  double sum = 0.0;
  for (double v : values) sum += (v - m) * (v - m);
  return sum / static_cast<double>(values.size());
}

double empirical_mean(const ScalarEnsemble& x, std::size_t i) {
  if (i >= x.grid().size()) throw InvalidArgument("time index out of range");
  return mean(x.slice(i));
}

void write_csv(std::ostream& out, const PathEnsemble& ensemble) {
  const auto old_precision = out.precision(17);
  out << "path,time,dim,value\n";
  for (std::size_t p = 0; p < ensemble.n_paths(); ++p)
    for (std::size_t i = 0; i < ensemble.grid().size(); ++i)
      for (std::size_t k = 0; k < ensemble.dim(); ++k)
        out << p << ',' << ensemble.grid()[i] << ',' << k << ',' << ensemble(p, i, k) << '\n';
  out.precision(old_precision);
}

}  // namespace mrbsde
