#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace mrbsde {

/// Discretized horizon [0, T]. Strictly increasing, starts at 0.
class TimeGrid {
 public:
  TimeGrid() = default;
  /// Accepts any strictly increasing list starting at 0 (non-uniform grids allowed).
  static TimeGrid from_times(std::vector<double> times);

  std::size_t size() const noexcept { return times_.size(); }
  std::size_t steps() const noexcept { return times_.empty() ? 0 : times_.size() - 1; }
  double operator[](std::size_t i) const { return times_[i]; }
  double horizon() const { return times_.back(); }
  double dt(std::size_t i) const { return times_[i + 1] - times_[i]; }
  double max_step() const noexcept { return max_step_; }
  const std::vector<double>& times() const noexcept { return times_; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  explicit TimeGrid(std::vector<double> times);
  std::vector<double> times_;
  double max_step_ = 0.0;
};

/// Uniform grid with step T/M.
TimeGrid build_grid(double horizon, std::size_t steps);

/// Per-path, per-time reals. Storage is time-major so that a cross-section at one
/// time index is contiguous.
class ScalarEnsemble {
 public:
  ScalarEnsemble() = default;
  ScalarEnsemble(TimeGrid grid, std::size_t n_paths, double fill = 0.0);

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t n_paths() const noexcept { return n_paths_; }

  double& operator()(std::size_t path, std::size_t i) { return values_[i * n_paths_ + path]; }
  double operator()(std::size_t path, std::size_t i) const { return values_[i * n_paths_ + path]; }

  std::span<double> slice(std::size_t i) { return {values_.data() + i * n_paths_, n_paths_}; }
  std::span<const double> slice(std::size_t i) const {
    return {values_.data() + i * n_paths_, n_paths_};
  }
  const std::vector<double>& values() const noexcept { return values_; }

  friend bool operator==(const ScalarEnsemble&, const ScalarEnsemble&) = default;

 private:
  TimeGrid grid_;
  std::size_t n_paths_ = 0;
  std::vector<double> values_;
};

/// Per-path, per-time, per-dimension reals. Used both for Brownian samples and for
/// vector-valued processes such as Z.
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::size_t n_paths, std::size_t dim, std::uint64_t seed = 0);

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t n_paths() const noexcept { return n_paths_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }

  double& operator()(std::size_t path, std::size_t i, std::size_t k) {
    return values_[(i * dim_ + k) * n_paths_ + path];
  }
  double operator()(std::size_t path, std::size_t i, std::size_t k) const {
    return values_[(i * dim_ + k) * n_paths_ + path];
  }

  /// Cross-section of coordinate k at time index i, over all paths.
  std::span<double> slice(std::size_t i, std::size_t k) {
    return {values_.data() + (i * dim_ + k) * n_paths_, n_paths_};
  }
  std::span<const double> slice(std::size_t i, std::size_t k) const {
    return {values_.data() + (i * dim_ + k) * n_paths_, n_paths_};
  }
  /// All coordinates at time index i.
  std::vector<std::span<const double>> state(std::size_t i) const;
  /// Increment of coordinate k over [t_i, t_{i+1}].
  std::vector<double> increment(std::size_t i, std::size_t k) const;

  const std::vector<double>& values() const noexcept { return values_; }

  friend bool operator==(const PathEnsemble&, const PathEnsemble&) = default;

 private:
  TimeGrid grid_;
  std::size_t n_paths_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> values_;
};

/// Standard normal draw addressed by (seed, path, step, dim). The mapping is a pure
/// function of its arguments, so generation order never affects the values.
double gaussian_at(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t dim);

/// d-dimensional Brownian paths on the grid. Requires n_paths >= 2 and dim >= 1.
PathEnsemble simulate_brownian(const TimeGrid& grid, std::size_t n_paths, std::size_t dim,
                               std::uint64_t seed);

/// Keep every `stride`-th grid instant (stride must divide the number of steps).
PathEnsemble subsample(const PathEnsemble& fine, std::size_t stride);

double empirical_mean(const ScalarEnsemble& x, std::size_t i);
double mean(std::span<const double> values);
double variance(std::span<const double> values);

/// Debug dump: one row per (path, time, dim). Not a stable interchange format.
void write_csv(std::ostream& out, const PathEnsemble& ensemble);

}  // namespace mrbsde
