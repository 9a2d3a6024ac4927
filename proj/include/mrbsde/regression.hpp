#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "mrbsde/stochastic.hpp"

namespace mrbsde {

struct BasisSpec {
  enum class Kind { Polynomial, Partition };
  Kind kind = Kind::Polynomial;
  // Total degree for polynomials, number of equiprobable cells for partitions.
  int order = 2;

  static BasisSpec polynomial(int degree) { return {Kind::Polynomial, degree}; }
  static BasisSpec partition(int cells) { return {Kind::Partition, cells}; }
  void validate() const;
};

/// Least-squares projection onto functions of the current state.
///
/// The design is factorized once per state cross-section, so several targets sharing
/// the same state (Y and the d products used for Z) reuse one solve. Polynomial bases
/// are built on standardized coordinates; the intercept is handled by centering, which
/// makes constants reproduce exactly and keeps the projection linear in the target.
/// Partition bases cut the first coordinate into equiprobable cells, with tied values
/// always landing in the same cell.
class ConditionalExpectation {
 public:
  ConditionalExpectation(const std::vector<std::span<const double>>& state, const BasisSpec& basis);

  std::size_t n_paths() const noexcept { return n_paths_; }
  /// Ridge weight applied when the normal equations were rank deficient (0 otherwise).
  double ridge_weight() const noexcept { return ridge_; }
  bool rank_deficient() const noexcept { return ridge_ > 0.0; }

  void project(std::span<const double> target, std::span<double> out) const;
  std::vector<double> project(std::span<const double> target) const;

 private:
  void build_polynomial(const std::vector<std::span<const double>>& state, int degree);
  void build_partition(std::span<const double> first, int cells);

  BasisSpec basis_;
  std::size_t n_paths_ = 0;
  // Polynomial: centered non-constant basis columns.
  Eigen::MatrixXd design_;
  Eigen::MatrixXd gram_inverse_;
  double ridge_ = 0.0;
  // Partition: cell id per path.
  std::vector<std::size_t> cell_;
  std::size_t n_cells_ = 0;
};

/// E[target | state at t_i] evaluated per path.
std::vector<double> condexp(std::span<const double> target, const PathEnsemble& paths,
                            std::size_t i, const BasisSpec& basis);

/// Martingale-representation integrand over [t_i, t_{i+1}]: component k is
/// E[(y_next - E[y_next|F_i]) dB_k | F_i] / dt. Centering y_next leaves the conditional
/// expectation unchanged and removes the noise a constant target would otherwise leak.
/// Output layout is [k * n_paths + p].
std::vector<double> extract_z(std::span<const double> y_next,
                              const std::vector<std::vector<double>>& increments, double dt,
                              const ConditionalExpectation& projector);

std::vector<double> extract_z(std::span<const double> y_next, const PathEnsemble& paths,
                              std::size_t i, const BasisSpec& basis);

}  // namespace mrbsde
