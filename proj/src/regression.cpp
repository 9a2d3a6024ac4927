#include "mrbsde/regression.hpp"

#include <algorithm>
#include <cmath>

#include "mrbsde/errors.hpp"

namespace mrbsde {

void BasisSpec::validate() const {
  if (kind == Kind::Polynomial && order < 0)
    throw InvalidArgument("polynomial basis degree must be >= 0");
  if (kind == Kind::Partition && order < 1)
    throw InvalidArgument("partition basis needs at least one cell");
}

namespace {

// Multi-indices of total degree 1..degree over `dim` coordinates.
void multi_indices(std::size_t dim, int degree, std::vector<std::vector<int>>& out) {
  std::vector<int> current(dim, 0);
  auto recurse = [&](auto&& self, std::size_t k, int remaining) -> void {
    if (k == dim) {
      int total = 0;
      for (int e : current) total += e;
      if (total > 0) out.push_back(current);
      return;
    }
    for (int e = 0; e <= remaining; ++e) {
      current[k] = e;
      self(self, k + 1, remaining - e);
    }
    current[k] = 0;
  };
  recurse(recurse, 0, degree);
}

}  // namespace

ConditionalExpectation::ConditionalExpectation(const std::vector<std::span<const double>>& state,
                                               const BasisSpec& basis)
    : basis_(basis) {
  basis.validate();
  if (state.empty()) throw InvalidArgument("regression state has no coordinates");
  n_paths_ = state.front().size();
  for (const auto& s : state)
    if (s.size() != n_paths_) throw InvalidArgument("state coordinates differ in length");
  if (n_paths_ == 0) throw InvalidArgument("regression needs at least one path");
  if (basis.kind == BasisSpec::Kind::Polynomial)
    build_polynomial(state, basis.order);
  else
    build_partition(state.front(), basis.order);
}

void ConditionalExpectation::build_polynomial(const std::vector<std::span<const double>>& state,
                                              int degree) {
  const auto n = static_cast<double>(n_paths_);
  // Standardize and drop coordinates without spread (e.g. the Brownian state at t = 0).
  std::vector<std::vector<double>> coords;
  for (const auto& s : state) {
    const double m = mean(s);
    const double sd = std::sqrt(variance(s));
    if (!(sd > 0.0)) continue;
    std::vector<double> z(n_paths_);
    for (std::size_t p = 0; p < n_paths_; ++p) z[p] = (s[p] - m) / sd;
    coords.push_back(std::move(z));
  }
  std::vector<std::vector<int>> exponents;
  if (!coords.empty() && degree > 0) multi_indices(coords.size(), degree, exponents);
  const auto q = static_cast<Eigen::Index>(exponents.size());
  design_.resize(static_cast<Eigen::Index>(n_paths_), q);
  for (Eigen::Index j = 0; j < q; ++j) {
    const auto& e = exponents[static_cast<std::size_t>(j)];
    double col_mean = 0.0;
    for (std::size_t p = 0; p < n_paths_; ++p) {
      double v = 1.0;
      for (std::size_t k = 0; k < coords.size(); ++k)
        for (int r = 0; r < e[k]; ++r) v *= coords[k][p];
      design_(static_cast<Eigen::Index>(p), j) = v;
      col_mean += v;
    }
    col_mean /= n;
    design_.col(j).array() -= col_mean;
  }
  if (q == 0) return;

  Eigen::MatrixXd gram = (design_.transpose() * design_) / n;
  const double trace_scale = gram.trace() / static_cast<double>(q);
  if (!(trace_scale > 0.0)) {
    design_.resize(static_cast<Eigen::Index>(n_paths_), 0);
    return;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  bool deficient = llt.info() != Eigen::Success;
  if (!deficient) {
    const Eigen::VectorXd diag = Eigen::MatrixXd(llt.matrixL()).diagonal();
    const double lo = diag.minCoeff(), hi = diag.maxCoeff();
    deficient = !(lo > 0.0) || (lo * lo) / (hi * hi) < 1e-12;
  }
  if (deficient) {
    ridge_ = 1e-8 * trace_scale;
    gram.diagonal().array() += ridge_;
    llt.compute(gram);
  }
  gram_inverse_ = llt.solve(Eigen::MatrixXd::Identity(q, q));
}

void ConditionalExpectation::build_partition(std::span<const double> first, int cells) {
  std::vector<double> sorted(first.begin(), first.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  for (int j = 1; j < cells; ++j) {
    const std::size_t pos = static_cast<std::size_t>(j) * n_paths_ / static_cast<std::size_t>(cells);
    cuts.push_back(sorted[pos]);
  }
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  // A cut equal to the minimum would produce an empty first cell.
  if (!cuts.empty() && cuts.front() == sorted.front()) cuts.erase(cuts.begin());
  n_cells_ = cuts.size() + 1;
  cell_.resize(n_paths_);
  for (std::size_t p = 0; p < n_paths_; ++p)
    cell_[p] = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), first[p]) -
                                        cuts.begin());
  // Every cell is non-empty: cell 0 holds the minimum and cell j holds cuts[j-1].
}

void ConditionalExpectation::project(std::span<const double> target, std::span<double> out) const {
  if (target.size() != n_paths_ || out.size() != n_paths_)
    throw InvalidArgument("regression target and state differ in number of paths");
  if (basis_.kind == BasisSpec::Kind::Partition) {
    std::vector<double> sum(n_cells_, 0.0);
    std::vector<double> count(n_cells_, 0.0);
    for (std::size_t p = 0; p < n_paths_; ++p) {
      sum[cell_[p]] += target[p];
      count[cell_[p]] += 1.0;
    }
    for (std::size_t c = 0; c < n_cells_; ++c) sum[c] /= count[c];
    for (std::size_t p = 0; p < n_paths_; ++p) out[p] = sum[cell_[p]];
    return;
  }
  const double target_mean = mean(target);
  const Eigen::Index q = design_.cols();
  if (q == 0) {
    std::fill(out.begin(), out.end(), target_mean);
    return;
  }
  Eigen::VectorXd centered(static_cast<Eigen::Index>(n_paths_));
  for (std::size_t p = 0; p < n_paths_; ++p)
    centered(static_cast<Eigen::Index>(p)) = target[p] - target_mean;
  const Eigen::VectorXd rhs = design_.transpose() * centered / static_cast<double>(n_paths_);
  const Eigen::VectorXd beta = gram_inverse_ * rhs;
  const Eigen::VectorXd fitted = design_ * beta;
  for (std::size_t p = 0; p < n_paths_; ++p)
    out[p] = target_mean + fitted(static_cast<Eigen::Index>(p));
}

std::vector<double> ConditionalExpectation::project(std::span<const double> target) const {
  std::vector<double> out(n_paths_);
  project(target, out);
  return out;
}

std::vector<double> condexp(std::span<const double> target, const PathEnsemble& paths,
                            std::size_t i, const BasisSpec& basis) {
  if (i >= paths.grid().size()) throw InvalidArgument("time index out of range");
  return ConditionalExpectation(paths.state(i), basis).project(target);
}

std::vector<double> extract_z(std::span<const double> y_next,
                              const std::vector<std::vector<double>>& increments, double dt,
                              const ConditionalExpectation& projector) {
  if (!(dt > 0.0)) throw InvalidArgument("time step must be positive");
  const std::size_t n = projector.n_paths();
  if (y_next.size() != n) throw InvalidArgument("y_next and state differ in number of paths");
  const std::vector<double> conditional = projector.project(y_next);
  std::vector<double> product(n);
  std::vector<double> out(increments.size() * n);
  for (std::size_t k = 0; k < increments.size(); ++k) {
    if (increments[k].size() != n) throw InvalidArgument("increment length mismatch");
    for (std::size_t p = 0; p < n; ++p) product[p] = (y_next[p] - conditional[p]) * increments[k][p];
    std::span<double> zk(out.data() + k * n, n);
    projector.project(product, zk);
    for (double& v : zk) v /= dt;
  }
  return out;
}

std::vector<double> extract_z(std::span<const double> y_next, const PathEnsemble& paths,
                              std::size_t i, const BasisSpec& basis) {
  if (i + 1 >= paths.grid().size()) throw InvalidArgument("no increment after the last time index");
  ConditionalExpectation projector(paths.state(i), basis);
  std::vector<std::vector<double>> increments;
  for (std::size_t k = 0; k < paths.dim(); ++k) increments.push_back(paths.increment(i, k));
  return extract_z(y_next, increments, paths.grid().dt(i), projector);
}

}  // namespace mrbsde
