#include "mrbsde/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mrbsde/errors.hpp"

namespace mrbsde {

DeterministicCurve DeterministicCurve::constant(const TimeGrid& grid, double value) {
  return {std::vector<double>(grid.size(), value)};
}

DeterministicCurve DeterministicCurve::ramp(const TimeGrid& grid, double start, double end) {
  DeterministicCurve c{std::vector<double>(grid.size())};
  const double horizon = grid.horizon();
  for (std::size_t i = 0; i < grid.size(); ++i) c.values[i] = start + (end - start) * grid[i] / horizon;
  return c;
}

DeterministicCurve DeterministicCurve::nodes(const TimeGrid& grid,
                                             const std::vector<std::pair<double, double>>& points) {
  if (points.empty()) throw InvalidArgument("piecewise curve needs at least one node");
  for (std::size_t j = 0; j + 1 < points.size(); ++j)
    if (!(points[j + 1].first > points[j].first))
      throw InvalidArgument("piecewise curve nodes must have increasing times");
  DeterministicCurve c{std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    if (t <= points.front().first) {
      c.values[i] = points.front().second;
    } else if (t >= points.back().first) {
      c.values[i] = points.back().second;
    } else {
      auto hi = std::upper_bound(points.begin(), points.end(), t,
                                 [](double x, const auto& node) { return x < node.first; });
      auto lo = hi - 1;
      const double w = (t - lo->first) / (hi->first - lo->first);
      c.values[i] = lo->second + w * (hi->second - lo->second);
    }
  }
  return c;
}

double DeterministicCurve::max_abs() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double DeterministicCurve::max_jump() const {
  double m = 0.0;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) m = std::max(m, std::abs(values[i + 1] - values[i]));
  return m;
}

void DeterministicCurve::validate(const TimeGrid& grid, std::optional<double> modulus) const {
  if (values.size() != grid.size()) {
    std::ostringstream msg;
    msg << "curve has " << values.size() << " values but the grid has " << grid.size() << " instants";
    throw InvalidArgument(msg.str());
  }
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidArgument("curve contains a non-finite value");
  if (modulus && max_jump() > *modulus)
    throw InvalidArgument("curve jumps exceed the declared continuity modulus");
}

UtilityLoss UtilityLoss::identity(DeterministicCurve u) {
  return {"identity", [](double y) { return y; }, std::move(u)};
}

UtilityLoss UtilityLoss::affine(double slope, DeterministicCurve u) {
  if (!(slope > 0.0)) throw InvalidArgument("affine utility needs a positive slope");
  return {"affine", [slope](double y) { return slope * y; }, std::move(u)};
}

UtilityLoss UtilityLoss::kinked(double kappa, DeterministicCurve u) {
  if (!(kappa >= 1.0)) throw InvalidArgument("kinked utility needs kappa >= 1");
  return {"kinked", [kappa](double y) { return y >= 0.0 ? y : kappa * y; }, std::move(u)};
}

LossSpec::LossSpec(Kind kind, std::optional<BiLipschitz> bilipschitz, double growth)
    : kind_(std::move(kind)), bilipschitz_(bilipschitz), growth_(growth) {
  if (bilipschitz_ && !(bilipschitz_->lower > 0.0 && bilipschitz_->lower <= bilipschitz_->upper))
    throw InvalidArgument("bi-Lipschitz constants need 0 < c_l <= C_l");
  if (auto* tab = std::get_if<TabulatedLoss>(&kind_)) {
    if (tab->y_nodes.size() < 2 || tab->y_nodes.size() != tab->values.size())
      throw InvalidArgument("tabulated loss needs at least two matching (y, value) nodes");
    for (std::size_t j = 0; j + 1 < tab->y_nodes.size(); ++j)
      if (!(tab->y_nodes[j + 1] > tab->y_nodes[j]))
        throw InvalidArgument("tabulated loss nodes must be strictly increasing in y");
  }
  if (auto* ind = std::get_if<SmoothedIndicatorLoss>(&kind_); ind && !(ind->width > 0.0))
    throw InvalidArgument("smoothed indicator needs a positive width");
  if (auto* res = std::get_if<RescaledLoss>(&kind_); res && !res->base)
    throw InvalidArgument("rescaled loss needs a base loss");
}

LossSpec LossSpec::linear(DeterministicCurve u) {
  return LossSpec(LinearLoss{std::move(u)}, BiLipschitz{1.0, 1.0});
}

const DeterministicCurve* LossSpec::benchmark() const {
  return std::visit(
      [](const auto& k) -> const DeterministicCurve* {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, TabulatedLoss>) {
          return nullptr;
        } else if constexpr (std::is_same_v<K, RescaledLoss>) {
          return k.base->benchmark();
        } else {
          return &k.u;
        }
      },
      kind_);
}

namespace {

double tabulated(const TabulatedLoss& tab, double y) {
  const auto& xs = tab.y_nodes;
  const auto& vs = tab.values;
  std::size_t j;
  if (y <= xs.front()) {
    j = 0;
  } else if (y >= xs.back()) {
    j = xs.size() - 2;
  } else {
    j = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), y) - xs.begin()) - 1;
  }
  const double slope = (vs[j + 1] - vs[j]) / (xs[j + 1] - xs[j]);
  return vs[j] + slope * (y - xs[j]);
}

}  // namespace

double LossSpec::operator()(std::size_t i, double y) const {
  return std::visit(
      [i, y](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, LinearLoss>) {
          return y - k.u[i];
        } else if constexpr (std::is_same_v<K, SmoothedIndicatorLoss>) {
          return 1.0 / (1.0 + std::exp(-(y - k.u[i]) / k.width)) - k.v[i];
        } else if constexpr (std::is_same_v<K, UtilityLoss>) {
          return k.utility(y) - k.u[i];
        } else if constexpr (std::is_same_v<K, TabulatedLoss>) {
          return tabulated(k, y);
        } else {
          return (*k.base)(i, k.factor[i] * y);
        }
      },
      kind_);
}

double eval_loss(const LossSpec& loss, std::size_t i, double y) { return loss(i, y); }

namespace {

std::pair<double, double> probe_window(const LossSpec& loss, std::size_t i) {
  return std::visit(
      [&](const auto& k) -> std::pair<double, double> {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, SmoothedIndicatorLoss>) {
          return {k.u[i] - 20.0 * k.width, k.u[i] + 20.0 * k.width};
        } else if constexpr (std::is_same_v<K, TabulatedLoss>) {
          const double span = k.y_nodes.back() - k.y_nodes.front();
          return {k.y_nodes.front() - span, k.y_nodes.back() + span};
        } else if constexpr (std::is_same_v<K, RescaledLoss>) {
          auto [lo, hi] = probe_window(*k.base, i);
          const double f = k.factor[i];
          return {std::min(lo / f, hi / f), std::max(lo / f, hi / f)};
        } else {
          const double c = k.u[i];
          const double half = 10.0 * (1.0 + std::abs(c));
          return {c - half, c + half};
        }
      },
      loss.kind());
}

}  // namespace

LossProbeReport probe_loss(const LossSpec& loss, std::size_t grid_size) {
  constexpr int kLadder = 64;
  constexpr double kSlack = 1e-9;
  LossProbeReport report;
  std::ostringstream msg;
  for (std::size_t i = 0; i < grid_size; ++i) {
    const auto [lo, hi] = probe_window(loss, i);
    std::vector<double> ys(kLadder), ls(kLadder);
    for (int j = 0; j < kLadder; ++j) {
      ys[j] = lo + (hi - lo) * j / (kLadder - 1);
      ls[j] = loss(i, ys[j]);
    }
    for (int j = 0; j + 1 < kLadder; ++j) {
      if (!(ls[j + 1] > ls[j]) && report.strictly_increasing) {
        report.strictly_increasing = false;
        msg << "not strictly increasing at t-index " << i << " near y=" << ys[j] << "; ";
      }
    }
    if (loss.growth() > 0.0) {
      for (int j = 0; j < kLadder; ++j) {
        if (std::abs(ls[j]) > loss.growth() * (1.0 + std::abs(ys[j])) * (1.0 + kSlack) &&
            report.growth_ok) {
          report.growth_ok = false;
          msg << "growth bound exceeded at t-index " << i << " y=" << ys[j] << "; ";
        }
      }
    }
    if (loss.bilipschitz()) {
      const auto [c_lo, c_hi] = *loss.bilipschitz();
      for (int a = 0; a < kLadder; ++a)
        for (int b = a + 1; b < kLadder; ++b) {
          const double dy = ys[b] - ys[a];
          const double dl = std::abs(ls[b] - ls[a]);
          if ((dl < c_lo * dy * (1.0 - kSlack) || dl > c_hi * dy * (1.0 + kSlack)) &&
              report.bilipschitz_ok) {
            report.bilipschitz_ok = false;
            msg << "bi-Lipschitz bounds violated at t-index " << i << "; ";
          }
        }
    }
  }
  report.message = msg.str();
  return report;
}

double linear_push(double mean_value, double benchmark) {
  if (mean_value >= benchmark) return 0.0;
  double d = benchmark - mean_value;
  while (mean_value + d < benchmark) d = std::nextafter(d, std::numeric_limits<double>::infinity());
  return d;
}

namespace {

double mean_shifted_loss(const LossSpec& loss, std::size_t i, std::span<const double> samples,
                         double shift) {
  double sum = 0.0;
  for (double s : samples) sum += loss(i, shift + s);
  return sum / static_cast<double>(samples.size());
}

}  // namespace

double l_operator(const LossSpec& loss, std::size_t i, std::span<const double> samples,
                  const PushOptions& opts) {
  if (samples.empty()) throw InvalidArgument("push operator needs samples");
  if (const auto* lin = std::get_if<LinearLoss>(&loss.kind())) return linear_push(mean(samples), lin->u[i]);
  if (const auto* res = std::get_if<RescaledLoss>(&loss.kind())) {
    if (const auto* lin = std::get_if<LinearLoss>(&res->base->kind()))
      return linear_push(mean(samples), lin->u[i] / res->factor[i]);
  }

  if (mean_shifted_loss(loss, i, samples, 0.0) >= 0.0) return 0.0;
  double scale = 0.0;
  for (double s : samples) scale = std::max(scale, std::abs(s));
  const double tol = opts.tol_scale * (1.0 + scale);

  double lo = 0.0, hi = 1.0;
  int doublings = 0;
  while (mean_shifted_loss(loss, i, samples, hi) < 0.0) {
    if (++doublings > opts.max_doublings) {
      std::ostringstream msg;
      msg << "no finite push satisfies the constraint at t-index " << i << " (bracket reached "
          << hi << ")";
      throw UnsatisfiableConstraint(msg.str());
    }
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (mean_shifted_loss(loss, i, samples, mid) >= 0.0)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

double es_value(std::span<const double> samples, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("ES level alpha must lie in (0, 1)");
  if (samples.empty()) throw InvalidArgument("ES of an empty sample");
  std::vector<double> losses(samples.size());
  for (std::size_t p = 0; p < samples.size(); ++p) losses[p] = -samples[p];
  std::sort(losses.begin(), losses.end(), std::greater<>());
  const double tail = alpha * static_cast<double>(losses.size());
  const auto whole = static_cast<std::size_t>(std::floor(tail));
  double sum = 0.0;
  for (std::size_t j = 0; j < whole; ++j) sum += losses[j];
  if (whole < losses.size()) sum += (tail - static_cast<double>(whole)) * losses[whole];
  return sum / tail;
}

double risk_push(const RiskSpec& risk, std::size_t i, std::span<const double> samples) {
  return std::max(0.0, es_value(samples, risk.alpha[i]) - risk.q[i]);
}

double push(const Constraint& constraint, std::size_t i, std::span<const double> samples,
            const PushOptions& opts) {
  if (const auto* loss = std::get_if<LossSpec>(&constraint)) return l_operator(*loss, i, samples, opts);
  return risk_push(std::get<RiskSpec>(constraint), i, samples);
}

double constraint_slack(const Constraint& constraint, std::size_t i, std::span<const double> samples) {
  if (const auto* loss = std::get_if<LossSpec>(&constraint))
    return mean_shifted_loss(*loss, i, samples, 0.0);
  const auto& risk = std::get<RiskSpec>(constraint);
  return risk.q[i] - es_value(samples, risk.alpha[i]);
}

TerminalCheck check_terminal(const Constraint& constraint, std::size_t terminal_index,
                             std::span<const double> xi, double tol_c) {
  TerminalCheck out;
  out.slack = constraint_slack(constraint, terminal_index, xi);
  out.ok = out.slack >= -tol_c;
  out.gap = out.slack < 0.0 ? push(constraint, terminal_index, xi) : 0.0;
  return out;
}

double lipschitz_ratio_probe(
    const LossSpec& loss, std::size_t i,
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs,
    const PushOptions& opts) {
  double worst = 0.0;
  for (const auto& [x, y] : pairs) {
    if (x.size() != y.size()) throw InvalidArgument("probe pair has mismatched sample sizes");
    double dist = 0.0;
    for (std::size_t p = 0; p < x.size(); ++p) dist += std::abs(x[p] - y[p]);
    dist /= static_cast<double>(x.size());
    if (dist == 0.0) continue;
    const double dl = std::abs(l_operator(loss, i, x, opts) - l_operator(loss, i, y, opts));
    worst = std::max(worst, dl / dist);
  }
  return worst;
}

}  // namespace mrbsde
