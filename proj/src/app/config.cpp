#include "mrbsde/app/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mrbsde::app {

using nlohmann::json;

namespace {

std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

const json* find(const json& obj, const std::string& key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double as_number(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(field, "must be finite");
  return x;
}

double number_or(const json& obj, const std::string& base, const std::string& key, double fallback) {
  const json* v = find(obj, key);
  return v ? as_number(*v, join(base, key)) : fallback;
}

std::size_t positive_integer(const json& v, const std::string& field) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(field, "expected an integer");
  const auto x = v.get<long long>();
  if (x < 1) throw ConfigError(field, "must be a positive integer");
  return static_cast<std::size_t>(x);
}

std::vector<double> number_list(const json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t j = 0; j < v.size(); ++j) out.push_back(as_number(v[j], field + "[" + std::to_string(j) + "]"));
  return out;
}

std::string string_field(const json& obj, const std::string& base, const std::string& key,
                         const std::string& fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(join(base, key), "expected a string");
  return v->get<std::string>();
}

const json& section(const json& doc, const std::string& key) {
  const json* v = find(doc, key);
  if (!v) throw ConfigError(key, "missing section");
  if (!v->is_object()) throw ConfigError(key, "expected an object");
  return *v;
}

CurveSpec parse_curve(const json& v, const std::string& field) {
  CurveSpec c;
  c.field = field;
  if (v.is_number()) {
    c.first = as_number(v, field);
    return c;
  }
  if (!v.is_object() || v.size() != 1) throw ConfigError(field, "curve must be a number or one of constant/ramp/nodes/values");
  const auto& [key, body] = *v.items().begin();
  if (key == "constant") {
    c.first = as_number(body, field + ".constant");
  } else if (key == "ramp") {
    const auto pair = number_list(body, field + ".ramp");
    if (pair.size() != 2) throw ConfigError(field + ".ramp", "expected [start, end]");
    c.kind = CurveSpec::Kind::Ramp;
    c.first = pair[0];
    c.second = pair[1];
  } else if (key == "nodes") {
    if (!body.is_array() || body.empty()) throw ConfigError(field + ".nodes", "expected a non-empty array of [t, value]");
    c.kind = CurveSpec::Kind::Nodes;
    for (std::size_t j = 0; j < body.size(); ++j) {
      const auto node = number_list(body[j], field + ".nodes[" + std::to_string(j) + "]");
      if (node.size() != 2) throw ConfigError(field + ".nodes[" + std::to_string(j) + "]", "expected [t, value]");
      c.nodes.emplace_back(node[0], node[1]);
    }
  } else if (key == "values") {
    c.kind = CurveSpec::Kind::Values;
    c.values = number_list(body, field + ".values");
  } else {
    throw ConfigError(field, "unknown curve form '" + key + "'");
  }
  return c;
}

CurveSpec curve_or(const json& obj, const std::string& base, const std::string& key, CurveSpec fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  return parse_curve(*v, join(base, key));
}

PayoffSpec parse_payoff(const json& t, std::size_t dim) {
  PayoffSpec p;
  const std::string recipe = string_field(t, "terminal", "recipe", "affine");
  if (recipe == "affine")
    p.kind = PayoffSpec::Kind::Affine;
  else if (recipe == "positive_part_affine")
    p.kind = PayoffSpec::Kind::PositivePartAffine;
  else if (recipe == "exponential")
    p.kind = PayoffSpec::Kind::Exponential;
  else
    throw ConfigError("terminal.recipe", "unknown payoff recipe '" + recipe + "'");
  p.intercept = number_or(t, "terminal", "intercept", 0.0);
  p.scale = number_or(t, "terminal", "scale", 1.0);
  if (const json* w = find(t, "weights")) {
    p.weights = number_list(*w, "terminal.weights");
  } else {
    p.weights.assign(dim, 0.0);
    p.weights[0] = 1.0;
  }
  if (p.weights.size() != dim) throw ConfigError("terminal.weights", "needs one weight per dimension");
  return p;
}

DriverConfig parse_driver(const json& d, std::size_t dim) {
  DriverConfig c;
  const std::string family = string_field(d, "driver", "family", "constant");
  if (family == "constant")
    c.family = DriverConfig::Family::Constant;
  else if (family == "linear_in_y")
    c.family = DriverConfig::Family::LinearInY;
  else if (family == "general")
    c.family = DriverConfig::Family::General;
  else
    throw ConfigError("driver.family", "unknown driver family '" + family + "'");
  c.value = curve_or(d, "driver", "value", c.value);
  c.a = curve_or(d, "driver", "a", c.a);
  c.y_linear = number_or(d, "driver", "y_linear", 0.0);
  c.y_sin = number_or(d, "driver", "y_sin", 0.0);
  c.z_abs = number_or(d, "driver", "z_abs", 0.0);
  if (c.z_abs < 0.0) throw ConfigError("driver.z_abs", "must be >= 0");
  if (const json* z = find(d, "z_linear")) {
    c.z_linear = number_list(*z, "driver.z_linear");
    if (c.z_linear.size() != dim) throw ConfigError("driver.z_linear", "needs one coefficient per dimension");
  } else {
    c.z_linear.assign(dim, 0.0);
  }
  const bool uses_y = c.y_linear != 0.0 || c.y_sin != 0.0;
  const bool uses_z = c.z_abs != 0.0 || std::any_of(c.z_linear.begin(), c.z_linear.end(), [](double v) { return v != 0.0; });
  if (c.family == DriverConfig::Family::Constant && (uses_y || uses_z || find(d, "a")))
    throw ConfigError("driver.family", "constant drivers take only 'value'");
  if (c.family == DriverConfig::Family::LinearInY && uses_y)
    throw ConfigError("driver.family", "linear_in_y drivers take 'a' instead of y_linear/y_sin");
  return c;
}

ConstraintConfig parse_constraint(const json& c) {
  ConstraintConfig out;
  const std::string kind = string_field(c, "constraint", "kind", "linear");
  if (kind == "linear")
    out.kind = ConstraintConfig::Kind::Linear;
  else if (kind == "smoothed_indicator")
    out.kind = ConstraintConfig::Kind::SmoothedIndicator;
  else if (kind == "utility")
    out.kind = ConstraintConfig::Kind::Utility;
  else if (kind == "tabulated")
    out.kind = ConstraintConfig::Kind::Tabulated;
  else if (kind == "expected_shortfall")
    out.kind = ConstraintConfig::Kind::ExpectedShortfall;
  else
    throw ConfigError("constraint.kind", "unknown constraint kind '" + kind + "'");
  out.u = curve_or(c, "constraint", "u", out.u);
  out.v = curve_or(c, "constraint", "v", out.v);
  out.alpha = curve_or(c, "constraint", "alpha", out.alpha);
  out.q = curve_or(c, "constraint", "q", out.q);
  out.width = number_or(c, "constraint", "width", out.width);
  out.utility = string_field(c, "constraint", "utility", out.utility);
  out.slope = number_or(c, "constraint", "slope", out.slope);
  out.kappa = number_or(c, "constraint", "kappa", out.kappa);
  out.growth = number_or(c, "constraint", "growth", 0.0);
  if (const json* y = find(c, "y_nodes")) out.y_nodes = number_list(*y, "constraint.y_nodes");
  if (const json* v = find(c, "node_values")) out.node_values = number_list(*v, "constraint.node_values");
  if (const json* b = find(c, "bilipschitz")) {
    const auto pair = number_list(*b, "constraint.bilipschitz");
    if (pair.size() != 2) throw ConfigError("constraint.bilipschitz", "expected [c_l, C_l]");
    out.bilipschitz = BiLipschitz{pair[0], pair[1]};
  }
  if (out.kind == ConstraintConfig::Kind::Tabulated && out.y_nodes.empty())
    throw ConfigError("constraint.y_nodes", "tabulated losses need y_nodes and node_values");
  if (out.kind == ConstraintConfig::Kind::Utility && out.utility != "identity" && out.utility != "affine" &&
      out.utility != "kinked")
    throw ConfigError("constraint.utility", "unknown utility '" + out.utility + "'");
  return out;
}

SolverConfig parse_solver(const json& s) {
  SolverConfig out;
  const std::string method = string_field(s, "solver", "method", "constructive");
  if (method == "constructive")
    out.method = SolverConfig::Method::Constructive;
  else if (method == "picard")
    out.method = SolverConfig::Method::Picard;
  else if (method == "penalized")
    out.method = SolverConfig::Method::Penalized;
  else
    throw ConfigError("solver.method", "unknown solver '" + method + "'");
  if (const json* n = find(s, "n_penalty")) out.n_penalty = static_cast<int>(positive_integer(*n, "solver.n_penalty"));
  if (const json* n = find(s, "max_picard")) out.options.max_picard = static_cast<int>(positive_integer(*n, "solver.max_picard"));
  out.options.tol_fix = number_or(s, "solver", "tol_fix", 0.0);
  out.options.tol_mean = number_or(s, "solver", "tol_mean", 0.0);
  if (const json* b = find(s, "split")) {
    if (!b->is_boolean()) throw ConfigError("solver.split", "expected true or false");
    out.options.split = b->get<bool>();
  }
  if (const json* b = find(s, "allow_curve_benchmark")) {
    if (!b->is_boolean()) throw ConfigError("solver.allow_curve_benchmark", "expected true or false");
    out.options.allow_curve_benchmark = b->get<bool>();
  }
  return out;
}

MarketConfig parse_market(const json& m, std::size_t dim) {
  MarketConfig out;
  out.r = curve_or(m, "market", "r", out.r);
  const json* mu = find(m, "mu");
  if (!mu || !mu->is_array() || mu->size() != dim) throw ConfigError("market.mu", "needs one drift curve per asset");
  for (std::size_t k = 0; k < dim; ++k) out.mu.push_back(parse_curve((*mu)[k], "market.mu[" + std::to_string(k) + "]"));
  const json* sigma = find(m, "sigma");
  if (!sigma || !sigma->is_array() || sigma->size() != dim) throw ConfigError("market.sigma", "needs a d x d matrix");
  for (std::size_t k = 0; k < dim; ++k) {
    auto row = number_list((*sigma)[k], "market.sigma[" + std::to_string(k) + "]");
    if (row.size() != dim) throw ConfigError("market.sigma[" + std::to_string(k) + "]", "row needs d entries");
    out.sigma.push_back(std::move(row));
  }
  out.epsilon = number_or(m, "market", "epsilon", out.epsilon);
  if (!(out.epsilon > 0.0)) throw ConfigError("market.epsilon", "ellipticity margin must be positive");
  if (const json* s0 = find(m, "s0")) {
    out.s0 = number_list(*s0, "market.s0");
    if (out.s0.size() != dim) throw ConfigError("market.s0", "needs one initial price per asset");
    for (double v : out.s0)
      if (!(v > 0.0)) throw ConfigError("market.s0", "initial prices must be positive");
  } else {
    out.s0.assign(dim, 1.0);
  }
  return out;
}

std::vector<std::size_t> size_list(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty()) throw ConfigError(field, "expected a non-empty array of positive integers");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < v.size(); ++j) out.push_back(positive_integer(v[j], field + "[" + std::to_string(j) + "]"));
  return out;
}

}  // namespace

CurveSpec CurveSpec::constant(double v, std::string field) {
  CurveSpec c;
  c.first = v;
  c.field = std::move(field);
  return c;
}

DeterministicCurve CurveSpec::resolve(const TimeGrid& grid) const {
  switch (kind) {
    case Kind::Constant: return DeterministicCurve::constant(grid, first);
    case Kind::Ramp: return DeterministicCurve::ramp(grid, first, second);
    case Kind::Nodes: return DeterministicCurve::nodes(grid, nodes);
    case Kind::Values:
      if (values.size() != grid.size())
        throw ConfigError(field, "inline curve has " + std::to_string(values.size()) + " values, grid has " +
                                     std::to_string(grid.size()) + " instants");
      return DeterministicCurve{values};
  }
  return {};
}

std::vector<double> PayoffSpec::evaluate(const std::vector<std::span<const double>>& state) const {
  if (state.size() != weights.size()) throw InvalidArgument("payoff weights and state dimension differ");
  const std::size_t n = state.front().size();
  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    double lin = 0.0;
    for (std::size_t k = 0; k < state.size(); ++k) lin += weights[k] * state[k][p];
    switch (kind) {
      case Kind::Affine: out[p] = intercept + lin; break;
      case Kind::PositivePartAffine: out[p] = std::max(0.0, intercept + lin); break;
      case Kind::Exponential: out[p] = intercept + scale * std::exp(lin); break;
    }
  }
  return out;
}

DriverSpec DriverConfig::build(const TimeGrid& grid, std::size_t n_paths, std::size_t dim) const {
  const DeterministicCurve c = value.resolve(grid);
  if (family == Family::Constant) {
    ScalarEnsemble values(grid, n_paths);
    for (std::size_t i = 0; i < grid.size(); ++i)
      for (double& v : values.slice(i)) v = c[i];
    return DriverSpec::constant(std::move(values));
  }
  double zl_norm = 0.0;
  for (double w : z_linear) zl_norm += w * w;
  zl_norm = std::sqrt(zl_norm);
  const auto times = grid.times();
  auto at_time = [times, cv = c.values](double t) {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end()) return cv.back();
    return cv[static_cast<std::size_t>(it - times.begin())];
  };
  auto z_part = [zl = z_linear, za = z_abs, dim](std::span<const double> z) {
    double lin = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      lin += zl[k] * z[k];
      sq += z[k] * z[k];
    }
    return lin + za * std::sqrt(sq);
  };
  if (family == Family::LinearInY) {
    DeterministicCurve a_curve = a.resolve(grid);
    const double lambda = a_curve.max_abs() + zl_norm + z_abs;
    return DriverSpec::linear_in_y(
        std::move(a_curve), [at_time, z_part](double t, std::span<const double> z) { return at_time(t) + z_part(z); },
        lambda);
  }
  const double lambda = std::max(std::abs(y_linear) + std::abs(y_sin), zl_norm + z_abs);
  return DriverSpec::general(
      [at_time, z_part, yl = y_linear, ys = y_sin](double t, double y, std::span<const double> z) {
        return at_time(t) + yl * y + ys * std::sin(y) + z_part(z);
      },
      lambda);
}

Constraint ConstraintConfig::build(const TimeGrid& grid) const {
  switch (kind) {
    case Kind::Linear: {
      LossSpec loss = LossSpec::linear(u.resolve(grid));
      return bilipschitz ? Constraint{LossSpec(loss.kind(), bilipschitz, growth)} : Constraint{loss};
    }
    case Kind::SmoothedIndicator:
      return LossSpec(SmoothedIndicatorLoss{u.resolve(grid), v.resolve(grid), width}, bilipschitz, growth);
    case Kind::Utility: {
      UtilityLoss util = utility == "identity" ? UtilityLoss::identity(u.resolve(grid))
                         : utility == "affine" ? UtilityLoss::affine(slope, u.resolve(grid))
                                               : UtilityLoss::kinked(kappa, u.resolve(grid));
      return LossSpec(std::move(util), bilipschitz, growth);
    }
    case Kind::Tabulated:
      return LossSpec(TabulatedLoss{y_nodes, node_values}, bilipschitz, growth);
    case Kind::ExpectedShortfall:
      return RiskSpec{alpha.resolve(grid), q.resolve(grid)};
  }
  throw ConfigError("constraint.kind", "unsupported");
}

ScenarioConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("(root)", "scenario must be a JSON object");
  ScenarioConfig cfg;
  const json& grid = section(doc, "grid");
  cfg.T = number_or(grid, "grid", "T", cfg.T);
  if (!(cfg.T > 0.0)) throw ConfigError("grid.T", "horizon must be positive");
  if (const json* M = find(grid, "M")) cfg.M = positive_integer(*M, "grid.M");

  const json& ens = section(doc, "ensemble");
  if (const json* n = find(ens, "n_paths")) cfg.n_paths = positive_integer(*n, "ensemble.n_paths");
  if (cfg.n_paths < 2) throw ConfigError("ensemble.n_paths", "at least two paths are needed");
  if (const json* d = find(ens, "dim")) cfg.dim = positive_integer(*d, "ensemble.dim");
  if (const json* s = find(ens, "seed")) {
    if (!s->is_number_unsigned() && !s->is_number_integer()) throw ConfigError("ensemble.seed", "expected an integer");
    cfg.seed = s->get<std::uint64_t>();
  }

  if (const json* b = find(doc, "basis")) {
    const std::string kind = string_field(*b, "basis", "kind", "polynomial");
    int order = 2;
    if (const json* o = find(*b, "order")) {
      if (!o->is_number_integer()) throw ConfigError("basis.order", "expected an integer");
      order = o->get<int>();
    }
    if (kind == "polynomial")
      cfg.basis = BasisSpec::polynomial(order);
    else if (kind == "partition")
      cfg.basis = BasisSpec::partition(order);
    else
      throw ConfigError("basis.kind", "unknown basis '" + kind + "'");
    try {
      cfg.basis.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError("basis.order", e.what());
    }
  }

  cfg.terminal = parse_payoff(section(doc, "terminal"), cfg.dim);
  cfg.driver = parse_driver(section(doc, "driver"), cfg.dim);
  cfg.constraint = parse_constraint(section(doc, "constraint"));
  if (const json* s = find(doc, "solver")) cfg.solver = parse_solver(*s);
  cfg.solver.options.basis = cfg.basis;

  if (cfg.solver.method == SolverConfig::Method::Penalized) {
    if (cfg.constraint.kind != ConstraintConfig::Kind::Linear)
      throw ConfigError("solver.method", "penalized solver requires a linear constraint");
    if (cfg.constraint.u.kind != CurveSpec::Kind::Constant && !cfg.solver.options.allow_curve_benchmark)
      throw ConfigError("constraint.u", "penalized solver requires a constant benchmark unless allow_curve_benchmark is set");
  }
  if (cfg.solver.method == SolverConfig::Method::Constructive && cfg.driver.family != DriverConfig::Family::Constant)
    throw ConfigError("solver.method", "constructive solver requires a constant driver (use picard)");

  if (const json* r = find(doc, "reference")) {
    const json* ce = find(*r, "counterexample");
    if (!ce || !ce->is_object()) throw ConfigError("reference.counterexample", "expected an object");
    ReferenceConfig ref;
    ref.gamma = number_or(*ce, "reference.counterexample", "gamma", ref.gamma);
    ref.u = number_or(*ce, "reference.counterexample", "u", ref.u);
    ref.mean_xi = number_or(*ce, "reference.counterexample", "mean_xi", ref.mean_xi);
    try {
      CounterexampleSpec{ref.gamma, ref.u, cfg.T, ref.mean_xi}.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError("reference.counterexample", e.what());
    }
    cfg.reference = ref;
  }

  if (const json* m = find(doc, "market")) {
    if (!m->is_object()) throw ConfigError("market", "expected an object");
    cfg.market = parse_market(*m, cfg.dim);
    if (cfg.constraint.kind != ConstraintConfig::Kind::ExpectedShortfall)
      throw ConfigError("constraint.kind", "market scenarios use an expected_shortfall constraint");
  }

  if (const json* s = find(doc, "study")) {
    if (const json* g = find(*s, "grid")) cfg.study.grid_steps = size_list(*g, "study.grid");
    if (const json* p = find(*s, "paths")) cfg.study.path_counts = size_list(*p, "study.paths");
    if (const json* n = find(*s, "penalty")) {
      cfg.study.penalties.clear();
      for (std::size_t v : size_list(*n, "study.penalty")) cfg.study.penalties.push_back(static_cast<int>(v));
    }
  }

  if (const json* t = find(doc, "tolerances")) {
    cfg.tol_c = number_or(*t, "tolerances", "tol_c", 0.0);
    cfg.tol_flat = number_or(*t, "tolerances", "tol_flat", 0.0);
  }
  cfg.solver.options.tol_c = cfg.tol_c;
  cfg.output_dir = string_field(doc, "", "output", cfg.output_dir);

  // Resolve every curve once so grid-alignment errors surface at parse time.
  const TimeGrid g = cfg.grid();
  try {
    cfg.driver.build(g, 2, cfg.dim);
    const Constraint c = cfg.constraint.build(g);
    if (const auto* risk = std::get_if<RiskSpec>(&c)) {
      for (double a : risk->alpha.values)
        if (!(a > 0.0 && a < 1.0)) throw ConfigError("constraint.alpha", "ES level must lie in (0, 1)");
    }
    if (cfg.market) {
      cfg.market->r.resolve(g);
      for (const auto& mu : cfg.market->mu) mu.resolve(g);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError("constraint", e.what());
  }
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("(file)", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("(syntax)", e.what());
  }
  return parse_config(doc);
}

}  // namespace mrbsde::app
