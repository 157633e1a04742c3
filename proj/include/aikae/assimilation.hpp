#pragma once

#include "aikae/data.hpp"
#include "aikae/model.hpp"
#include "aikae/optim.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace aikae {

enum class Constraint { none, exact_initial };

inline Constraint parse_constraint(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "none") return Constraint::none;
  if (s == "exact_initial") return Constraint::exact_initial;
  throw ConfigError("unknown assimilation constraint '" + s + "' (expected none or exact-initial)");
}
inline std::string to_string(Constraint c) { return c == Constraint::none ? "none" : "exact_initial"; }

struct Observation {
  long t = 0;
  Tensor x;  // [n]
};

struct AssimilationOptions {
  double lr = 1e-2;
  std::size_t steps = 500;
  Constraint constraint = Constraint::none;
  double divergence = 1e6;
};

struct AssimilationProblem {
  const AikaeModel* model = nullptr;
  std::vector<Observation> obs;
  AssimilationOptions options;
};

struct AssimilationResult {
  LatentState z0;
  std::vector<double> cost;  // cost before each update, then the final cost
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {
inline void validate_observations(const AikaeModel& model, const std::vector<Observation>& obs) {
  if (obs.empty()) throw ConfigError("assimilation: no observations");
  if (obs.front().t != 0) throw ConfigError("assimilation: the first observation must be at t = 0");
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].x.size() != model.n()) {
      throw DimensionError("assimilation: observation at t = " + std::to_string(obs[i].t) + " has length " +
                           std::to_string(obs[i].x.size()) + ", model expects " + std::to_string(model.n()));
    }
    if (i > 0 && obs[i].t <= obs[i - 1].t) throw ConfigError("assimilation: timestamps must be strictly increasing");
  }
}

inline void check_model(const AikaeModel& model, Constraint c) {
  if (model.config.revin) throw ConfigError("assimilation: models with RevIN are not supported as priors");
  if (c == Constraint::exact_initial && model.config.variant != Variant::ikae && model.config.variant != Variant::aikae) {
    throw ConfigError("assimilation: exact-initial constraint needs an ikae or aikae model, got " + to_string(model.config.variant));
  }
}

/// Stacked problems: row r of every matrix belongs to problem r.
struct StackedObs {
  std::vector<long> times;     // distinct timestamps, increasing
  std::vector<Matrix> values;  // [P x n] per timestamp
  std::vector<Matrix> masks;   // [P x n] per timestamp, 1 where observed
};

inline StackedObs stack(std::size_t dim, const std::vector<std::vector<Observation>>& problems) {
  std::map<long, std::size_t> slot;
  for (const auto& obs : problems)
    for (const auto& o : obs) slot.emplace(o.t, 0);
  StackedObs s;
  for (auto& [t, i] : slot) {
    i = s.times.size();
    s.times.push_back(t);
  }
  const auto p = static_cast<Eigen::Index>(problems.size());
  const auto n = static_cast<Eigen::Index>(dim);
  s.values.assign(s.times.size(), Matrix::Zero(p, n));
  s.masks.assign(s.times.size(), Matrix::Zero(p, n));
  for (Eigen::Index r = 0; r < p; ++r) {
    for (const auto& o : problems[static_cast<std::size_t>(r)]) {
      const std::size_t i = slot[o.t];
      s.values[i].row(r) = o.x.flattened().mat().row(0);
      s.masks[i].row(r).setOnes();
    }
  }
  return s;
}

/// Sum over problems and observed timestamps of ||Phi^{-1}(K^t z0) - x_t||^2.
inline Var stacked_cost(const BoundModel& b, Var z0, const StackedObs& s) {
  GradTape& tape = *b.tape;
  Var total = tape.constant(Matrix::Zero(1, 1));
  Var z = z0;
  long at = 0;
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    for (; at < s.times[i]; ++at) z = b.step(z);
    Var diff = ad::mul(ad::sub(b.decode(z), tape.constant(s.values[i])), tape.constant(s.masks[i]));
    total = ad::add(total, ad::sum_squares(diff));
  }
  return total;
}
}  // namespace detail

/// Recorded assimilation cost for a latent initial state (rows = problems).
inline Var assimilation_cost(const BoundModel& b, Var z0, const std::vector<Observation>& obs) {
  return detail::stacked_cost(b, z0, detail::stack(b.n(), {obs}));
}

inline double assimilation_cost(const AikaeModel& model, const std::vector<Observation>& obs, const LatentState& z0) {
  detail::validate_observations(model, obs);
  if (z0.size() != model.latent_dim()) throw DimensionError("assimilation_cost: latent dimension mismatch");
  GradTape tape;
  auto b = bind_model(tape, model);
  return tape.scalar(detail::stacked_cost(b, tape.constant(z0.z.mat()), detail::stack(model.n(), {obs})));
}
inline double assimilation_cost(const AssimilationProblem& p, const LatentState& z0) {
  return assimilation_cost(*p.model, p.obs, z0);
}

/// Independent problems sharing a frozen model, optimized jointly as one
/// [P x d] parameter. Adam acts elementwise and each row's cost depends only on
/// that row, so this matches P separate runs.
inline std::vector<AssimilationResult> assimilate_grid(const AikaeModel& model, const std::vector<std::vector<Observation>>& problems,
                                                       const AssimilationOptions& opt) {
  if (problems.empty()) throw ConfigError("assimilation: no problems");
  detail::check_model(model, opt.constraint);
  for (const auto& obs : problems) detail::validate_observations(model, obs);
  if (!(opt.lr > 0.0)) throw ConfigError("assimilation: lr must be positive");

  const detail::StackedObs stacked = detail::stack(model.n(), problems);
  const auto p = static_cast<Eigen::Index>(problems.size());
  const std::size_t n = model.n();
  const std::size_t d = model.latent_dim();

  // Initialization Phi(x_0) for every problem.
  Matrix x0(p, static_cast<Eigen::Index>(n));
  for (Eigen::Index r = 0; r < p; ++r) x0.row(r) = problems[static_cast<std::size_t>(r)].front().x.flattened().mat().row(0);
  Matrix z0;
  {
    GradTape tape;
    auto b = bind_model(tape, model);
    z0 = tape.value(b.encode(tape.constant(x0)));
  }

  const bool fixed_head = opt.constraint == Constraint::exact_initial;
  const std::size_t free_offset = fixed_head ? n : 0;
  const std::size_t free_count = d - free_offset;
  const Matrix head = z0.leftCols(static_cast<Eigen::Index>(free_offset));
  Tensor free(Matrix(z0.rightCols(static_cast<Eigen::Index>(free_count))));

  auto assemble = [&](GradTape& tape, Var v) {
    if (free_count == 0) return tape.constant(head);
    return fixed_head ? ad::concat_cols(tape.constant(head), v) : v;
  };

  std::vector<double> costs;
  AdamState adam(AdamOptions{opt.lr, 0.9, 0.999, 1e-8, 0.0});
  std::size_t it = 0;
  const std::size_t steps = free_count == 0 ? 0 : opt.steps;
  for (; it <= steps; ++it) {
    GradTape tape;
    auto b = bind_model(tape, model);
    Var v = it < steps ? tape.parameter(free) : tape.constant(free);
    Var cost = detail::stacked_cost(b, assemble(tape, v), stacked);
    const double c = tape.scalar(cost);
    if (!std::isfinite(c) || c > opt.divergence * static_cast<double>(p)) {
      throw NumericalError("assimilation diverged at iteration " + std::to_string(it) + " (cost " + detail::format_double(c) + ")");
    }
    costs.push_back(c);
    if (it == steps) break;
    tape.backward(cost);
    adam_step(adam, {&free}, {Tensor(tape.grad(v))}, {"z0"});
  }

  Matrix z(p, static_cast<Eigen::Index>(d));
  z.leftCols(static_cast<Eigen::Index>(free_offset)) = head;
  z.rightCols(static_cast<Eigen::Index>(free_count)) = free.mat();

  const bool converged = costs.size() < 2 || std::abs(costs[costs.size() - 1] - costs[costs.size() - 2]) <= 1e-8 * std::max(1.0, costs.back());
  std::vector<AssimilationResult> out;
  for (Eigen::Index r = 0; r < p; ++r) {
    AssimilationResult res;
    res.z0 = {Tensor(Matrix(z.row(r))).flattened(), detail::split_point(model)};
    res.iterations = steps;
    res.converged = converged;
    // Per-problem cost trajectory is only meaningful for single problems; grids report the total.
    res.cost = costs;
    out.push_back(std::move(res));
  }
  return out;
}

/// Adam on z0 starting from Phi(x_0). With exact_initial the invertible part is
/// frozen to phi(x_0) and only the augmentation part moves.
inline AssimilationResult assimilate(const AssimilationProblem& problem) {
  if (problem.model == nullptr) throw ConfigError("assimilate: no model");
  return assimilate_grid(*problem.model, {problem.obs}, problem.options).front();
}

/// Phi^{-1}(K^t z0*).
inline Tensor assimilated_forecast(const AssimilationResult& result, const AikaeModel& model, long t) {
  if (t < 0) throw ConfigError("assimilated_forecast: t must be non-negative");
  auto states = rollout(model, result.z0, static_cast<std::size_t>(t));
  return decode(model, states.back());
}

inline Metrics forecast_score(const AikaeModel& model, const AssimilationResult& result, const std::vector<Observation>& truth) {
  if (truth.empty()) throw ConfigError("forecast_score: empty truth");
  MetricSum sum;
  for (const auto& o : truth) sum.add(assimilated_forecast(result, model, o.t), o.x.flattened());
  return sum.result();
}

}  // namespace aikae
