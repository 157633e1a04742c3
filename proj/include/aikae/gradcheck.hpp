#pragma once

#include "aikae/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace aikae {

/// Builds a scalar loss on `tape` from parameter handles (aligned with the
/// parameter list handed to gradcheck).
using LossBuilder = std::function<Var(GradTape& tape, const std::vector<Var>& params)>;

struct GradcheckOptions {
  double h = 1e-5;
  /// Coordinates checked per parameter tensor; all of them when the tensor is smaller.
  std::size_t coords_per_param = 16;
  std::uint64_t seed = 0;
  /// Test hook: add a bias to the analytic gradient of this parameter index.
  std::optional<std::size_t> corrupt_param;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // +h and -h fell on different sides of an activation kink
  std::vector<double> per_param_error;
};

inline double gradcheck_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Analytic (tape) gradient vs central finite differences at sampled coordinates.
inline GradcheckReport gradcheck(const LossBuilder& loss, std::vector<Tensor> params, const GradcheckOptions& opt = {}) {
  if (!(opt.h > 0.0)) throw std::invalid_argument("gradcheck: step h must be positive");

  auto evaluate = [&](const std::vector<Tensor>& ps, std::vector<bool>& sides) {
    GradTape tape;
    tape.record_kink_sides(true);
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const auto& p : ps) vars.push_back(tape.constant(p));
    const double v = tape.scalar(loss(tape, vars));
    if (!std::isfinite(v)) throw NumericalError("gradcheck: loss is not finite");
    sides = tape.kink_sides();
    return v;
  };

  std::vector<Matrix> analytic;
  {
    GradTape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var l = loss(tape, vars);
    if (!std::isfinite(tape.scalar(l))) throw NumericalError("gradcheck: loss is not finite");
    tape.backward(l);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }
  if (opt.corrupt_param && *opt.corrupt_param < analytic.size()) {
    analytic[*opt.corrupt_param].array() += 1.0;
  }

  Rng rng(opt.seed + seed_offset::gradcheck);
  GradcheckReport report;
  report.per_param_error.assign(params.size(), 0.0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::size_t n = params[pi].size();
    std::vector<std::size_t> coords;
    if (n <= opt.coords_per_param) {
      for (std::size_t c = 0; c < n; ++c) coords.push_back(c);
    } else {
      for (std::size_t c = 0; c < opt.coords_per_param; ++c) coords.push_back(rng.below(n));
    }
    for (std::size_t c : coords) {
      const double orig = params[pi][c];
      std::vector<bool> sides_p, sides_m;
      params[pi][c] = orig + opt.h;
      const double fp = evaluate(params, sides_p);
      params[pi][c] = orig - opt.h;
      const double fm = evaluate(params, sides_m);
      params[pi][c] = orig;
      // A central difference across a kink does not estimate the derivative.
      if (sides_p != sides_m) {
        ++report.coords_skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double err = gradcheck_rel_error(analytic[pi].data()[c], numeric);
      ++report.coords_checked;
      report.per_param_error[pi] = std::max(report.per_param_error[pi], err);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_coord = c;
      }
    }
  }
  return report;
}

}  // namespace aikae
