#pragma once

#include "aikae/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace aikae {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

struct AdamState {
  AdamOptions options;
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  explicit AdamState(AdamOptions o) : options(o) {}
};

/// One Adam update with bias correction. Weight decay is decoupled:
/// p <- p * (1 - lr * wd) is applied before the adaptive step.
/// `names` (optional, aligned with params) is used in error messages.
inline void adam_step(AdamState& state, const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      const std::vector<std::string>& names = {}) {
  const AdamOptions& o = state.options;
  if (!(o.lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (params.size() != grads.size()) throw DimensionError("adam_step: gradient list does not match parameters");
  auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "param#" + std::to_string(i); };
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols()) {
      throw DimensionError("adam_step: gradient shape mismatch for " + label(i));
    }
    if (!grads[i].is_finite()) throw NumericalError("adam_step: non-finite gradient for " + label(i));
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor(Matrix::Zero(p->mat().rows(), p->mat().cols())));
      state.v.push_back(Tensor(Matrix::Zero(p->mat().rows(), p->mat().cols())));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state was built for a different parameter list");

  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i]->mat();
    Matrix& m = state.m[i].mat();
    Matrix& v = state.v[i].mat();
    const Matrix& g = grads[i].mat();
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseProduct(g);
    if (o.weight_decay > 0.0) p *= (1.0 - o.lr * o.weight_decay);
    p.array() -= o.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + o.eps);
  }
}

inline double global_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += g.mat().squaredNorm();
  return std::sqrt(s);
}

/// Rescales grads so their joint L2 norm is at most max_norm. Returns the norm before clipping.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads) g.mat() *= f;
  }
  return norm;
}

}  // namespace aikae
