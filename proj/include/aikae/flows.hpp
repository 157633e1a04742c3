#pragma once

#include "aikae/layers.hpp"

#include <string>
#include <vector>

namespace aikae {

inline constexpr double kLeakySlope = 0.01;

/// Additive coupling: one half of the coordinates passes through unchanged and
/// the other half is shifted by a one-hidden-layer leaky-ReLU MLP of the first.
///
/// Halves are the index ranges [0, n/2) and [n/2, n); `pass_first` selects
/// which one is passed through.
struct CouplingLayer {
  std::size_t dim = 0;
  bool pass_first = true;
  Linear hidden;
  Linear output;
  double slope = kLeakySlope;

  CouplingLayer() = default;
  CouplingLayer(std::size_t n, std::size_t width, bool pass_first_, Init init, Rng& rng, double slope_ = kLeakySlope)
      : dim(n), pass_first(pass_first_), slope(slope_) {
    if (n == 0 || n % 2 != 0) throw DimensionError("CouplingLayer: dimension must be even and positive, got " + std::to_string(n));
    if (width == 0) throw DimensionError("CouplingLayer: hidden width must be positive");
    hidden = Linear(n / 2, width, init, rng);
    output = Linear(width, n / 2, init, rng);
  }

  std::size_t half() const { return dim / 2; }
  std::size_t pass_offset() const { return pass_first ? 0 : half(); }
  std::size_t shift_offset() const { return pass_first ? half() : 0; }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    hidden.visit(prefix + ".hidden", f);
    output.visit(prefix + ".out", f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    hidden.visit(prefix + ".hidden", f);
    output.visit(prefix + ".out", f);
  }
};

struct BoundCoupling {
  std::size_t dim = 0;
  bool pass_first = true;
  double slope = kLeakySlope;
  BoundLinear hidden;
  BoundLinear output;

  static BoundCoupling bind(const CouplingLayer& l, VarCursor& c) {
    BoundCoupling b;
    b.dim = l.dim;
    b.pass_first = l.pass_first;
    b.slope = l.slope;
    b.hidden = BoundLinear::bind(c);
    b.output = BoundLinear::bind(c);
    return b;
  }

  Var shift(Var pass) const { return output(ad::leaky_relu(hidden(pass), slope)); }

  Var apply(Var x, bool inverse) const {
    const std::size_t h = dim / 2;
    if (static_cast<std::size_t>(x.tape->value(x).cols()) != dim) {
      throw DimensionError("coupling layer: expected " + std::to_string(dim) + " columns, got " +
                           std::to_string(x.tape->value(x).cols()));
    }
    Var pass = ad::slice_cols(x, pass_first ? 0 : h, h);
    Var moved = ad::slice_cols(x, pass_first ? h : 0, h);
    Var s = shift(pass);
    Var out = inverse ? ad::sub(moved, s) : ad::add(moved, s);
    return pass_first ? ad::concat_cols(pass, out) : ad::concat_cols(out, pass);
  }
  Var forward(Var x) const { return apply(x, false); }
  Var inverse(Var y) const { return apply(y, true); }
};

/// Stack of additive couplings with alternating partitions. With zero layers
/// it is the identity map.
struct InvertibleEncoder {
  std::size_t dim = 0;
  std::vector<CouplingLayer> layers;

  InvertibleEncoder() = default;
  InvertibleEncoder(std::size_t n, std::size_t k, std::size_t width, Init init, Rng& rng, double slope = kLeakySlope)
      : dim(n) {
    if (n == 0 || n % 2 != 0) throw DimensionError("InvertibleEncoder: dimension must be even and positive, got " + std::to_string(n));
    for (std::size_t i = 0; i < k; ++i) layers.emplace_back(n, width, i % 2 == 0, init, rng, slope);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), f);
  }
};

struct BoundEncoder {
  std::size_t dim = 0;
  std::vector<BoundCoupling> layers;

  static BoundEncoder bind(const InvertibleEncoder& e, VarCursor& c) {
    BoundEncoder b;
    b.dim = e.dim;
    for (const auto& l : e.layers) b.layers.push_back(BoundCoupling::bind(l, c));
    return b;
  }

  void check(Var x) const {
    if (static_cast<std::size_t>(x.tape->value(x).cols()) != dim) {
      throw DimensionError("invertible encoder: expected dimension " + std::to_string(dim) + ", got " +
                           std::to_string(x.tape->value(x).cols()));
    }
  }
  Var forward(Var x) const {
    check(x);
    for (const auto& l : layers) x = l.forward(x);
    return x;
  }
  Var inverse(Var z) const {
    check(z);
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) z = it->inverse(z);
    return z;
  }
};

namespace detail {
template <typename T>
std::vector<Var> constant_vars(GradTape& tape, const T& module) {
  std::vector<Var> vars;
  module.visit("", [&](const std::string&, const Tensor& t) { vars.push_back(tape.constant(t)); });
  return vars;
}
}  // namespace detail

// Tensor-level conveniences. Inputs may be a single vector or a batch of rows.

inline Tensor coupling_forward(const CouplingLayer& layer, const Tensor& x) {
  GradTape tape;
  auto vars = detail::constant_vars(tape, layer);
  VarCursor c(vars);
  auto b = BoundCoupling::bind(layer, c);
  Tensor out(tape.value(b.forward(tape.constant(x))));
  return x.rank() == 1 ? out.flattened() : out;
}

inline Tensor coupling_inverse(const CouplingLayer& layer, const Tensor& y) {
  GradTape tape;
  auto vars = detail::constant_vars(tape, layer);
  VarCursor c(vars);
  auto b = BoundCoupling::bind(layer, c);
  Tensor out(tape.value(b.inverse(tape.constant(y))));
  return y.rank() == 1 ? out.flattened() : out;
}

inline Tensor encoder_forward(const InvertibleEncoder& enc, const Tensor& x) {
  GradTape tape;
  auto vars = detail::constant_vars(tape, enc);
  VarCursor c(vars);
  auto b = BoundEncoder::bind(enc, c);
  Tensor out(tape.value(b.forward(tape.constant(x))));
  return x.rank() == 1 ? out.flattened() : out;
}

inline Tensor encoder_inverse(const InvertibleEncoder& enc, const Tensor& z) {
  GradTape tape;
  auto vars = detail::constant_vars(tape, enc);
  VarCursor c(vars);
  auto b = BoundEncoder::bind(enc, c);
  Tensor out(tape.value(b.inverse(tape.constant(z))));
  return z.rank() == 1 ? out.flattened() : out;
}

/// log|det d phi(x)/dx|. Additive couplings have unit-triangular Jacobians, so
/// this is identically zero; the dimension check is the only work done.
inline double log_det_jacobian(const InvertibleEncoder& enc, const Tensor& x) {
  if (x.cols() != enc.dim) throw DimensionError("log_det_jacobian: dimension mismatch");
  return 0.0;
}

}  // namespace aikae
