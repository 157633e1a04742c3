#pragma once

#include "aikae/tape.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace aikae {

enum class Init { uniform_fan_in, zero };

/// Cursor over a flat, visit-ordered list of parameter handles.
class VarCursor {
 public:
  explicit VarCursor(const std::vector<Var>& vars) : vars_(vars) {}
  Var next() {
    if (at_ >= vars_.size()) throw std::logic_error("VarCursor: parameter list exhausted");
    return vars_[at_++];
  }
  bool done() const { return at_ == vars_.size(); }

 private:
  const std::vector<Var>& vars_;
  std::size_t at_ = 0;
};

/// y = x W + b with W stored as [in x out] and b as [1 x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Init init, Rng& rng) {
    if (init == Init::zero || in == 0) {
      weight = Tensor::zeros(in, out);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      weight = rng.uniform_tensor(in, out, -bound, bound);
    }
    bias = Tensor::zeros(1, out);
  }

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct BoundLinear {
  Var weight;
  Var bias;

  static BoundLinear bind(VarCursor& c) { return {c.next(), c.next()}; }
  Var operator()(Var x) const { return ad::add_row(ad::matmul(x, weight), bias); }
};

enum class Activation { relu, leaky_relu };

inline Var activate(Var x, Activation a, double slope) {
  return a == Activation::relu ? ad::relu(x) : ad::leaky_relu(x, slope);
}

/// Fully connected stack; the activation follows every layer but the last.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::relu;
  double slope = 0.01;

  Mlp() = default;
  Mlp(std::size_t in, const std::vector<std::size_t>& widths, Activation act, Init init, Rng& rng, double slope_ = 0.01)
      : activation(act), slope(slope_) {
    std::size_t prev = in;
    for (std::size_t w : widths) {
      layers.emplace_back(prev, w, init, rng);
      prev = w;
    }
  }

  bool empty() const { return layers.empty(); }
  std::size_t in() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t out() const { return layers.empty() ? 0 : layers.back().out(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), f);
  }
};

struct BoundMlp {
  std::vector<BoundLinear> layers;
  Activation activation = Activation::relu;
  double slope = 0.01;

  static BoundMlp bind(const Mlp& mlp, VarCursor& c) {
    BoundMlp b;
    b.activation = mlp.activation;
    b.slope = mlp.slope;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) b.layers.push_back(BoundLinear::bind(c));
    return b;
  }

  Var operator()(Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = activate(x, activation, slope);
    }
    return x;
  }
};

}  // namespace aikae
