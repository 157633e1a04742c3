#pragma once

#include "aikae/tensor.hpp"

#include <functional>
#include <vector>

namespace aikae {

class GradTape;

/// Handle to a value recorded on a GradTape.
struct Var {
  GradTape* tape = nullptr;
  std::size_t id = 0;
};

/// Reverse-mode differentiation over dense matrices.
///
/// Every primitive appends a node holding its value and a backward rule that
/// pushes the node's adjoint into its parents. Nodes that do not depend on a
/// parameter skip gradient bookkeeping entirely. A tape is single-use and
/// single-threaded; build one per loss evaluation.
class GradTape {
 public:
  using Backward = std::function<void(GradTape&, const Matrix& upstream)>;

  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var constant(const Tensor& t) { return constant(t.mat()); }
  Var parameter(const Tensor& t) { return push(t.mat(), true, {}); }
  Var parameter(Matrix value) { return push(std::move(value), true, {}); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adjoint accumulated by the last backward(); zeros if the node was unreached.
  Matrix grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) throw DimensionError("GradTape::scalar: value is not 1x1");
    return m(0, 0);
  }

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  void accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) throw DimensionError("GradTape::backward: loss must be a 1x1 scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      // The rule may append to nothing, but copy the adjoint defensively
      // against aliasing with parents that are the same node.
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// Opt-in log of which side of its kink every activation input falls on.
  void record_kink_sides(bool on) { record_kinks_ = on; }
  void note_kink_sides(const Matrix& pre) {
    if (!record_kinks_) return;
    for (Eigen::Index i = 0; i < pre.size(); ++i) kink_sides_.push_back(pre.data()[i] > 0.0);
  }
  const std::vector<bool>& kink_sides() const { return kink_sides_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_kinks_ = false;
  std::vector<bool> kink_sides_;
};

namespace ad {

namespace detail {
inline GradTape& tape_of(Var a) { return *a.tape; }
inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("ad: operands recorded on different tapes");
}
inline void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}
inline bool any_grad(GradTape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.requires_grad(v)) return true;
  return false;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" + std::to_string(av.rows()) + "x" +
                         std::to_string(av.cols()) + " * " + std::to_string(bv.rows()) + "x" +
                         std::to_string(bv.cols()) + ")");
  }
  Matrix out = av * bv;
  if (!detail::any_grad(t, {a, b})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, b](GradTape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

inline Var transpose(Var a) {
  GradTape& t = detail::tape_of(a);
  Matrix out = t.value(a).transpose();
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a](GradTape& tp, const Matrix& g) { tp.accumulate(a, g.transpose()); });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  GradTape& t = detail::tape_of(a);
  detail::same_shape(t.value(a), t.value(b), "add");
  Matrix out = t.value(a) + t.value(b);
  if (!detail::any_grad(t, {a, b})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, b](GradTape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  GradTape& t = detail::tape_of(a);
  detail::same_shape(t.value(a), t.value(b), "sub");
  Matrix out = t.value(a) - t.value(b);
  if (!detail::any_grad(t, {a, b})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, b](GradTape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

/// Element-wise product.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  GradTape& t = detail::tape_of(a);
  detail::same_shape(t.value(a), t.value(b), "mul");
  Matrix out = t.value(a).cwiseProduct(t.value(b));
  if (!detail::any_grad(t, {a, b})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, b](GradTape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

inline Var scale(Var a, double s) {
  GradTape& t = detail::tape_of(a);
  Matrix out = s * t.value(a);
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, s](GradTape& tp, const Matrix& g) { tp.accumulate(a, s * g); });
}

/// a[B x n] + b[1 x n], b broadcast over rows.
inline Var add_row(Var a, Var b) {
  detail::same_tape(a, b);
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw DimensionError("add_row: bias must be 1 x cols");
  Matrix out = av.rowwise() + bv.row(0);
  if (!detail::any_grad(t, {a, b})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, b](GradTape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

/// a[B x n] + c[B x 1], c broadcast over columns.
inline Var add_col(Var a, Var c) {
  detail::same_tape(a, c);
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  const Matrix& cv = t.value(c);
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw DimensionError("add_col: operand must be rows x 1");
  Matrix out = av.colwise() + cv.col(0);
  if (!detail::any_grad(t, {a, c})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, c](GradTape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(c)) tp.accumulate(c, g.rowwise().sum());
  });
}

/// a[B x n] * c[B x 1], each row scaled by its own factor.
inline Var mul_col(Var a, Var c) {
  detail::same_tape(a, c);
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  const Matrix& cv = t.value(c);
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw DimensionError("mul_col: operand must be rows x 1");
  Matrix out = cv.col(0).asDiagonal() * av;
  if (!detail::any_grad(t, {a, c})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, c](GradTape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, tp.value(c).col(0).asDiagonal() * g);
    if (tp.requires_grad(c)) tp.accumulate(c, g.cwiseProduct(tp.value(a)).rowwise().sum());
  });
}

/// a[B x n] / c[B x 1].
inline Var div_col(Var a, Var c) {
  detail::same_tape(a, c);
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  const Matrix& cv = t.value(c);
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw DimensionError("div_col: operand must be rows x 1");
  Matrix out = cv.col(0).cwiseInverse().asDiagonal() * av;
  if (!detail::any_grad(t, {a, c})) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, c](GradTape& tp, const Matrix& g) {
    const Eigen::VectorXd inv = tp.value(c).col(0).cwiseInverse();
    if (tp.requires_grad(a)) tp.accumulate(a, inv.asDiagonal() * g);
    if (tp.requires_grad(c)) {
      // d(a/c)/dc = -a/c^2
      Matrix dc = -(g.cwiseProduct(tp.value(a)).rowwise().sum()).cwiseProduct(inv.cwiseProduct(inv));
      tp.accumulate(c, dc);
    }
  });
}

inline Var leaky_relu(Var a, double slope) {
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  t.note_kink_sides(av);
  Matrix out = av.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, slope](GradTape& tp, const Matrix& g) {
    Matrix d = tp.value(a).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

inline Var relu(Var a) { return leaky_relu(a, 0.0); }

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  if (start + count > static_cast<std::size_t>(av.cols())) throw DimensionError("slice_cols: range out of bounds");
  const auto s = static_cast<Eigen::Index>(start);
  const auto c = static_cast<Eigen::Index>(count);
  Matrix out = av.middleCols(s, c);
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, s, c](GradTape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
    full.middleCols(s, c) = g;
    tp.accumulate(a, full);
  });
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  if (start + count > static_cast<std::size_t>(av.rows())) throw DimensionError("slice_rows: range out of bounds");
  const auto s = static_cast<Eigen::Index>(start);
  const auto c = static_cast<Eigen::Index>(count);
  Matrix out = av.middleRows(s, c);
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a, s, c](GradTape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
    full.middleRows(s, c) = g;
    tp.accumulate(a, full);
  });
}

inline Var concat_cols(Var a, Var b) {
  detail::same_tape(a, b);
  GradTape& t = detail::tape_of(a);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row counts differ");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  if (!detail::any_grad(t, {a, b})) return t.push(std::move(out), false, {});
  const Eigen::Index ac = av.cols();
  const Eigen::Index bc = bv.cols();
  return t.push(std::move(out), true, [a, b, ac, bc](GradTape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g.leftCols(ac));
    if (tp.requires_grad(b)) tp.accumulate(b, g.rightCols(bc));
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  GradTape& t = detail::tape_of(parts.front());
  const Eigen::Index cols = t.value(parts.front()).cols();
  Eigen::Index rows = 0;
  bool grad = false;
  for (Var p : parts) {
    detail::same_tape(parts.front(), p);
    if (t.value(p).cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += t.value(p).rows();
    grad = grad || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  if (!grad) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [parts](GradTape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Eigen::Index r = tp.value(p).rows();
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleRows(off, r));
      off += r;
    }
  });
}

/// Rows of src selected by index (repeats allowed): out[i] = src[index[i]].
inline Var gather_rows(Var src, std::vector<std::size_t> index) {
  GradTape& t = detail::tape_of(src);
  const Matrix& sv = t.value(src);
  Matrix out(static_cast<Eigen::Index>(index.size()), sv.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= static_cast<std::size_t>(sv.rows())) throw DimensionError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = sv.row(static_cast<Eigen::Index>(index[i]));
  }
  if (!t.requires_grad(src)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [src, index = std::move(index)](GradTape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(src).rows(), tp.value(src).cols());
    for (std::size_t i = 0; i < index.size(); ++i) full.row(static_cast<Eigen::Index>(index[i])) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(src, full);
  });
}

inline Var sum(Var a) {
  GradTape& t = detail::tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = t.value(a).sum();
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a](GradTape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix::Constant(tp.value(a).rows(), tp.value(a).cols(), g(0, 0)));
  });
}

inline Var sum_squares(Var a) {
  GradTape& t = detail::tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = t.value(a).squaredNorm();
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a](GradTape& tp, const Matrix& g) { tp.accumulate(a, 2.0 * g(0, 0) * tp.value(a)); });
}

inline Var mean_square(Var a) {
  const auto n = static_cast<double>(a.tape->value(a).size());
  if (n == 0) throw DimensionError("mean_square: empty operand");
  return scale(sum_squares(a), 1.0 / n);
}

/// Squared norm of each row: [B x n] -> [B x 1].
inline Var row_sum_squares(Var a) {
  GradTape& t = detail::tape_of(a);
  Matrix out = t.value(a).rowwise().squaredNorm();
  if (!t.requires_grad(a)) return t.push(std::move(out), false, {});
  return t.push(std::move(out), true, [a](GradTape& tp, const Matrix& g) {
    tp.accumulate(a, 2.0 * (g.col(0).asDiagonal() * tp.value(a)));
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace ad
}  // namespace aikae
