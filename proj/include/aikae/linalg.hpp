#pragma once

#include "aikae/tensor.hpp"

#include <Eigen/SVD>

namespace aikae {

namespace detail {
inline void require_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericalError(std::string(op) + ": non-finite result");
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" + a.shape_string() + " * " + b.shape_string() + ")");
  }
  Matrix out = a.mat() * b.mat();
  detail::require_finite(out, "matmul");
  return Tensor(std::move(out));
}

/// K^tau by repeated multiplication; K^0 = I.
inline Tensor matpow(const Tensor& k, std::size_t tau) {
  if (k.rank() != 2 || k.rows() != k.cols()) throw DimensionError("matpow: matrix must be square, got " + k.shape_string());
  Matrix out = Matrix::Identity(k.mat().rows(), k.mat().cols());
  for (std::size_t i = 0; i < tau; ++i) out = out * k.mat();
  detail::require_finite(out, "matpow");
  return Tensor(std::move(out));
}

inline constexpr double kPinvRtol = 1e-12;

/// Moore-Penrose pseudoinverse via SVD. Singular values at or below
/// rtol * sigma_max are treated as zero.
inline Matrix pinv(const Matrix& a, double rtol = kPinvRtol) {
  if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cutoff = rtol * (s.size() ? s(0) : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  }
  Eigen::MatrixXd out = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return Matrix(out);
}

/// Least-squares linear map W minimizing ||W * gx - gy||_F, i.e. W = gy * gx^+.
/// Columns of gx/gy are paired snapshots; row counts may differ.
inline Tensor lstsq_map(const Tensor& gx, const Tensor& gy, double rtol = kPinvRtol) {
  if (gx.cols() != gy.cols()) {
    throw DimensionError("lstsq_map: snapshot counts differ (" + gx.shape_string() + " vs " + gy.shape_string() + ")");
  }
  if (gx.cols() == 0) throw DimensionError("lstsq_map: need at least one snapshot");
  Matrix out = gy.mat() * pinv(gx.mat(), rtol);
  detail::require_finite(out, "lstsq_map");
  return Tensor(std::move(out));
}

/// Koopman matrix K* = g(Y) g(X)^+ for snapshot matrices of equal shape d x T.
inline Tensor lstsq_koopman(const Tensor& gx, const Tensor& gy, double rtol = kPinvRtol) {
  if (gx.rows() != gy.rows() || gx.cols() != gy.cols()) {
    throw DimensionError("lstsq_koopman: snapshot matrices differ in shape (" + gx.shape_string() + " vs " +
                         gy.shape_string() + ")");
  }
  return lstsq_map(gx, gy, rtol);
}

inline double spectral_radius(const Tensor& k) {
  if (k.rows() != k.cols()) throw DimensionError("spectral_radius: matrix must be square");
  Eigen::EigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(k.mat()), false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace aikae
