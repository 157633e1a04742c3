#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aikae {

// Storage for every dense value in the library. Row-major so that a batch of
// samples is a stack of rows and a Tensor's flat values are row-major.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on NaN/Inf values, divergence, or any other numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Dense rank-1 or rank-2 array of float64 values.
///
/// A rank-1 tensor of length n is stored as a 1 x n row so that it composes
/// directly with batched (rows = samples) computations.
class Tensor {
 public:
  Tensor() : shape_{0}, m_(1, 0) {}

  explicit Tensor(Matrix m) : shape_{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, m_(std::move(m)) {}

  static Tensor vector(std::span<const double> values) {
    Matrix m(1, static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = values[i];
    Tensor t(std::move(m));
    t.shape_ = {values.size()};
    return t;
  }
  static Tensor vector(std::initializer_list<double> values) {
    return vector(std::span<const double>(values.begin(), values.size()));
  }
  static Tensor vector(const std::vector<double>& values) { return vector(std::span<const double>(values)); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::span<const double> values) {
    if (rows * cols != values.size()) {
      throw DimensionError("Tensor::matrix: " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " needs " + std::to_string(rows * cols) + " values, got " +
                           std::to_string(values.size()));
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::copy(values.begin(), values.end(), m.data());
    return Tensor(std::move(m));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> flat;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("Tensor::matrix: ragged initializer");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return matrix(rows.size(), cols, flat);
  }

  static Tensor zeros(std::size_t n) { return vector(std::vector<double>(n, 0.0)); }
  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor(Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  }
  static Tensor identity(std::size_t d) {
    return Tensor(Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t rows() const { return static_cast<std::size_t>(m_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(m_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(m_.size()); }

  std::span<const double> values() const { return {m_.data(), size()}; }
  std::span<double> values() { return {m_.data(), size()}; }

  double operator[](std::size_t i) const { return m_.data()[i]; }
  double& operator[](std::size_t i) { return m_.data()[i]; }
  double operator()(std::size_t r, std::size_t c) const {
    return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  double& operator()(std::size_t r, std::size_t c) {
    return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }

  const Matrix& mat() const { return m_; }
  Matrix& mat() { return m_; }

  /// Same values viewed as a rank-1 tensor.
  Tensor flattened() const {
    return vector(std::span<const double>(m_.data(), size()));
  }

  bool is_finite() const { return m_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.m_ == b.m_;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  std::vector<std::size_t> shape_;
  Matrix m_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("max_abs_diff: shape mismatch");
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}
inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a.mat(), b.mat()); }

/// Deterministic random source.
///
/// Draws come from std::mt19937_64, whose output sequence is fixed by the
/// standard. Conversions to floating point are done here rather than through
/// <random> distributions, which are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (both halves used).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  Tensor uniform_tensor(std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(lo, hi);
    return Tensor(std::move(m));
  }
  Tensor normal_tensor(std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal();
    return Tensor(std::move(m));
  }
  Tensor normal_vector(std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * normal();
    return Tensor::vector(v);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Sub-seed offsets; every RNG in a run is derived from the single run seed.
namespace seed_offset {
inline constexpr std::uint64_t init = 0;
inline constexpr std::uint64_t shuffle = 1000;
inline constexpr std::uint64_t mask = 2000;
inline constexpr std::uint64_t synth = 3000;
inline constexpr std::uint64_t gradcheck = 4000;
}  // namespace seed_offset

}  // namespace aikae
