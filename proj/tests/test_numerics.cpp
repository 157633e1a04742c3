#include "aikae/gradcheck.hpp"
#include "aikae/linalg.hpp"
#include "aikae/optim.hpp"
#include "aikae/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace aikae;

namespace {

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

Tensor scaled_to_radius(Tensor k, double radius) {
  k.mat() *= radius / spectral_radius(k);
  return k;
}

}  // namespace

TEST(Tensor, MatrixFactoryChecksCount) {
  const std::vector<double> v{1, 2, 3};
  EXPECT_THROW(Tensor::matrix(2, 2, v), DimensionError);
  Tensor t = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(t[2], 3.0);  // row-major
}

TEST(Tensor, VectorIsRankOne) {
  Tensor v = Tensor::vector({1, 2, 3});
  EXPECT_EQ(v.rank(), 1u);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.shape_string(), "[3]");
}

TEST(Matmul, IdentityTimesColumn) {
  Tensor r = matmul(Tensor::identity(2), Tensor::matrix({{1}, {2}}));
  EXPECT_EQ(r, Tensor::matrix({{1}, {2}}));
}

TEST(Matmul, RotationSquaredIsMinusIdentity) {
  Tensor r = Tensor::matrix({{0, 1}, {-1, 0}});
  EXPECT_EQ(matmul(r, r), Tensor::matrix({{-1, 0}, {0, -1}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  Tensor a = rng.normal_tensor(3, 3);
  Tensor b = rng.normal_tensor(3, 3);
  EXPECT_LE(max_abs_diff(matmul(a, b).mat(), triple_loop(a.mat(), b.mat())), 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), DimensionError);
}

TEST(Matmul, NonFiniteInputThrows) {
  Tensor a = Tensor::identity(2);
  a(0, 0) = std::nan("");
  EXPECT_THROW(matmul(a, Tensor::identity(2)), NumericalError);
}

TEST(Matpow, IdentityPower) { EXPECT_EQ(matpow(Tensor::identity(3), 5), Tensor::identity(3)); }

TEST(Matpow, ScalarCube) { EXPECT_EQ(matpow(Tensor::matrix({{2}}), 3), Tensor::matrix({{8}})); }

TEST(Matpow, ZeroPowerIsIdentity) {
  Rng rng(2);
  EXPECT_EQ(matpow(rng.normal_tensor(4, 4), 0), Tensor::identity(4));
}

TEST(Matpow, MatchesSequentialFold) {
  Rng rng(3);
  Tensor k = rng.normal_tensor(4, 4, 0.5);
  Matrix fold = Matrix::Identity(4, 4);
  for (int i = 0; i < 7; ++i) fold = triple_loop(fold, k.mat());
  EXPECT_LE(max_abs_diff(matpow(k, 7).mat(), fold), 1e-10);
}

TEST(Matpow, NonSquareThrows) { EXPECT_THROW(matpow(Tensor::zeros(2, 3), 2), DimensionError); }

TEST(Matpow, SemigroupProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor k = scaled_to_radius(rng.normal_tensor(4, 4), rng.uniform(0.2, 1.0));
    const std::size_t a = rng.below(9), b = rng.below(9);
    EXPECT_LE(max_abs_diff(matpow(k, a + b), matmul(matpow(k, a), matpow(k, b))), 1e-9);
  }
}

TEST(Lstsq, OneDimensionalOracle) {
  Tensor gx = Tensor::matrix({{1, 2}});
  Tensor gy = Tensor::matrix({{2, 4}});
  // gy gx^T / (gx gx^T)
  const double oracle = (2 * 1 + 4 * 2) / (1.0 * 1 + 2.0 * 2);
  EXPECT_NEAR(lstsq_koopman(gx, gy)(0, 0), oracle, 1e-14);
  EXPECT_NEAR(oracle, 2.0, 0);
}

TEST(Lstsq, SelfMappingIsIdentity) {
  Rng rng(5);
  Tensor g = rng.normal_tensor(4, 4);
  EXPECT_LE(max_abs_diff(lstsq_koopman(g, g), Tensor::identity(4)), 1e-10);
}

TEST(Lstsq, RecoversGeneratingMatrix) {
  Rng rng(6);
  Tensor k_true = rng.normal_tensor(3, 3, 0.5);
  Tensor gx = rng.normal_tensor(3, 50);
  Tensor gy = matmul(k_true, gx);
  EXPECT_LE(max_abs_diff(lstsq_koopman(gx, gy), k_true), 1e-8);
}

TEST(Lstsq, RankDeficientIsLegal) {
  Tensor gx = Tensor::matrix({{1, 2, 3}, {2, 4, 6}});
  Tensor gy = Tensor::matrix({{1, 2, 3}, {0, 0, 0}});
  Tensor k = lstsq_koopman(gx, gy);
  EXPECT_TRUE(k.is_finite());
  EXPECT_LE(max_abs_diff(matmul(k, gx), gy), 1e-10);
}

TEST(Lstsq, ShapeMismatchThrows) {
  EXPECT_THROW(lstsq_koopman(Tensor::zeros(2, 3), Tensor::zeros(2, 4)), DimensionError);
}

TEST(Lstsq, NoRandomCandidateBeatsTheSolution) {
  Rng rng(7);
  Tensor gx = rng.normal_tensor(3, 20);
  Tensor gy = rng.normal_tensor(3, 20);
  Tensor k = lstsq_koopman(gx, gy);
  auto residual = [&](const Matrix& m) { return (m * gx.mat() - gy.mat()).squaredNorm(); };
  const double best = residual(k.mat());
  for (int i = 0; i < 1000; ++i) {
    Matrix cand = k.mat() + rng.normal_tensor(3, 3, rng.uniform(1e-4, 1.0)).mat();
    EXPECT_GE(residual(cand), best - 1e-12);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::vector({0.5});
  AdamState s;
  adam_step(s, {&p}, {Tensor::vector({1.0})});
  // m_hat / sqrt(v_hat) = 1 on the first step.
  EXPECT_NEAR(p[0], 0.5 - 1e-3 * (1.0 / (1.0 + 1e-8)), 1e-15);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p = Tensor::matrix({{1, -2}, {3, 4}});
  const Tensor before = p;
  AdamState s;
  for (int i = 0; i < 5; ++i) adam_step(s, {&p}, {Tensor::zeros(2, 2)});
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 5);
}

TEST(Adam, DecoupledWeightDecay) {
  Tensor p = Tensor::vector({2.0});
  AdamState s(AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.5});
  adam_step(s, {&p}, {Tensor::vector({0.0})});
  EXPECT_DOUBLE_EQ(p[0], 2.0 * (1.0 - 0.1 * 0.5));
}

TEST(Adam, MinimizesQuadratic) {
  Tensor theta = Tensor::vector({1.0});
  AdamState s(AdamOptions{0.1});
  for (int i = 0; i < 100; ++i) adam_step(s, {&theta}, {Tensor::vector({2.0 * theta[0]})});
  EXPECT_LT(std::abs(theta[0]), 0.05);
}

TEST(Adam, NanGradientNamesParameter) {
  Tensor p = Tensor::vector({1.0});
  AdamState s;
  try {
    adam_step(s, {&p}, {Tensor::vector({std::nan("")})}, {"phi.0.hidden.weight"});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("phi.0.hidden.weight"), std::string::npos);
  }
}

TEST(Adam, ClipGlobalNorm) {
  std::vector<Tensor> g{Tensor::vector({3.0}), Tensor::vector({4.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
}

TEST(Gradcheck, SquaredNorm) {
  Rng rng(8);
  auto loss = [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(p[0]); };
  auto r = gradcheck(loss, {rng.normal_tensor(3, 4)}, {});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coords_checked, 12u);
}

TEST(Gradcheck, ConstantLoss) {
  auto loss = [](GradTape& t, const std::vector<Var>&) { return t.constant(Matrix::Constant(1, 1, 3.0)); };
  auto r = gradcheck(loss, {Tensor::vector({1, 2})}, {});
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(Gradcheck, NonFiniteLossThrows) {
  auto loss = [](GradTape& t, const std::vector<Var>& p) {
    return ad::sum(ad::mul(p[0], t.constant(Matrix::Constant(1, 1, std::numeric_limits<double>::infinity()))));
  };
  EXPECT_THROW(gradcheck(loss, {Tensor::vector({1.0})}, {}), NumericalError);
}

TEST(Gradcheck, CorruptedGradientIsCaught) {
  auto loss = [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::add(p[0], p[1])); };
  GradcheckOptions o;
  o.corrupt_param = 1;
  auto r = gradcheck(loss, {Tensor::vector({1, 2}), Tensor::vector({0.5, 0.25})}, o);
  EXPECT_GT(r.max_rel_error, 1e-2);
  EXPECT_EQ(r.worst_param, 1u);
}

TEST(Gradcheck, SkipsCoordinatesStraddlingAKink) {
  // relu(x) at x = 3e-6: the +-1e-5 probes land on both sides of 0.
  auto loss = [](GradTape&, const std::vector<Var>& p) { return ad::sum(ad::relu(p[0])); };
  auto r = gradcheck(loss, {Tensor::vector({3e-6, 0.5, -0.5})}, {});
  EXPECT_EQ(r.coords_skipped, 1u);
  EXPECT_EQ(r.coords_checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-9);
  // Without the skip the central difference would read 0.65 against an analytic 1.
  GradTape tape;
  tape.record_kink_sides(true);
  ad::relu(tape.constant(Matrix::Constant(1, 2, -1.0)));
  EXPECT_EQ(tape.kink_sides(), (std::vector<bool>{false, false}));
}

// Every primitive, each composed with a nonlinear reduction so gradients are generic.
TEST(Gradcheck, EveryPrimitive) {
  Rng rng(9);
  const Tensor a = rng.normal_tensor(3, 4);
  const Tensor b = rng.normal_tensor(4, 2);
  const Tensor c = rng.normal_tensor(3, 4);
  const Tensor row = rng.normal_tensor(1, 4);
  const Tensor col = rng.uniform_tensor(3, 1, 0.5, 1.5);
  using Builder = std::function<Var(GradTape&, const std::vector<Var>&)>;
  const std::vector<std::pair<std::string, Builder>> cases = {
      {"matmul", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::matmul(p[0], p[1])); }},
      {"transpose", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::matmul(ad::transpose(p[1]), ad::transpose(p[0]))); }},
      {"add", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::add(p[0], p[2])); }},
      {"sub", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::sub(p[0], p[2])); }},
      {"mul", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::mul(p[0], p[2])); }},
      {"scale", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::scale(p[0], -1.7)); }},
      {"leaky_relu", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::leaky_relu(p[0], 0.01)); }},
      {"relu", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::relu(ad::add(p[0], p[2]))); }},
      {"mean_square", [](GradTape&, const std::vector<Var>& p) { return ad::mean_square(ad::mul(p[0], p[2])); }},
      {"sum", [](GradTape&, const std::vector<Var>& p) { return ad::sum(ad::mul(p[0], p[0])); }},
      {"add_row", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::add_row(p[0], p[3])); }},
      {"add_col", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::add_col(p[0], p[4])); }},
      {"mul_col", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::mul_col(p[0], p[4])); }},
      {"div_col", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::div_col(p[0], p[4])); }},
      {"slice_cols", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::slice_cols(ad::mul(p[0], p[2]), 1, 2)); }},
      {"slice_rows", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::slice_rows(ad::mul(p[0], p[2]), 1, 2)); }},
      {"concat_cols", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::mul(ad::concat_cols(p[0], p[2]), ad::concat_cols(p[2], p[0]))); }},
      {"concat_rows", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::matmul(ad::concat_rows({p[0], p[2]}), p[1])); }},
      {"gather_rows", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::mul(ad::gather_rows(p[0], {2, 0, 2}), p[2])); }},
      {"row_sum_squares", [](GradTape&, const std::vector<Var>& p) { return ad::sum_squares(ad::row_sum_squares(p[0])); }},
  };
  for (const auto& [name, loss] : cases) {
    auto r = gradcheck(loss, {a, b, c, row, col}, {});
    EXPECT_LT(r.max_rel_error, 1e-4) << name;
  }
}

TEST(Tape, UnreachedParameterHasZeroGradient) {
  GradTape t;
  Var a = t.parameter(Tensor::vector({1, 2}));
  Var b = t.parameter(Tensor::vector({3, 4}));
  Var l = ad::sum_squares(a);
  t.backward(l);
  EXPECT_EQ(t.grad(b), Matrix::Zero(1, 2));
  EXPECT_EQ(t.grad(a), (Matrix(1, 2) << 2, 4).finished());
}

TEST(Rng, SameSeedSameDraws) {
  Rng a(42), b(42);
  EXPECT_EQ(a.normal_tensor(5, 5), b.normal_tensor(5, 5));
  EXPECT_EQ(a.uniform_tensor(3, 3, -1, 1), b.uniform_tensor(3, 3, -1, 1));
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  bool differ = false;
  for (int i = 0; i < 16; ++i) differ = differ || a.next_u64() != b.next_u64();
  EXPECT_TRUE(differ);
}

TEST(Rng, RangesAndShuffle) {
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(Rng, NormalMoments) {
  Rng r(4);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}
