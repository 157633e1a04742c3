#include "aikae/assimilation.hpp"
#include "aikae/gradcheck.hpp"

#include <gtest/gtest.h>

using namespace aikae;

namespace {

ModelConfig small(Variant v, std::size_t n = 4, std::size_t p = 2) {
  ModelConfig c;
  c.variant = v;
  c.n = n;
  c.p = p;
  c.latent = 3;
  c.k = 2;
  c.w = 8;
  c.chi_hidden = {8, 6};
  c.kae_hidden = {8, 6};
  return c;
}

// Block rotation scaled slightly inside the unit circle, so long rollouts stay bounded.
Tensor damped_rotation(std::size_t d, Rng& rng) {
  Matrix k = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i + 1 < k.rows(); i += 2) {
    const double th = rng.uniform(0.1, 0.6);
    k(i, i) = k(i + 1, i + 1) = 0.97 * std::cos(th);
    k(i, i + 1) = -0.97 * std::sin(th);
    k(i + 1, i) = 0.97 * std::sin(th);
  }
  if (k.rows() % 2) k(k.rows() - 1, k.rows() - 1) = 0.9;
  return Tensor(k);
}

std::vector<Observation> planted(const AikaeModel& m, const LatentState& z, const std::vector<long>& times) {
  auto states = rollout(m, z, static_cast<std::size_t>(times.back()));
  std::vector<Observation> obs;
  for (long t : times) obs.push_back({t, decode(m, states[static_cast<std::size_t>(t)])});
  return obs;
}

}  // namespace

TEST(AssimilationCost, SelfConsistentIsZero) {
  auto m = AikaeModel::create(small(Variant::aikae), 1);
  Rng rng(1);
  m.K = damped_rotation(6, rng);
  LatentState z{rng.normal_vector(6), 4};
  EXPECT_LE(assimilation_cost(m, planted(m, z, {0, 2, 3, 7}), z), 1e-24);
}

TEST(AssimilationCost, SingleObservationAtZero) {
  auto m = AikaeModel::create(small(Variant::aikae), 2);
  Rng rng(2);
  LatentState z{rng.normal_vector(6), 4};
  Tensor x0 = rng.normal_vector(4);
  const double expect = (decode(m, z).mat() - x0.mat()).squaredNorm();
  EXPECT_NEAR(assimilation_cost(m, {{0, x0}}, z), expect, 1e-12);
}

TEST(AssimilationCost, IdentityModelConstants) {
  auto m = AikaeModel::create(small(Variant::ikae), 0, Init::zero);
  Tensor c = Tensor::vector({1, 2, 3, 4});
  EXPECT_EQ(assimilation_cost(m, {{0, c}, {1, c}, {2, c}}, LatentState{c, 4}), 0.0);
}

TEST(AssimilationCost, OnlyObservedTimestampsCount) {
  auto m = AikaeModel::create(small(Variant::ikae), 3);
  Rng rng(3);
  m.K = damped_rotation(4, rng);
  LatentState z{rng.normal_vector(4), 4};
  std::vector<Observation> obs{{0, rng.normal_vector(4)}, {5, rng.normal_vector(4)}};
  double manual = 0;
  auto states = rollout(m, z, 5);
  for (const auto& o : obs) manual += (decode(m, states[static_cast<std::size_t>(o.t)]).mat() - o.x.mat()).squaredNorm();
  EXPECT_NEAR(assimilation_cost(m, obs, z), manual, 1e-12);
}

TEST(AssimilationCost, Gradcheck) {
  auto m = AikaeModel::create(small(Variant::aikae), 4);
  Rng rng(4);
  m.K = rng.normal_tensor(6, 6, 0.4);
  std::vector<Observation> obs{{0, rng.normal_vector(4)}, {1, rng.normal_vector(4)}, {3, rng.normal_vector(4)}};
  auto loss = [&](GradTape& tape, const std::vector<Var>& p) {
    auto b = bind_model(tape, m);
    return assimilation_cost(b, p[0], obs);
  };
  EXPECT_LT(gradcheck(loss, {rng.normal_tensor(1, 6)}, {}).max_rel_error, 1e-4);
}

TEST(AssimilationCost, ValidatesTimestamps) {
  auto m = AikaeModel::create(small(Variant::ikae), 5);
  LatentState z{Tensor::zeros(4), 4};
  EXPECT_THROW(assimilation_cost(m, {{1, Tensor::zeros(4)}}, z), ConfigError);
  EXPECT_THROW(assimilation_cost(m, {{0, Tensor::zeros(4)}, {0, Tensor::zeros(4)}}, z), ConfigError);
  EXPECT_THROW(assimilation_cost(m, {{0, Tensor::zeros(3)}}, z), DimensionError);
  EXPECT_THROW(assimilation_cost(m, {}, z), ConfigError);
}

TEST(Assimilate, IkaeExactInitialNeedsNoIterations) {
  auto m = AikaeModel::create(small(Variant::ikae), 6);
  Rng rng(6);
  Tensor x0 = rng.normal_vector(4);
  AssimilationProblem p{&m, {{0, x0}, {3, rng.normal_vector(4)}}, {}};
  p.options.constraint = Constraint::exact_initial;
  auto r = assimilate(p);
  EXPECT_EQ(r.iterations, 0u);
  EXPECT_EQ(r.z0.z, encoder_forward(m.phi, x0));
}

TEST(Assimilate, ZeroStepsReturnsInitialization) {
  auto m = AikaeModel::create(small(Variant::aikae), 7);
  Rng rng(7);
  Tensor x0 = rng.normal_vector(4);
  AssimilationProblem p{&m, {{0, x0}, {2, rng.normal_vector(4)}}, {}};
  p.options.steps = 0;
  auto r = assimilate(p);
  EXPECT_EQ(r.z0.z, encode(m, x0).z);
  EXPECT_EQ(r.cost.size(), 1u);
}

TEST(Assimilate, ExactInitialKeepsReconstruction) {
  auto m = AikaeModel::create(small(Variant::aikae), 8);
  Rng rng(8);
  m.K = damped_rotation(6, rng);
  Tensor x0 = rng.normal_vector(4);
  AssimilationProblem p{&m, {{0, x0}, {1, rng.normal_vector(4)}, {4, rng.normal_vector(4)}}, {}};
  p.options.constraint = Constraint::exact_initial;
  p.options.steps = 50;
  auto r = assimilate(p);
  EXPECT_LE(max_abs_diff(assimilated_forecast(r, m, 0), x0), 1e-9);
  EXPECT_EQ(r.z0.invertible(), encoder_forward(m.phi, x0));
  EXPECT_LE(r.cost.back(), r.cost.front());
}

TEST(Assimilate, AugmentationAdmitsSeveralTrajectories) {
  auto m = AikaeModel::create(small(Variant::aikae), 9);
  Rng rng(9);
  m.K = rng.normal_tensor(6, 6, 0.4);
  Tensor zi = encoder_forward(m.phi, rng.normal_vector(4));
  AssimilationResult a, b;
  a.z0 = LatentState::join(zi, Tensor::vector({0.0, 0.0}));
  b.z0 = LatentState::join(zi, Tensor::vector({1.0, -1.0}));
  EXPECT_EQ(assimilated_forecast(a, m, 0), assimilated_forecast(b, m, 0));
  EXPECT_GT(max_abs_diff(assimilated_forecast(a, m, 1), assimilated_forecast(b, m, 1)), 1e-6);
}

TEST(Assimilate, RejectsUnsupportedPriors) {
  auto kae = AikaeModel::create(small(Variant::kae), 10);
  AssimilationProblem p{&kae, {{0, Tensor::zeros(4)}}, {}};
  p.options.constraint = Constraint::exact_initial;
  EXPECT_THROW(assimilate(p), ConfigError);
  ModelConfig rc = small(Variant::ikae);
  rc.revin = true;
  auto rev = AikaeModel::create(rc, 10);
  EXPECT_THROW(assimilate(AssimilationProblem{&rev, {{0, Tensor::zeros(4)}}, {}}), ConfigError);
  EXPECT_EQ(parse_constraint("exact-initial"), Constraint::exact_initial);
  EXPECT_THROW(parse_constraint("strict"), ConfigError);
}

TEST(Assimilate, DivergenceIsReported) {
  auto m = AikaeModel::create(small(Variant::ikae), 11);
  m.K = Tensor(Matrix(3.0 * Matrix::Identity(4, 4)));
  AssimilationProblem p{&m, {{0, Tensor::vector({1, 1, 1, 1})}, {40, Tensor::zeros(4)}}, {}};
  try {
    assimilate(p);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(Assimilate, PlantedSolutionRecovery) {
  auto m = AikaeModel::create(small(Variant::aikae), 12);
  Rng rng(12);
  m.K = damped_rotation(6, rng);
  LatentState z_true{rng.normal_vector(6, 0.5), 4};
  std::vector<long> all;
  for (long t = 0; t < 30; ++t) all.push_back(t);
  auto truth = planted(m, z_true, all);
  std::vector<Observation> observed{truth[0]}, held;
  for (std::size_t i = 1; i < 20; ++i) (rng.bernoulli(0.5) ? observed : held).push_back(truth[i]);
  for (std::size_t i = 20; i < 30; ++i) held.push_back(truth[i]);
  AssimilationProblem p{&m, observed, {}};
  p.options.steps = 2000;
  auto r = assimilate(p);
  EXPECT_LT(forecast_score(m, r, observed).mse, 1e-6);
  EXPECT_LT(forecast_score(m, r, held).mse, 1e-5);
}

TEST(Assimilate, LinearSystemForecast) {
  auto m = AikaeModel::create(small(Variant::ikae), 0, Init::zero);
  Rng rng(13);
  m.K = random_stable_matrix(4, 0.95, rng);
  Tensor x0 = rng.normal_vector(4);
  auto ds = gen_linear(m.K, 12, x0);
  std::vector<Observation> obs;
  for (long t : {0L, 1L, 4L}) obs.push_back({t, Tensor(Matrix(ds.values.mat().row(t))).flattened()});
  auto r = assimilate(AssimilationProblem{&m, obs, {}});
  for (long t = 0; t < 12; ++t) {
    EXPECT_LE(max_abs_diff(assimilated_forecast(r, m, t).mat(), Matrix(ds.values.mat().row(t))), 1e-5) << t;
  }
}

TEST(Forecast, ScoreClosedForms) {
  auto m = AikaeModel::create(small(Variant::ikae), 0, Init::zero);
  AssimilationResult r;
  r.z0 = {Tensor::vector({1, 2, 3, 4}), 4};
  auto exact = forecast_score(m, r, {{3, Tensor::vector({1, 2, 3, 4})}});
  EXPECT_EQ(exact.mse, 0.0);
  EXPECT_EQ(exact.mae, 0.0);
  auto off = forecast_score(m, r, {{1, Tensor::vector({1.5, 2.5, 3.5, 4.5})}, {7, Tensor::vector({0.5, 1.5, 2.5, 3.5})}});
  EXPECT_DOUBLE_EQ(off.mse, 0.25);
  EXPECT_DOUBLE_EQ(off.mae, 0.5);
  EXPECT_THROW(forecast_score(m, r, {}), ConfigError);
  EXPECT_THROW(assimilated_forecast(r, m, -1), ConfigError);
}

TEST(Forecast, GridMatchesSeparateProblems) {
  auto m = AikaeModel::create(small(Variant::aikae), 14);
  Rng rng(14);
  m.K = damped_rotation(6, rng);
  std::vector<std::vector<Observation>> problems;
  for (int i = 0; i < 3; ++i) problems.push_back({{0, rng.normal_vector(4)}, {2, rng.normal_vector(4)}, {5, rng.normal_vector(4)}});
  AssimilationOptions o;
  o.steps = 40;
  auto grid = assimilate_grid(m, problems, o);
  std::vector<Observation> truth{{8, rng.normal_vector(4)}};
  double mean_mse = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto single = assimilate(AssimilationProblem{&m, problems[i], o});
    EXPECT_LE(max_abs_diff(single.z0.z, grid[i].z0.z), 1e-9);
    mean_mse += forecast_score(m, grid[i], truth).mse / 3.0;
  }
  MetricSum pooled;
  for (const auto& r : grid) pooled.add(assimilated_forecast(r, m, 8), truth[0].x);
  EXPECT_NEAR(pooled.result().mse, mean_mse, 1e-12);
}
