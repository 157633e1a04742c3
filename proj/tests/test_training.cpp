#include "aikae/gradcheck.hpp"
#include "aikae/train.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

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

SampleSet random_samples(Rng& rng, std::size_t batch, std::size_t n, std::size_t max_tau) {
  SampleSet s;
  for (std::size_t t = 0; t <= max_tau; ++t) s.states.push_back(rng.normal_tensor(batch, n).mat());
  return s;
}

// Samples whose futures are the model's own predictions.
SampleSet self_generated(const AikaeModel& m, Rng& rng, std::size_t batch, std::size_t max_tau) {
  SampleSet s;
  Matrix x = rng.normal_tensor(batch, m.n()).mat();
  s.states.push_back(x);
  for (const Matrix& p : predict_batch(m, x, max_tau, std::vector<std::size_t>(batch, 0))) s.states.push_back(p);
  return s;
}

SeriesDataset geometric(std::size_t length, double rate) {
  Matrix v(static_cast<Eigen::Index>(length), 1);
  v(0, 0) = 1.0;
  for (Eigen::Index t = 1; t < v.rows(); ++t) v(t, 0) = rate * v(t - 1, 0);
  return make_dataset("geo", Tensor(v), SplitLengths{length * 3 / 4, length / 4, 0});
}

Var bound_total(GradTape& tape, const AikaeModel& m, const std::vector<Var>& p, const SampleSet& s, const LossWeights& w) {
  auto b = bind_model(tape, m, p);
  return loss_terms(b, s, w).total;
}

}  // namespace

TEST(PredictionLoss, SelfConsistentIsZero) {
  auto m = AikaeModel::create(small(Variant::aikae), 1);
  Rng rng(1);
  m.K = rng.normal_tensor(6, 6, 0.3);
  EXPECT_LE(loss_prediction(m, self_generated(m, rng, 5, 3)), 1e-24);
}

TEST(PredictionLoss, IdentityModelOnConstantAndStep) {
  auto m = AikaeModel::create(small(Variant::ikae), 0, Init::zero);
  SampleSet c;
  c.states.assign(3, Matrix::Constant(2, 4, 1.5));
  EXPECT_EQ(loss_prediction(m, c), 0.0);
  // Unit step between tau = 0 and later states: every future entry is off by the step.
  SampleSet step;
  step.states = {Matrix::Zero(2, 4), Matrix::Constant(2, 4, 1.0), Matrix::Constant(2, 4, 1.0)};
  EXPECT_DOUBLE_EQ(loss_prediction(m, step), 1.0);
  SampleSet half = step;
  half.states[2].setConstant(3.0);
  EXPECT_DOUBLE_EQ(loss_prediction(m, half), (1.0 + 9.0) / 2.0);
}

TEST(PredictionLoss, MaskedEntriesIgnored) {
  auto m = AikaeModel::create(small(Variant::ikae), 0, Init::zero);
  SampleSet s;
  s.states = {Matrix::Zero(1, 4), Matrix::Constant(1, 4, 2.0)};
  s.masks = {Matrix::Ones(1, 4), (Matrix(1, 4) << 1, 1, 0, 0).finished()};
  s.states[1](0, 3) = 1e6;
  EXPECT_DOUBLE_EQ(loss_prediction(m, s), 4.0);
  EXPECT_THROW(loss_prediction(m, SampleSet{}), DimensionError);
}

TEST(ReconstructionLoss, KaeOnly) {
  Rng rng(2);
  SampleSet s = random_samples(rng, 3, 4, 1);
  EXPECT_THROW(loss_reconstruction(AikaeModel::create(small(Variant::ikae), 0), s), ConfigError);
  auto m = AikaeModel::create(small(Variant::kae), 3);
  for (auto& l : m.decoder.layers) {
    l.weight.mat().setZero();
    l.bias.mat().setZero();
  }
  EXPECT_NEAR(loss_reconstruction(m, s), s.states[0].squaredNorm() / 3.0, 1e-12);
}

TEST(ReconstructionLoss, HandComposedForwardPass) {
  auto m = AikaeModel::create(small(Variant::kae), 4);
  Rng rng(3);
  SampleSet s = random_samples(rng, 1, 4, 1);
  auto mlp = [](const Mlp& net, Matrix h) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      h = (h * net.layers[i].weight.mat()).rowwise() + net.layers[i].bias.mat().row(0);
      if (i + 1 < net.layers.size()) h = h.cwiseMax(0.0);
    }
    return h;
  };
  const double expect = (mlp(m.decoder, mlp(m.encoder, s.states[0])) - s.states[0]).squaredNorm();
  EXPECT_NEAR(loss_reconstruction(m, s), expect, 1e-12);
}

TEST(LinearityLoss, ExactLinearDynamicsIsZero) {
  auto m = AikaeModel::create(small(Variant::ikae), 0, Init::zero);
  Rng rng(4);
  m.K = random_stable_matrix(4, 0.9, rng);
  SampleSet s = self_generated(m, rng, 6, 4);
  EXPECT_LE(loss_linearity(m, s, 1.0), 1e-24);
  EXPECT_THROW(loss_linearity(m, s, -1.0), ConfigError);
}

TEST(LinearityLoss, AlphaSplitsTheResidual) {
  auto m = AikaeModel::create(small(Variant::aikae), 5);
  Rng rng(5);
  m.K = rng.normal_tensor(6, 6, 0.4);
  SampleSet s = random_samples(rng, 4, 4, 3);
  // Independent oracle of both residual sums.
  auto enc = [&](const Matrix& x) { return encode(m, Tensor(x).flattened()).z.mat(); };
  double inv = 0, aug = 0;
  for (Eigen::Index r = 0; r < 4; ++r) {
    Matrix z = enc(s.states[0].row(r));
    for (std::size_t tau = 1; tau <= 3; ++tau) {
      z = z * m.K.mat().transpose();
      Matrix target = enc(s.states[tau].row(r));
      inv += (z.leftCols(4) - target.leftCols(4)).squaredNorm();
      aug += (z.rightCols(2) - target.rightCols(2)).squaredNorm();
    }
  }
  const double count = 4.0 * 3.0;
  EXPECT_NEAR(loss_linearity(m, s, 1.0), (inv + aug) / count, 1e-12);
  EXPECT_NEAR(loss_linearity(m, s, 0.0), inv / count, 1e-12);
  EXPECT_NEAR(loss_linearity(m, s, 0.5), (inv + 0.5 * aug) / count, 1e-12);
  EXPECT_GE(loss_linearity(m, s, 1.0), loss_linearity(m, s, 0.0));
}

TEST(LinearityLoss, AlphaZeroIgnoresAugmentationTargets) {
  auto m = AikaeModel::create(small(Variant::aikae), 6);
  Rng rng(6);
  SampleSet s = random_samples(rng, 3, 4, 2);
  // With the augmentation columns of K zeroed, chi only reaches the augmentation residual.
  m.K = rng.normal_tensor(6, 6, 0.4);
  m.K.mat().rightCols(2).setZero();
  auto perturbed = m;
  for (auto& l : perturbed.chi.layers) l.bias.mat().array() += 3.0;
  EXPECT_NEAR(loss_linearity(perturbed, s, 0.0), loss_linearity(m, s, 0.0), 1e-12);
  EXPECT_NE(loss_linearity(perturbed, s, 1.0), loss_linearity(m, s, 1.0));
}

TEST(OrthogonalityLoss, ClosedForms) {
  auto m = AikaeModel::create(small(Variant::ikae, 2, 0), 0);
  EXPECT_EQ(loss_orthogonality(m), 0.0);
  const double th = 0.3;
  m.K = Tensor::matrix({{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}});
  EXPECT_NEAR(loss_orthogonality(m), 0.0, 1e-28);
  auto k3 = AikaeModel::create(small(Variant::aikae, 2, 1), 0);
  k3.K = Tensor(Matrix(2.0 * Matrix::Identity(3, 3)));
  EXPECT_DOUBLE_EQ(loss_orthogonality(k3), 27.0);
}

TEST(TotalLoss, WeightedSumAndZeroWeightsDrop) {
  auto m = AikaeModel::create(small(Variant::aikae), 7);
  Rng rng(7);
  m.K = rng.normal_tensor(6, 6, 0.5);
  SampleSet s = random_samples(rng, 4, 4, 2);
  LossWeights w{0.7, 1.0, 1.3, 0.2, 0.5, OrthMode::kTk};
  GradTape tape;
  auto b = bind_model(tape, m);
  LossTerms t = loss_terms(b, s, w);
  EXPECT_FALSE(t.recon.has_value());
  const double expect = 0.7 * tape.scalar(t.pred) + 1.3 * tape.scalar(t.lin) + 0.2 * tape.scalar(t.orth);
  EXPECT_NEAR(tape.scalar(t.total), expect, 1e-12);

  // With w_orth = 0 the gradient on K equals that of pred + lin alone.
  LossWeights no_orth = w;
  no_orth.w_orth = 0;
  GradTape t1, t2;
  auto v1 = model_vars(t1, m, true), v2 = model_vars(t2, m, true);
  Var l1 = bound_total(t1, m, v1, s, no_orth);
  auto b2 = bind_model(t2, m, v2);
  LossTerms parts = loss_terms(b2, s, w);
  Var l2 = ad::add(ad::scale(parts.pred, 0.7), ad::scale(parts.lin, 1.3));
  t1.backward(l1);
  t2.backward(l2);
  for (std::size_t i = 0; i < v1.size(); ++i) EXPECT_LE(max_abs_diff(t1.grad(v1[i]), t2.grad(v2[i])), 1e-12);
}

TEST(TotalLoss, EveryTermPassesGradcheck) {
  Rng rng(8);
  for (Variant v : {Variant::aikae, Variant::ikae, Variant::ikae_zp, Variant::kae}) {
    ModelConfig c = small(v);
    c.revin = true;
    auto m = AikaeModel::create(c, 9);
    m.K = rng.normal_tensor(m.latent_dim(), m.latent_dim(), 0.4);
    m.revin.gain(0, 0) = 1.3;
    SampleSet s = random_samples(rng, 4, 4, 2);
    for (OrthMode orth : {OrthMode::kTk, OrthMode::norm_drift}) {
      LossWeights w{1.0, 0.5, 0.8, 0.3, 0.6, orth};
      auto loss = [&](GradTape& tape, const std::vector<Var>& p) { return bound_total(tape, m, p, s, w); };
      GradcheckOptions o;
      o.coords_per_param = 6;
      EXPECT_LT(gradcheck(loss, m.parameter_values(), o).max_rel_error, 1e-4) << to_string(v) << ' ' << to_string(orth);
    }
  }
}

TEST(Samples, DelayModeMasksPartialBlock) {
  auto ds = make_dataset("r", Tensor(Matrix(Eigen::VectorXd::LinSpaced(20, 0, 19))), SplitLengths{20, 0, 0});
  SampleSet s = delay_samples(ds, Split::train, 4, 6);
  EXPECT_EQ(s.max_tau(), 2u);
  EXPECT_EQ(s.size(), window_count(20, 4, 6));
  ASSERT_EQ(s.masks.size(), 3u);
  EXPECT_EQ(s.states[1].row(0), (Matrix(1, 4) << 4, 5, 6, 7).finished());
  EXPECT_EQ(s.masks[2].row(0), (Matrix(1, 4) << 1, 1, 0, 0).finished());
  EXPECT_FALSE(s.tau_complete(2));
  SampleSet full = delay_samples(ds, Split::train, 4, 8);
  EXPECT_TRUE(full.masks.empty());
  EXPECT_EQ(auto_max_tau(96, 720), 8u);
}

TEST(Samples, StateModeGroupsDerivativesAndMask) {
  Matrix v(6, 4);
  for (Eigen::Index t = 0; t < 6; ++t)
    for (Eigen::Index c = 0; c < 4; ++c) v(t, c) = static_cast<double>(10 * c + t * t);
  auto ds = make_dataset("s", Tensor(v), SplitLengths{6, 0, 0});
  SampleSet s = state_samples(ds, Split::train, 2, 2, true);
  // 6 rows, need max_tau + 2 = 4 consecutive rows: 3 starts, 2 groups.
  EXPECT_EQ(s.size(), 6u);
  EXPECT_EQ(s.dim(), 4u);
  EXPECT_EQ(s.states[0].row(0), (Matrix(1, 4) << 0, 10, 1, 1).finished());
  EXPECT_EQ(s.channels[3], 1u);
  ds.mask = {1, 1, 1, 0, 1, 1};
  EXPECT_EQ(state_samples(ds, Split::train, 1).size(), 3u);  // pairs (0,1), (1,2), (4,5)
  EXPECT_THROW(state_samples(ds, Split::train, 1, 3), ConfigError);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  auto m = AikaeModel::create(small(Variant::ikae), 10);
  Rng rng(9);
  TrainConfig tc;
  tc.epochs = 0;
  auto r = train(m, random_samples(rng, 8, 4, 2), {}, tc);
  EXPECT_EQ(r.best_epoch, 0u);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.model.parameter_values(), m.parameter_values());
}

TEST(Train, LearnsDelayedGeometricDecay) {
  auto ds = geometric(120, 0.9);
  SampleSet tr = delay_samples(ds, Split::train, 2, 2);
  SampleSet va = delay_samples(ds, Split::val, 2, 2);
  ModelConfig c = small(Variant::ikae, 2, 0);
  c.delay = 2;
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 16;
  tc.weights.w_orth = 0;  // x' = 0.9x is not norm preserving
  auto r = train(AikaeModel::create(c, 11), tr, va, tc);
  EXPECT_LT(evaluate(r.model, va, tc.weights).mse, 1e-4);
  EXPECT_EQ(r.log.size(), 200u);
}

TEST(Train, DeterministicAndSelectsBestEpoch) {
  auto ds = geometric(60, 0.8);
  SampleSet tr = delay_samples(ds, Split::train, 2, 2);
  SampleSet va = delay_samples(ds, Split::val, 2, 2);
  TrainConfig tc;
  tc.epochs = 15;
  tc.batch_size = 4;
  tc.seed = 3;
  auto a = train(AikaeModel::create(small(Variant::aikae, 2, 2), 3), tr, va, tc);
  auto b = train(AikaeModel::create(small(Variant::aikae, 2, 2), 3), tr, va, tc);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].val_loss, b.log[i].val_loss);
  }
  EXPECT_EQ(a.model.parameter_values(), b.model.parameter_values());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : a.log) best = std::min(best, rec.val_loss);
  EXPECT_EQ(a.best_val_loss, best);
  EXPECT_EQ(a.log[a.best_epoch - 1].val_loss, best);
}

TEST(Train, NonFiniteLossNamesTerm) {
  auto m = AikaeModel::create(small(Variant::ikae), 12);
  Rng rng(10);
  SampleSet s = random_samples(rng, 4, 4, 1);
  s.states[1](0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train(m, s, {}, tc);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("prediction"), std::string::npos) << e.what();
  }
}

TEST(Train, MetricLogColumns) {
  std::vector<EpochRecord> log{{1, 0.5, 0.4, 0.3, 0.2, 0.01}};
  auto p = std::filesystem::temp_directory_path() / "aikae_metrics.csv";
  write_metric_log(log, p);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,val_mse,val_mae,wall_seconds");
  std::filesystem::remove(p);
}

TEST(HyperSearch, GridAndSelection) {
  auto grid = default_hyper_grid();
  EXPECT_EQ(grid.size(), 12u);
  EXPECT_EQ(grid.front().k, 3u);
  EXPECT_EQ(grid.back().batch_size, 512u);

  auto ds = geometric(40, 0.85);
  SampleSet tr = delay_samples(ds, Split::train, 2, 2);
  SampleSet va = delay_samples(ds, Split::val, 2, 2);
  TrainConfig tc;
  tc.epochs = 2;
  ModelConfig base = small(Variant::ikae, 2, 0);
  auto one = hyper_search(base, tc, tr, va, {{1, 4, 8}});
  EXPECT_EQ(one.best, 0u);
  ASSERT_EQ(one.rows.size(), 1u);

  auto tie = hyper_search(base, tc, tr, va, {{1, 4, 8}, {1, 4, 8}});
  EXPECT_EQ(tie.best, 0u);
  EXPECT_EQ(tie.rows[0].val_mse, tie.rows[1].val_mse);
  EXPECT_THROW(hyper_search(base, tc, tr, va, {}), ConfigError);
}
