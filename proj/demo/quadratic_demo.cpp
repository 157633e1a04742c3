// Learns the quadratic map x1 <- a x1, x2 <- b x2 + c x1^2 with an AIKAE and an
// IKAE and compares their 20-step rollouts against the exact trajectory.
//
//   quadratic_demo [epochs] [width] [layers] [seed] [w_orth] [lr]

#include "aikae/aikae.hpp"

#include <cstdlib>
#include <iostream>

using namespace aikae;

namespace {

constexpr double kA = 0.9, kB = 0.5, kC = 1.0;

SampleSet trajectories(std::size_t count, std::size_t length, std::size_t max_tau, Rng& rng) {
  SampleSet all;
  for (std::size_t i = 0; i < count; ++i) {
    auto ds = gen_koopman_quadratic(kA, kB, kC, length, {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    set_contiguous_splits(ds, {length, 0, 0});
    all.append(state_samples(ds, Split::train, max_tau));
  }
  return all;
}

double rollout_mse(const AikaeModel& model, Rng& rng, std::size_t cases, std::size_t steps) {
  MetricSum err;
  for (std::size_t i = 0; i < cases; ++i) {
    auto truth = gen_koopman_quadratic(kA, kB, kC, steps + 1, {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    Tensor x0 = Tensor::vector({truth.values(0, 0), truth.values(0, 1)});
    Tensor pred = predict(model, x0, steps);
    err.add(pred.mat(), truth.values.mat().bottomRows(static_cast<Eigen::Index>(steps)));
  }
  return err.result().mse;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 300;
  const std::size_t width = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 32;
  const std::size_t layers = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 2;
  const std::uint64_t seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 0;
  const double w_orth = argc > 5 ? std::strtod(argv[5], nullptr) : 0.0;
  const double lr = argc > 6 ? std::strtod(argv[6], nullptr) : 1e-3;
  const std::size_t max_tau = 10;

  Rng data_rng(seed + seed_offset::synth);
  SampleSet train_set = trajectories(32, 40, max_tau, data_rng);
  SampleSet val_set = trajectories(8, 40, max_tau, data_rng);

  for (Variant v : {Variant::aikae, Variant::ikae}) {
    ModelConfig mc;
    mc.variant = v;
    mc.n = 2;
    mc.p = v == Variant::aikae ? 1 : 0;
    mc.k = layers;
    mc.w = width;
    mc.chi_hidden = {32, 32};
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = 64;
    tc.seed = seed;
    tc.adam.lr = lr;
    tc.weights.w_orth = w_orth;  // the system contracts; an orthogonal K cannot represent it
    TrainResult r = train(AikaeModel::create(mc, seed), train_set, val_set, tc);
    Rng test_rng(seed + 77);
    const double mse = rollout_mse(r.model, test_rng, 16, 20);
    std::cout << to_string(v) << ": parameters " << r.model.parameter_count() << ", best epoch " << r.best_epoch << ", val loss "
              << r.best_val_loss << ", 20-step rollout MSE " << mse << '\n';
  }
  return 0;
}
