#pragma once

#include "aikae/data.hpp"
#include "aikae/losses.hpp"
#include "aikae/optim.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace aikae {

// ---------------------------------------------------------------------------
// Sample construction

/// Latent steps needed to cover T_P raw steps with blocks of T_L.
inline std::size_t auto_max_tau(std::size_t lookback, std::size_t horizon) { return blocks_for_horizon(lookback, horizon); }

/// Delayed univariate samples: the lookback block of T_L values is the state
/// at tau = 0 and the following blocks are the states at tau = 1..max_tau.
/// Values past the supervised span (T_P, or max_tau * T_L when max_tau is
/// given) are masked out. Order matches windows(): channel-major, then start.
inline SampleSet delay_samples(const SeriesDataset& ds, Split split, std::size_t lookback, std::size_t horizon,
                               std::size_t stride = 1, std::size_t max_tau = 0) {
  if (lookback == 0 || horizon == 0) throw ConfigError("delay samples: T_L and T_P must be positive");
  const std::size_t taus = max_tau ? max_tau : auto_max_tau(lookback, horizon);
  const std::size_t span = max_tau ? max_tau * lookback : horizon;
  const RowRange r = ds.range(split);
  const std::size_t count = window_count(r.size(), lookback, span, stride);
  const auto n = static_cast<Eigen::Index>(lookback);
  const auto rows = static_cast<Eigen::Index>(count * ds.channels());

  SampleSet s;
  s.states.assign(taus + 1, Matrix::Zero(rows, n));
  const bool partial = taus * lookback != span;
  if (partial) s.masks.assign(taus + 1, Matrix::Ones(rows, n));
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < ds.channels(); ++c) {
    for (std::size_t i = 0; i < count; ++i, ++row) {
      const std::size_t start = r.begin + i * stride;
      s.channels.push_back(c);
      for (std::size_t tau = 0; tau <= taus; ++tau) {
        for (std::size_t j = 0; j < lookback; ++j) {
          const std::size_t offset = tau * lookback + j;  // from the window start
          const bool supervised = offset < lookback + span;
          if (supervised) {
            s.states[tau](row, static_cast<Eigen::Index>(j)) = ds.values(start + offset, c);
          } else {
            s.masks[tau](row, static_cast<Eigen::Index>(j)) = 0.0;
          }
        }
      }
    }
  }
  return s;
}

/// Multivariate state samples x_t, ..., x_{t+max_tau}. Channels are cut into
/// consecutive groups of `group` (0 = all channels), each group a separate
/// series; with `derivative` each state is x_t joined with x_{t+1} - x_t.
/// Samples touching an unobserved row are skipped.
inline SampleSet state_samples(const SeriesDataset& ds, Split split, std::size_t max_tau, std::size_t group = 0,
                               bool derivative = false, std::size_t stride = 1) {
  if (max_tau == 0) throw ConfigError("state samples: max_tau must be positive");
  if (stride == 0) throw ConfigError("state samples: stride must be positive");
  const std::size_t g = group ? group : ds.channels();
  if (ds.channels() % g != 0) {
    throw ConfigError("state samples: " + std::to_string(ds.channels()) + " channels do not split into groups of " + std::to_string(g));
  }
  const RowRange r = ds.range(split);
  const std::size_t extra = derivative ? 1 : 0;
  const std::size_t need = max_tau + 1 + extra;
  std::vector<std::size_t> starts;
  for (std::size_t s = r.begin; s + need <= r.end; s += stride) {
    bool ok = true;
    for (std::size_t t = s; t < s + need; ++t) ok = ok && ds.observed(t);
    if (ok) starts.push_back(s);
  }
  const std::size_t groups = ds.channels() / g;
  const std::size_t n = derivative ? 2 * g : g;
  const auto rows = static_cast<Eigen::Index>(starts.size() * groups);
  SampleSet out;
  out.states.assign(max_tau + 1, Matrix(rows, static_cast<Eigen::Index>(n)));
  Eigen::Index row = 0;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const auto c0 = static_cast<Eigen::Index>(gi * g);
    for (std::size_t s : starts) {
      out.channels.push_back(gi);
      for (std::size_t tau = 0; tau <= max_tau; ++tau) {
        const auto t = static_cast<Eigen::Index>(s + tau);
        auto x = ds.values.mat().row(t).segment(c0, static_cast<Eigen::Index>(g));
        auto dst = out.states[tau].row(row);
        dst.head(static_cast<Eigen::Index>(g)) = x;
        if (derivative) dst.tail(static_cast<Eigen::Index>(g)) = ds.values.mat().row(t + 1).segment(c0, static_cast<Eigen::Index>(g)) - x;
      }
      ++row;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double loss = 0.0;
  double mse = 0.0;  // masked prediction error over tau = 1..max_tau, data space
  double mae = 0.0;
};

inline EvalResult evaluate(const AikaeModel& model, const SampleSet& s, const LossWeights& w, std::size_t chunk = 512) {
  EvalResult r;
  if (s.empty()) return r;
  MetricSum err;
  double loss = 0.0;
  for (std::size_t begin = 0; begin < s.size(); begin += chunk) {
    const std::size_t count = std::min(chunk, s.size() - begin);
    SampleSet part = s.slice(begin, count);
    GradTape tape;
    auto b = bind_model(tape, model);
    LossTerms terms = loss_terms(b, part, w);
    loss += tape.scalar(terms.total) * static_cast<double>(count);

    auto preds = predict_batch(model, part.states[0], part.max_tau(), detail::batch_channels(part));
    for (std::size_t tau = 1; tau <= part.max_tau(); ++tau) {
      const Matrix& p = preds[tau - 1];
      if (part.masks.empty()) {
        err.add(p, part.states[tau]);
      } else {
        const Matrix& m = part.masks[tau];
        const Matrix diff = (p - part.states[tau]).cwiseProduct(m);
        err.se += diff.squaredNorm();
        err.ae += diff.cwiseAbs().sum();
        err.count += m.sum();
      }
    }
  }
  r.loss = loss / static_cast<double>(s.size());
  const Metrics m = err.result();
  r.mse = m.mse;
  r.mae = m.mae;
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double wall_seconds = 0.0;
};

struct TrainConfig {
  AdamOptions adam;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  LossWeights weights;
  double clip = 5.0;  // global gradient norm; 0 disables
  std::size_t eval_chunk = 512;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  AikaeModel model;  // parameters of the best validation epoch
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  double best_val_loss = 0.0;
};

namespace detail {
inline void check_terms(GradTape& tape, const LossTerms& t, std::size_t epoch, std::size_t batch) {
  auto check = [&](const char* name, Var v) {
    if (!std::isfinite(tape.scalar(v))) {
      throw NumericalError(std::string("training: ") + name + " loss is not finite at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch));
    }
  };
  check("prediction", t.pred);
  if (t.recon) check("reconstruction", *t.recon);
  check("linearity", t.lin);
  check("orthogonality", t.orth);
}
}  // namespace detail

/// One optimizer step on a batch; returns the batch's total loss.
inline double train_step(AikaeModel& model, AdamState& adam, const SampleSet& batch, const TrainConfig& cfg,
                         const std::vector<std::string>& names, std::size_t epoch = 0, std::size_t batch_index = 0) {
  GradTape tape;
  auto vars = model_vars(tape, model, true);
  auto b = bind_model(tape, model, vars);
  LossTerms terms = loss_terms(b, batch, cfg.weights);
  detail::check_terms(tape, terms, epoch, batch_index);
  const double value = tape.scalar(terms.total);
  tape.backward(terms.total);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.emplace_back(tape.grad(v));
  if (cfg.clip > 0.0) clip_global_norm(grads, cfg.clip);
  adam_step(adam, model.parameters(), grads, names);
  return value;
}

/// Mini-batch Adam over shuffled samples. Deterministic for a fixed seed; the
/// returned model is the one with the lowest validation loss (train loss when
/// there is no validation set).
inline TrainResult train(AikaeModel model, const SampleSet& train_set, const SampleSet& val_set, const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  cfg.weights.validate();
  TrainResult result;
  result.model = model;
  if (cfg.epochs == 0) return result;
  if (train_set.empty()) throw ConfigError("train: no training samples");
  train_set.validate();

  const auto t0 = std::chrono::steady_clock::now();
  const auto names = model.parameter_names();
  AdamState adam(cfg.adam);
  Rng rng(cfg.seed + seed_offset::shuffle);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const bool has_val = !val_set.empty();
  result.best_val_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
      SampleSet batch = train_set.subset(idx);
      sum += train_step(model, adam, batch, cfg, names, epoch, batch_index) * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / static_cast<double>(order.size());
    const EvalResult ev = evaluate(model, has_val ? val_set : train_set, cfg.weights, cfg.eval_chunk);
    rec.val_loss = ev.loss;
    rec.val_mse = ev.mse;
    rec.val_mae = ev.mae;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.val_loss)) throw NumericalError("training: validation loss is not finite at epoch " + std::to_string(epoch));
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      result.model = model;
    }
    result.log.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
  }
  return result;
}

inline void write_metric_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_mse,val_mae,wall_seconds\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << detail::format_double(r.train_loss) << ',' << detail::format_double(r.val_loss) << ','
        << detail::format_double(r.val_mse) << ',' << detail::format_double(r.val_mae) << ',' << r.wall_seconds << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Hyperparameter search

struct HyperPoint {
  std::size_t k = 4;
  std::size_t w = 256;
  std::size_t batch_size = 128;
};

/// k in {3, 4}, w in {128, 256}, batch size in {4, 128, 512}.
inline std::vector<HyperPoint> default_hyper_grid() {
  std::vector<HyperPoint> grid;
  for (std::size_t k : {3, 4})
    for (std::size_t w : {128, 256})
      for (std::size_t b : {4, 128, 512}) grid.push_back({k, w, b});
  return grid;
}

struct HyperRow {
  HyperPoint point;
  std::size_t parameters = 0;
  std::size_t best_epoch = 0;
  double val_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct HyperSearchResult {
  std::size_t best = 0;
  std::vector<HyperRow> rows;
  AikaeModel best_model;
};

/// Trains every grid point from the same seed and keeps the lowest validation
/// MSE; ties go to the point listed first.
inline HyperSearchResult hyper_search(const ModelConfig& base, const TrainConfig& tc, const SampleSet& train_set,
                                      const SampleSet& val_set, const std::vector<HyperPoint>& grid) {
  if (grid.empty()) throw ConfigError("hyper_search: empty grid");
  HyperSearchResult out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ModelConfig mc = base;
    mc.k = grid[i].k;
    mc.w = grid[i].w;
    TrainConfig cfg = tc;
    cfg.batch_size = grid[i].batch_size;
    TrainResult tr = train(AikaeModel::create(mc, tc.seed), train_set, val_set, cfg);
    const EvalResult ev = evaluate(tr.model, val_set.empty() ? train_set : val_set, cfg.weights, cfg.eval_chunk);
    HyperRow row{grid[i], tr.model.parameter_count(), tr.best_epoch, ev.loss, ev.mse, ev.mae};
    if (i == 0 || row.val_mse < out.rows[out.best].val_mse) {
      out.best = i;
      out.best_model = tr.model;
    }
    out.rows.push_back(row);
  }
  return out;
}

inline void write_hyper_table(const HyperSearchResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "k,w,batch_size,parameters,best_epoch,val_loss,val_mse,val_mae,selected\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    out << row.point.k << ',' << row.point.w << ',' << row.point.batch_size << ',' << row.parameters << ',' << row.best_epoch << ','
        << detail::format_double(row.val_loss) << ',' << detail::format_double(row.val_mse) << ','
        << detail::format_double(row.val_mae) << ',' << (i == r.best ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace aikae
