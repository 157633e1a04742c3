#pragma once

#include "aikae/assimilation.hpp"
#include "aikae/checkpoint.hpp"
#include "aikae/config.hpp"
#include "aikae/data.hpp"
#include "aikae/gradcheck.hpp"
#include "aikae/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace aikae {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitNumerical = 2, kExitIo = 3 };

// ---------------------------------------------------------------------------
// Files

inline fs::path output_path(const RunConfig& cfg, const std::string& name) {
  fs::path p(name);
  return p.is_absolute() ? p : cfg.out_dir() / p;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// run.json: the fully resolved configuration plus versions.
inline void write_run_record(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.out_dir());
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = cfg.seed();
  j["config"] = cfg.to_json();
  j["versions"] = {{"aikae", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  write_json(cfg.out_dir() / "run.json", j);
}

// ---------------------------------------------------------------------------
// Data preparation

inline SeriesDataset synthesize(const RunConfig& cfg) {
  const std::string system = cfg.str("synth.system");
  const std::size_t length = cfg.count("synth.length");
  const double noise = cfg.real("synth.noise");
  const std::uint64_t seed = cfg.seed();
  SeriesDataset ds;
  if (system == "linear") {
    Rng rng(seed + seed_offset::synth + 1);
    const std::size_t dim = cfg.count("synth.dim");
    if (dim == 0) throw ConfigError("synth.dim must be positive");
    Tensor a = random_stable_matrix(dim, cfg.real("synth.radius"), rng);
    ds = gen_linear(a, length, rng.normal_vector(dim), noise, seed);
  } else if (system == "koopman_quadratic") {
    auto x0 = cfg.reals("synth.x0");
    if (x0.size() != 2) throw ConfigError("synth.x0 must have two entries");
    ds = gen_koopman_quadratic(cfg.real("synth.a"), cfg.real("synth.b"), cfg.real("synth.c"), length, {x0[0], x0[1]}, noise, seed);
  } else if (system == "pixels") {
    ds = gen_pixels(cfg.count("synth.pixels"), cfg.count("synth.bands"), length, cfg.real("synth.period"), noise, seed);
  } else {
    throw ConfigError("unknown synth.system '" + system + "' (expected linear, koopman_quadratic or pixels)");
  }
  const double rate = cfg.real("synth.mask_rate");
  if (rate > 0.0) ds = mask_irregular(ds, rate, seed);
  return ds;
}

inline void apply_splits(const RunConfig& cfg, SeriesDataset& ds) {
  const std::string s = cfg.str("data.splits");
  if (s == "auto") {
    set_contiguous_splits(ds, default_splits(ds.length()));
  } else if (s == "ett_hourly") {
    set_ett_hourly_splits(ds, cfg.count("data.lookback"));
  } else {
    auto parts = cfg.counts("data.splits");
    if (parts.size() != 3) throw ConfigError("data.splits must be auto, ett_hourly or three counts");
    set_contiguous_splits(ds, {parts[0], parts[1], parts[2]});
  }
}

/// The configured dataset with its splits, normalized when requested.
inline SeriesDataset load_data(const RunConfig& cfg) {
  SeriesDataset ds = cfg.str("data.path").empty() ? synthesize(cfg) : load_csv(cfg.str("data.path"));
  apply_splits(cfg, ds);
  return cfg.flag("data.normalize") ? ds.normalized() : ds;
}

struct Prepared {
  SeriesDataset data;
  SampleSet train, val, test;
  ModelConfig model;
};

inline bool delay_mode(const RunConfig& cfg) {
  const std::string m = cfg.str("data.mode");
  if (m != "delay" && m != "state") throw ConfigError("data.mode must be delay or state, got '" + m + "'");
  return m == "delay";
}

inline std::size_t state_max_tau(const RunConfig& cfg) {
  const std::size_t t = cfg.count("train.max_tau");
  return t ? t : 8;
}

inline Prepared prepare(const RunConfig& cfg) {
  Prepared p;
  p.data = load_data(cfg);
  if (delay_mode(cfg)) {
    const std::size_t tl = cfg.count("data.lookback");
    const std::size_t tp = cfg.count("data.horizon");
    const std::size_t tau = cfg.count("train.max_tau");
    p.train = delay_samples(p.data, Split::train, tl, tp, cfg.count("data.stride"), tau);
    p.val = delay_samples(p.data, Split::val, tl, tp, 1, tau);
    p.test = delay_samples(p.data, Split::test, tl, tp, 1, tau);
    p.model = model_config(cfg, tl, p.data.channels());
  } else {
    const std::size_t group = cfg.count("data.group") ? cfg.count("data.group") : p.data.channels();
    const bool deriv = cfg.flag("data.derivative");
    const std::size_t tau = state_max_tau(cfg);
    p.train = state_samples(p.data, Split::train, tau, group, deriv, cfg.count("data.stride"));
    p.val = state_samples(p.data, Split::val, tau, group, deriv);
    p.test = state_samples(p.data, Split::test, tau, group, deriv);
    p.model = model_config(cfg, deriv ? 2 * group : group, p.data.channels() / group);
  }
  return p;
}

// ---------------------------------------------------------------------------
// train

inline nlohmann::json metrics_json(const EvalResult& e, bool present) {
  if (!present) return nullptr;
  return {{"loss", e.loss}, {"mse", e.mse}, {"mae", e.mae}};
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
  write_run_record(cfg, "train");
  Prepared p = prepare(cfg);
  TrainConfig tc = train_config(cfg);
  tc.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss << " val_mse " << r.val_mse << '\n';
  };
  AikaeModel model = AikaeModel::create(p.model, cfg.seed());
  TrainResult result = train(model, p.train, p.val, tc);
  save_checkpoint(result.model, cfg.out_dir() / "model.json");
  write_metric_log(result.log, cfg.out_dir() / "metrics.csv");

  nlohmann::json s;
  s["command"] = "train";
  s["variant"] = cfg.str("model.variant");
  s["n"] = p.model.n;
  s["d"] = p.model.latent_dim();
  s["parameters"] = result.model.parameter_count();
  s["epochs"] = tc.epochs;
  s["best_epoch"] = result.best_epoch;
  s["samples"] = {{"train", p.train.size()}, {"val", p.val.size()}, {"test", p.test.size()}};
  s["val"] = metrics_json(evaluate(result.model, p.val, tc.weights), !p.val.empty());
  s["test"] = metrics_json(evaluate(result.model, p.test, tc.weights), !p.test.empty());
  write_json(cfg.out_dir() / "summary.json", s);
  out << "parameters " << s["parameters"] << ", best epoch " << result.best_epoch << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct HorizonRow {
  std::size_t horizon = 0;
  std::size_t windows = 0;
  Metrics model, persistence, linear;
};

/// Delayed univariate evaluation on the test split for one horizon T_P.
inline HorizonRow eval_delay_horizon(const AikaeModel& model, const SeriesDataset& ds, std::size_t horizon) {
  const std::size_t tl = model.n();
  auto test = windows(ds, Split::test, tl, horizon);
  if (test.empty()) {
    throw ConfigError("eval: horizon " + std::to_string(horizon) + " with lookback " + std::to_string(tl) + " exceeds the test split");
  }
  HorizonRow row;
  row.horizon = horizon;
  row.windows = test.size();
  Matrix x(static_cast<Eigen::Index>(test.size()), static_cast<Eigen::Index>(tl));
  Matrix truth(static_cast<Eigen::Index>(test.size()), static_cast<Eigen::Index>(horizon));
  std::vector<std::size_t> ch;
  for (std::size_t i = 0; i < test.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = test[i].lookback.mat().row(0);
    truth.row(static_cast<Eigen::Index>(i)) = test[i].target.mat().row(0);
    ch.push_back(test[i].channel);
  }
  const std::size_t steps = blocks_for_horizon(tl, horizon);
  Matrix pred(x.rows(), static_cast<Eigen::Index>(steps * tl));
  const std::size_t chunk = 512;
  for (std::size_t b = 0; b < test.size(); b += chunk) {
    const auto rows = static_cast<Eigen::Index>(std::min(chunk, test.size() - b));
    std::vector<std::size_t> cpart(ch.begin() + static_cast<std::ptrdiff_t>(b), ch.begin() + static_cast<std::ptrdiff_t>(b) + rows);
    auto blocks = predict_batch(model, x.middleRows(static_cast<Eigen::Index>(b), rows), steps, cpart);
    for (std::size_t s = 0; s < steps; ++s)
      pred.block(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(s * tl), rows, static_cast<Eigen::Index>(tl)) = blocks[s];
  }
  const auto h = static_cast<Eigen::Index>(horizon);
  MetricSum m;
  m.add(Matrix(pred.leftCols(h)), truth);
  row.model = m.result();

  Matrix persist = x.col(x.cols() - 1).replicate(1, h);
  MetricSum pm;
  pm.add(persist, truth);
  row.persistence = pm.result();

  auto train_windows = windows(ds, Split::train, tl, horizon);
  if (train_windows.empty()) {
    row.linear = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  } else {
    LinearBaseline lin = baseline_linear(train_windows);
    MetricSum lm;
    lm.add(Matrix(x * lin.W.mat().transpose()), truth);
    row.linear = lm.result();
  }
  return row;
}

/// State-mode evaluation: `horizon` latent steps from every test state.
inline HorizonRow eval_state_horizon(const AikaeModel& model, const SeriesDataset& ds, std::size_t horizon, std::size_t group,
                                     bool derivative) {
  SampleSet test = state_samples(ds, Split::test, horizon, group, derivative);
  if (test.empty()) throw ConfigError("eval: horizon " + std::to_string(horizon) + " exceeds the test split");
  if (test.dim() != model.n()) throw ConfigError("eval: data states have dimension " + std::to_string(test.dim()) + ", model expects " + std::to_string(model.n()));
  HorizonRow row;
  row.horizon = horizon;
  row.windows = test.size();
  auto preds = predict_batch(model, test.states[0], horizon, test.channels);
  MetricSum m, pm, lm;
  for (std::size_t tau = 1; tau <= horizon; ++tau) {
    m.add(preds[tau - 1], test.states[tau]);
    pm.add(test.states[0], test.states[tau]);
  }
  row.model = m.result();
  row.persistence = pm.result();
  SampleSet pairs = state_samples(ds, Split::train, 1, group, derivative);
  if (pairs.empty()) {
    row.linear = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  } else {
    Tensor k = lstsq_koopman(Tensor(Matrix(pairs.states[0].transpose())), Tensor(Matrix(pairs.states[1].transpose())));
    Matrix z = test.states[0];
    for (std::size_t tau = 1; tau <= horizon; ++tau) {
      z = z * k.mat().transpose();
      lm.add(z, test.states[tau]);
    }
    row.linear = lm.result();
  }
  return row;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  write_run_record(cfg, "eval");
  if (cfg.str("eval.checkpoint").empty()) throw ConfigError("eval: eval.checkpoint is required");
  AikaeModel model = load_checkpoint(cfg.str("eval.checkpoint"));
  SeriesDataset ds = load_data(cfg);
  std::vector<std::size_t> horizons = cfg.counts("eval.horizons");
  if (horizons.empty()) horizons.push_back(cfg.count("data.horizon"));
  const bool delay = delay_mode(cfg);
  if (delay && cfg.count("data.lookback") != model.n()) {
    throw ConfigError("eval: data.lookback " + std::to_string(cfg.count("data.lookback")) + " does not match the checkpoint's n = " +
                      std::to_string(model.n()));
  }
  const std::size_t group = cfg.count("data.group") ? cfg.count("data.group") : ds.channels();

  std::ofstream csv(cfg.out_dir() / "eval.csv");
  if (!csv) throw IoError("cannot write eval.csv");
  csv << "horizon,windows,model_mse,model_mae,persistence_mse,persistence_mae,linear_mse,linear_mae\n";
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t h : horizons) {
    if (h == 0) throw ConfigError("eval: horizons must be positive");
    HorizonRow r = delay ? eval_delay_horizon(model, ds, h) : eval_state_horizon(model, ds, h, group, cfg.flag("data.derivative"));
    csv << r.horizon << ',' << r.windows << ',' << detail::format_double(r.model.mse) << ',' << detail::format_double(r.model.mae) << ','
        << detail::format_double(r.persistence.mse) << ',' << detail::format_double(r.persistence.mae) << ','
        << detail::format_double(r.linear.mse) << ',' << detail::format_double(r.linear.mae) << '\n';
    rows.push_back({{"horizon", r.horizon},
                    {"windows", r.windows},
                    {"model", {{"mse", r.model.mse}, {"mae", r.model.mae}}},
                    {"persistence", {{"mse", r.persistence.mse}, {"mae", r.persistence.mae}}},
                    {"linear", {{"mse", r.linear.mse}, {"mae", r.linear.mae}}}});
    out << "T_P=" << r.horizon << " mse " << r.model.mse << " mae " << r.model.mae << " (persistence " << r.persistence.mse << ")\n";
  }
  write_json(cfg.out_dir() / "summary.json", {{"command", "eval"}, {"variant", to_string(model.config.variant)}, {"rows", rows}});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// assimilate

struct ObservationFile {
  std::vector<Observation> observed;  // mask = 1
  std::vector<Observation> held_out;  // mask = 0 rows that carry values
  long last_t = 0;
};

inline long parse_timestamp(const std::string& cell, const std::string& where) {
  auto v = detail::parse_double(cell);
  if (!v) throw ParseError(where + ": timestamp '" + cell + "' is not a number");
  if (*v != std::floor(*v)) {
    throw ConfigError(where + ": non-integer timestamp " + cell +
                      " (fractional times would need a matrix logarithm of K and are not supported)");
  }
  if (*v < 0) throw ConfigError(where + ": negative timestamp " + cell);
  return static_cast<long>(*v);
}

/// CSV with columns t, mask, v1..vn. Held-out rows (mask 0) may leave values empty.
inline ObservationFile read_observations(const fs::path& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open observations " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const auto header = detail::split_csv(line);
  if (header.size() != n + 2 || header[0] != "t" || header[1] != "mask") {
    throw ParseError(path.string() + ":1: expected header t,mask and " + std::to_string(n) + " value columns");
  }
  ObservationFile f;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) throw ParseError(where + ": expected " + std::to_string(header.size()) + " columns");
    const long t = parse_timestamp(cells[0], where);
    if (cells[1] != "0" && cells[1] != "1") throw ParseError(where + ": mask must be 0 or 1");
    const bool observed = cells[1] == "1";
    std::vector<double> v;
    bool complete = true;
    for (std::size_t i = 2; i < cells.size(); ++i) {
      auto x = detail::parse_double(cells[i]);
      if (!x || !std::isfinite(*x)) {
        if (observed) throw ParseError(where + ": non-numeric value '" + cells[i] + "'");
        complete = false;
        break;
      }
      v.push_back(*x);
    }
    f.last_t = std::max(f.last_t, t);
    if (observed) {
      f.observed.push_back({t, Tensor::vector(v)});
    } else if (complete) {
      f.held_out.push_back({t, Tensor::vector(v)});
    }
  }
  return f;
}

/// Truth CSV with columns t, v1..vn.
inline std::vector<Observation> read_truth(const fs::path& path, std::size_t n) {
  SeriesDataset ds = load_csv(path);
  if (ds.channels() != n) throw ParseError(path.string() + ": expected " + std::to_string(n) + " value columns");
  std::vector<Observation> out;
  for (std::size_t r = 0; r < ds.length(); ++r) {
    out.push_back({parse_timestamp(ds.time_labels[r], path.string() + ":" + std::to_string(r + 2)),
                   Tensor::vector(std::span<const double>(ds.values.mat().row(static_cast<Eigen::Index>(r)).data(), n))});
  }
  return out;
}

inline void write_observations(const fs::path& path, const std::vector<Observation>& observed, const std::vector<Observation>& held_out) {
  std::vector<std::pair<const Observation*, int>> rows;
  for (const auto& o : observed) rows.push_back({&o, 1});
  for (const auto& o : held_out) rows.push_back({&o, 0});
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first->t < b.first->t; });
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t n = rows.empty() ? 0 : rows.front().first->x.size();
  out << "t,mask";
  for (std::size_t i = 0; i < n; ++i) out << ",v" << i + 1;
  out << '\n';
  for (const auto& [o, m] : rows) {
    out << o->t << ',' << m;
    for (double v : o->x.values()) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

inline int cmd_assimilate(const RunConfig& cfg, std::ostream& out) {
  write_run_record(cfg, "assimilate");
  if (cfg.str("assim.checkpoint").empty()) throw ConfigError("assimilate: assim.checkpoint is required");
  if (cfg.str("assim.obs").empty()) throw ConfigError("assimilate: assim.obs is required");
  AikaeModel model = load_checkpoint(cfg.str("assim.checkpoint"));
  ObservationFile obs = read_observations(cfg.str("assim.obs"), model.n());

  AssimilationProblem problem{&model, obs.observed, assimilation_options(cfg)};
  AssimilationResult result = assimilate(problem);

  nlohmann::json s;
  s["command"] = "assimilate";
  s["variant"] = to_string(model.config.variant);
  s["constraint"] = to_string(problem.options.constraint);
  s["observations"] = obs.observed.size();
  s["initial_cost"] = result.cost.front();
  s["final_cost"] = result.cost.back();
  s["iterations"] = result.iterations;
  s["converged"] = result.converged;
  s["z0"] = std::vector<double>(result.z0.z.values().begin(), result.z0.z.values().end());
  if (!obs.held_out.empty()) {
    Metrics m = forecast_score(model, result, obs.held_out);
    s["held_out"] = {{"count", obs.held_out.size()}, {"mse", m.mse}, {"mae", m.mae}};
  }
  if (!cfg.str("assim.truth").empty()) {
    Metrics m = forecast_score(model, result, read_truth(cfg.str("assim.truth"), model.n()));
    s["truth"] = {{"mse", m.mse}, {"mae", m.mae}};
  }
  const std::size_t horizon = cfg.count("assim.horizon");
  if (horizon > 0) {
    std::ofstream csv(cfg.out_dir() / "forecast.csv");
    if (!csv) throw IoError("cannot write forecast.csv");
    csv << "t";
    for (std::size_t i = 0; i < model.n(); ++i) csv << ",v" << i + 1;
    csv << '\n';
    auto states = rollout(model, result.z0, static_cast<std::size_t>(obs.last_t) + horizon);
    for (std::size_t h = 1; h <= horizon; ++h) {
      const std::size_t t = static_cast<std::size_t>(obs.last_t) + h;
      Tensor x = decode(model, states[t]);
      csv << t;
      for (double v : x.values()) csv << ',' << detail::format_double(v);
      csv << '\n';
    }
    s["forecast_file"] = "forecast.csv";
  }
  write_json(cfg.out_dir() / "summary.json", s);
  out << "final cost " << result.cost.back() << " after " << result.iterations << " iterations\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckTermReport {
  std::string term;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coords = 0;
  std::size_t skipped = 0;
  bool pass = false;
};

inline std::size_t model_input_dim(const RunConfig& cfg) {
  if (delay_mode(cfg)) return cfg.count("data.lookback");
  const std::size_t g = cfg.count("data.group");
  if (g == 0) throw ConfigError("gradcheck in state mode needs data.group");
  return cfg.flag("data.derivative") ? 2 * g : g;
}

/// Finite-difference checks of every loss term and the assimilation cost on a random batch.
inline std::vector<GradcheckTermReport> run_gradcheck(const RunConfig& cfg) {
  const ModelConfig mc = model_config(cfg, model_input_dim(cfg), 1);
  AikaeModel model = AikaeModel::create(mc, cfg.seed());
  Rng rng(cfg.seed() + seed_offset::gradcheck + 1);
  model.K.mat() += 0.1 * rng.normal_tensor(model.K.rows(), model.K.cols()).mat();
  if (mc.revin) {
    model.revin.gain.mat().array() += 0.1 * rng.normal_tensor(mc.channels, 1).mat().array();
    model.revin.bias.mat() += 0.1 * rng.normal_tensor(mc.channels, 1).mat();
  }

  const std::size_t batch = cfg.count("gradcheck.batch");
  if (batch == 0) throw ConfigError("gradcheck.batch must be positive");
  const std::size_t taus = cfg.count("train.max_tau") ? cfg.count("train.max_tau") : 2;
  SampleSet s;
  for (std::size_t t = 0; t <= taus; ++t) s.states.push_back(rng.normal_tensor(batch, mc.n).mat());
  s.channels.assign(batch, 0);

  const LossWeights w = loss_weights(cfg);
  GradcheckOptions opt;
  opt.h = cfg.real("gradcheck.h");
  opt.coords_per_param = cfg.count("gradcheck.coords");
  opt.seed = cfg.seed();
  const double tol = cfg.real("gradcheck.tol");
  const std::string corrupt = cfg.str("gradcheck.corrupt");
  const auto names = model.parameter_names();

  std::vector<GradcheckTermReport> reports;
  auto run = [&](const std::string& term, const LossBuilder& loss, const std::vector<Tensor>& params,
                 const std::vector<std::string>& pnames) {
    GradcheckOptions o = opt;
    if (!corrupt.empty()) {
      auto it = std::find(pnames.begin(), pnames.end(), corrupt);
      if (it != pnames.end()) o.corrupt_param = static_cast<std::size_t>(it - pnames.begin());
    }
    GradcheckReport r = gradcheck(loss, params, o);
    reports.push_back({term, r.max_rel_error, pnames[r.worst_param], r.coords_checked, r.coords_skipped, r.max_rel_error <= tol});
  };
  auto model_term = [&](std::function<Var(const BoundModel&, const BatchForward&)> f) {
    return [&model, &s, f](GradTape& tape, const std::vector<Var>& vars) {
      auto b = bind_model(tape, model, vars);
      return f(b, forward_batch(b, s));
    };
  };
  const auto params = model.parameter_values();
  run("prediction", model_term([&](const BoundModel& b, const BatchForward& f) { return prediction_term(b, s, f); }), params, names);
  run("linearity", model_term([&](const BoundModel& b, const BatchForward& f) { return linearity_term(b, s, f, w.alpha); }), params, names);
  run("orthogonality",
      model_term([&](const BoundModel& b, const BatchForward& f) {
        return w.orth == OrthMode::kTk ? orthogonality_term(b) : norm_drift_term(b, f);
      }),
      params, names);
  if (mc.variant == Variant::kae) {
    run("reconstruction", model_term([&](const BoundModel& b, const BatchForward& f) { return reconstruction_term(b, s, f); }), params,
        names);
  }
  run("total",
      [&](GradTape& tape, const std::vector<Var>& vars) { return loss_terms(bind_model(tape, model, vars), s, w).total; }, params,
      names);

  // Assimilation cost with respect to z0, model frozen.
  AikaeModel frozen = model;
  frozen.config.revin = false;
  std::vector<Observation> obs;
  for (long t : {0L, 1L, 3L}) obs.push_back({t, rng.normal_vector(mc.n)});
  Tensor z0 = rng.normal_tensor(1, mc.latent_dim());
  run("assimilation",
      [&](GradTape& tape, const std::vector<Var>& vars) {
        auto b = bind_model(tape, frozen);
        return assimilation_cost(b, vars[0], obs);
      },
      {z0}, {"z0"});
  return reports;
}

inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  write_run_record(cfg, "gradcheck");
  auto reports = run_gradcheck(cfg);
  std::ofstream csv(cfg.out_dir() / "gradcheck.csv");
  if (!csv) throw IoError("cannot write gradcheck.csv");
  csv << "term,max_rel_error,worst_param,coords,skipped,pass\n";
  nlohmann::json terms = nlohmann::json::array();
  bool all = true;
  for (const auto& r : reports) {
    all = all && r.pass;
    csv << r.term << ',' << detail::format_double(r.max_rel_error) << ',' << r.worst_param << ',' << r.coords << ',' << r.skipped << ',' << (r.pass ? 1 : 0)
        << '\n';
    terms.push_back({{"term", r.term}, {"max_rel_error", r.max_rel_error}, {"worst_param", r.worst_param}, {"pass", r.pass}});
    out << (r.pass ? "PASS " : "FAIL ") << r.term << " max_rel_error " << r.max_rel_error;
    if (!r.pass) out << " worst_param " << r.worst_param;
    out << '\n';
  }
  write_json(cfg.out_dir() / "summary.json", {{"command", "gradcheck"}, {"pass", all}, {"tolerance", cfg.real("gradcheck.tol")}, {"terms", terms}});
  return all ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// ablate

struct SweepAxis {
  std::string field;
  std::vector<std::string> values;
};

inline std::vector<SweepAxis> ablation_preset(const std::string& name) {
  if (name == "normalization") return {{"model.revin", {"false", "true"}}, {"model.variant", {"aikae", "ikae_zp", "ikae", "linear"}}};
  if (name == "augmentation") return {{"model.p", {"0", "2", "4", "8", "16", "32"}}};
  if (name == "alpha") return {{"loss.alpha", {"0", "0.5", "1"}}};
  if (name == "lookback") return {{"data.lookback", {"48", "96", "192", "336", "720"}}};
  if (name == "hyper") return {{"model.k", {"3", "4"}}, {"model.w", {"128", "256"}}, {"train.batch_size", {"4", "128", "512"}}};
  throw ConfigError("unknown ablation preset '" + name + "' (expected normalization, augmentation, alpha, lookback or hyper)");
}

/// "field=v1,v2;field2=v3"
inline std::vector<SweepAxis> parse_grid(const std::string& spec) {
  std::vector<SweepAxis> axes;
  for (const auto& part : detail::split_list(spec, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("ablate.grid: expected field=values in '" + part + "'");
    SweepAxis a{detail::trim(part.substr(0, eq)), detail::split_list(part.substr(eq + 1))};
    if (!RunConfig::known(a.field)) throw ConfigError("ablate: unknown sweep field '" + a.field + "'");
    if (a.values.empty()) throw ConfigError("ablate: no values for '" + a.field + "'");
    axes.push_back(std::move(a));
  }
  return axes;
}

/// Cartesian product, first axis outermost.
inline std::vector<std::vector<std::string>> grid_rows(const std::vector<SweepAxis>& axes) {
  std::vector<std::vector<std::string>> rows{{}};
  for (const auto& a : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& r : rows)
      for (const auto& v : a.values) {
        auto x = r;
        x.push_back(v);
        next.push_back(std::move(x));
      }
    rows = std::move(next);
  }
  return rows;
}

inline std::vector<SweepAxis> ablation_axes(const RunConfig& cfg) {
  std::vector<SweepAxis> axes;
  if (!cfg.str("ablate.preset").empty()) axes = ablation_preset(cfg.str("ablate.preset"));
  for (auto& a : parse_grid(cfg.str("ablate.grid"))) axes.push_back(std::move(a));
  if (axes.empty()) throw ConfigError("ablate: empty grid (set ablate.preset or ablate.grid)");
  return axes;
}

inline std::set<std::string> completed_rows(const fs::path& table) {
  std::set<std::string> done;
  std::ifstream in(table);
  if (!in) return done;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    auto cells = detail::split_csv(line);
    if (!cells.empty() && !cells[0].empty()) done.insert(cells[0]);
  }
  return done;
}

inline int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  write_run_record(cfg, "ablate");
  const auto axes = ablation_axes(cfg);
  const auto rows = grid_rows(axes);
  const fs::path table = output_path(cfg, cfg.str("ablate.output"));
  const auto done = completed_rows(table);
  const bool fresh = !fs::exists(table);

  std::ofstream csv(table, std::ios::app);
  if (!csv) throw IoError("cannot write " + table.string());
  if (fresh) {
    csv << "row";
    for (const auto& a : axes) csv << ',' << a.field;
    csv << ",parameters,best_epoch,val_mse,val_mae,test_mse,test_mae\n";
  }
  std::size_t ran = 0, skipped = 0;
  for (const auto& values : rows) {
    std::string key;
    RunConfig row_cfg = cfg;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      key += (i ? ";" : "") + axes[i].field + "=" + values[i];
      row_cfg.set(axes[i].field, values[i]);
    }
    if (done.count(key)) {
      ++skipped;
      continue;
    }
    Prepared p = prepare(row_cfg);
    TrainConfig tc = train_config(row_cfg);
    TrainResult tr = train(AikaeModel::create(p.model, row_cfg.seed()), p.train, p.val, tc);
    const EvalResult val = evaluate(tr.model, p.val, tc.weights);
    const EvalResult test = evaluate(tr.model, p.test, tc.weights);
    csv << key;
    for (const auto& v : values) csv << ',' << v;
    csv << ',' << tr.model.parameter_count() << ',' << tr.best_epoch << ',' << detail::format_double(val.mse) << ','
        << detail::format_double(val.mae) << ',' << detail::format_double(test.mse) << ',' << detail::format_double(test.mae) << '\n';
    csv.flush();
    if (!csv) throw IoError("failed writing " + table.string());
    ++ran;
    out << key << " test_mse " << test.mse << '\n';
  }
  write_json(cfg.out_dir() / "summary.json",
             {{"command", "ablate"}, {"rows", rows.size()}, {"ran", ran}, {"skipped", skipped}, {"table", table.string()}});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  write_run_record(cfg, "synth");
  SeriesDataset ds = synthesize(cfg);
  const fs::path path = output_path(cfg, cfg.str("synth.output"));
  write_csv(ds, path);
  std::size_t observed = 0;
  for (std::size_t t = 0; t < ds.length(); ++t) observed += ds.observed(t) ? 1 : 0;
  write_json(cfg.out_dir() / "summary.json", {{"command", "synth"},
                                               {"system", cfg.str("synth.system")},
                                               {"rows", ds.length()},
                                               {"channels", ds.channels()},
                                               {"observed_rows", observed},
                                               {"file", path.string()}});
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"train", "eval", "assimilate", "gradcheck", "ablate", "synth"};
  return names;
}

/// Runs a command and maps failures to exit codes: 1 usage/config, 2 numerical, 3 I/O.
inline int run_command(const std::string& name, const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    if (name == "train") return cmd_train(cfg, out);
    if (name == "eval") return cmd_eval(cfg, out);
    if (name == "assimilate") return cmd_assimilate(cfg, out);
    if (name == "gradcheck") return cmd_gradcheck(cfg, out);
    if (name == "ablate") return cmd_ablate(cfg, out);
    if (name == "synth") return cmd_synth(cfg, out);
    err << "error: unknown command '" << name << "'\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace aikae
