#pragma once

#include "aikae/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace aikae {

/// Training samples in model-input space: states[tau] holds the rows
/// x_{t+tau} (tau = 0 is the model input), one row per sample.
struct SampleSet {
  std::vector<Matrix> states;
  /// Observation masks aligned with `states`; empty when everything is observed.
  /// Used for the trailing partial block of a delayed horizon.
  std::vector<Matrix> masks;
  std::vector<std::size_t> channels;  // RevIN channel of each sample

  std::size_t size() const { return states.empty() ? 0 : static_cast<std::size_t>(states[0].rows()); }
  std::size_t dim() const { return states.empty() ? 0 : static_cast<std::size_t>(states[0].cols()); }
  std::size_t max_tau() const { return states.empty() ? 0 : states.size() - 1; }
  bool empty() const { return size() == 0; }

  bool tau_complete(std::size_t tau) const { return masks.empty() || (masks[tau].array() != 0.0).all(); }

  SampleSet subset(const std::vector<std::size_t>& idx) const {
    SampleSet out;
    auto take = [&](const Matrix& m) {
      Matrix r(static_cast<Eigen::Index>(idx.size()), m.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
      return r;
    };
    for (const auto& s : states) out.states.push_back(take(s));
    for (const auto& m : masks) out.masks.push_back(take(m));
    for (std::size_t i : idx) out.channels.push_back(channels.empty() ? 0 : channels[i]);
    return out;
  }

  /// Consecutive chunk [begin, begin + count).
  SampleSet slice(std::size_t begin, std::size_t count) const {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
    return subset(idx);
  }

  /// Appends the samples of `other` (same dimension and max_tau).
  void append(const SampleSet& other) {
    if (other.empty()) return;
    if (empty()) {
      *this = other;
      return;
    }
    if (other.dim() != dim() || other.max_tau() != max_tau()) throw DimensionError("SampleSet::append: layout mismatch");
    if (masks.empty() != other.masks.empty()) {
      if (masks.empty()) masks.assign(states.size(), Matrix::Ones(states[0].rows(), states[0].cols()));
    }
    for (std::size_t t = 0; t < states.size(); ++t) {
      Matrix s(states[t].rows() + other.states[t].rows(), states[t].cols());
      s << states[t], other.states[t];
      states[t] = std::move(s);
      if (!masks.empty()) {
        const Matrix om = other.masks.empty() ? Matrix::Ones(other.states[t].rows(), other.states[t].cols()) : other.masks[t];
        Matrix m(masks[t].rows() + om.rows(), masks[t].cols());
        m << masks[t], om;
        masks[t] = std::move(m);
      }
    }
    const auto ch = other.channels.empty() ? std::vector<std::size_t>(other.size(), 0) : other.channels;
    channels.insert(channels.end(), ch.begin(), ch.end());
  }

  void validate() const {
    if (states.empty()) throw DimensionError("SampleSet: no states");
    for (const auto& s : states) {
      if (s.rows() != states[0].rows() || s.cols() != states[0].cols()) throw DimensionError("SampleSet: ragged states");
    }
    if (!masks.empty() && masks.size() != states.size()) throw DimensionError("SampleSet: masks misaligned with states");
    if (!channels.empty() && channels.size() != size()) throw DimensionError("SampleSet: channel list misaligned");
  }
};

enum class OrthMode { kTk, norm_drift };

inline OrthMode parse_orth_mode(const std::string& s) {
  if (s == "kTk" || s == "ktk") return OrthMode::kTk;
  if (s == "norm_drift") return OrthMode::norm_drift;
  throw ConfigError("unknown orthogonality mode '" + s + "' (expected kTk or norm_drift)");
}
inline std::string to_string(OrthMode m) { return m == OrthMode::kTk ? "kTk" : "norm_drift"; }

struct LossWeights {
  double w_pred = 1.0;
  double w_recon = 1.0;  // KAE only
  double w_lin = 1.0;
  double w_orth = 0.01;
  double alpha = 1.0;
  OrthMode orth = OrthMode::kTk;

  void validate() const {
    if (w_pred < 0 || w_recon < 0 || w_lin < 0 || w_orth < 0) throw ConfigError("loss weights must be non-negative");
    if (alpha < 0) throw ConfigError("loss: alpha must be non-negative");
  }
};

/// Recorded loss terms. `recon` is only present for KAE.
struct LossTerms {
  Var pred;
  std::optional<Var> recon;
  Var lin;
  Var orth;
  Var total;
};

/// Latent rollout of a batch with its RevIN statistics.
struct BatchForward {
  RevinStats stats;
  Var input;                // normalized tau = 0 state
  std::vector<Var> latent;  // K^tau Phi(x_t), tau = 0..max_tau
};

namespace detail {
inline std::vector<std::size_t> batch_channels(const SampleSet& s) {
  return s.channels.empty() ? std::vector<std::size_t>(s.size(), 0) : s.channels;
}

inline Var model_space(const BoundModel& b, const SampleSet& s, std::size_t tau, const RevinStats& stats) {
  if (b.cfg->revin) return b.revin_normalize(s.states[tau], stats, batch_channels(s));
  return b.tape->constant(s.states[tau]);
}
}  // namespace detail

inline BatchForward forward_batch(const BoundModel& b, const SampleSet& s) {
  s.validate();
  if (s.dim() != b.n()) {
    throw DimensionError("loss: samples have dimension " + std::to_string(s.dim()) + ", model expects " + std::to_string(b.n()));
  }
  BatchForward f;
  if (b.cfg->revin) f.stats = revin_stats(s.states[0], b.cfg->revin_eps);
  f.input = detail::model_space(b, s, 0, f.stats);
  f.latent = b.rollout(b.encode(f.input), s.max_tau());
  return f;
}

/// Masked MSE between decoded rollouts and the ground-truth future states, in data space.
inline Var prediction_term(const BoundModel& b, const SampleSet& s, const BatchForward& f) {
  GradTape& tape = *b.tape;
  if (s.max_tau() == 0) return tape.constant(Matrix::Zero(1, 1));
  const auto ch = detail::batch_channels(s);
  Var total;
  double count = 0.0;
  for (std::size_t tau = 1; tau <= s.max_tau(); ++tau) {
    Var dec = b.decode(f.latent[tau]);
    if (b.cfg->revin) dec = b.revin_denormalize(dec, f.stats, ch);
    Var diff = ad::sub(dec, tape.constant(s.states[tau]));
    if (!s.masks.empty()) {
      diff = ad::mul(diff, tape.constant(s.masks[tau]));
      count += s.masks[tau].sum();
    } else {
      count += static_cast<double>(s.states[tau].size());
    }
    Var sq = ad::sum_squares(diff);
    total = tau == 1 ? sq : ad::add(total, sq);
  }
  if (count == 0.0) return tape.constant(Matrix::Zero(1, 1));
  return ad::scale(total, 1.0 / count);
}

/// Sums of squared linearity residuals split into the invertible part
/// [K^tau Phi(x_t)]_{1:n} - phi(x_{t+tau}) and the augmentation part.
/// Variants without an augmentation encoder put the whole residual in `invertible`.
struct LinearityParts {
  Var invertible;
  Var augmentation;
  double count = 0.0;  // samples x complete tau values
};

inline LinearityParts linearity_parts(const BoundModel& b, const SampleSet& s, const BatchForward& f) {
  GradTape& tape = *b.tape;
  LinearityParts parts;
  parts.invertible = tape.constant(Matrix::Zero(1, 1));
  parts.augmentation = tape.constant(Matrix::Zero(1, 1));
  const bool split = b.cfg->variant == Variant::aikae && b.has_chi;
  for (std::size_t tau = 1; tau <= s.max_tau(); ++tau) {
    if (!s.tau_complete(tau)) continue;
    Var x = detail::model_space(b, s, tau, f.stats);
    if (split) {
      Var zi = ad::slice_cols(f.latent[tau], 0, b.n());
      Var za = ad::slice_cols(f.latent[tau], b.n(), b.cfg->p);
      parts.invertible = ad::add(parts.invertible, ad::sum_squares(ad::sub(zi, b.phi.forward(x))));
      parts.augmentation = ad::add(parts.augmentation, ad::sum_squares(ad::sub(za, b.chi(x))));
    } else {
      parts.invertible = ad::add(parts.invertible, ad::sum_squares(ad::sub(f.latent[tau], b.encode(x))));
    }
    parts.count += static_cast<double>(s.size());
  }
  return parts;
}

inline Var linearity_term(const BoundModel& b, const SampleSet& s, const BatchForward& f, double alpha) {
  if (alpha < 0.0) throw ConfigError("loss_linearity: alpha must be non-negative");
  LinearityParts parts = linearity_parts(b, s, f);
  if (parts.count == 0.0) return b.tape->constant(Matrix::Zero(1, 1));
  Var sum = ad::add(parts.invertible, ad::scale(parts.augmentation, alpha));
  return ad::scale(sum, 1.0 / parts.count);
}

inline Var reconstruction_term(const BoundModel& b, const SampleSet& s, const BatchForward& f) {
  if (b.cfg->variant != Variant::kae) {
    throw ConfigError("loss_reconstruction: only defined for the KAE variant (" + to_string(b.cfg->variant) +
                      " reconstructs exactly)");
  }
  Var diff = ad::sub(b.decode(f.latent[0]), f.input);
  return ad::scale(ad::sum_squares(diff), 1.0 / static_cast<double>(s.size()));
}

inline Var orthogonality_term(const BoundModel& b) {
  const auto d = static_cast<Eigen::Index>(b.d());
  Var ktk = ad::matmul(b.Kt, b.K);
  return ad::sum_squares(ad::sub(ktk, b.tape->constant(Matrix::Identity(d, d))));
}

/// Mean squared drift of latent squared norms along the rollout.
inline Var norm_drift_term(const BoundModel& b, const BatchForward& f) {
  GradTape& tape = *b.tape;
  if (f.latent.size() < 2) return tape.constant(Matrix::Zero(1, 1));
  Var n0 = ad::row_sum_squares(f.latent[0]);
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t tau = 1; tau < f.latent.size(); ++tau) {
    Var d = ad::sub(ad::row_sum_squares(f.latent[tau]), n0);
    total = ad::add(total, ad::sum_squares(d));
  }
  const double count = static_cast<double>((f.latent.size() - 1) * static_cast<std::size_t>(tape.value(n0).rows()));
  return ad::scale(total, 1.0 / count);
}

/// w_pred L_pred + w_recon L_recon + w_lin L_lin,alpha + w_orth L_orth.
/// Terms with zero weight are left out of the total.
inline LossTerms loss_terms(const BoundModel& b, const SampleSet& s, const LossWeights& w) {
  w.validate();
  if (s.empty()) throw DimensionError("loss: empty batch");
  BatchForward f = forward_batch(b, s);
  LossTerms t;
  t.pred = prediction_term(b, s, f);
  t.lin = linearity_term(b, s, f, w.alpha);
  t.orth = w.orth == OrthMode::kTk ? orthogonality_term(b) : norm_drift_term(b, f);
  if (b.cfg->variant == Variant::kae) t.recon = reconstruction_term(b, s, f);

  t.total = b.tape->constant(Matrix::Zero(1, 1));
  auto add = [&](double weight, Var term) {
    if (weight != 0.0) t.total = ad::add(t.total, ad::scale(term, weight));
  };
  add(w.w_pred, t.pred);
  if (t.recon) add(w.w_recon, *t.recon);
  add(w.w_lin, t.lin);
  add(w.w_orth, t.orth);
  return t;
}

// Value-level conveniences on a frozen model.

inline double loss_prediction(const AikaeModel& model, const SampleSet& s) {
  if (s.empty()) throw DimensionError("loss_prediction: empty batch");
  GradTape tape;
  auto b = bind_model(tape, model);
  return tape.scalar(prediction_term(b, s, forward_batch(b, s)));
}

inline double loss_reconstruction(const AikaeModel& model, const SampleSet& s) {
  if (s.empty()) throw DimensionError("loss_reconstruction: empty batch");
  GradTape tape;
  auto b = bind_model(tape, model);
  return tape.scalar(reconstruction_term(b, s, forward_batch(b, s)));
}

inline double loss_linearity(const AikaeModel& model, const SampleSet& s, double alpha) {
  if (s.empty()) throw DimensionError("loss_linearity: empty batch");
  GradTape tape;
  auto b = bind_model(tape, model);
  return tape.scalar(linearity_term(b, s, forward_batch(b, s), alpha));
}

inline double loss_orthogonality(const AikaeModel& model) {
  GradTape tape;
  auto b = bind_model(tape, model);
  return tape.scalar(orthogonality_term(b));
}

}  // namespace aikae
