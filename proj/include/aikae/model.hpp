#pragma once

#include "aikae/flows.hpp"
#include "aikae/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace aikae {

enum class Variant { kae, ikae, ikae_zp, aikae };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kae: return "kae";
    case Variant::ikae: return "ikae";
    case Variant::ikae_zp: return "ikae_zp";
    case Variant::aikae: return "aikae";
  }
  return "?";
}

inline Variant parse_variant(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "kae") return Variant::kae;
  if (s == "ikae") return Variant::ikae;
  if (s == "ikae_zp" || s == "ikaezp") return Variant::ikae_zp;
  if (s == "aikae") return Variant::aikae;
  throw ConfigError("unknown model variant '" + s + "' (expected kae, ikae, ikae_zp or aikae)");
}

inline bool is_invertible(Variant v) { return v != Variant::kae; }

struct ModelConfig {
  Variant variant = Variant::aikae;
  std::size_t n = 96;       // state dimension fed to the model
  std::size_t p = 32;       // augmentation size (AIKAE) or zero padding (IKAE_ZP)
  std::size_t latent = 32;  // latent size of the KAE variant
  std::size_t k = 4;        // coupling layers
  std::size_t w = 256;      // coupling hidden width
  std::vector<std::size_t> chi_hidden{256, 128};
  std::vector<std::size_t> kae_hidden{256, 128};
  bool revin = false;
  std::size_t channels = 1;  // RevIN affine pairs
  std::size_t delay = 1;     // m, consecutive observations stacked in one state
  double revin_eps = 1e-5;
  double leaky_slope = kLeakySlope;

  std::size_t augment() const {
    return (variant == Variant::aikae || variant == Variant::ikae_zp) ? p : 0;
  }
  std::size_t flow_dim() const { return variant == Variant::ikae_zp ? n + p : n; }
  std::size_t latent_dim() const {
    switch (variant) {
      case Variant::kae: return latent;
      case Variant::ikae: return n;
      case Variant::ikae_zp:
      case Variant::aikae: return n + p;
    }
    return n;
  }

  void validate() const {
    if (n == 0) throw ConfigError("model: n must be positive");
    if (variant != Variant::kae && flow_dim() % 2 != 0) {
      throw ConfigError("model: invertible encoder dimension must be even, got " + std::to_string(flow_dim()));
    }
    if (variant != Variant::kae && k > 0 && w == 0) throw ConfigError("model: coupling width w must be positive");
    if (variant == Variant::kae && latent == 0) throw ConfigError("model: KAE latent size must be positive");
    if (revin && channels == 0) throw ConfigError("model: RevIN needs at least one channel");
    if (delay == 0) throw ConfigError("model: delay m must be positive");
  }
};

/// Reversible instance normalization: per-instance standardization followed by
/// a per-channel learnable affine map, undone exactly after prediction.
struct RevIn {
  Tensor gain;  // [channels x 1]
  Tensor bias;  // [channels x 1]
  double eps = 1e-5;

  RevIn() = default;
  RevIn(std::size_t channels, double eps_) : gain(Tensor(Matrix::Ones(static_cast<Eigen::Index>(channels), 1))),
                                            bias(Tensor::zeros(channels, 1)), eps(eps_) {}

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

/// Per-row statistics of the instances a RevIn normalized.
struct RevinStats {
  Matrix mean;  // [B x 1]
  Matrix stdev; // [B x 1], sqrt(var + eps)
};

inline RevinStats revin_stats(const Matrix& x, double eps) {
  RevinStats s;
  s.mean = x.rowwise().mean();
  Matrix centered = x.colwise() - s.mean.col(0);
  s.stdev = (centered.rowwise().squaredNorm() / static_cast<double>(x.cols())).array() + eps;
  s.stdev = s.stdev.cwiseSqrt();
  return s;
}

class AikaeModel {
 public:
  ModelConfig config;
  InvertibleEncoder phi;  // IKAE, IKAE_ZP, AIKAE
  Mlp chi;                // AIKAE augmentation encoder
  Mlp encoder;            // KAE
  Mlp decoder;            // KAE
  Tensor K;
  RevIn revin;

  AikaeModel() = default;

  /// Fresh model. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, K = I.
  static AikaeModel create(const ModelConfig& cfg, std::uint64_t seed, Init init = Init::uniform_fan_in) {
    cfg.validate();
    Rng rng(seed + seed_offset::init);
    AikaeModel m;
    m.config = cfg;
    if (cfg.variant == Variant::kae) {
      auto enc_widths = cfg.kae_hidden;
      enc_widths.push_back(cfg.latent);
      std::vector<std::size_t> dec_widths(cfg.kae_hidden.rbegin(), cfg.kae_hidden.rend());
      dec_widths.push_back(cfg.n);
      m.encoder = Mlp(cfg.n, enc_widths, Activation::relu, init, rng);
      m.decoder = Mlp(cfg.latent, dec_widths, Activation::relu, init, rng);
    } else {
      m.phi = InvertibleEncoder(cfg.flow_dim(), cfg.k, cfg.w, init, rng, cfg.leaky_slope);
      if (cfg.variant == Variant::aikae && cfg.p > 0) {
        auto widths = cfg.chi_hidden;
        widths.push_back(cfg.p);
        m.chi = Mlp(cfg.n, widths, Activation::relu, init, rng);
      }
    }
    m.K = Tensor::identity(cfg.latent_dim());
    if (cfg.revin) m.revin = RevIn(cfg.channels, cfg.revin_eps);
    return m;
  }

  std::size_t n() const { return config.n; }
  std::size_t latent_dim() const { return config.latent_dim(); }
  bool has_chi() const { return !chi.empty(); }

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
  }
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    visit([&](const std::string& name, const Tensor&) { out.push_back(name); });
    return out;
  }
  std::vector<Tensor> parameter_values() const {
    std::vector<Tensor> out;
    visit([&](const std::string&, const Tensor& t) { out.push_back(t); });
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t c = 0;
    visit([&](const std::string&, const Tensor& t) { c += t.size(); });
    return c;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    self.phi.visit("phi", f);
    self.chi.visit("chi", f);
    self.encoder.visit("encoder", f);
    self.decoder.visit("decoder", f);
    f(std::string("K"), self.K);
    if (self.config.revin) self.revin.visit("revin", f);
  }
};

/// A model's parameters recorded on a tape, with the forward maps built from them.
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  GradTape* tape = nullptr;
  BoundEncoder phi;
  BoundMlp chi;
  BoundMlp encoder;
  BoundMlp decoder;
  Var K;
  Var Kt;
  Var gain;
  Var bias;
  bool has_chi = false;

  std::size_t n() const { return cfg->n; }
  std::size_t d() const { return cfg->latent_dim(); }

  void check_cols(Var x, std::size_t expect, const char* what) const {
    if (static_cast<std::size_t>(tape->value(x).cols()) != expect) {
      throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expect) + ", got " +
                           std::to_string(tape->value(x).cols()));
    }
  }

  /// Invertible part of the encoding (phi(x), or phi(x, 0) for zero padding).
  Var encode_invertible(Var x) const {
    check_cols(x, n(), "encode");
    if (cfg->variant == Variant::ikae_zp) {
      Var pad = tape->constant(Matrix::Zero(tape->value(x).rows(), static_cast<Eigen::Index>(cfg->p)));
      return phi.forward(ad::concat_cols(x, pad));
    }
    return phi.forward(x);
  }

  /// z = Phi(x): the full latent state for every variant.
  Var encode(Var x) const {
    check_cols(x, n(), "encode");
    switch (cfg->variant) {
      case Variant::kae: return encoder(x);
      case Variant::ikae:
      case Variant::ikae_zp: return encode_invertible(x);
      case Variant::aikae: {
        Var zi = phi.forward(x);
        return has_chi ? ad::concat_cols(zi, chi(x)) : zi;
      }
    }
    return x;
  }

  /// Phi^{-1}(z): for AIKAE only the first n latent entries are used.
  Var decode(Var z) const {
    check_cols(z, d(), "decode");
    switch (cfg->variant) {
      case Variant::kae: return decoder(z);
      case Variant::ikae: return phi.inverse(z);
      case Variant::ikae_zp: return ad::slice_cols(phi.inverse(z), 0, n());
      case Variant::aikae: return phi.inverse(has_chi ? ad::slice_cols(z, 0, n()) : z);
    }
    return z;
  }

  /// One latent step for a batch of row states: z K^T.
  Var step(Var z) const { return ad::matmul(z, Kt); }

  std::vector<Var> rollout(Var z0, std::size_t steps) const {
    std::vector<Var> out{z0};
    for (std::size_t i = 0; i < steps; ++i) out.push_back(step(out.back()));
    return out;
  }

  Var channel_column(Var param, const std::vector<std::size_t>& channels) const {
    return ad::gather_rows(param, channels);
  }

  /// RevIN forward on a data batch (statistics are data, not parameters).
  Var revin_normalize(const Matrix& x, const RevinStats& s, const std::vector<std::size_t>& channels) const {
    Matrix xn = s.stdev.col(0).cwiseInverse().asDiagonal() * (x.colwise() - s.mean.col(0));
    Var v = tape->constant(std::move(xn));
    return ad::add_col(ad::mul_col(v, channel_column(gain, channels)), channel_column(bias, channels));
  }

  Var revin_denormalize(Var y, const RevinStats& s, const std::vector<std::size_t>& channels) const {
    Var shifted = ad::add_col(y, ad::scale(channel_column(bias, channels), -1.0));
    Var unscaled = ad::div_col(shifted, channel_column(gain, channels));
    return ad::add_col(ad::mul_col(unscaled, tape->constant(s.stdev)), tape->constant(s.mean));
  }
};

inline std::vector<Var> model_vars(GradTape& tape, const AikaeModel& model, bool trainable) {
  std::vector<Var> vars;
  model.visit([&](const std::string&, const Tensor& t) {
    vars.push_back(trainable ? tape.parameter(t) : tape.constant(t));
  });
  return vars;
}

/// Binds `model`'s structure to handles given in the model's visit order.
inline BoundModel bind_model(GradTape& tape, const AikaeModel& model, const std::vector<Var>& vars) {
  VarCursor c(vars);
  BoundModel b;
  b.cfg = &model.config;
  b.tape = &tape;
  b.phi = BoundEncoder::bind(model.phi, c);
  b.phi.dim = model.phi.dim;
  b.chi = BoundMlp::bind(model.chi, c);
  b.has_chi = model.has_chi();
  b.encoder = BoundMlp::bind(model.encoder, c);
  b.decoder = BoundMlp::bind(model.decoder, c);
  b.K = c.next();
  b.Kt = ad::transpose(b.K);
  if (model.config.revin) {
    b.gain = c.next();
    b.bias = c.next();
  }
  if (!c.done()) throw std::logic_error("bind_model: unused parameter handles");
  return b;
}

inline BoundModel bind_model(GradTape& tape, const AikaeModel& model, bool trainable = false) {
  return bind_model(tape, model, model_vars(tape, model, trainable));
}

/// z = (z_i; z_a): z_i is the first n entries, z_a the remaining p.
struct LatentState {
  Tensor z;
  std::size_t n = 0;

  std::size_t size() const { return z.size(); }
  Tensor invertible() const {
    return Tensor::vector(std::span<const double>(z.values().data(), std::min(n, z.size())));
  }
  Tensor augmentation() const {
    if (z.size() <= n) return Tensor::vector(std::vector<double>{});
    return Tensor::vector(std::span<const double>(z.values().data() + n, z.size() - n));
  }
  static LatentState join(const Tensor& zi, const Tensor& za) {
    std::vector<double> v(zi.values().begin(), zi.values().end());
    v.insert(v.end(), za.values().begin(), za.values().end());
    return {Tensor::vector(v), zi.size()};
  }
};

namespace detail {
inline std::size_t split_point(const AikaeModel& m) {
  return m.config.variant == Variant::kae ? m.latent_dim() : m.n();
}
inline Matrix as_rows(const Tensor& x) { return x.mat(); }
}  // namespace detail

/// Non-overlapping blocks (x_{tm}, ..., x_{tm+m-1}); a trailing partial block is dropped.
inline std::vector<Tensor> delay_embed(const Tensor& series, std::size_t m) {
  if (m == 0) throw std::invalid_argument("delay_embed: m must be at least 1");
  std::vector<Tensor> blocks;
  const auto v = series.values();
  for (std::size_t start = 0; start + m <= v.size(); start += m) blocks.push_back(Tensor::vector(v.subspan(start, m)));
  return blocks;
}

inline LatentState encode(const AikaeModel& model, const Tensor& x) {
  if (x.size() != model.n()) {
    throw DimensionError("encode: expected a state of length " + std::to_string(model.n()) + ", got " + std::to_string(x.size()));
  }
  GradTape tape;
  auto b = bind_model(tape, model);
  Tensor z(tape.value(b.encode(tape.constant(x.flattened().mat()))));
  return {z.flattened(), detail::split_point(model)};
}

inline Tensor decode(const AikaeModel& model, const Tensor& z) {
  if (z.size() != model.latent_dim()) {
    throw DimensionError("decode: expected a latent state of length " + std::to_string(model.latent_dim()) + ", got " +
                         std::to_string(z.size()));
  }
  GradTape tape;
  auto b = bind_model(tape, model);
  return Tensor(tape.value(b.decode(tape.constant(z.flattened().mat())))).flattened();
}
inline Tensor decode(const AikaeModel& model, const LatentState& z) { return decode(model, z.z); }

inline std::vector<LatentState> rollout(const AikaeModel& model, const LatentState& z0, std::size_t steps) {
  if (z0.size() != model.latent_dim()) throw DimensionError("rollout: latent dimension mismatch");
  std::vector<LatentState> out{z0};
  Matrix z = z0.z.mat();
  const Matrix kt = model.K.mat().transpose();
  for (std::size_t i = 0; i < steps; ++i) {
    z = z * kt;
    out.push_back({Tensor(z).flattened(), z0.n});
  }
  return out;
}

/// Batched prediction: for each row of `x` (optionally RevIN-normalized with its
/// own statistics), decoded states for latent steps 1..steps.
inline std::vector<Matrix> predict_batch(const AikaeModel& model, const Matrix& x, std::size_t steps,
                                         const std::vector<std::size_t>& channels) {
  if (static_cast<std::size_t>(x.cols()) != model.n()) throw DimensionError("predict: state dimension mismatch");
  GradTape tape;
  auto b = bind_model(tape, model);
  RevinStats stats;
  Var input;
  if (model.config.revin) {
    stats = revin_stats(x, model.config.revin_eps);
    input = b.revin_normalize(x, stats, channels);
  } else {
    input = tape.constant(x);
  }
  auto states = b.rollout(b.encode(input), steps);
  std::vector<Matrix> out;
  for (std::size_t t = 1; t <= steps; ++t) {
    Var dec = b.decode(states[t]);
    if (model.config.revin) dec = b.revin_denormalize(dec, stats, channels);
    out.push_back(tape.value(dec));
  }
  return out;
}

/// Decoded predictions for latent steps 1..horizon_steps, one row per step.
inline Tensor predict(const AikaeModel& model, const Tensor& x_window, std::size_t horizon_steps, std::size_t channel = 0) {
  if (horizon_steps == 0) throw std::invalid_argument("predict: horizon_steps must be at least 1");
  if (x_window.size() != model.n()) throw DimensionError("predict: window length must equal n = " + std::to_string(model.n()));
  auto steps = predict_batch(model, x_window.flattened().mat(), horizon_steps, {channel});
  Matrix out(static_cast<Eigen::Index>(horizon_steps), static_cast<Eigen::Index>(model.n()));
  for (std::size_t t = 0; t < horizon_steps; ++t) out.row(static_cast<Eigen::Index>(t)) = steps[t].row(0);
  return Tensor(std::move(out));
}

inline std::size_t blocks_for_horizon(std::size_t block, std::size_t horizon) { return (horizon + block - 1) / block; }

/// Univariate delayed forecast: each latent step advances one block of T_L raw
/// steps; blocks are concatenated in time order and truncated to T_P.
inline Tensor forecast_horizon(const AikaeModel& model, const Tensor& window, std::size_t horizon, std::size_t channel = 0) {
  if (horizon == 0) throw std::invalid_argument("forecast_horizon: T_P must be positive");
  if (window.size() != model.n()) {
    throw DimensionError("forecast_horizon: lookback length " + std::to_string(window.size()) + " != model dimension " +
                         std::to_string(model.n()));
  }
  const std::size_t steps = blocks_for_horizon(model.n(), horizon);
  Tensor blocks = predict(model, window, steps, channel);
  return Tensor::vector(std::span<const double>(blocks.values().data(), horizon));
}

inline std::pair<Tensor, RevinStats> revin_normalize(const RevIn& r, const Tensor& x, std::size_t channel = 0) {
  if (channel >= r.gain.rows()) throw DimensionError("revin_normalize: channel out of range");
  Matrix row = x.flattened().mat();
  RevinStats s = revin_stats(row, r.eps);
  Matrix out = ((row.array() - s.mean(0, 0)) / s.stdev(0, 0)) * r.gain(channel, 0) + r.bias(channel, 0);
  return {Tensor(std::move(out)).flattened(), s};
}

inline Tensor revin_denormalize(const RevIn& r, const Tensor& y, const RevinStats& s, std::size_t channel = 0) {
  if (channel >= r.gain.rows()) throw DimensionError("revin_denormalize: channel out of range");
  Matrix out = ((y.mat().array() - r.bias(channel, 0)) / r.gain(channel, 0)) * s.stdev(0, 0) + s.mean(0, 0);
  Tensor t(std::move(out));
  return y.rank() == 1 ? t.flattened() : t;
}

}  // namespace aikae
