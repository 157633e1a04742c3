#pragma once

#include "aikae/linalg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace aikae {

/// Half-open row range [begin, end).
struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end > begin ? end - begin : 0; }
  friend bool operator==(const RowRange&, const RowRange&) = default;
};

enum class Split { train, val, test };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

struct SplitLengths {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// Multichannel series with integer timestamps 0..T-1, optional observation
/// mask, and train/val/test row ranges.
struct SeriesDataset {
  std::string name;
  std::vector<std::string> channel_names;
  std::vector<std::string> time_labels;
  Tensor values;  // [T x C]
  std::vector<unsigned char> mask;  // empty = every row observed
  RowRange train, val, test;
  // Per-channel statistics of the train rows.
  std::vector<double> mean;
  std::vector<double> stdev;

  std::size_t length() const { return values.rows(); }
  std::size_t channels() const { return values.cols(); }
  bool observed(std::size_t t) const { return mask.empty() || mask[t] != 0; }

  const RowRange& range(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    return train;
  }

  void compute_statistics() {
    const std::size_t c = channels();
    mean.assign(c, 0.0);
    stdev.assign(c, 1.0);
    if (train.size() == 0) return;
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t t = train.begin; t < train.end; ++t) s += values(t, j);
      const double m = s / static_cast<double>(train.size());
      double v = 0.0;
      for (std::size_t t = train.begin; t < train.end; ++t) v += (values(t, j) - m) * (values(t, j) - m);
      v /= static_cast<double>(train.size());
      mean[j] = m;
      stdev[j] = v > 0.0 ? std::sqrt(v) : 1.0;
    }
  }

  /// Copy with every channel z-scored by the train-split statistics.
  SeriesDataset normalized() const {
    SeriesDataset out = *this;
    for (std::size_t t = 0; t < length(); ++t)
      for (std::size_t j = 0; j < channels(); ++j) out.values(t, j) = (values(t, j) - mean[j]) / stdev[j];
    return out;
  }

  /// Inverse of normalized() for a [rows x C] block.
  Tensor denormalize(const Tensor& block) const {
    Tensor out = block;
    for (std::size_t t = 0; t < block.rows(); ++t)
      for (std::size_t j = 0; j < block.cols(); ++j) out(t, j) = block(t, j) * stdev[j] + mean[j];
    return out;
  }

  Tensor channel_series(std::size_t c, RowRange r) const {
    std::vector<double> v;
    for (std::size_t t = r.begin; t < r.end; ++t) v.push_back(values(t, c));
    return Tensor::vector(v);
  }
};

inline void set_contiguous_splits(SeriesDataset& ds, const SplitLengths& s) {
  if (s.train + s.val + s.test > ds.length()) {
    throw ConfigError("split lengths (" + std::to_string(s.train) + ", " + std::to_string(s.val) + ", " +
                      std::to_string(s.test) + ") exceed series length " + std::to_string(ds.length()));
  }
  ds.train = {0, s.train};
  ds.val = {s.train, s.train + s.val};
  ds.test = {s.train + s.val, s.train + s.val + s.test};
  ds.compute_statistics();
}

/// 70/10/20 split, used when no lengths are configured.
inline SplitLengths default_splits(std::size_t length) {
  const std::size_t train = length * 7 / 10;
  const std::size_t test = length * 2 / 10;
  return {train, length - train - test, test};
}

/// Row ranges of the common hourly ETT benchmark protocol (12/4/4 months of
/// 30-day months); val/test lookbacks may start T_L rows before their split.
inline void set_ett_hourly_splits(SeriesDataset& ds, std::size_t lookback) {
  constexpr std::size_t month = 30 * 24;
  if (ds.length() < 20 * month) throw ConfigError("ETT hourly protocol needs at least 14400 rows");
  ds.train = {0, 12 * month};
  ds.val = {12 * month - lookback, 16 * month};
  ds.test = {16 * month - lookback, 20 * month};
  ds.compute_statistics();
}

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) return std::nullopt;
  return v;
}
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
}  // namespace detail

/// Reads a CSV whose first column is a timestamp label and whose remaining
/// columns are numeric channels. A column named `mask` becomes the
/// observation mask instead of a channel.
inline SeriesDataset load_csv(const std::filesystem::path& path, std::optional<SplitLengths> splits = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const auto header = detail::split_csv(line);
  if (header.size() < 2) throw ParseError(path.string() + ":1: need a timestamp column and at least one channel");

  std::optional<std::size_t> mask_col;
  SeriesDataset ds;
  ds.name = path.stem().string();
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i] == "mask") {
      mask_col = i;
    } else {
      ds.channel_names.push_back(header[i]);
    }
  }
  if (ds.channel_names.empty()) throw ParseError(path.string() + ":1: no value columns");

  std::vector<double> flat;
  std::vector<unsigned char> mask;
  std::size_t line_no = 1;
  std::optional<double> prev_numeric_label;
  std::string prev_label;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " columns, found " + std::to_string(cells.size()));
    }
    // Timestamp labels only have to be in order; numeric labels compare as numbers.
    const auto numeric_label = detail::parse_double(cells[0]);
    if (!ds.time_labels.empty()) {
      const bool ordered = (numeric_label && prev_numeric_label) ? *numeric_label > *prev_numeric_label : cells[0] > prev_label;
      if (!ordered) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": timestamps are not increasing");
    }
    prev_numeric_label = numeric_label;
    prev_label = cells[0];
    ds.time_labels.push_back(cells[0]);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (mask_col && i == *mask_col) {
        if (cells[i] != "0" && cells[i] != "1") {
          throw ParseError(path.string() + ":" + std::to_string(line_no) + ": mask must be 0 or 1");
        }
        mask.push_back(cells[i] == "1" ? 1 : 0);
        continue;
      }
      auto v = detail::parse_double(cells[i]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-numeric value '" + cells[i] + "' in column '" +
                         header[i] + "'");
      }
      flat.push_back(*v);
    }
  }
  const std::size_t rows = ds.time_labels.size();
  if (rows == 0) throw ParseError(path.string() + ": no data rows");
  ds.values = Tensor::matrix(rows, ds.channel_names.size(), flat);
  if (mask_col) ds.mask = std::move(mask);
  set_contiguous_splits(ds, splits.value_or(default_splits(rows)));
  return ds;
}

inline void write_csv(const SeriesDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t";
  for (const auto& c : ds.channel_names) out << ',' << c;
  if (!ds.mask.empty()) out << ",mask";
  out << '\n';
  for (std::size_t t = 0; t < ds.length(); ++t) {
    out << (t < ds.time_labels.size() ? ds.time_labels[t] : std::to_string(t));
    for (std::size_t c = 0; c < ds.channels(); ++c) out << ',' << detail::format_double(ds.values(t, c));
    if (!ds.mask.empty()) out << ',' << static_cast<int>(ds.mask[t]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline SeriesDataset make_dataset(std::string name, Tensor values, std::optional<SplitLengths> splits = std::nullopt) {
  SeriesDataset ds;
  ds.name = std::move(name);
  ds.values = std::move(values);
  for (std::size_t c = 0; c < ds.channels(); ++c) ds.channel_names.push_back("x" + std::to_string(c + 1));
  for (std::size_t t = 0; t < ds.length(); ++t) ds.time_labels.push_back(std::to_string(t));
  set_contiguous_splits(ds, splits.value_or(default_splits(ds.length())));
  return ds;
}

struct WindowSample {
  Tensor lookback;  // [T_L]
  Tensor target;    // [T_P]
  std::size_t channel = 0;
  std::size_t start = 0;  // row of the first lookback value
};

inline std::size_t window_count(std::size_t length, std::size_t lookback, std::size_t horizon, std::size_t stride = 1) {
  if (stride == 0) throw std::invalid_argument("windows: stride must be positive");
  if (lookback + horizon > length) return 0;
  return (length - lookback - horizon) / stride + 1;
}

/// Every stride-spaced (lookback, target) pair inside a split, channel by channel.
inline std::vector<WindowSample> windows(const SeriesDataset& ds, Split split, std::size_t lookback, std::size_t horizon,
                                         std::size_t stride = 1) {
  const RowRange r = ds.range(split);
  const std::size_t count = window_count(r.size(), lookback, horizon, stride);
  std::vector<WindowSample> out;
  out.reserve(count * ds.channels());
  for (std::size_t c = 0; c < ds.channels(); ++c) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t s = r.begin + i * stride;
      WindowSample w;
      w.channel = c;
      w.start = s;
      w.lookback = ds.channel_series(c, {s, s + lookback});
      w.target = ds.channel_series(c, {s + lookback, s + lookback + horizon});
      out.push_back(std::move(w));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic systems

/// Random matrix rescaled to the given spectral radius.
inline Tensor random_stable_matrix(std::size_t dim, double radius, Rng& rng) {
  Tensor a = rng.normal_tensor(dim, dim);
  const double rho = spectral_radius(a);
  a.mat() *= radius / rho;
  return a;
}

inline SeriesDataset gen_linear(const Tensor& a, std::size_t length, const Tensor& x0, double noise = 0.0, std::uint64_t seed = 0) {
  if (a.rows() != a.cols() || a.rows() != x0.size()) throw DimensionError("gen_linear: A must be square and match x0");
  if (spectral_radius(a) > 1.05 + 1e-12) throw ConfigError("gen_linear: spectral radius of A exceeds 1.05");
  Rng rng(seed + seed_offset::synth);
  const std::size_t d = x0.size();
  Matrix values(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(d));
  Matrix x = x0.flattened().mat();
  for (std::size_t t = 0; t < length; ++t) {
    values.row(static_cast<Eigen::Index>(t)) = x.row(0);
    x = x * a.mat().transpose();
    if (noise > 0.0)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(0, j) += noise * rng.normal();
  }
  return make_dataset("linear", Tensor(std::move(values)));
}

/// x1 <- a x1;  x2 <- b x2 + c x1^2.
inline SeriesDataset gen_koopman_quadratic(double a, double b, double c, std::size_t length, std::pair<double, double> x0,
                                           double noise = 0.0, std::uint64_t seed = 0) {
  if (!(std::abs(a) < 1.0) || !(std::abs(b) < 1.0)) throw ConfigError("gen_koopman_quadratic: need |a| < 1 and |b| < 1");
  Rng rng(seed + seed_offset::synth);
  Matrix values(static_cast<Eigen::Index>(length), 2);
  double x1 = x0.first;
  double x2 = x0.second;
  for (std::size_t t = 0; t < length; ++t) {
    values(static_cast<Eigen::Index>(t), 0) = x1;
    values(static_cast<Eigen::Index>(t), 1) = x2;
    const double n1 = a * x1;
    const double n2 = b * x2 + c * x1 * x1;
    x1 = n1 + (noise > 0.0 ? noise * rng.normal() : 0.0);
    x2 = n2 + (noise > 0.0 ? noise * rng.normal() : 0.0);
  }
  return make_dataset("koopman_quadratic", Tensor(std::move(values)));
}

/// Exact linear dynamics of the lifted state (x1, x2, x1^2).
inline Tensor koopman_quadratic_lift(double a, double b, double c) {
  return Tensor::matrix({{a, 0.0, 0.0}, {0.0, b, c}, {0.0, 0.0, a * a}});
}

/// Seasonal multi-band pixel surrogate: each band is a damped-free sum of two
/// harmonics of a common period with pixel-specific phase, amplitude and offset.
/// Channels are laid out pixel-major: pixel 0 bands 0..L-1, pixel 1, ...
inline SeriesDataset gen_pixels(std::size_t pixels, std::size_t bands, std::size_t length, double period, double noise,
                                std::uint64_t seed) {
  Rng rng(seed + seed_offset::synth);
  Matrix values(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(pixels * bands));
  const double omega = 2.0 * std::numbers::pi / period;
  for (std::size_t px = 0; px < pixels; ++px) {
    const double phase = rng.uniform(0.0, 0.5);
    const double amp = rng.uniform(0.6, 1.0);
    for (std::size_t b = 0; b < bands; ++b) {
      const double offset = rng.uniform(0.1, 0.4);
      const double w1 = amp * rng.uniform(0.05, 0.2);
      const double w2 = amp * rng.uniform(0.0, 0.05);
      for (std::size_t t = 0; t < length; ++t) {
        const double s = omega * static_cast<double>(t) + phase;
        values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(px * bands + b)) =
            offset + w1 * std::sin(s) + w2 * std::cos(2.0 * s) + (noise > 0.0 ? noise * rng.normal() : 0.0);
      }
    }
  }
  SeriesDataset ds = make_dataset("pixels", Tensor(std::move(values)));
  for (std::size_t px = 0; px < pixels; ++px)
    for (std::size_t b = 0; b < bands; ++b) ds.channel_names[px * bands + b] = "p" + std::to_string(px) + "_b" + std::to_string(b);
  return ds;
}

/// Rows x_t concatenated with the forward difference x_{t+1} - x_t: [T x L] -> [T-1 x 2L].
inline Tensor derivative_augment(const Tensor& series) {
  if (series.rows() < 2) throw DimensionError("derivative_augment: need at least two rows");
  const auto t = static_cast<Eigen::Index>(series.rows() - 1);
  const auto l = static_cast<Eigen::Index>(series.cols());
  Matrix out(t, 2 * l);
  out.leftCols(l) = series.mat().topRows(t);
  out.rightCols(l) = series.mat().bottomRows(t) - series.mat().topRows(t);
  return Tensor(std::move(out));
}

/// Bernoulli(rate) per-timestamp missingness; row 0 is always kept.
inline SeriesDataset mask_irregular(const SeriesDataset& ds, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("mask_irregular: rate must be in [0, 1)");
  Rng rng(seed + seed_offset::mask);
  SeriesDataset out = ds;
  out.mask.assign(ds.length(), 1);
  for (std::size_t t = 0; t < ds.length(); ++t) {
    const bool drop = rng.bernoulli(rate);
    if (t > 0 && drop) out.mask[t] = 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baselines and metrics

inline Tensor baseline_persistence(const Tensor& lookback, std::size_t horizon) {
  if (lookback.size() == 0) throw DimensionError("baseline_persistence: empty lookback");
  return Tensor::vector(std::vector<double>(horizon, lookback[lookback.size() - 1]));
}

/// Direct linear map from a lookback window to the next T_P values.
struct LinearBaseline {
  Tensor W;  // [T_P x T_L]

  Tensor predict(const Tensor& lookback) const {
    if (lookback.size() != W.cols()) throw DimensionError("LinearBaseline: lookback length mismatch");
    return Tensor(W.mat() * lookback.flattened().mat().transpose()).flattened();
  }
};

/// Least-squares W = Y X^+ over stacked training windows (columns are samples).
inline LinearBaseline baseline_linear(const std::vector<WindowSample>& train) {
  if (train.empty()) throw DimensionError("baseline_linear: no training windows");
  const std::size_t tl = train.front().lookback.size();
  const std::size_t tp = train.front().target.size();
  Matrix x(static_cast<Eigen::Index>(tl), static_cast<Eigen::Index>(train.size()));
  Matrix y(static_cast<Eigen::Index>(tp), static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = train[i].lookback.mat().row(0).transpose();
    y.col(static_cast<Eigen::Index>(i)) = train[i].target.mat().row(0).transpose();
  }
  return {lstsq_map(Tensor(std::move(x)), Tensor(std::move(y)))};
}

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

inline Metrics metrics(const Tensor& pred, const Tensor& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw DimensionError("metrics: shape mismatch (" + pred.shape_string() + " vs " + truth.shape_string() + ")");
  }
  if (pred.size() == 0) throw DimensionError("metrics: empty input");
  const Matrix diff = pred.mat() - truth.mat();
  const auto n = static_cast<double>(diff.size());
  return {diff.squaredNorm() / n, diff.cwiseAbs().sum() / n};
}

/// Running accumulator of squared/absolute errors.
struct MetricSum {
  double se = 0.0;
  double ae = 0.0;
  double count = 0.0;

  void add(const Matrix& pred, const Matrix& truth) {
    const Matrix diff = pred - truth;
    se += diff.squaredNorm();
    ae += diff.cwiseAbs().sum();
    count += static_cast<double>(diff.size());
  }
  void add(const Tensor& pred, const Tensor& truth) { add(pred.mat(), truth.mat()); }
  Metrics result() const {
    if (count == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    return {se / count, ae / count};
  }
};

}  // namespace aikae
