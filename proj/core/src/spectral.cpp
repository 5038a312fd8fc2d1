#include "jamlab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "jamlab/fft.hpp"

namespace jamlab {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Index into a line with linear extrapolation beyond both ends.
template <typename Get>
double extended(Get&& get, long idx, std::size_t n) {
  if (n == 1) return get(0);
  if (idx < 0) {
    const double f0 = get(0);
    return f0 + static_cast<double>(idx) * (get(1) - f0);
  }
  const auto last = static_cast<long>(n) - 1;
  if (idx > last) {
    const double fl = get(static_cast<std::size_t>(last));
    return fl + static_cast<double>(idx - last) * (fl - get(static_cast<std::size_t>(last - 1)));
  }
  return get(static_cast<std::size_t>(idx));
}

double keys_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  long first = 0;
  double w[4] = {0, 0, 0, 0};
};

std::vector<Taps> resize_taps(std::size_t src, std::size_t dst) {
  std::vector<Taps> taps(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const double base = std::floor(pos);
    const double t = pos - base;
    taps[i].first = static_cast<long>(base) - 1;
    for (int k = 0; k < 4; ++k) taps[i].w[k] = keys_weight(t - static_cast<double>(k - 1));
  }
  return taps;
}

struct NormalizeRange {
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate = true;

  double apply(double v) const {
    if (degenerate) return 0.5;
    return (std::clamp(v, lo, hi) - lo) / (hi - lo);
  }
};

NormalizeRange clamp_range(std::span<const double> values, double dynamic_range_db) {
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  NormalizeRange r;
  r.hi = *mx;
  r.lo = std::max(*mn, *mx - dynamic_range_db);
  r.degenerate = !(r.hi > r.lo);
  return r;
}

}  // namespace

std::vector<double> hann_window(std::size_t n) {
  if (n < 2) throw std::invalid_argument("hann_window: n must be >= 2");
  std::vector<double> w(n);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) w[k] = 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(k) / denom));
  return w;
}

std::vector<double> hamming_window(std::size_t n) {
  if (n < 2) throw std::invalid_argument("hamming_window: n must be >= 2");
  std::vector<double> w(n);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) w[k] = 0.54 - 0.46 * std::cos(kTwoPi * static_cast<double>(k) / denom);
  return w;
}

std::vector<double> make_window(WindowKind kind, std::size_t n) {
  switch (kind) {
    case WindowKind::Hann: return hann_window(n);
    case WindowKind::Hamming: return hamming_window(n);
    case WindowKind::Rectangular:
      if (n == 0) throw std::invalid_argument("window length must be positive");
      return std::vector<double>(n, 1.0);
  }
  throw std::invalid_argument("unknown window kind");
}

std::size_t ascending_to_dft_bin(std::size_t j, std::size_t n) { return (j + (n + 1) / 2) % n; }

double dft_bin_frequency(std::size_t dft_bin, std::size_t n, double sample_rate_hz) {
  const auto signed_bin = dft_bin >= (n + 1) / 2 ? static_cast<double>(dft_bin) - static_cast<double>(n)
                                                 : static_cast<double>(dft_bin);
  return signed_bin * sample_rate_hz / static_cast<double>(n);
}

StftConfig StftConfig::with_window(std::size_t window_len, double overlap, std::size_t fft_size) {
  StftConfig c;
  c.window_len = window_len;
  c.hop = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround((1.0 - overlap) * static_cast<double>(window_len))));
  c.fft_size = fft_size;
  return c;
}

void StftConfig::validate() const {
  if (window_len < 2) throw std::invalid_argument("stft: window_len must be >= 2");
  if (hop == 0 || hop > window_len) throw std::invalid_argument("stft: hop must lie in [1, window_len]");
  if (fft_size < window_len) throw std::invalid_argument("stft: fft_size must be >= window_len");
  if (!is_power_of_two(fft_size)) throw std::invalid_argument("stft: fft_size must be a power of two");
}

std::size_t StftConfig::frame_count(std::size_t signal_len) const {
  if (signal_len < window_len) return 0;
  return (signal_len - window_len) / hop + 1;
}

StftMatrix stft(const ComplexSignal& signal, const StftConfig& cfg) {
  cfg.validate();
  if (signal.size() < cfg.window_len) {
    throw std::invalid_argument("stft: signal shorter than one window (" + std::to_string(signal.size()) +
                                " < " + std::to_string(cfg.window_len) + ")");
  }
  const std::vector<double> w = make_window(cfg.window, cfg.window_len);
  StftMatrix out;
  out.frames = cfg.frame_count(signal.size());
  out.bins = cfg.fft_size;
  out.sample_rate_hz = signal.clock.sample_rate_hz;
  out.hop = cfg.hop;
  out.window_len = cfg.window_len;
  out.values.resize(out.frames * out.bins);
  FftPlan plan(cfg.fft_size);
  auto in = plan.input();
  for (std::size_t m = 0; m < out.frames; ++m) {
    std::fill(in.begin(), in.end(), Complex{});
    for (std::size_t n = 0; n < cfg.window_len; ++n) in[n] = signal.samples[n + m * cfg.hop] * w[n];
    plan.execute();
    std::copy(plan.output().begin(), plan.output().end(), out.values.begin() + static_cast<long>(m * out.bins));
  }
  return out;
}

namespace {

Spectrogram spectrogram_axes(std::size_t frames, std::size_t bins, double fs, std::size_t hop,
                             std::size_t window_len) {
  Spectrogram s;
  s.frames = frames;
  s.bins = bins;
  s.values_db.resize(frames * bins);
  s.frame_times_s.resize(frames);
  s.bin_freqs_hz.resize(bins);
  for (std::size_t m = 0; m < frames; ++m) {
    s.frame_times_s[m] = (static_cast<double>(m * hop) + 0.5 * static_cast<double>(window_len)) / fs;
  }
  for (std::size_t j = 0; j < bins; ++j) s.bin_freqs_hz[j] = dft_bin_frequency(ascending_to_dft_bin(j, bins), bins, fs);
  return s;
}

}  // namespace

Spectrogram log_magnitude(const StftMatrix& x, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("log_magnitude: epsilon must be > 0");
  Spectrogram s = spectrogram_axes(x.frames, x.bins, x.sample_rate_hz, x.hop, x.window_len);
  for (std::size_t m = 0; m < x.frames; ++m) {
    for (std::size_t j = 0; j < x.bins; ++j) {
      s.values_db[m * x.bins + j] = 10.0 * std::log10(std::norm(x.at(m, ascending_to_dft_bin(j, x.bins))) + epsilon);
    }
  }
  return s;
}

Spectrogram stft_spectrogram(const ComplexSignal& signal, const StftConfig& cfg, double epsilon) {
  cfg.validate();
  if (!(epsilon > 0.0)) throw std::invalid_argument("stft_spectrogram: epsilon must be > 0");
  if (signal.size() < cfg.window_len) throw std::invalid_argument("stft: signal shorter than one window");
  const std::vector<double> w = make_window(cfg.window, cfg.window_len);
  const std::size_t frames = cfg.frame_count(signal.size());
  const std::size_t bins = cfg.fft_size;
  Spectrogram s = spectrogram_axes(frames, bins, signal.clock.sample_rate_hz, cfg.hop, cfg.window_len);
  FftPlan plan(bins);
  auto in = plan.input();
  const std::size_t shift = (bins + 1) / 2;
  for (std::size_t m = 0; m < frames; ++m) {
    std::fill(in.begin(), in.end(), Complex{});
    for (std::size_t n = 0; n < cfg.window_len; ++n) in[n] = signal.samples[n + m * cfg.hop] * w[n];
    plan.execute();
    const auto out = plan.output();
    double* row = s.values_db.data() + m * bins;
    for (std::size_t j = 0; j < bins; ++j) {
      const std::size_t k = j + shift < bins ? j + shift : j + shift - bins;
      row[j] = 10.0 * std::log10(std::norm(out[k]) + epsilon);
    }
  }
  return s;
}

std::size_t WelchConfig::stride() const {
  const auto overlap = static_cast<std::size_t>(std::floor(static_cast<double>(segment_len) * overlap_fraction));
  return std::max<std::size_t>(1, segment_len - overlap);
}

std::size_t WelchConfig::segment_count(std::size_t signal_len) const {
  if (signal_len < segment_len || segment_len == 0) return 0;
  return (signal_len - segment_len) / stride() + 1;
}

void WelchConfig::validate(std::size_t signal_len) const {
  if (segment_len < 2) throw std::invalid_argument("welch: segment_len must be >= 2");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw std::invalid_argument("welch: overlap_fraction must lie in [0, 1)");
  }
  if (fft_size < segment_len) throw std::invalid_argument("welch: fft_size must be >= segment_len");
  if (signal_len < segment_len) {
    throw std::invalid_argument("welch: no full segment fits (" + std::to_string(signal_len) + " < " +
                                std::to_string(segment_len) + ")");
  }
}

PsdEstimate welch_psd(const ComplexSignal& signal, const WelchConfig& cfg) {
  if (cfg.segment_len < 2) throw std::invalid_argument("welch: segment_len must be >= 2");
  const std::vector<double> w = make_window(cfg.window, cfg.segment_len);
  return welch_psd(signal, cfg, w);
}

PsdEstimate welch_psd(const ComplexSignal& signal, const WelchConfig& cfg, std::span<const double> window) {
  cfg.validate(signal.size());
  if (window.size() != cfg.segment_len) throw std::invalid_argument("welch: window length != segment_len");
  const double fs = signal.clock.sample_rate_hz;
  double wsq = 0.0;
  for (double v : window) wsq += v * v;
  if (!(wsq > 0.0)) throw std::invalid_argument("welch: window has zero energy");
  // M * U = sum w^2
  const double scale = 1.0 / (wsq * fs);

  const std::size_t nfft = cfg.fft_size;
  const std::size_t count = cfg.segment_count(signal.size());
  const std::size_t stride = cfg.stride();
  std::vector<double> acc(nfft, 0.0);
  FftPlan plan(nfft);
  auto in = plan.input();
  for (std::size_t i = 0; i < count; ++i) {
    std::fill(in.begin(), in.end(), Complex{});
    const std::size_t start = i * stride;
    for (std::size_t n = 0; n < cfg.segment_len; ++n) in[n] = signal.samples[start + n] * window[n];
    plan.execute();
    const auto out = plan.output();
    for (std::size_t k = 0; k < nfft; ++k) acc[k] += std::norm(out[k]);
  }

  PsdEstimate psd;
  psd.segments = count;
  psd.sample_rate_hz = fs;
  psd.power_density.resize(nfft);
  psd.freqs_hz.resize(nfft);
  for (std::size_t j = 0; j < nfft; ++j) {
    const std::size_t k = ascending_to_dft_bin(j, nfft);
    psd.power_density[j] = acc[k] * scale / static_cast<double>(count);
    psd.freqs_hz[j] = dft_bin_frequency(k, nfft, fs);
  }
  return psd;
}

namespace {

// Grid indices read by the resize along one axis, including the extrapolation anchors.
std::vector<std::size_t> referenced_indices(const std::vector<Taps>& taps, std::size_t n) {
  std::vector<char> used(n, 0);
  const auto last = static_cast<long>(n) - 1;
  for (const Taps& t : taps) {
    for (int k = 0; k < 4; ++k) {
      const long idx = t.first + k;
      if (n == 1) {
        used[0] = 1;
      } else if (idx < 0) {
        used[0] = used[1] = 1;
      } else if (idx > last) {
        used[static_cast<std::size_t>(last)] = used[static_cast<std::size_t>(last - 1)] = 1;
      } else {
        used[static_cast<std::size_t>(idx)] = 1;
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (used[i] != 0) out.push_back(i);
  }
  return out;
}

// Separable pass over a grid given by get(r, c); only rows in `rows_needed` are touched.
template <typename Get>
std::vector<double> resize_sparse(Get&& get, std::size_t src_rows, std::size_t src_cols, std::size_t dst_rows,
                                  std::size_t dst_cols) {
  const auto col_taps = resize_taps(src_cols, dst_cols);
  const auto row_taps = resize_taps(src_rows, dst_rows);
  const auto rows_needed = referenced_indices(row_taps, src_rows);
  std::vector<double> tmp(src_rows * dst_cols, 0.0);
  for (std::size_t r : rows_needed) {
    auto line = [&get, r](std::size_t i) { return get(r, i); };
    for (std::size_t c = 0; c < dst_cols; ++c) {
      const Taps& t = col_taps[c];
      double v = 0.0;
      for (int k = 0; k < 4; ++k) v += t.w[k] * extended(line, t.first + k, src_cols);
      tmp[r * dst_cols + c] = v;
    }
  }
  std::vector<double> out(dst_rows * dst_cols);
  for (std::size_t c = 0; c < dst_cols; ++c) {
    auto column = [&tmp, c, dst_cols](std::size_t i) { return tmp[i * dst_cols + c]; };
    for (std::size_t r = 0; r < dst_rows; ++r) {
      const Taps& t = row_taps[r];
      double v = 0.0;
      for (int k = 0; k < 4; ++k) v += t.w[k] * extended(column, t.first + k, src_rows);
      out[r * dst_cols + c] = v;
    }
  }
  return out;
}

}  // namespace

std::vector<double> bicubic_resize(std::span<const double> src, std::size_t src_rows, std::size_t src_cols,
                                   std::size_t dst_rows, std::size_t dst_cols) {
  if (src_rows == 0 || src_cols == 0 || dst_rows == 0 || dst_cols == 0) {
    throw std::invalid_argument("bicubic_resize: empty grid");
  }
  if (src.size() != src_rows * src_cols) throw std::invalid_argument("bicubic_resize: size mismatch");
  return resize_sparse([&src, src_cols](std::size_t r, std::size_t c) { return src[r * src_cols + c]; }, src_rows,
                       src_cols, dst_rows, dst_cols);
}

FeatureImage spectrogram_to_image(const Spectrogram& spec, std::size_t side, double dynamic_range_db) {
  if (spec.frames == 0 || spec.bins == 0) throw std::invalid_argument("spectrogram_to_image: empty spectrogram");
  if (side == 0) throw std::invalid_argument("spectrogram_to_image: side must be positive");
  const NormalizeRange range = clamp_range(spec.values_db, dynamic_range_db);

  FeatureImage img;
  img.side = side;
  img.kind = ImageKind::Tfi;
  if (range.degenerate) {
    img.pixels.assign(side * side, 0.5F);
    return img;
  }
  // rows: frequency, highest first; cols: time
  const std::size_t rows = spec.bins;
  const std::size_t cols = spec.frames;
  std::vector<double> grid(rows * cols);
  for (std::size_t m = 0; m < cols; ++m) {
    const double* frame = spec.values_db.data() + m * spec.bins;
    for (std::size_t j = 0; j < rows; ++j) grid[(rows - 1 - j) * cols + m] = range.apply(frame[j]);
  }
  const std::vector<double> resized = bicubic_resize(grid, rows, cols, side, side);
  img.pixels.resize(side * side);
  for (std::size_t i = 0; i < resized.size(); ++i) img.pixels[i] = static_cast<float>(std::clamp(resized[i], 0.0, 1.0));
  return img;
}

FeatureImage psd_to_image(const PsdEstimate& psd, std::size_t side, double dynamic_range_db) {
  if (psd.power_density.empty()) throw std::invalid_argument("psd_to_image: empty PSD");
  if (side == 0) throw std::invalid_argument("psd_to_image: side must be positive");
  const std::size_t n = psd.power_density.size();
  std::vector<double> db(n);
  for (std::size_t k = 0; k < n; ++k) {
    db[k] = 10.0 * std::log10(std::max(psd.power_density[k], std::numeric_limits<double>::min()));
  }
  const NormalizeRange range = clamp_range(db, dynamic_range_db);

  FeatureImage img;
  img.side = side;
  img.kind = ImageKind::Psd;
  img.pixels.assign(side * side, 0.0F);
  const double top = static_cast<double>(side - 1);
  long prev_row = -1;
  for (std::size_t c = 0; c < side; ++c) {
    const std::size_t begin = c * n / side;
    const std::size_t end = std::max(begin + 1, (c + 1) * n / side);
    double height = 0.0;
    for (std::size_t k = begin; k < end; ++k) height = std::max(height, range.apply(db[k]));
    const long row = std::lround((1.0 - height) * top);
    const long from = prev_row < 0 ? row : std::min(prev_row, row);
    const long to = prev_row < 0 ? row : std::max(prev_row, row);
    for (long r = from; r <= to; ++r) img.pixels[static_cast<std::size_t>(r) * side + c] = 1.0F;
    prev_row = row;
  }
  return img;
}

StftConfig FeatureConfig::stft_for(std::size_t window_len) const {
  return StftConfig::with_window(window_len, stft_overlap, stft_fft_size);
}

std::size_t FeatureConfig::window_for(CompoundClass c) const {
  const auto [a, b] = class_components(c);
  return (a == PrimitiveKind::Pulse || b == PrimitiveKind::Pulse) ? stft_window_burst : stft_window_continuous;
}

FeatureImage stft_image(const ComplexSignal& signal, const StftConfig& cfg, std::size_t side, double epsilon,
                        double dynamic_range_db) {
  cfg.validate();
  if (!(epsilon > 0.0)) throw std::invalid_argument("stft_image: epsilon must be > 0");
  if (side == 0) throw std::invalid_argument("stft_image: side must be positive");
  if (signal.size() < cfg.window_len) throw std::invalid_argument("stft: signal shorter than one window");
  const std::vector<double> w = make_window(cfg.window, cfg.window_len);
  const std::size_t frames = cfg.frame_count(signal.size());
  const std::size_t bins = cfg.fft_size;
  const std::size_t shift = (bins + 1) / 2;

  // grid row r holds ascending bin (bins - 1 - r); grid column m is frame m
  const auto rows_needed = referenced_indices(resize_taps(bins, side), bins);
  const auto cols_needed = referenced_indices(resize_taps(frames, side), frames);
  std::vector<std::size_t> row_slot(bins, SIZE_MAX);
  std::vector<std::size_t> col_slot(frames, SIZE_MAX);
  for (std::size_t i = 0; i < rows_needed.size(); ++i) row_slot[rows_needed[i]] = i;
  for (std::size_t i = 0; i < cols_needed.size(); ++i) col_slot[cols_needed[i]] = i;
  std::vector<double> kept_db(rows_needed.size() * cols_needed.size());

  double p_min = std::numeric_limits<double>::infinity();
  double p_max = -std::numeric_limits<double>::infinity();
  FftPlan plan(bins);
  auto in = plan.input();
  for (std::size_t m = 0; m < frames; ++m) {
    std::fill(in.begin(), in.end(), Complex{});
    for (std::size_t n = 0; n < cfg.window_len; ++n) in[n] = signal.samples[n + m * cfg.hop] * w[n];
    plan.execute();
    const auto out = plan.output();
    for (std::size_t k = 0; k < bins; ++k) {
      const double p = std::norm(out[k]);
      p_min = std::min(p_min, p);
      p_max = std::max(p_max, p);
    }
    if (col_slot[m] == SIZE_MAX) continue;
    for (std::size_t i = 0; i < rows_needed.size(); ++i) {
      const std::size_t j = bins - 1 - rows_needed[i];
      const std::size_t k = j + shift < bins ? j + shift : j + shift - bins;
      kept_db[i * cols_needed.size() + col_slot[m]] = 10.0 * std::log10(std::norm(out[k]) + epsilon);
    }
  }

  // log10 is monotone, so the extrema of the dB grid come from the power extrema
  NormalizeRange range;
  range.hi = 10.0 * std::log10(p_max + epsilon);
  range.lo = std::max(10.0 * std::log10(p_min + epsilon), range.hi - dynamic_range_db);
  range.degenerate = !(range.hi > range.lo);

  FeatureImage img;
  img.side = side;
  img.kind = ImageKind::Tfi;
  if (range.degenerate) {
    img.pixels.assign(side * side, 0.5F);
    return img;
  }
  const std::size_t stride = cols_needed.size();
  auto get = [&](std::size_t r, std::size_t c) { return range.apply(kept_db[row_slot[r] * stride + col_slot[c]]); };
  const std::vector<double> resized = resize_sparse(get, bins, frames, side, side);
  img.pixels.resize(side * side);
  for (std::size_t i = 0; i < resized.size(); ++i) img.pixels[i] = static_cast<float>(std::clamp(resized[i], 0.0, 1.0));
  return img;
}

FeaturePair featurize(const ComplexSignal& signal, const FeatureConfig& cfg, std::size_t stft_window_len) {
  FeaturePair out;
  out.tfi = stft_image(signal, cfg.stft_for(stft_window_len), cfg.image_side, cfg.epsilon, cfg.dynamic_range_db);
  out.psd = psd_to_image(welch_psd(signal, cfg.welch), cfg.image_side, cfg.dynamic_range_db);
  return out;
}

}  // namespace jamlab
