#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jamlab/signal.hpp"

namespace jamlab {

enum class WindowKind { Hann, Hamming, Rectangular };

/// Symmetric Hann window, w[k] = 0.5 (1 - cos(2 pi k / (n - 1))). Requires n >= 2.
std::vector<double> hann_window(std::size_t n);
/// Symmetric Hamming window, w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1)). Requires n >= 2.
std::vector<double> hamming_window(std::size_t n);
std::vector<double> make_window(WindowKind kind, std::size_t n);

/// DFT index of the j-th bin in ascending-frequency order (the fftshift mapping).
std::size_t ascending_to_dft_bin(std::size_t j, std::size_t n);
/// Frequency of a DFT bin, negative above n/2.
double dft_bin_frequency(std::size_t dft_bin, std::size_t n, double sample_rate_hz);

struct StftConfig {
  std::size_t window_len = 128;
  std::size_t hop = 10;
  std::size_t fft_size = 4096;
  WindowKind window = WindowKind::Hann;

  /// hop = round((1 - overlap) * window_len), at least 1.
  static StftConfig with_window(std::size_t window_len, double overlap = 0.92,
                                std::size_t fft_size = 4096);
  void validate() const;
  std::size_t frame_count(std::size_t signal_len) const;
};

/// Complex STFT, frames x fft_size, bins in DFT order.
struct StftMatrix {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<Complex> values;
  double sample_rate_hz = 1.0;
  std::size_t hop = 1;
  std::size_t window_len = 1;

  Complex at(std::size_t frame, std::size_t bin) const { return values[frame * bins + bin]; }
};

/// X[m,k] = sum_{n<Nw} x[n + mH] w[n] exp(-i 2 pi k n / Nfft).
StftMatrix stft(const ComplexSignal& signal, const StftConfig& cfg);

/// Log-power spectrogram. Unlike StftMatrix, bins are stored in ascending
/// frequency order (DC at index bins/2).
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values_db;  // [frame * bins + bin]
  std::vector<double> frame_times_s;
  std::vector<double> bin_freqs_hz;

  double at(std::size_t frame, std::size_t bin) const { return values_db[frame * bins + bin]; }
};

/// S[m,k] = 10 log10(|X[m,k]|^2 + epsilon).
Spectrogram log_magnitude(const StftMatrix& x, double epsilon = 1e-12);

/// log_magnitude(stft(signal, cfg), epsilon) computed frame by frame without
/// materializing the complex matrix.
Spectrogram stft_spectrogram(const ComplexSignal& signal, const StftConfig& cfg,
                             double epsilon = 1e-12);

struct WelchConfig {
  std::size_t segment_len = 2048;
  double overlap_fraction = 0.5;
  std::size_t fft_size = 4096;
  WindowKind window = WindowKind::Hamming;

  std::size_t stride() const;
  std::size_t segment_count(std::size_t signal_len) const;
  void validate(std::size_t signal_len) const;
};

/// Two-sided density in W/Hz on an ascending frequency grid of fft_size points.
struct PsdEstimate {
  std::vector<double> power_density;
  std::vector<double> freqs_hz;
  std::size_t segments = 0;
  double sample_rate_hz = 1.0;

  double bin_width_hz() const { return sample_rate_hz / static_cast<double>(power_density.size()); }
};

/// Averaged modified periodograms |DFT(x_i w)|^2 / (M U Fs), U = mean(w^2).
PsdEstimate welch_psd(const ComplexSignal& signal, const WelchConfig& cfg);
/// Same estimator with a caller-supplied window of length cfg.segment_len.
PsdEstimate welch_psd(const ComplexSignal& signal, const WelchConfig& cfg,
                      std::span<const double> window);

enum class ImageKind { Tfi, Psd };

/// side x side grayscale image in [0, 1], row-major, row 0 at the top.
struct FeatureImage {
  std::size_t side = 0;
  ImageKind kind = ImageKind::Tfi;
  std::vector<float> pixels;

  float at(std::size_t row, std::size_t col) const { return pixels[row * side + col]; }
};

/// Separable bicubic (Keys, a = -0.5) resize with half-pixel centers. Borders are
/// extended by linear extrapolation, so affine ramps are reproduced exactly.
std::vector<double> bicubic_resize(std::span<const double> src, std::size_t src_rows,
                                   std::size_t src_cols, std::size_t dst_rows,
                                   std::size_t dst_cols);

/// Frequency runs bottom (-Fs/2) to top (+Fs/2), time left to right. Values below
/// max - dynamic_range_db are clamped before min-max normalization; a constant
/// spectrogram maps to 0.5 everywhere.
FeatureImage spectrogram_to_image(const Spectrogram& spec, std::size_t side,
                                  double dynamic_range_db = 80.0);

/// 1-pixel polyline of the normalized dB curve on a zero background. Columns
/// take the max over the bins they cover; adjacent columns are joined by
/// vertical runs.
FeatureImage psd_to_image(const PsdEstimate& psd, std::size_t side, double dynamic_range_db = 80.0);

/// spectrogram_to_image(stft_spectrogram(signal, cfg, epsilon), side, dynamic_range_db)
/// without materializing the spectrogram: only the grid entries the resize reads
/// are converted to dB.
FeatureImage stft_image(const ComplexSignal& signal, const StftConfig& cfg, std::size_t side,
                        double epsilon = 1e-12, double dynamic_range_db = 80.0);

struct FeatureConfig {
  std::size_t image_side = 224;
  std::size_t stft_window_continuous = 128;
  std::size_t stft_window_burst = 64;
  double stft_overlap = 0.92;
  std::size_t stft_fft_size = 4096;
  WelchConfig welch;
  double epsilon = 1e-12;
  double dynamic_range_db = 80.0;

  StftConfig stft_for(std::size_t window_len) const;
  /// Burst window when either component of the class is Pulse.
  std::size_t window_for(CompoundClass c) const;
};

struct FeaturePair {
  FeatureImage tfi;
  FeatureImage psd;
};

FeaturePair featurize(const ComplexSignal& signal, const FeatureConfig& cfg,
                      std::size_t stft_window_len);

}  // namespace jamlab
