#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "jamlab/rng.hpp"

namespace jamlab {

using Complex = std::complex<double>;

struct SampleClock {
  double sample_rate_hz = 20e6;
  std::size_t num_samples = 20000;

  double duration_s() const { return static_cast<double>(num_samples) / sample_rate_hz; }
  double nyquist_hz() const { return 0.5 * sample_rate_hz; }
  /// Throws std::invalid_argument unless sample_rate_hz > 0 and num_samples >= 2.
  void validate() const;
};

struct ComplexSignal {
  std::vector<Complex> samples;
  SampleClock clock;

  std::size_t size() const { return samples.size(); }
};

// Jamming primitives. `power` is P_J in watts; for Pulse it is the on-interval power.
struct Stj {
  double power = 1.0;
  double carrier_offset_hz = 0.0;
  double phase_rad = 0.0;
};

struct Tone {
  double freq_hz = 0.0;
  double phase_rad = 0.0;
};

struct Mtj {
  double power = 1.0;
  std::vector<Tone> tones;
};

struct Lfm {
  double power = 1.0;
  double start_freq_hz = -5e6;
  double sweep_bandwidth_hz = 10e6;
  double sweep_period_s = 1e-3;
};

struct Pulse {
  double power = 1.0;
  double carrier_offset_hz = 0.0;
  std::size_t pri_samples = 1;
  std::size_t pw_samples = 1;
};

struct Pbnj {
  double power = 1.0;
  double center_offset_hz = 0.0;
  double bandwidth_hz = 2e6;
  int filter_order = 6;
};

using PrimitiveSpec = std::variant<Stj, Mtj, Lfm, Pulse, Pbnj>;

enum class PrimitiveKind { Stj, Mtj, Lfm, Pulse, Pbnj };

PrimitiveKind kind_of(const PrimitiveSpec& spec);
std::string_view primitive_name(PrimitiveKind kind);
double power_of(const PrimitiveSpec& spec);
void set_power(PrimitiveSpec& spec, double power);

/// The nine compound classes, in label order.
enum class CompoundClass {
  StjLfm,
  StjPulse,
  StjPbnj,
  MtjLfm,
  MtjPulse,
  MtjPbnj,
  LfmPulse,
  LfmPbnj,
  PulsePbnj,
};
inline constexpr std::size_t kNumClasses = 9;

std::string_view class_name(CompoundClass c);  // e.g. "STJ_LFM"
std::optional<CompoundClass> parse_class_name(std::string_view name);
std::pair<PrimitiveKind, PrimitiveKind> class_components(CompoundClass c);
std::array<CompoundClass, kNumClasses> all_classes();
inline std::size_t class_index(CompoundClass c) { return static_cast<std::size_t>(c); }

struct CompoundSpec {
  PrimitiveSpec primary;
  PrimitiveSpec secondary;
  double power_ratio_db = 0.0;
  CompoundClass class_label = CompoundClass::StjLfm;

  void validate() const;
};

struct NoiseSpec {
  double jnr_db = 0.0;  // +infinity disables the noise

  static NoiseSpec disabled();
};

/// Checks the per-variant invariants against a clock; throws std::invalid_argument
/// (or AliasingError for out-of-band carriers).
void validate_primitive(const PrimitiveSpec& spec, const SampleClock& clock);

ComplexSignal synth_stj(const Stj& spec, const SampleClock& clock);
ComplexSignal synth_mtj(const Mtj& spec, const SampleClock& clock);
ComplexSignal synth_lfm(const Lfm& spec, const SampleClock& clock);
ComplexSignal synth_pulse(const Pulse& spec, const SampleClock& clock);
ComplexSignal synth_pbnj(const Pbnj& spec, const SampleClock& clock, RandomStream& rng);
ComplexSignal synthesize(const PrimitiveSpec& spec, const SampleClock& clock, RandomStream& rng);

/// Mean of |x[n]|^2.
double measure_power(const ComplexSignal& signal);

/// alpha = 10^(PR/20); both components are synthesized with their power field set to 1.
double power_ratio_to_alpha(double power_ratio_db);

/// (j1 + alpha*j2) / gamma with gamma taken from the realized mixture, so the
/// result has unit mean power.
ComplexSignal mix_compound(const CompoundSpec& spec, const SampleClock& clock, RandomStream& rng);

/// x = j + n with n circular complex Gaussian of variance P_J / 10^(JNR/10).
ComplexSignal add_awgn(const ComplexSignal& signal, const NoiseSpec& noise, RandomStream& rng);

// Randomized parameter draws over the ranges used for dataset generation.
struct DrawRanges {
  double stj_carrier_max_hz = 9.5e6;
  std::size_t mtj_min_tones = 3;
  std::size_t mtj_max_tones = 6;
  double mtj_min_spacing_hz = 1.5e6;
  double mtj_max_spacing_hz = 3.0e6;
  double lfm_bandwidth_hz = 10e6;
  double lfm_period_s = 1e-3;
  double pulse_duty = 0.30;
  std::size_t pulse_pri_divisor = 6;  // PRI = N / divisor
  double pbnj_min_bw_fraction = 0.10;
  double pbnj_max_bw_fraction = 0.25;
};

PrimitiveSpec draw_primitive(PrimitiveKind kind, const SampleClock& clock, RandomStream& rng,
                             const DrawRanges& ranges = {});
CompoundSpec draw_compound(CompoundClass c, double pr_min_db, double pr_max_db,
                           const SampleClock& clock, RandomStream& rng,
                           const DrawRanges& ranges = {});

// Second-order IIR section, direct form II transposed, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

/// Digital Butterworth low-pass (bilinear transform with prewarping) as a
/// cascade of second-order sections. Odd orders end with a first-order section
/// (b2 = a2 = 0).
std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double sample_rate_hz);

/// Filters the real and imaginary parts independently through the cascade.
void filter_in_place(std::vector<Complex>& x, const std::vector<Biquad>& sections);

}  // namespace jamlab
