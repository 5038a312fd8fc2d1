#include "jamlab/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "jamlab/errors.hpp"

namespace jamlab {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Leading filter output discarded so PBNJ starts in steady state.
constexpr std::size_t kPbnjWarmup = 1024;

void check_in_band(double freq_hz, const SampleClock& clock, const char* what) {
  if (!std::isfinite(freq_hz) || std::abs(freq_hz) >= clock.nyquist_hz()) {
    throw AliasingError(std::string(what) + " " + std::to_string(freq_hz) +
                        " Hz outside (-Fs/2, Fs/2) for Fs = " +
                        std::to_string(clock.sample_rate_hz) + " Hz");
  }
}

void check_power(double power) {
  if (!(power >= 0.0) || !std::isfinite(power)) {
    throw std::invalid_argument("jamming power must be finite and >= 0");
  }
}

// exp(i*2*pi*cycles) with the integer part of `cycles` removed first.
Complex unit_phasor(double cycles, double phase_rad) {
  const double frac = cycles - std::floor(cycles);
  return std::polar(1.0, kTwoPi * frac + phase_rad);
}

ComplexSignal empty_signal(const SampleClock& clock) {
  clock.validate();
  return ComplexSignal{std::vector<Complex>(clock.num_samples), clock};
}

double carrier_limit(const DrawRanges& r, const SampleClock& clock) {
  return std::min(r.stj_carrier_max_hz, 0.95 * clock.nyquist_hz());
}

}  // namespace

void SampleClock::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw std::invalid_argument("sample_rate_hz must be > 0");
  }
  if (num_samples < 2) throw std::invalid_argument("num_samples must be >= 2");
}

PrimitiveKind kind_of(const PrimitiveSpec& spec) {
  return static_cast<PrimitiveKind>(spec.index());
}

std::string_view primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Stj: return "STJ";
    case PrimitiveKind::Mtj: return "MTJ";
    case PrimitiveKind::Lfm: return "LFM";
    case PrimitiveKind::Pulse: return "Pulse";
    case PrimitiveKind::Pbnj: return "PBNJ";
  }
  return "?";
}

double power_of(const PrimitiveSpec& spec) {
  return std::visit([](const auto& s) { return s.power; }, spec);
}

void set_power(PrimitiveSpec& spec, double power) {
  std::visit([power](auto& s) { s.power = power; }, spec);
}

std::string_view class_name(CompoundClass c) {
  switch (c) {
    case CompoundClass::StjLfm: return "STJ_LFM";
    case CompoundClass::StjPulse: return "STJ_Pulse";
    case CompoundClass::StjPbnj: return "STJ_PBNJ";
    case CompoundClass::MtjLfm: return "MTJ_LFM";
    case CompoundClass::MtjPulse: return "MTJ_Pulse";
    case CompoundClass::MtjPbnj: return "MTJ_PBNJ";
    case CompoundClass::LfmPulse: return "LFM_Pulse";
    case CompoundClass::LfmPbnj: return "LFM_PBNJ";
    case CompoundClass::PulsePbnj: return "Pulse_PBNJ";
  }
  return "?";
}

std::array<CompoundClass, kNumClasses> all_classes() {
  std::array<CompoundClass, kNumClasses> out{};
  for (std::size_t i = 0; i < kNumClasses; ++i) out[i] = static_cast<CompoundClass>(i);
  return out;
}

std::optional<CompoundClass> parse_class_name(std::string_view name) {
  for (CompoundClass c : all_classes()) {
    if (class_name(c) == name) return c;
  }
  return std::nullopt;
}

std::pair<PrimitiveKind, PrimitiveKind> class_components(CompoundClass c) {
  using K = PrimitiveKind;
  switch (c) {
    case CompoundClass::StjLfm: return {K::Stj, K::Lfm};
    case CompoundClass::StjPulse: return {K::Stj, K::Pulse};
    case CompoundClass::StjPbnj: return {K::Stj, K::Pbnj};
    case CompoundClass::MtjLfm: return {K::Mtj, K::Lfm};
    case CompoundClass::MtjPulse: return {K::Mtj, K::Pulse};
    case CompoundClass::MtjPbnj: return {K::Mtj, K::Pbnj};
    case CompoundClass::LfmPulse: return {K::Lfm, K::Pulse};
    case CompoundClass::LfmPbnj: return {K::Lfm, K::Pbnj};
    case CompoundClass::PulsePbnj: return {K::Pulse, K::Pbnj};
  }
  throw std::invalid_argument("unknown compound class");
}

void CompoundSpec::validate() const {
  const auto [a, b] = class_components(class_label);
  if (kind_of(primary) != a || kind_of(secondary) != b) {
    throw std::invalid_argument("compound class " + std::string(class_name(class_label)) +
                                " does not match component variants " +
                                std::string(primitive_name(kind_of(primary))) + "+" +
                                std::string(primitive_name(kind_of(secondary))));
  }
  if (!std::isfinite(power_ratio_db)) throw std::invalid_argument("power_ratio_db must be finite");
}

NoiseSpec NoiseSpec::disabled() { return NoiseSpec{std::numeric_limits<double>::infinity()}; }

void validate_primitive(const PrimitiveSpec& spec, const SampleClock& clock) {
  clock.validate();
  check_power(power_of(spec));
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Stj>) {
          check_in_band(s.carrier_offset_hz, clock, "STJ carrier");
        } else if constexpr (std::is_same_v<S, Mtj>) {
          if (s.tones.empty()) throw std::invalid_argument("MTJ needs at least one tone");
          for (std::size_t i = 0; i < s.tones.size(); ++i) {
            check_in_band(s.tones[i].freq_hz, clock, "MTJ tone");
            for (std::size_t j = 0; j < i; ++j) {
              if (s.tones[i].freq_hz == s.tones[j].freq_hz) {
                throw std::invalid_argument("MTJ tone frequencies must be distinct");
              }
            }
          }
        } else if constexpr (std::is_same_v<S, Lfm>) {
          if (!(s.sweep_period_s > 0.0)) throw std::invalid_argument("LFM sweep_period_s must be > 0");
          if (!(s.sweep_bandwidth_hz >= 0.0)) {
            throw std::invalid_argument("LFM sweep_bandwidth_hz must be >= 0");
          }
        } else if constexpr (std::is_same_v<S, Pulse>) {
          check_in_band(s.carrier_offset_hz, clock, "pulse carrier");
          if (s.pri_samples == 0 || s.pw_samples == 0) {
            throw std::invalid_argument("pulse PRI and PW must be positive");
          }
          if (s.pw_samples > s.pri_samples) throw std::invalid_argument("pulse PW exceeds PRI");
        } else if constexpr (std::is_same_v<S, Pbnj>) {
          if (!(s.bandwidth_hz > 0.0)) throw std::invalid_argument("PBNJ bandwidth must be > 0");
          if (s.bandwidth_hz >= clock.sample_rate_hz) {
            throw std::invalid_argument("PBNJ bandwidth must be below the sample rate");
          }
          if (s.filter_order < 1) throw std::invalid_argument("PBNJ filter order must be >= 1");
          check_in_band(s.center_offset_hz, clock, "PBNJ center");
        }
      },
      spec);
}

ComplexSignal synth_stj(const Stj& spec, const SampleClock& clock) {
  validate_primitive(spec, clock);
  ComplexSignal out = empty_signal(clock);
  const double amp = std::sqrt(spec.power);
  const double cycles_per_sample = spec.carrier_offset_hz / clock.sample_rate_hz;
  for (std::size_t n = 0; n < out.size(); ++n) {
    out.samples[n] = amp * unit_phasor(cycles_per_sample * static_cast<double>(n), spec.phase_rad);
  }
  return out;
}

ComplexSignal synth_mtj(const Mtj& spec, const SampleClock& clock) {
  validate_primitive(spec, clock);
  ComplexSignal out = empty_signal(clock);
  const double amp = std::sqrt(spec.power / static_cast<double>(spec.tones.size()));
  for (const Tone& tone : spec.tones) {
    const double cps = tone.freq_hz / clock.sample_rate_hz;
    for (std::size_t n = 0; n < out.size(); ++n) {
      out.samples[n] += amp * unit_phasor(cps * static_cast<double>(n), tone.phase_rad);
    }
  }
  return out;
}

ComplexSignal synth_lfm(const Lfm& spec, const SampleClock& clock) {
  validate_primitive(spec, clock);
  ComplexSignal out = empty_signal(clock);
  const double amp = std::sqrt(spec.power);
  const double rate = spec.sweep_bandwidth_hz / spec.sweep_period_s;
  for (std::size_t n = 0; n < out.size(); ++n) {
    // sawtooth sweep: phase restarts every sweep period
    const double t = std::fmod(static_cast<double>(n) / clock.sample_rate_hz, spec.sweep_period_s);
    const double cycles = spec.start_freq_hz * t + 0.5 * rate * t * t;
    out.samples[n] = amp * unit_phasor(cycles, 0.0);
  }
  return out;
}

ComplexSignal synth_pulse(const Pulse& spec, const SampleClock& clock) {
  validate_primitive(spec, clock);
  ComplexSignal out = empty_signal(clock);
  const double amp = std::sqrt(spec.power);
  const double cps = spec.carrier_offset_hz / clock.sample_rate_hz;
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (n % spec.pri_samples < spec.pw_samples) {
      out.samples[n] = amp * unit_phasor(cps * static_cast<double>(n), 0.0);
    }
  }
  return out;
}

ComplexSignal synth_pbnj(const Pbnj& spec, const SampleClock& clock, RandomStream& rng) {
  validate_primitive(spec, clock);
  const std::size_t n_total = clock.num_samples + kPbnjWarmup;
  std::vector<Complex> noise(n_total);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  for (Complex& z : noise) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    z = Complex(re, im);
  }
  filter_in_place(noise, butterworth_lowpass(spec.filter_order, 0.5 * spec.bandwidth_hz,
                                             clock.sample_rate_hz));

  ComplexSignal out = empty_signal(clock);
  const double cps = spec.center_offset_hz / clock.sample_rate_hz;
  for (std::size_t n = 0; n < out.size(); ++n) {
    out.samples[n] = noise[n + kPbnjWarmup] * unit_phasor(cps * static_cast<double>(n), 0.0);
  }
  const double p = measure_power(out);
  if (p > 0.0) {
    const double scale = std::sqrt(spec.power / p);
    for (Complex& z : out.samples) z *= scale;
  }
  return out;
}

ComplexSignal synthesize(const PrimitiveSpec& spec, const SampleClock& clock, RandomStream& rng) {
  return std::visit(
      [&](const auto& s) -> ComplexSignal {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Stj>) return synth_stj(s, clock);
        else if constexpr (std::is_same_v<S, Mtj>) return synth_mtj(s, clock);
        else if constexpr (std::is_same_v<S, Lfm>) return synth_lfm(s, clock);
        else if constexpr (std::is_same_v<S, Pulse>) return synth_pulse(s, clock);
        else return synth_pbnj(s, clock, rng);
      },
      spec);
}

double measure_power(const ComplexSignal& signal) {
  if (signal.samples.empty()) throw std::invalid_argument("measure_power: empty signal");
  double acc = 0.0;
  for (const Complex& z : signal.samples) acc += std::norm(z);
  return acc / static_cast<double>(signal.samples.size());
}

double power_ratio_to_alpha(double power_ratio_db) { return std::pow(10.0, power_ratio_db / 20.0); }

ComplexSignal mix_compound(const CompoundSpec& spec, const SampleClock& clock, RandomStream& rng) {
  spec.validate();
  PrimitiveSpec first = spec.primary;
  PrimitiveSpec second = spec.secondary;
  set_power(first, 1.0);
  set_power(second, 1.0);
  ComplexSignal j1 = synthesize(first, clock, rng);
  const ComplexSignal j2 = synthesize(second, clock, rng);
  const double alpha = power_ratio_to_alpha(spec.power_ratio_db);
  for (std::size_t n = 0; n < j1.size(); ++n) j1.samples[n] += alpha * j2.samples[n];
  const double gamma = std::sqrt(measure_power(j1));
  if (!(gamma > 0.0)) throw NumericError("mix_compound: mixture has zero power");
  for (Complex& z : j1.samples) z /= gamma;
  return j1;
}

ComplexSignal add_awgn(const ComplexSignal& signal, const NoiseSpec& noise, RandomStream& rng) {
  if (std::isinf(noise.jnr_db) && noise.jnr_db > 0) return signal;
  if (std::isnan(noise.jnr_db)) throw std::invalid_argument("add_awgn: JNR is NaN");
  const double p_j = measure_power(signal);
  if (!(p_j > 0.0)) throw std::invalid_argument("add_awgn: JNR undefined for a zero-power signal");
  const double noise_var = p_j / std::pow(10.0, noise.jnr_db / 10.0);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5 * noise_var));
  ComplexSignal out = signal;
  for (Complex& z : out.samples) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    z += Complex(re, im);
  }
  return out;
}

PrimitiveSpec draw_primitive(PrimitiveKind kind, const SampleClock& clock, RandomStream& rng,
                             const DrawRanges& r) {
  clock.validate();
  const double fs = clock.sample_rate_hz;
  const double fmax = carrier_limit(r, clock);
  switch (kind) {
    case PrimitiveKind::Stj: {
      Stj s;
      s.carrier_offset_hz = uniform(rng, -fmax, fmax);
      s.phase_rad = uniform(rng, 0.0, kTwoPi);
      return s;
    }
    case PrimitiveKind::Mtj: {
      Mtj s;
      const auto span_tones = static_cast<double>(r.mtj_max_tones - r.mtj_min_tones + 1);
      const std::size_t k =
          r.mtj_min_tones + std::min<std::size_t>(static_cast<std::size_t>(uniform(rng, 0.0, span_tones)),
                                                  r.mtj_max_tones - r.mtj_min_tones);
      double spacing = uniform(rng, r.mtj_min_spacing_hz, r.mtj_max_spacing_hz);
      if (k > 1) spacing = std::min(spacing, 2.0 * fmax / static_cast<double>(k - 1));
      const double span = spacing * static_cast<double>(k - 1);
      const double first = uniform(rng, -fmax, fmax - span);
      for (std::size_t i = 0; i < k; ++i) {
        s.tones.push_back({first + spacing * static_cast<double>(i), uniform(rng, 0.0, kTwoPi)});
      }
      return s;
    }
    case PrimitiveKind::Lfm: {
      Lfm s;
      s.sweep_bandwidth_hz = r.lfm_bandwidth_hz;
      s.sweep_period_s = r.lfm_period_s;
      const double lo = -0.5 * fs;
      const double hi = 0.5 * fs - s.sweep_bandwidth_hz;
      s.start_freq_hz = hi > lo ? uniform(rng, lo, hi) : -0.5 * s.sweep_bandwidth_hz;
      return s;
    }
    case PrimitiveKind::Pulse: {
      Pulse s;
      s.pri_samples = std::max<std::size_t>(1, clock.num_samples / r.pulse_pri_divisor);
      s.pw_samples = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::lround(r.pulse_duty * static_cast<double>(s.pri_samples))), 1,
          s.pri_samples);
      s.carrier_offset_hz = uniform(rng, -fmax, fmax);
      return s;
    }
    case PrimitiveKind::Pbnj: {
      Pbnj s;
      s.bandwidth_hz = fs * uniform(rng, r.pbnj_min_bw_fraction, r.pbnj_max_bw_fraction);
      const double max_center = std::max(0.0, 0.5 * fs - 0.5 * s.bandwidth_hz);
      s.center_offset_hz = std::clamp(uniform(rng, -max_center, max_center), -fmax, fmax);
      return s;
    }
  }
  throw std::invalid_argument("unknown primitive kind");
}

CompoundSpec draw_compound(CompoundClass c, double pr_min_db, double pr_max_db,
                           const SampleClock& clock, RandomStream& rng, const DrawRanges& ranges) {
  const auto [a, b] = class_components(c);
  CompoundSpec spec;
  spec.class_label = c;
  spec.power_ratio_db = pr_max_db > pr_min_db ? uniform(rng, pr_min_db, pr_max_db) : pr_min_db;
  spec.primary = draw_primitive(a, clock, rng, ranges);
  spec.secondary = draw_primitive(b, clock, rng, ranges);
  return spec;
}

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double sample_rate_hz) {
  if (order < 1) throw std::invalid_argument("butterworth order must be >= 1");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < 0.5 * sample_rate_hz)) {
    throw std::invalid_argument("butterworth cutoff must lie in (0, Fs/2)");
  }
  const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate_hz);
  const double k2 = k * k;
  std::vector<Biquad> sections;
  for (int i = 1; i <= order / 2; ++i) {
    // pole-pair angle from the negative real axis
    const double angle = order % 2 == 0 ? (2.0 * i - 1.0) * std::numbers::pi / (2.0 * order)
                                        : static_cast<double>(i) * std::numbers::pi / order;
    const double q = 1.0 / (2.0 * std::cos(angle));
    const double norm = 1.0 / (1.0 + k / q + k2);
    Biquad s;
    s.b0 = k2 * norm;
    s.b1 = 2.0 * s.b0;
    s.b2 = s.b0;
    s.a1 = 2.0 * (k2 - 1.0) * norm;
    s.a2 = (1.0 - k / q + k2) * norm;
    sections.push_back(s);
  }
  if (order % 2 == 1) {
    Biquad s;
    s.b0 = k / (1.0 + k);
    s.b1 = s.b0;
    s.a1 = (k - 1.0) / (k + 1.0);
    sections.push_back(s);
  }
  return sections;
}

void filter_in_place(std::vector<Complex>& x, const std::vector<Biquad>& sections) {
  for (const Biquad& s : sections) {
    Complex z1{}, z2{};
    for (Complex& v : x) {
      const Complex in = v;
      const Complex out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace jamlab
