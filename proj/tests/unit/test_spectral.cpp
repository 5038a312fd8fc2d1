#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "jamlab/fft.hpp"
#include "jamlab/spectral.hpp"
#include "oracles.hpp"

using namespace jamlab;

namespace {

ComplexSignal random_signal(std::size_t n, std::uint64_t seed, double fs = 20e6) {
  ComplexSignal s;
  s.clock = {fs, n};
  s.samples.resize(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& z : s.samples) z = {g(rng), g(rng)};
  return s;
}

}  // namespace

TEST(Fft, MatchesNaiveDft) {
  for (std::size_t n : {1u, 7u, 64u, 100u, 256u}) {
    const auto s = random_signal(n, n);
    FftPlan plan(n);
    std::copy(s.samples.begin(), s.samples.end(), plan.input().begin());
    plan.execute();
    const auto ref = oracle::naive_dft(s.samples, n);
    for (std::size_t k = 0; k < n; ++k) EXPECT_LT(std::abs(plan.output()[k] - ref[k]), 1e-9) << n << ' ' << k;
  }
}

TEST(Windows, HannAndHammingClosedForm) {
  const auto h = hann_window(5);
  EXPECT_NEAR(h[0], 0.0, 1e-15);
  EXPECT_NEAR(h[1], 0.5, 1e-15);
  EXPECT_NEAR(h[2], 1.0, 1e-15);
  EXPECT_NEAR(h[4], 0.0, 1e-15);
  const auto m = hamming_window(3);
  EXPECT_NEAR(m[0], 0.08, 1e-15);
  EXPECT_NEAR(m[1], 1.0, 1e-15);
  EXPECT_THROW(hann_window(1), std::invalid_argument);
}

TEST(Stft, FramesMatchNaiveDft) {
  const auto s = random_signal(600, 9);
  StftConfig cfg{64, 10, 256, WindowKind::Hann};
  const auto x = stft(s, cfg);
  ASSERT_EQ(x.frames, (600u - 64u) / 10u + 1u);
  ASSERT_EQ(x.bins, 256u);
  const auto w = hann_window(64);
  for (std::size_t m : {std::size_t{0}, std::size_t{7}, x.frames - 1}) {
    std::vector<std::complex<double>> frame(64);
    for (std::size_t n = 0; n < 64; ++n) frame[n] = s.samples[m * 10 + n] * w[n];
    const auto ref = oracle::naive_dft(frame, 256);
    for (std::size_t k = 0; k < 256; ++k) EXPECT_LT(std::abs(x.at(m, k) - ref[k]), 1e-9);
  }
}

TEST(Stft, HopFromOverlap) {
  EXPECT_EQ(StftConfig::with_window(128, 0.92).hop, 10u);
  EXPECT_EQ(StftConfig::with_window(64, 0.92).hop, 5u);
  EXPECT_EQ(StftConfig::with_window(4, 0.99).hop, 1u);
}

TEST(Stft, ToneLandsInItsBinAscendingOrder) {
  ComplexSignal s;
  s.clock = {1024.0, 512};
  for (std::size_t n = 0; n < 512; ++n) s.samples.push_back(std::polar(1.0, 2.0 * std::numbers::pi * -100.0 * static_cast<double>(n) / 1024.0));
  const auto spec = stft_spectrogram(s, {128, 32, 128, WindowKind::Hann});
  std::size_t best = 0;
  for (std::size_t j = 0; j < spec.bins; ++j) {
    if (spec.at(0, j) > spec.at(0, best)) best = j;
  }
  EXPECT_NEAR(spec.bin_freqs_hz[best], -100.0, 1024.0 / 128.0);
  EXPECT_LT(spec.bin_freqs_hz.front(), 0.0);
  EXPECT_DOUBLE_EQ(spec.bin_freqs_hz[spec.bins / 2], 0.0);
}

TEST(Stft, StreamingSpectrogramEqualsMatrixPath) {
  const auto s = random_signal(1000, 3);
  StftConfig cfg{100, 17, 128, WindowKind::Hann};
  const auto a = log_magnitude(stft(s, cfg));
  const auto b = stft_spectrogram(s, cfg);
  ASSERT_EQ(a.values_db.size(), b.values_db.size());
  for (std::size_t i = 0; i < a.values_db.size(); ++i) EXPECT_NEAR(a.values_db[i], b.values_db[i], 1e-9);
}

TEST(Welch, FlatNoiseDensity) {
  const double fs = 20e6;
  const double sigma2 = 2.0;
  auto s = random_signal(60000, 17, fs);
  for (auto& z : s.samples) z *= std::sqrt(sigma2 / 2.0);
  WelchConfig cfg{1024, 0.5, 1024, WindowKind::Hamming};
  const auto psd = welch_psd(s, cfg);
  EXPECT_GE(psd.segments, 50u);
  double mean = 0.0;
  for (double p : psd.power_density) mean += p;
  mean /= static_cast<double>(psd.power_density.size());
  EXPECT_NEAR(mean, sigma2 / fs, 0.10 * sigma2 / fs);
  // every bin of a 100+ segment average stays near the flat level
  for (double p : psd.power_density) EXPECT_NEAR(p, sigma2 / fs, 0.6 * sigma2 / fs);
}

TEST(Welch, ParsevalForRectangularWindow) {
  const auto s = random_signal(4096, 5, 1000.0);
  WelchConfig cfg{4096, 0.0, 4096, WindowKind::Rectangular};
  const auto psd = welch_psd(s, cfg);
  double integral = 0.0;
  for (double p : psd.power_density) integral += p * psd.bin_width_hz();
  double power = 0.0;
  for (const auto& z : s.samples) power += std::norm(z);
  EXPECT_NEAR(integral, power / 4096.0, 1e-9 * power);
}

TEST(Welch, SegmentCountAndErrors) {
  WelchConfig cfg{2048, 0.5, 4096, WindowKind::Hamming};
  EXPECT_EQ(cfg.stride(), 1024u);
  EXPECT_EQ(cfg.segment_count(20000), (20000u - 2048u) / 1024u + 1u);
  EXPECT_THROW(welch_psd(random_signal(1000, 1), cfg), std::invalid_argument);
}

TEST(Bicubic, MatchesDirectTwoDimensionalReference) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto [r, c, orow, ocol] : std::vector<std::array<std::size_t, 4>>{{9, 13, 4, 5}, {40, 30, 64, 64}, {200, 64, 16, 16}, {3, 3, 8, 2}}) {
    std::vector<double> src(r * c);
    for (auto& v : src) v = u(rng);
    const auto got = bicubic_resize(src, r, c, orow, ocol);
    const auto ref = oracle::bicubic_2d(src, r, c, orow, ocol);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
  }
}

TEST(Bicubic, ReproducesAffineRampsExactly) {
  std::vector<double> src(20 * 30);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 30; ++j) src[i * 30 + j] = 0.3 * static_cast<double>(i) - 0.7 * static_cast<double>(j) + 2.0;
  const auto out = bicubic_resize(src, 20, 30, 7, 11);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 11; ++j) {
      const double y = (static_cast<double>(i) + 0.5) * 20.0 / 7.0 - 0.5;
      const double x = (static_cast<double>(j) + 0.5) * 30.0 / 11.0 - 0.5;
      EXPECT_NEAR(out[i * 11 + j], 0.3 * y - 0.7 * x + 2.0, 1e-12);
    }
}

TEST(Images, StreamingTfiEqualsDenseRendering) {
  for (std::uint64_t seed : {1u, 2u}) {
    auto s = random_signal(20000, seed);
    for (std::size_t n = 0; n < s.size(); ++n) s.samples[n] += std::polar(5.0, 0.4 * static_cast<double>(n));
    for (std::size_t w : {128u, 64u}) {
      const auto cfg = StftConfig::with_window(w, 0.92, 4096);
      for (std::size_t side : {64u, 224u}) {
        const auto dense = spectrogram_to_image(stft_spectrogram(s, cfg), side);
        const auto fast = stft_image(s, cfg, side);
        ASSERT_EQ(dense.pixels.size(), fast.pixels.size());
        for (std::size_t i = 0; i < dense.pixels.size(); ++i) ASSERT_EQ(dense.pixels[i], fast.pixels[i]) << i;
      }
    }
  }
}

TEST(Images, TfiRangeAndOrientation) {
  // a positive tone shows up in the upper half (frequency rises toward row 0)
  ComplexSignal s;
  s.clock = {20e6, 20000};
  for (std::size_t n = 0; n < 20000; ++n) s.samples.push_back(std::polar(1.0, 2.0 * std::numbers::pi * 5e6 * static_cast<double>(n) / 20e6));
  const auto img = stft_image(s, StftConfig::with_window(128), 64);
  std::size_t best_row = 0;
  float best = -1.0F;
  for (std::size_t r = 0; r < 64; ++r) {
    if (img.at(r, 32) > best) {
      best = img.at(r, 32);
      best_row = r;
    }
  }
  EXPECT_NEAR(static_cast<double>(best_row), 15.5, 1.5);
  for (float p : img.pixels) {
    EXPECT_GE(p, 0.0F);
    EXPECT_LE(p, 1.0F);
  }
}

TEST(Images, ConstantSpectrogramMapsToHalf) {
  Spectrogram sp;
  sp.frames = 4;
  sp.bins = 4;
  sp.values_db.assign(16, -3.0);
  const auto img = spectrogram_to_image(sp, 8);
  for (float p : img.pixels) EXPECT_EQ(p, 0.5F);
}

TEST(Images, PsdPolylineIsConnectedAndBinary) {
  const auto s = random_signal(20000, 4);
  WelchConfig cfg;
  const auto img = psd_to_image(welch_psd(s, cfg), 64);
  for (std::size_t c = 0; c < 64; ++c) {
    std::size_t lit = 0;
    for (std::size_t r = 0; r < 64; ++r) {
      const float p = img.at(r, c);
      EXPECT_TRUE(p == 0.0F || p == 1.0F);
      lit += p == 1.0F ? 1 : 0;
    }
    EXPECT_GE(lit, 1u) << c;
  }
}

TEST(Images, FeaturizeUsesBurstWindowForPulseClasses) {
  FeatureConfig f;
  EXPECT_EQ(f.window_for(CompoundClass::StjPulse), 64u);
  EXPECT_EQ(f.window_for(CompoundClass::PulsePbnj), 64u);
  EXPECT_EQ(f.window_for(CompoundClass::LfmPbnj), 128u);
  f.image_side = 32;
  const auto pair = featurize(random_signal(20000, 8), f, 128);
  EXPECT_EQ(pair.tfi.pixels.size(), 32u * 32u);
  EXPECT_EQ(pair.psd.kind, ImageKind::Psd);
}
