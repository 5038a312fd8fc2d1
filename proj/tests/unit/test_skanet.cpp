#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "jamlab/errors.hpp"
#include "jamlab/skanet.hpp"
#include "oracles.hpp"

using namespace jamlab;
using namespace jamlab::nn;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<T> v(nn::numel(shape));
  for (auto& x : v) x = static_cast<T>(g(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
void randomize_bn(BatchNorm<T>& bn, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 2.0);
  std::normal_distribution<double> g(0.0, 0.5);
  std::vector<T> m(bn.channels()), v(bn.channels());
  for (std::size_t i = 0; i < bn.channels(); ++i) {
    m[i] = static_cast<T>(g(rng));
    v[i] = static_cast<T>(u(rng));
    bn.gamma.mutable_values()[i] = static_cast<T>(u(rng));
    bn.beta.mutable_values()[i] = static_cast<T>(g(rng));
  }
  bn.set_running_stats(m, v);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_side = 12;
  c.stft_stem_channels = 3;
  c.stft_stages = {{4}, {5}};
  c.psd_stem_channels = 3;
  c.psd_stages = {{4}};
  c.sk_dilations = {1, 2};
  c.sk_reduction = 2;
  c.sk_min_dim = 2;
  c.se_reduction = 3;
  c.head_hidden = 6;
  c.num_classes = 3;
  return c;
}

// parameter count from the layer inventory, written out independently of the builder
std::size_t expected_params(const ModelConfig& c) {
  auto conv_bn = [](std::size_t ci, std::size_t co) { return 9 * ci * co + 2 * co; };
  auto acb = [](std::size_t ci, std::size_t co) { return 9 * ci * co + 3 * ci * co + 3 * ci * co + 6 * co; };
  auto lin = [](std::size_t ni, std::size_t no) { return ni * no + no; };
  std::size_t n = conv_bn(1, c.stft_stem_channels);
  std::size_t ch = c.stft_stem_channels;
  const bool sk = c.ablation != Ablation::NoSkAcb;
  for (const auto& s : c.stft_stages) {
    if (sk) {
      const std::size_t m = c.sk_dilations.size();
      const std::size_t d = std::max(s.channels / c.sk_reduction, c.sk_min_dim);
      n += m * acb(ch, s.channels) + d * s.channels + d + m * s.channels * d;
    } else {
      n += acb(ch, s.channels);
    }
    n += conv_bn(s.channels, s.channels);
    ch = s.channels;
  }
  std::size_t f = ch;
  if (c.ablation != Ablation::NoPsdStream) {
    n += conv_bn(1, c.psd_stem_channels);
    ch = c.psd_stem_channels;
    for (const auto& s : c.psd_stages) {
      n += acb(ch, s.channels) + conv_bn(s.channels, s.channels);
      ch = s.channels;
    }
    f += ch;
  }
  if (c.ablation == Ablation::Full || c.ablation == Ablation::NoSkAcb) n += lin(f, f / c.se_reduction) + lin(f / c.se_reduction, f);
  n += lin(f, c.head_hidden) + 2 * c.head_hidden + lin(c.head_hidden, c.num_classes);
  return n;
}

template <typename T>
double fusion_deviation(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t ci = 1 + rng() % 4, co = 1 + rng() % 4;
    const std::size_t dil = std::size_t{1} << (rng() % 3);
    const std::size_t stride = 1 + rng() % 2;
    const std::size_t side = 5 + rng() % 8;
    RandomStream init(rng());
    auto p = AcbParams<T>::create(ci, co, stride, dil, init);
    randomize_bn(p.bn3x3, rng);
    randomize_bn(p.bn1x3, rng);
    randomize_bn(p.bn3x1, rng);
    const auto x = randn<T>({2, ci, side, side}, rng());
    const auto a = acb_preactivation(x, p, Mode::Eval);
    const auto f = acb_fuse(p);
    const auto b = fused_preactivation(x, f);
    EXPECT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

}  // namespace

TEST(Config, PaperDefaultsAndScaling) {
  const auto p = ModelConfig::paper();
  EXPECT_EQ(p.input_side, 224u);
  EXPECT_EQ(p.stft_features(), 512u);
  EXPECT_EQ(p.psd_features(), 128u);
  EXPECT_EQ(p.head_features(), 640u);
  EXPECT_EQ(p.se_hidden(), 40u);
  EXPECT_EQ(p.sk_dim(64), 16u);
  EXPECT_EQ(p.sk_dim(512), 32u);
  const auto d = ModelConfig::desk();
  EXPECT_EQ(d.input_side, 64u);
  EXPECT_EQ(d.stft_stages.back().channels, 128u);
  EXPECT_EQ(d.stft_stem_channels, 8u);
  EXPECT_NO_THROW(d.validate());
  ModelConfig bad = p;
  bad.sk_dilations = {1};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, AblationNamesRoundTrip) {
  for (auto a : all_ablations()) EXPECT_EQ(parse_ablation(ablation_name(a)), a);
  EXPECT_THROW(parse_ablation("nope"), ConfigError);
  EXPECT_EQ(all_ablations().size(), 4u);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  auto c = ModelConfig::desk();
  c.ablation = Ablation::NoPsdStream;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  j["bogus"] = 1;
  EXPECT_THROW(j.get<ModelConfig>(), ConfigError);
}

TEST(Acb, FusionEquivalenceDouble) { EXPECT_LT(fusion_deviation<double>(200, 1), 1e-10); }

TEST(Acb, FusionEquivalenceFloat) { EXPECT_LT(fusion_deviation<float>(200, 2), 1e-4); }

TEST(Acb, FusionRequiresRunningStatistics) {
  RandomStream rng(1);
  auto p = AcbParams<double>::create(2, 2, 1, 1, rng);
  EXPECT_THROW(acb_fuse(p), std::logic_error);
  // one Train pass populates every branch
  acb_forward(randn<double>({4, 2, 5, 5}, 3), p, Mode::Train);
  EXPECT_NO_THROW(acb_fuse(p));
}

TEST(Acb, FusedKernelLayoutByHand) {
  // identity-like BN on each branch: fused kernel = k3x3 + centred 1x3 row + centred 3x1 column
  RandomStream rng(4);
  auto p = AcbParams<double>::create(1, 1, 1, 1, rng);
  for (auto* bn : {&p.bn3x3, &p.bn1x3, &p.bn3x1}) bn->set_running_stats({0.0}, {1.0 - 1e-5});
  const auto f = acb_fuse(p);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      double want = p.k3x3[r * 3 + c];
      if (r == 1) want += p.k1x3[c];
      if (c == 1) want += p.k3x1[r];
      EXPECT_NEAR(f.kernel[r * 3 + c], want, 1e-12);
    }
  EXPECT_NEAR(f.bias[0], 0.0, 1e-15);
}

TEST(Acb, ShapesPreservedAtEveryDilation) {
  RandomStream rng(5);
  for (std::size_t dil : {1u, 2u, 4u}) {
    auto p = AcbParams<double>::create(2, 3, 1, dil, rng);
    const auto y = acb_forward(randn<double>({1, 2, 9, 7}, 6), p, Mode::Train);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 9, 7}));
  }
}

TEST(SkAcb, AttentionIsConvexPerChannel) {
  RandomStream rng(7);
  auto blk = SkAcbBlock<double>::create(3, 8, {1, 2, 4}, 4, rng);
  SkTrace<double> tr;
  const auto y = sk_acb_forward(randn<double>({2, 3, 8, 8}, 8), blk, Mode::Train, &tr);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 8, 8}));
  ASSERT_EQ(tr.weights.shape(), (Shape{2, 3, 8}));
  EXPECT_EQ(tr.reduced.shape(), (Shape{2, 4}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 8; ++c) {
      double s = 0.0;
      for (std::size_t m = 0; m < 3; ++m) {
        const double w = tr.weights[(b * 3 + m) * 8 + c];
        EXPECT_GT(w, 0.0);
        s += w;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  // output is the attention-weighted sum of branch outputs
  for (std::size_t i : {0u, 100u, 777u}) {
    const std::size_t b = i / (8 * 64), c = (i / 64) % 8;
    double want = 0.0;
    for (std::size_t m = 0; m < 3; ++m) want += tr.weights[(b * 3 + m) * 8 + c] * tr.branch_outputs[m][i];
    EXPECT_NEAR(y[i], want, 1e-12);
  }
}

TEST(SkAcb, Gradients) {
  RandomStream rng(9);
  auto blk = SkAcbBlock<double>::create(2, 4, {1, 2}, 2, rng);
  auto x = randn<double>({3, 2, 5, 5}, 10);
  x.set_requires_grad(true);
  const auto r = randn<double>({3, 4, 5, 5}, 11);
  std::vector<Tensor<double>> params{x, blk.reduce_weight, blk.reduce_bias};
  for (auto& a : blk.attention) params.push_back(a);
  for (auto& br : blk.branches) {
    params.push_back(br.params.k3x3);
    params.push_back(br.params.k1x3);
    params.push_back(br.params.k3x1);
    params.push_back(br.params.bn1x3.gamma);
  }
  EXPECT_LT(oracle::gradcheck([&] { return sum(mul(sk_acb_forward(x, blk, Mode::Train), r)); }, params), 1e-3);
}

TEST(Se, GateRecalibratesConcatenation) {
  RandomStream rng(12);
  SeFusionParams<double> p{LinearParams<double>::create(6, 2, true, rng), LinearParams<double>::create(2, 6, true, rng)};
  const auto a = randn<double>({2, 4}, 13);
  const auto b = randn<double>({2, 2}, 14);
  Tensor<double> gate;
  const auto y = se_fuse(a, b, p, &gate);
  ASSERT_EQ(gate.shape(), (Shape{2, 6}));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      const double x = c < 4 ? a[r * 4 + c] : b[r * 2 + c - 4];
      EXPECT_GT(gate[r * 6 + c], 0.0);
      EXPECT_LT(gate[r * 6 + c], 1.0);
      EXPECT_NEAR(y[r * 6 + c], gate[r * 6 + c] * x, 1e-15);
    }
}

TEST(Skanet, ParameterCountMatchesInventory) {
  for (auto a : all_ablations()) {
    auto c = ModelConfig::desk();
    c.ablation = a;
    EXPECT_EQ(count_params(c), expected_params(c)) << ablation_name(a);
    auto t = tiny_config();
    t.ablation = a;
    EXPECT_EQ(count_params(t), expected_params(t)) << ablation_name(a);
  }
  EXPECT_EQ(count_params(ModelConfig::paper()), expected_params(ModelConfig::paper()));
}

TEST(Skanet, PaperScaleParameterCountWithinTolerance) {
  const double n = static_cast<double>(count_params(ModelConfig::paper()));
  EXPECT_NEAR(n / 10.63e6, 1.0, 0.20);
}

TEST(Skanet, ForwardShapesAndProbabilities) {
  for (auto a : all_ablations()) {
    auto c = tiny_config();
    c.ablation = a;
    Skanet<double> m(c, 3);
    RandomStream rng(1);
    const auto p = m.forward(randn<double>({4, 1, 12, 12}, 1), randn<double>({4, 1, 12, 12}, 2), Mode::Train, &rng);
    ASSERT_EQ(p.shape(), (Shape{4, 3}));
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(p[r * 3] + p[r * 3 + 1] + p[r * 3 + 2], 1.0, 1e-12);
  }
  Skanet<double> m(tiny_config(), 3);
  EXPECT_THROW(m.forward(randn<double>({1, 1, 10, 10}, 1), randn<double>({1, 1, 10, 10}, 1), Mode::Eval), std::invalid_argument);
}

TEST(Skanet, NoPsdStreamIgnoresPsdInput) {
  auto c = tiny_config();
  c.ablation = Ablation::NoPsdStream;
  Skanet<double> m(c, 4);
  const auto x = randn<double>({2, 1, 12, 12}, 5);
  const auto a = m.forward(x, randn<double>({2, 1, 12, 12}, 6), Mode::Eval);
  const auto b = m.forward(x, randn<double>({2, 1, 12, 12}, 7), Mode::Eval);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Skanet, NamesUniqueAndConstructionDeterministic) {
  Skanet<float> a(ModelConfig::desk(), 11), b(ModelConfig::desk(), 11), c(ModelConfig::desk(), 12);
  std::set<std::string> names;
  const auto sa = a.state(), sb = b.state(), sc = c.state();
  for (const auto& t : sa) EXPECT_TRUE(names.insert(t.name).second) << t.name;
  EXPECT_TRUE(names.count("stft_stream.stem.kernel"));
  EXPECT_TRUE(names.count("stft_stream.stage1.block1.branch1.k3x3"));
  EXPECT_TRUE(names.count("head.bn.running_var"));
  ASSERT_EQ(sa.size(), sb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    for (std::size_t j = 0; j < sa[i].tensor.numel(); ++j) {
      ASSERT_EQ(sa[i].tensor[j], sb[i].tensor[j]);
      any_diff = any_diff || sa[i].tensor[j] != sc[i].tensor[j];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(Skanet, EndToEndGradientsWidthReduced) {
  auto c = tiny_config();
  c.dropout_p = 0.3;
  Skanet<double> m(c, 21);
  const auto x1 = randn<double>({3, 1, 12, 12}, 22);
  const auto x2 = randn<double>({3, 1, 12, 12}, 23);
  std::vector<Tensor<double>> params;
  for (const auto& p : m.parameters()) params.push_back(p.tensor);
  auto probe = [&] {
    RandomStream rng(8);
    const auto p = m.forward(x1, x2, Mode::Train, &rng);
    return sum(mul(p, randn<double>({3, 3}, 30)));
  };
  EXPECT_LT(oracle::gradcheck(probe, params, 1e-5, 1e-6, 40), 1e-3);
}

TEST(Skanet, FusedModelMatchesTrainForm) {
  for (auto a : all_ablations()) {
    auto c = tiny_config();
    c.ablation = a;
    Skanet<double> m(c, 31);
    RandomStream rng(2);
    // populate BN statistics
    for (int i = 0; i < 3; ++i) m.forward(randn<double>({4, 1, 12, 12}, 40 + i), randn<double>({4, 1, 12, 12}, 50 + i), Mode::Train, &rng);
    const auto x1 = randn<double>({5, 1, 12, 12}, 60);
    const auto x2 = randn<double>({5, 1, 12, 12}, 61);
    const auto before = m.forward(x1, x2, Mode::Eval);
    const std::size_t n_before = m.count_params();
    m.fuse();
    EXPECT_TRUE(m.is_fused());
    EXPECT_LT(m.count_params(), n_before);
    const auto after = m.forward(x1, x2, Mode::Eval);
    for (std::size_t i = 0; i < before.numel(); ++i) EXPECT_NEAR(before[i], after[i], 1e-10);
    RandomStream r2(1);
    EXPECT_THROW(m.forward(x1, x2, Mode::Train, &r2), std::logic_error);
  }
}

TEST(Skanet, FuseBeforeTrainingThrows) {
  Skanet<double> m(tiny_config(), 3);
  EXPECT_THROW(m.fuse(), std::logic_error);
}
