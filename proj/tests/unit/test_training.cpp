#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "jamlab/errors.hpp"
#include "jamlab/training.hpp"
#include "oracles.hpp"

using namespace jamlab;
using namespace jamlab::nn;

namespace {

nn::ModelConfig tiny_model() {
  nn::ModelConfig c;
  c.input_side = 8;
  c.stft_stem_channels = 2;
  c.stft_stages = {{4}};
  c.psd_stem_channels = 2;
  c.psd_stages = {{2}};
  c.sk_dilations = {1, 2};
  c.sk_reduction = 2;
  c.sk_min_dim = 2;
  c.se_reduction = 2;
  c.head_hidden = 4;
  c.num_classes = 3;
  c.dropout_p = 0.0;
  return c;
}

// class k lights up row k of the TFI image; trivially separable
FeatureDataset toy_dataset(std::size_t per_class, std::uint64_t seed) {
  FeatureDataset d;
  d.side = 8;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0F, 0.05F);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<float> tfi(64), psd(64);
      for (std::size_t p = 0; p < 64; ++p) {
        tfi[p] = (p / 8 == 2 * k ? 1.0F : 0.0F) + g(rng);
        psd[p] = g(rng);
      }
      d.append(tfi, psd, k, i % 2 == 0 ? 0.0 : 10.0);
    }
  return d;
}

}  // namespace

TEST(CrossEntropy, UniformPredictionGivesLogK) {
  Tensor<double> p({4, 9}, 1.0 / 9.0);
  const std::vector<std::size_t> y{0, 3, 8, 5};
  EXPECT_NEAR(cross_entropy(p, std::span<const std::size_t>(y)).item(), -std::log(1.0 / 9.0 + 1e-12), 1e-14);
}

TEST(CrossEntropy, HandValueAndEpsilonGuard) {
  Tensor<double> p({2, 2}, std::vector<double>{0.25, 0.75, 1.0, 0.0});
  const std::vector<std::size_t> y{1, 1};
  const double want = -(std::log(0.75 + 1e-12) + std::log(1e-12)) / 2.0;
  EXPECT_NEAR(cross_entropy(p, std::span<const std::size_t>(y)).item(), want, 1e-9);
  EXPECT_TRUE(std::isfinite(cross_entropy(p, std::span<const std::size_t>(y)).item()));
}

TEST(CrossEntropy, GradientThroughSoftmax) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> v(12);
  for (auto& x : v) x = g(rng);
  Tensor<double> logits({4, 3}, v);
  logits.set_requires_grad(true);
  const std::vector<std::size_t> y{0, 2, 1, 1};
  EXPECT_LT(oracle::gradcheck([&] { return cross_entropy(softmax(logits, 1), std::span<const std::size_t>(y)); }, {logits}), 1e-4);
  // analytic: (p - onehot) / B
  logits.zero_grad();
  const auto p = softmax(logits, 1);
  backward(cross_entropy(p, std::span<const std::size_t>(y)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(logits.grad()[i * 3 + k], (p[i * 3 + k] - (k == y[i] ? 1.0 : 0.0)) / 4.0, 1e-9);
}

TEST(Adam, MatchesScriptedReference) {
  Tensor<double> w({3}, std::vector<double>{0.5, -1.0, 2.0});
  w.set_requires_grad(true);
  std::vector<NamedTensor<double>> params{{"w", w}};
  AdamState<double> st;
  st.lr = 0.01;
  oracle::ScriptedAdam ref;
  ref.lr = 0.01;
  std::vector<double> theta{0.5, -1.0, 2.0};
  for (int step = 0; step < 25; ++step) {
    // loss = sum(w^3) + sum(w): gradient 3 w^2 + 1
    backward(sum(add(mul(mul(w, w), w), w)));
    std::vector<double> g(3);
    for (std::size_t i = 0; i < 3; ++i) g[i] = 3.0 * theta[i] * theta[i] + 1.0;
    adam_step(std::span<const NamedTensor<double>>(params), st);
    ref.step(theta, g);
    for (std::size_t i = 0; i < 3; ++i) ASSERT_NEAR(w[i], theta[i], 1e-12) << step;
    EXPECT_FALSE(w.has_grad());
  }
  EXPECT_EQ(st.t, 25u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> w({2}, std::vector<double>{1.0, 1.0});
  w.set_requires_grad(true);
  std::vector<NamedTensor<double>> params{{"w", w}};
  AdamState<double> st;
  backward(sum(mul(w, Tensor<double>({2}, std::vector<double>{3.0, -0.01}))));
  adam_step(std::span<const NamedTensor<double>>(params), st);
  EXPECT_NEAR(w[0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(w[1], 1.0 + 1e-3, 1e-8);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 0.0), 1e-3);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 0.0), 5e-4, 1e-15);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-15);
  EXPECT_NEAR(cosine_lr(25, 100, 1.0, 0.0), 0.5 * (1.0 + std::cos(M_PI / 4.0)), 1e-15);
  for (std::size_t e = 1; e <= 100; ++e) EXPECT_LE(cosine_lr(e, 100, 1e-3, 0.0), cosine_lr(e - 1, 100, 1e-3, 0.0));
  EXPECT_THROW(cosine_lr(101, 100, 1e-3, 0.0), std::out_of_range);
}

TEST(Split, DisjointCoveringAndStratified) {
  std::vector<StratumKey> keys;
  for (std::size_t c = 0; c < 9; ++c)
    for (double j : {0.0, 10.0})
      for (int r = 0; r < 100; ++r) keys.push_back({c, j});
  const auto s = split_dataset(std::span<const StratumKey>(keys), {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(s.train.size(), 1440u);
  EXPECT_EQ(s.val.size(), 180u);
  EXPECT_EQ(s.test.size(), 180u);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  EXPECT_EQ(all.size(), keys.size());
  std::map<std::pair<std::size_t, double>, int> per_stratum;
  for (auto i : s.test) ++per_stratum[{keys[i].class_label, keys[i].jnr_db}];
  for (const auto& [k, n] : per_stratum) EXPECT_EQ(n, 10);
  EXPECT_EQ(per_stratum.size(), 18u);
  const auto again = split_dataset(std::span<const StratumKey>(keys), {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(again.test, s.test);
  const auto other = split_dataset(std::span<const StratumKey>(keys), {0.8, 0.1, 0.1}, 6);
  EXPECT_NE(other.test, s.test);
}

TEST(Split, SmallStrataArePooledWithWarning) {
  std::vector<StratumKey> keys;
  for (std::size_t c = 0; c < 3; ++c)
    for (int r = 0; r < 4; ++r) keys.push_back({c, 0.0});
  for (int r = 0; r < 20; ++r) keys.push_back({3, 0.0});
  std::vector<std::string> warnings;
  const auto s = split_dataset(std::span<const StratumKey>(keys), {0.5, 0.25, 0.25}, 1, &warnings);
  EXPECT_EQ(warnings.size(), 3u);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), keys.size());
  EXPECT_FALSE(s.test.empty());
}

TEST(Split, RatiosValidated) {
  std::vector<StratumKey> keys(10, StratumKey{0, 0.0});
  EXPECT_THROW(split_dataset(std::span<const StratumKey>(keys), {0.5, 0.5, 0.5}, 1), std::invalid_argument);
  EXPECT_THROW(split_dataset(std::span<const StratumKey>(keys), {-0.1, 0.6, 0.5}, 1), std::invalid_argument);
}

TEST(Shuffle, DeterministicPermutation) {
  std::vector<std::size_t> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  RandomStream r1(3), r2(3);
  shuffle_indices(a, r1);
  shuffle_indices(b, r2);
  EXPECT_EQ(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(TrainConfig, JsonRejectsUnknownKeys) {
  TrainConfig c;
  c.epochs = 7;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>(), c);
  j["dropout"] = 0.5;
  EXPECT_THROW(j.get<TrainConfig>(), ConfigError);
}

TEST(Batch, LayoutAndLabels) {
  const auto d = toy_dataset(2, 1);
  const std::vector<std::size_t> idx{5, 0};
  const auto b = make_batch<float>(d, std::span<const std::size_t>(idx));
  EXPECT_EQ(b.tfi.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_EQ(b.labels, (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(b.tfi[0], d.tfi[5 * 64]);
}

TEST(Training, LearnsSeparableToyTask) {
  const auto d = toy_dataset(20, 2);
  std::vector<StratumKey> keys;
  for (std::size_t i = 0; i < d.size(); ++i) keys.push_back({d.labels[i], d.jnr_db[i]});
  const auto split = split_dataset(std::span<const StratumKey>(keys), {0.6, 0.2, 0.2}, 1);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.lr_max = 1e-2;
  Skanet<float> m(tiny_model(), 3);
  std::ostringstream log;
  const auto lines = fit(m, d, split, cfg, 9, &log);
  ASSERT_EQ(lines.size(), 15u);
  EXPECT_LT(lines.back().train_loss, lines.front().train_loss);
  EXPECT_GE(evaluate(m, d, split.test).accuracy, 90.0);
  std::string header;
  std::istringstream in(log.str());
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,lr,train_loss,val_loss,val_oa");
  EXPECT_EQ(lines.front().epoch, 1u);
  EXPECT_DOUBLE_EQ(lines.front().lr, 1e-2);
}

TEST(Training, DeterministicGivenSeeds) {
  const auto d = toy_dataset(6, 3);
  SplitIndices split;
  for (std::size_t i = 0; i < d.size(); ++i) (i % 3 == 0 ? split.val : split.train).push_back(i);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  Skanet<float> a(tiny_model(), 1), b(tiny_model(), 1);
  fit(a, d, split, cfg, 4);
  fit(b, d, split, cfg, 4);
  const auto sa = a.state(), sb = b.state();
  for (std::size_t i = 0; i < sa.size(); ++i)
    for (std::size_t j = 0; j < sa[i].tensor.numel(); ++j) ASSERT_EQ(sa[i].tensor[j], sb[i].tensor[j]) << sa[i].name;
}

TEST(Training, RemainderOfOneIsFolded) {
  const auto d = toy_dataset(3, 4);  // 9 samples, batch 4 -> 4 + 5
  std::vector<std::size_t> idx(9);
  std::iota(idx.begin(), idx.end(), 0);
  Skanet<float> m(tiny_model(), 2);
  AdamState<float> adam;
  RandomStream rng(1);
  std::vector<double> losses;
  train_epoch(m, d, std::span<const std::size_t>(idx), adam, 4, rng, [&](double l) { losses.push_back(l); });
  EXPECT_EQ(losses.size(), 2u);
  EXPECT_EQ(adam.t, 2u);
}

TEST(Training, NonFiniteLossRaisesNumericError) {
  auto d = toy_dataset(2, 5);
  d.tfi[3] = std::numeric_limits<float>::quiet_NaN();
  std::vector<std::size_t> idx(6);
  std::iota(idx.begin(), idx.end(), 0);
  Skanet<float> m(tiny_model(), 2);
  AdamState<float> adam;
  RandomStream rng(1);
  EXPECT_THROW(train_epoch(m, d, std::span<const std::size_t>(idx), adam, 6, rng), NumericError);
}

TEST(Training, ZeroEpochsLeavesModelUntouched) {
  const auto d = toy_dataset(2, 6);
  SplitIndices split;
  for (std::size_t i = 0; i < d.size(); ++i) split.train.push_back(i);
  TrainConfig cfg;
  cfg.epochs = 0;
  Skanet<float> m(tiny_model(), 5), ref(tiny_model(), 5);
  EXPECT_TRUE(fit(m, d, split, cfg, 1).empty());
  const auto a = m.state(), b = ref.state();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) ASSERT_EQ(a[i].tensor[j], b[i].tensor[j]);
}

TEST(Evaluate, DoesNotMutateModel) {
  const auto d = toy_dataset(3, 7);
  std::vector<std::size_t> idx(9);
  std::iota(idx.begin(), idx.end(), 0);
  Skanet<float> m(tiny_model(), 8);
  const auto before = m.state();
  std::vector<std::vector<float>> copy;
  for (const auto& t : before) copy.emplace_back(t.tensor.values().begin(), t.tensor.values().end());
  const auto out = evaluate(m, d, std::span<const std::size_t>(idx), 4);
  EXPECT_EQ(out.predictions.size(), 9u);
  const auto after = m.state();
  for (std::size_t i = 0; i < after.size(); ++i)
    EXPECT_TRUE(std::equal(copy[i].begin(), copy[i].end(), after[i].tensor.values().begin())) << after[i].name;
}
