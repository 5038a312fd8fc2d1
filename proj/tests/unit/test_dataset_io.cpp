#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "jamlab/dataset_io.hpp"
#include "jamlab/errors.hpp"

using namespace jamlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("jamlab_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

GenerationConfig small_generation() {
  GenerationConfig g;
  g.clock = {20e6, 4096};
  g.grid.classes = {CompoundClass::StjLfm, CompoundClass::MtjPulse, CompoundClass::PulsePbnj};
  g.grid.jnr_min_db = 0.0;
  g.grid.jnr_max_db = 10.0;
  g.grid.jnr_step_db = 10.0;
  g.grid.realizations = 2;
  g.features.image_side = 16;
  g.features.welch.segment_len = 1024;
  g.master_seed = 77;
  return g;
}

std::string bytes_of(const fs::path& p) { return read_text_file(p); }

}  // namespace

TEST(TensorFile, RoundTripAndHeaderSize) {
  TempDir t("tensor");
  const std::vector<float> f{1.5F, -2.0F, 3.25F, 0.0F, 1e-30F, 7.0F};
  write_tensor(t.path / "a.jlt", std::span<const float>(f), {2, 3});
  EXPECT_EQ(fs::file_size(t.path / "a.jlt"), 28u + 6u * 4u);
  TensorHeader h;
  EXPECT_EQ(read_tensor<float>(t.path / "a.jlt", &h), f);
  EXPECT_EQ(h.dims, (std::vector<std::uint64_t>{2, 3}));
  EXPECT_EQ(h.dtype, DType::Float32);
  const std::vector<double> d{0.1, 0.2, 0.3};
  write_tensor(t.path / "b.jlt", std::span<const double>(d), {3});
  EXPECT_EQ(read_tensor<double>(t.path / "b.jlt"), d);
  EXPECT_EQ(read_tensor_header(t.path / "b.jlt").dtype, DType::Float64);
  EXPECT_THROW(write_tensor(t.path / "c.jlt", std::span<const float>(f), {4}), std::invalid_argument);
}

TEST(TensorFile, LittleEndianLayout) {
  TempDir t("layout");
  const std::vector<float> f{1.0F};
  write_tensor(t.path / "a.jlt", std::span<const float>(f), {1, 1});
  const auto b = bytes_of(t.path / "a.jlt");
  EXPECT_EQ(b.substr(0, 4), "JLT1");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1u);  // dtype
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 2u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 1u);
  // 1.0f = 0x3f800000
  ASSERT_EQ(b.size(), 32u);
  EXPECT_EQ(static_cast<unsigned char>(b[31]), 0x3fu);
  EXPECT_EQ(static_cast<unsigned char>(b[30]), 0x80u);
}

TEST(TensorFile, CorruptionDetected) {
  TempDir t("corrupt");
  const std::vector<float> f(8, 1.0F);
  write_tensor(t.path / "a.jlt", std::span<const float>(f), {8});
  auto b = bytes_of(t.path / "a.jlt");
  auto bad = b;
  bad[0] = 'X';
  write_text_file(t.path / "magic.jlt", bad);
  EXPECT_THROW(read_tensor<float>(t.path / "magic.jlt"), CorruptFileError);
  bad = b;
  bad[4] = 9;
  write_text_file(t.path / "dtype.jlt", bad);
  EXPECT_THROW(read_tensor<float>(t.path / "dtype.jlt"), CorruptFileError);
  write_text_file(t.path / "short.jlt", b.substr(0, b.size() - 3));
  EXPECT_THROW(read_tensor<float>(t.path / "short.jlt"), CorruptFileError);
  EXPECT_THROW(read_tensor<float>(t.path / "missing.jlt"), IoError);
}

TEST(RawIq, RoundTripIsBitExactAtStoredPrecision) {
  TempDir t("iq");
  ComplexSignal s;
  s.clock = {20e6, 1000};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int i = 0; i < 1000; ++i) s.samples.emplace_back(g(rng), g(rng));
  write_signal(t.path / "x.cf32", s);
  EXPECT_EQ(fs::file_size(t.path / "x.cf32"), 8000u);
  const auto back = read_signal(t.path / "x.cf32", s.clock);
  EXPECT_EQ(back.samples, quantize_cf32(s).samples);
  EXPECT_NEAR(measure_power(back), measure_power(s), 1e-6 * measure_power(s));
  write_signal(t.path / "y.cf32", back);
  EXPECT_EQ(bytes_of(t.path / "x.cf32"), bytes_of(t.path / "y.cf32"));
  EXPECT_THROW(read_signal(t.path / "x.cf32", {20e6, 999}), CorruptFileError);
}

TEST(Manifest, RoundTripAndTruncation) {
  TempDir t("manifest");
  Manifest m;
  m.config = {{"k", 1}};
  SampleRecord r;
  r.sample_id = "STJ_LFM_j000_r000001";
  r.jnr_db = -3.5;
  r.pr_db = 1.25;
  r.sample_seed = 0xffffffffffffffffULL;
  r.stft_window_len = 128;
  r.signal_path = "STJ_LFM/STJ_LFM_j000_r000001.cf32";
  m.records = {r, r};
  m.records[1].sample_id = "x";
  write_manifest(t.path / "m.jsonl", m);
  const auto back = read_manifest(t.path / "m.jsonl");
  EXPECT_EQ(back.records, m.records);
  EXPECT_EQ(back.config, m.config);
  auto text = bytes_of(t.path / "m.jsonl");
  write_text_file(t.path / "cut.jsonl", text.substr(0, text.rfind('\n', text.size() - 2) + 1));
  EXPECT_THROW(read_manifest(t.path / "cut.jsonl"), CorruptFileError);
}

TEST(Grid, LevelsAndCounts) {
  DatasetGrid g;
  EXPECT_EQ(g.jnr_levels().size(), 41u);
  EXPECT_EQ(g.cell_count(), 9u * 41u * 1000u);
  g.jnr_min_db = 0.0;
  g.jnr_max_db = 10.0;
  g.jnr_step_db = 10.0;
  g.realizations = 100;
  EXPECT_EQ(g.jnr_levels(), (std::vector<double>{0.0, 10.0}));
  EXPECT_EQ(g.cell_count(), 1800u);
  g.jnr_step_db = 0.0;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Generation, LayoutRecordsAndRegenerability) {
  TempDir t("gen");
  const auto cfg = small_generation();
  const auto m = generate_dataset(cfg, t.path);
  ASSERT_EQ(m.records.size(), 3u * 2u * 2u);
  for (const auto& r : m.records) {
    EXPECT_TRUE(fs::exists(t.path / r.signal_path));
    EXPECT_EQ(read_tensor_header(t.path / r.tfi_path).dims, (std::vector<std::uint64_t>{16, 16}));
    EXPECT_EQ(fs::path(r.signal_path).parent_path().string(), class_name(r.class_label));
    EXPECT_EQ(r.sample_seed, sample_seed(77, class_index(r.class_label), r.jnr_index, r.realization));
    EXPECT_EQ(r.stft_window_len, cfg.features.window_for(r.class_label));
  }
  EXPECT_EQ(read_manifest(t.path / kManifestName).records, m.records);

  // delete payloads, regenerate, compare bytes
  const auto& victim = m.records[5];
  const auto sig = bytes_of(t.path / victim.signal_path);
  const auto tfi = bytes_of(t.path / victim.tfi_path);
  fs::remove(t.path / victim.signal_path);
  fs::remove(t.path / victim.tfi_path);
  fs::remove(t.path / kManifestName);
  const auto again = generate_dataset(cfg, t.path);
  EXPECT_EQ(again.records, m.records);
  EXPECT_EQ(bytes_of(t.path / victim.signal_path), sig);
  EXPECT_EQ(bytes_of(t.path / victim.tfi_path), tfi);

  auto other = cfg;
  other.master_seed = 78;
  EXPECT_THROW(generate_dataset(other, t.path), ConfigError);
}

TEST(Generation, ParallelMatchesSerial) {
  TempDir a("par1"), b("par3");
  const auto cfg = small_generation();
  const auto ma = generate_dataset(cfg, a.path, 1);
  const auto mb = generate_dataset(cfg, b.path, 3);
  EXPECT_EQ(bytes_of(a.path / kManifestName), bytes_of(b.path / kManifestName));
  for (const auto& r : ma.records) {
    EXPECT_EQ(bytes_of(a.path / r.signal_path), bytes_of(b.path / r.signal_path));
    EXPECT_EQ(bytes_of(a.path / r.psd_path), bytes_of(b.path / r.psd_path));
  }
}

TEST(Generation, DiskAndMemoryFeaturizationAgree) {
  TempDir t("feat");
  auto cfg = small_generation();
  cfg.write_features = false;
  const auto m = generate_dataset(cfg, t.path);
  EXPECT_TRUE(m.records.front().tfi_path.empty());
  EXPECT_THROW(load_features(t.path, m), IoError);
  const auto fm = featurize_dataset(t.path, cfg.features, 2);
  const auto data = load_features(t.path, fm);
  ASSERT_EQ(data.size(), m.records.size());
  for (std::size_t i = 0; i < fm.records.size(); ++i) {
    const auto& r = fm.records[i];
    const auto cell = synthesize_cell(cfg, i / 4, (i / 2) % 2, i % 2);
    ASSERT_EQ(cell.record.sample_id, r.sample_id);
    const auto mem = featurize(quantize_cf32(cell.signal), cfg.features, r.stft_window_len);
    for (std::size_t p = 0; p < 256; ++p) {
      EXPECT_NEAR(data.tfi[i * 256 + p], mem.tfi.pixels[p], 1e-4);
      EXPECT_NEAR(data.psd[i * 256 + p], mem.psd.pixels[p], 1e-4);
    }
    EXPECT_EQ(data.labels[i], class_index(r.class_label));
  }
}

TEST(Checkpoint, RoundTripGivesIdenticalOutputs) {
  TempDir t("ckpt");
  nn::ModelConfig c = nn::ModelConfig::width_scaled(16, 16);
  nn::Skanet<float> m(c, 5);
  RandomStream rng(1);
  std::vector<float> v(4 * 256);
  for (auto& x : v) x = static_cast<float>(uniform(rng, 0.0, 1.0));
  nn::Tensor<float> x1({4, 1, 16, 16}, v), x2({4, 1, 16, 16}, std::vector<float>(v.rbegin(), v.rend()));
  m.forward(x1, x2, nn::Mode::Train, &rng);  // populate BN statistics
  const auto before = m.forward(x1, x2, nn::Mode::Eval);
  save_checkpoint(m, t.path / "m.jlc", {{"note", "hello"}});
  nlohmann::json extra;
  auto back = load_checkpoint<float>(t.path / "m.jlc", &extra);
  EXPECT_EQ(extra.at("note"), "hello");
  EXPECT_EQ(back.config(), c);
  const auto after = back.forward(x1, x2, nn::Mode::Eval);
  for (std::size_t i = 0; i < before.numel(); ++i) ASSERT_EQ(before[i], after[i]);

  m.fuse();
  const auto fused_out = m.forward(x1, x2, nn::Mode::Eval);
  save_checkpoint(m, t.path / "f.jlc");
  auto fb = load_checkpoint<float>(t.path / "f.jlc");
  EXPECT_TRUE(fb.is_fused());
  const auto fused_back = fb.forward(x1, x2, nn::Mode::Eval);
  for (std::size_t i = 0; i < fused_out.numel(); ++i) ASSERT_EQ(fused_out[i], fused_back[i]);
  EXPECT_EQ(read_checkpoint_header(t.path / "f.jlc").at("fused"), true);

  auto b = bytes_of(t.path / "m.jlc");
  b[1] = 'Z';
  write_text_file(t.path / "bad.jlc", b);
  EXPECT_THROW(load_checkpoint<float>(t.path / "bad.jlc"), CorruptFileError);
  // a float checkpoint loads into a double model by widening
  auto wide = load_checkpoint<double>(t.path / "m.jlc");
  EXPECT_EQ(wide.config(), c);
}
