#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "commands.hpp"
#include "jamlab/errors.hpp"

using namespace jamlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("jamlab_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_run(std::size_t epochs) {
  auto cfg = RunConfig::defaults(Scale::Desk);
  cfg.seed = 5;
  cfg.generation.clock = {20e6, 4096};
  cfg.generation.grid.classes = {CompoundClass::StjLfm, CompoundClass::MtjPulse, CompoundClass::LfmPbnj};
  cfg.generation.grid.jnr_min_db = 10.0;
  cfg.generation.grid.jnr_max_db = 10.0;
  cfg.generation.grid.realizations = 20;
  cfg.generation.features.image_side = 16;
  cfg.generation.features.welch.segment_len = 1024;
  cfg.generation.master_seed = cfg.seed;
  cfg.model = nn::ModelConfig::width_scaled(16, 16);
  cfg.train.epochs = epochs;
  cfg.train.batch_size = 8;
  cfg.train.monte_carlo_runs = 1;
  cfg.train.master_seed = cfg.seed;
  return cfg;
}

}  // namespace

TEST(Config, DeskDefaults) {
  const auto c = RunConfig::defaults(Scale::Desk);
  EXPECT_EQ(c.generation.features.image_side, 64u);
  EXPECT_EQ(c.generation.grid.jnr_levels(), (std::vector<double>{0.0, 10.0}));
  EXPECT_EQ(c.generation.grid.realizations, 100u);
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.train.monte_carlo_runs, 1u);
  const auto p = RunConfig::defaults(Scale::Paper);
  EXPECT_EQ(p.generation.features.image_side, 224u);
  EXPECT_EQ(p.train.epochs, 100u);
  EXPECT_EQ(p.train.monte_carlo_runs, 10u);
}

TEST(Config, PrecedenceDefaultsFileSetSeed) {
  TempDir t("prec");
  write_text_file(t.path / "c.json", R"({"scale": "desk", "seed": 3, "train": {"epochs": 7, "batch_size": 16}})");
  ConfigOverrides o;
  auto c = resolve_config(t.path / "c.json", o);
  EXPECT_EQ(c.scale, Scale::Desk);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.generation.master_seed, 3u);
  EXPECT_EQ(c.train.master_seed, 3u);
  EXPECT_EQ(c.generation.features.image_side, 64u);

  o.sets = {"train.epochs=9", "seed=11"};
  o.seed = 12;
  c = resolve_config(t.path / "c.json", o);
  EXPECT_EQ(c.train.epochs, 9u);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(c.seed, 12u);
  EXPECT_EQ(c.train.master_seed, 12u);

  o = {};
  o.scale = Scale::Paper;
  c = resolve_config(t.path / "c.json", o);
  EXPECT_EQ(c.scale, Scale::Paper);
  EXPECT_EQ(c.generation.features.image_side, 224u);
  EXPECT_EQ(c.train.epochs, 7u);
}

TEST(Config, RejectsUnknownKeysAndBadSets) {
  TempDir t("unknown");
  write_text_file(t.path / "a.json", R"({"sede": 1})");
  EXPECT_THROW(resolve_config(t.path / "a.json", {}), ConfigError);
  write_text_file(t.path / "b.json", R"({"train": {"epoch": 1}})");
  EXPECT_THROW(resolve_config(t.path / "b.json", {}), ConfigError);
  write_text_file(t.path / "c.json", R"({"train": {"master_seed": 1}})");
  EXPECT_THROW(resolve_config(t.path / "c.json", {}), ConfigError);
  write_text_file(t.path / "d.json", "[1, 2]");
  EXPECT_THROW(resolve_config(t.path / "d.json", {}), ConfigError);
  ConfigOverrides o;
  o.sets = {"nothing.here=1"};
  EXPECT_THROW(resolve_config(std::nullopt, o), ConfigError);
  EXPECT_THROW(resolve_config(t.path / "missing.json", {}), IoError);
}

TEST(Config, EchoRoundTrips) {
  TempDir t("echo");
  ConfigOverrides o;
  o.scale = Scale::Desk;
  o.seed = 42;
  o.sets = {"train.lr_max=0.002"};
  const auto c = resolve_config(std::nullopt, o);
  echo_config(c, t.path);
  const auto back = resolve_config(t.path / "effective_config.json", {});
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  EXPECT_EQ(back.seed, 42u);
}

TEST(Config, FlopsLayerList) {
  TempDir t("flops");
  write_text_file(t.path / "f.json", R"({"flops": {"input": [3, 32, 32], "layers": [
    {"type": "conv", "c_in": 3, "c_out": 16, "kernel": [3, 3], "stride": 1, "padding": [1, 1]},
    {"type": "conv", "c_in": 16, "c_out": 8, "kernel": [3, 3], "stride": 2, "padding": [1, 1], "dilation": 1},
    {"type": "linear", "n_in": 2048, "n_out": 10}]}})");
  const auto c = resolve_config(t.path / "f.json", {});
  ASSERT_TRUE(c.flops.has_value());
  std::ostringstream out;
  const auto rep = cli::cmd_flops(c, false, t.path / "out", {&out, nullptr});
  EXPECT_EQ(rep.total(), 2ull * 32 * 32 * 9 * 3 * 16 + 2ull * 16 * 16 * 9 * 16 * 8 + (2ull * 2048 - 1) * 10);
  EXPECT_TRUE(fs::exists(t.path / "out" / "flops.csv"));
  EXPECT_NE(out.str().find(std::to_string(rep.total())), std::string::npos);

  write_text_file(t.path / "g.json", R"({"flops": {"layers": [{"type": "pool"}]}})");
  EXPECT_THROW(resolve_config(t.path / "g.json", {}), ConfigError);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli::exit_code_for(IoError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(CorruptFileError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(NumericError("x")), 3);
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), 1);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), 1);
}

TEST(Cli, Pgm) {
  TempDir t("pgm");
  cli::write_pgm(t.path / "a.pgm", 3, 2, {0, 1, 2, 3, 4, 255});
  const auto b = read_text_file(t.path / "a.pgm");
  EXPECT_EQ(b.substr(0, 11), "P5\n3 2\n255\n");
  EXPECT_EQ(b.size(), 17u);
  EXPECT_THROW(cli::write_pgm(t.path / "b.pgm", 3, 3, {0}), std::invalid_argument);
}

TEST(Cli, ZeroEpochTrainEmitsUnfusableCheckpoint) {
  TempDir t("zero");
  const auto cfg = tiny_run(0);
  cli::cmd_synth(cfg, t.path / "ds", {nullptr, nullptr});
  const auto tr = cli::cmd_train(cfg, t.path / "ds", t.path / "tr", {nullptr, nullptr});
  EXPECT_TRUE(tr.runs.front().log.empty());
  EXPECT_TRUE(fs::exists(t.path / "tr" / "model.jlc"));
  EXPECT_THROW(cli::cmd_fuse(t.path / "tr" / "model.jlc", t.path / "fu", std::nullopt, 4, {nullptr, nullptr}),
               std::logic_error);
}

TEST(Cli, TrainFuseEvalPipeline) {
  TempDir t("pipe");
  const auto cfg = tiny_run(1);
  std::ostringstream out;
  const cli::Context ctx{&out, nullptr};
  cli::cmd_synth(cfg, t.path / "ds", ctx);
  const auto tr = cli::cmd_train(cfg, t.path / "ds", t.path / "tr", ctx);
  ASSERT_EQ(tr.runs.size(), 1u);
  EXPECT_TRUE(fs::exists(t.path / "tr" / "model.jlc"));
  EXPECT_TRUE(fs::exists(t.path / "tr" / "run0" / "train_log.csv"));
  EXPECT_TRUE(fs::exists(t.path / "tr" / "summary.json"));

  const auto fr = cli::cmd_fuse(t.path / "tr" / "model.jlc", t.path / "fu", std::nullopt, 16, ctx);
  EXPECT_LT(fr.max_abs_prob_diff, 1e-4);
  const auto e1 = cli::cmd_eval(t.path / "tr" / "model.jlc", t.path / "ds", t.path / "e1", "test", ctx);
  const auto e2 = cli::cmd_eval(fr.fused_checkpoint, t.path / "ds", t.path / "e2", "test", ctx);
  EXPECT_EQ(e1.confusion.total(), e2.confusion.total());
  EXPECT_GT(e1.confusion.total(), 0u);
  EXPECT_EQ(read_text_file(t.path / "e1" / "confusion.csv"), read_text_file(t.path / "e2" / "confusion.csv"));
  EXPECT_NEAR(e1.overall_accuracy, tr.runs[0].test_accuracy, 1e-9);
  for (const char* f : {"metrics.csv", "jnr_accuracy.csv", "confusion.pgm", "jnr_accuracy.pgm", "summary.json"}) {
    EXPECT_TRUE(fs::exists(t.path / "e1" / f)) << f;
  }
  const auto all = cli::cmd_eval(t.path / "tr" / "model.jlc", t.path / "ds", t.path / "e3", "all", ctx);
  EXPECT_EQ(all.confusion.total(), 60u);
  EXPECT_THROW(cli::cmd_eval(t.path / "tr" / "model.jlc", t.path / "ds", t.path / "e4", "val", ctx),
               std::exception);
}

TEST(Cli, TrainRejectsMismatchedDataset) {
  TempDir t("mismatch");
  auto cfg = tiny_run(0);
  cli::cmd_synth(cfg, t.path / "ds", {nullptr, nullptr});
  cfg.model = nn::ModelConfig::width_scaled(16, 32);
  EXPECT_THROW(cli::cmd_train(cfg, t.path / "ds", t.path / "tr", {nullptr, nullptr}), ConfigError);
}
