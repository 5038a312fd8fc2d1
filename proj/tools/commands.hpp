#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jamlab/dataset_io.hpp"
#include "jamlab/evaluation.hpp"
#include "jamlab/run_config.hpp"
#include "jamlab/training.hpp"

namespace jamlab::cli {

namespace fs = std::filesystem;

struct Context {
  std::ostream* out = nullptr;  // human-readable results
  std::ostream* log = nullptr;  // progress, may be null
};

struct SynthResult {
  Manifest manifest;
};
SynthResult cmd_synth(const RunConfig& cfg, const fs::path& out, const Context& ctx);

/// Writes feature images for every record of the dataset at `dataset`, in place.
Manifest cmd_featurize(const RunConfig& cfg, const fs::path& dataset, const Context& ctx);

struct TrainRun {
  std::size_t run = 0;
  std::uint64_t run_seed = 0;
  std::vector<EpochLogLine> log;
  double test_accuracy = 0.0;
  fs::path checkpoint;
};

struct TrainResult {
  std::vector<TrainRun> runs;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;
};

/// Trains cfg.train.monte_carlo_runs models (init and batch order vary per run,
/// the split does not). Run r writes run<r>/model.jlc and run<r>/train_log.csv;
/// run 0 is also copied to model.jlc.
TrainResult cmd_train(const RunConfig& cfg, const fs::path& dataset, const fs::path& out, const Context& ctx);

struct EvalResult {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> metrics;
  std::vector<JnrAccuracy> by_jnr;
  double overall_accuracy = 0.0;
};

/// `subset` is "test" (the split recorded in the checkpoint) or "all".
EvalResult cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out,
                    const std::string& subset, const Context& ctx);

struct FuseResult {
  double max_abs_prob_diff = 0.0;
  std::size_t probes = 0;
  fs::path fused_checkpoint;
};

/// Writes fused.jlc and fuse_report.json. The equivalence probe runs both forms in
/// Eval mode on `probe_count` random images (or dataset samples if `dataset` is set).
FuseResult cmd_fuse(const fs::path& checkpoint, const fs::path& out, const std::optional<fs::path>& dataset,
                    std::size_t probe_count, const Context& ctx);

FlopsReport cmd_flops(const RunConfig& cfg, bool train_form, const std::optional<fs::path>& out, const Context& ctx);

struct AblationRow {
  nn::Ablation variant = nn::Ablation::Full;
  std::vector<double> test_accuracy;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t params = 0;
};

/// Trains every variant for cfg.train.monte_carlo_runs seeds on the same split.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const fs::path& dataset, const fs::path& out,
                                    const Context& ctx);

/// Grayscale binary PGM (P5).
void write_pgm(const fs::path& path, std::size_t width, std::size_t height, const std::vector<unsigned char>& pixels);
/// Row-normalized confusion heat map, `cell` pixels per entry.
void plot_confusion(const ConfusionMatrix& cm, const fs::path& path, std::size_t cell = 24);
/// Accuracy (0-100 %) against JNR as a polyline with markers.
void plot_jnr_curve(const std::vector<JnrAccuracy>& rows, const fs::path& path);

/// Maps an exception thrown by a command to the documented exit code.
int exit_code_for(const std::exception& e);

}  // namespace jamlab::cli
