#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jamlab/dataset_io.hpp"
#include "jamlab/evaluation.hpp"
#include "jamlab/skanet.hpp"
#include "jamlab/training.hpp"

namespace jamlab {

enum class Scale { Paper, Desk };

std::string_view scale_name(Scale s);
Scale parse_scale(std::string_view name);

struct FlopsSpec {
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::vector<LayerSpec> layers;
};

/// Everything a run needs. Paper scale is the full-size setup; desk scale
/// shrinks it to a single-CPU budget (64 px images, channels / 4, JNR {0, 10} dB,
/// 100 realizations, 20 epochs, one run).
struct RunConfig {
  Scale scale = Scale::Paper;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  GenerationConfig generation;
  nn::ModelConfig model;
  TrainConfig train;
  std::optional<FlopsSpec> flops;  // explicit layer list for the FLOPs report

  static RunConfig defaults(Scale scale);
  /// Cross-field checks (image side vs model input, seed propagation).
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

struct ConfigOverrides {
  std::optional<Scale> scale;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  /// "dotted.key=value" pairs; values parse as JSON, falling back to a string.
  std::vector<std::string> sets;
};

/// defaults(scale) <- config file <- overrides. The scale comes from the overrides,
/// else the file's "scale" key, else paper. Throws ConfigError on unknown keys.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& overrides);

/// Writes the effective config as effective_config.json into `dir`.
void echo_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace jamlab
