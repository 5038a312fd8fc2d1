#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jamlab/signal.hpp"
#include "jamlab/skanet.hpp"
#include "jamlab/spectral.hpp"
#include "jamlab/training.hpp"

namespace jamlab {

namespace fs = std::filesystem;

// ---- binary tensors ("JLT1") ----

enum class DType : std::uint32_t { Float32 = 1, Float64 = 2 };

struct TensorHeader {
  DType dtype = DType::Float32;
  std::vector<std::uint64_t> dims;

  std::uint64_t numel() const;
};

/// Magic "JLT1", u32 dtype, u32 rank, u64 dims, then the little-endian payload.
void write_tensor(const fs::path& path, std::span<const float> values, const std::vector<std::uint64_t>& dims);
void write_tensor(const fs::path& path, std::span<const double> values, const std::vector<std::uint64_t>& dims);
TensorHeader read_tensor_header(const fs::path& path);
/// Reads and converts to T; throws CorruptFileError on a bad magic, dtype, rank or length.
template <typename T>
std::vector<T> read_tensor(const fs::path& path, TensorHeader* header = nullptr);

// ---- raw IQ ----

/// Interleaved I, Q as 32-bit little-endian floats, no header.
void write_signal(const fs::path& path, const ComplexSignal& signal);
/// The sample count is taken from the file size; `clock.num_samples` is checked if non-zero.
ComplexSignal read_signal(const fs::path& path, SampleClock clock = {});
/// The signal as it survives a 32-bit round trip.
ComplexSignal quantize_cf32(const ComplexSignal& signal);

// ---- dataset generation ----

struct DatasetGrid {
  std::vector<CompoundClass> classes;  // empty = all nine
  double jnr_min_db = -25.0;
  double jnr_max_db = 15.0;
  double jnr_step_db = 1.0;
  std::size_t realizations = 1000;
  double pr_min_db = -3.0;
  double pr_max_db = 3.0;

  std::vector<CompoundClass> effective_classes() const;
  std::vector<double> jnr_levels() const;
  std::size_t cell_count() const;
  void validate() const;
  bool operator==(const DatasetGrid&) const = default;
};

struct GenerationConfig {
  SampleClock clock;
  DatasetGrid grid;
  FeatureConfig features;
  DrawRanges ranges;
  std::uint64_t master_seed = 0;
  bool write_features = true;
};

struct SampleRecord {
  std::string sample_id;
  CompoundClass class_label = CompoundClass::StjLfm;
  std::size_t jnr_index = 0;
  std::size_t realization = 0;
  double jnr_db = 0.0;
  double pr_db = 0.0;
  std::uint64_t sample_seed = 0;
  std::size_t stft_window_len = 0;
  std::string signal_path;  // relative to the dataset root
  std::string tfi_path;     // empty until featurized
  std::string psd_path;

  bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
  static constexpr int kSchemaVersion = 1;
  nlohmann::json config;  // generation config snapshot
  std::vector<SampleRecord> records;
};

/// JSONL: a header line {"format", "version", "config"} then one record per line.
void write_manifest(const fs::path& path, const Manifest& manifest);
Manifest read_manifest(const fs::path& path);

inline constexpr const char* kManifestName = "manifest.jsonl";

/// Deterministic sample for one grid cell (before 32-bit storage).
struct SynthesizedSample {
  SampleRecord record;
  CompoundSpec spec;
  ComplexSignal signal;
};

SynthesizedSample synthesize_cell(const GenerationConfig& cfg, std::size_t class_pos, std::size_t jnr_index,
                                  std::size_t realization);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Walks the (class x JNR x realization) grid with up to `jobs` workers and writes
/// one directory per class plus the manifest. Re-running on a partially written
/// directory with the same config resumes, skipping samples whose files are
/// complete; a different config in an existing manifest is rejected.
Manifest generate_dataset(const GenerationConfig& cfg, const fs::path& out_dir, std::size_t jobs = 1,
                          const ProgressFn& progress = {});

/// Computes the feature images of every record of a signal-only (or partial) dataset.
Manifest featurize_dataset(const fs::path& dataset_dir, const FeatureConfig& features, std::size_t jobs = 1,
                           const ProgressFn& progress = {});

/// Loads the feature images referenced by a manifest. Throws IoError if a record is not featurized.
FeatureDataset load_features(const fs::path& dataset_dir, const Manifest& manifest);

// ---- checkpoints ("JLC1") ----

/// Magic "JLC1", u32 version, u64 header length, JSON header (config, dtype, fused
/// flag, tensor index), then every tensor payload little-endian in index order.
template <typename T>
void save_checkpoint(const nn::Skanet<T>& model, const fs::path& path, const nlohmann::json& extra = {});

template <typename T>
nn::Skanet<T> load_checkpoint(const fs::path& path, nlohmann::json* extra = nullptr);

/// The header JSON only.
nlohmann::json read_checkpoint_header(const fs::path& path);

/// Writes `bytes` to `path` through a temporary file and rename.
void write_file_atomic(const fs::path& path, std::span<const char> bytes);
void write_text_file(const fs::path& path, const std::string& text);
std::string read_text_file(const fs::path& path);

}  // namespace jamlab
