#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "jamlab/rng.hpp"
#include "jamlab/skanet.hpp"
#include "jamlab/tensor.hpp"

namespace jamlab {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::uint64_t master_seed = 0;
  std::size_t monte_carlo_runs = 10;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Feature images held in memory, one TFI and one PSD image per sample.
struct FeatureDataset {
  std::size_t side = 0;
  std::vector<float> tfi;  // size() * side * side
  std::vector<float> psd;
  std::vector<std::size_t> labels;
  std::vector<double> jnr_db;

  std::size_t size() const { return labels.size(); }
  void append(std::span<const float> tfi_pixels, std::span<const float> psd_pixels, std::size_t label,
              double jnr);
};

template <typename T>
struct Batch {
  nn::Tensor<T> tfi;  // [B, 1, S, S]
  nn::Tensor<T> psd;
  std::vector<std::size_t> labels;
};

template <typename T>
Batch<T> make_batch(const FeatureDataset& data, std::span<const std::size_t> indices);

struct StratumKey {
  std::size_t class_label = 0;
  double jnr_db = 0.0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Stratified by (class, JNR): each stratum is shuffled with a seeded stream and
/// sliced by the ratios. Strata with fewer than 10 members are pooled and the pool
/// is split the same way; a warning is appended for each such stratum.
SplitIndices split_dataset(std::span<const StratumKey> keys, const std::array<double, 3>& ratios, std::uint64_t seed,
                           std::vector<std::string>* warnings = nullptr);

/// Deterministic Fisher-Yates shuffle driven by `rng`.
void shuffle_indices(std::vector<std::size_t>& v, RandomStream& rng);

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr_max, double lr_min);

namespace nn {

/// -(1/B) sum_i log(probs[i, y_i] + eps).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels, T eps = T(1e-12));

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;
  std::size_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update of every parameter that requires grad, using
/// its accumulated gradient (zero if none). Gradients are cleared afterwards.
template <typename T>
void adam_step(std::span<const NamedTensor<T>> params, AdamState<T>& state);

}  // namespace nn

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
  std::size_t samples = 0;
};

struct EvalOutput {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
  std::vector<std::size_t> predictions;  // aligned with the evaluated indices
};

/// Shuffled mini-batches, forward/CE/backward/Adam per batch. A final remainder of a
/// single sample is folded into the previous batch so Train-mode BN sees >= 2 samples.
/// `on_batch` receives each batch loss. Throws NumericError on a non-finite loss.
template <typename T>
EpochStats train_epoch(nn::Skanet<T>& model, const FeatureDataset& data, std::span<const std::size_t> indices,
                       nn::AdamState<T>& adam, std::size_t batch_size, RandomStream& rng,
                       const std::function<void(double)>& on_batch = {});

/// Eval mode without graph recording; does not mutate the model.
template <typename T>
EvalOutput evaluate(nn::Skanet<T>& model, const FeatureDataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size = 64);

struct EpochLogLine {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

std::string epoch_log_header();
std::string format_epoch_log(const EpochLogLine& line);

/// Full schedule: cosine learning rate per epoch, one log line per epoch to `log`
/// (header first) if given. The shuffling stream is derived from `run_seed`.
template <typename T>
std::vector<EpochLogLine> fit(nn::Skanet<T>& model, const FeatureDataset& data, const SplitIndices& split,
                              const TrainConfig& cfg, std::uint64_t run_seed, std::ostream* log = nullptr);

}  // namespace jamlab
