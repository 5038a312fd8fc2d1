#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "jamlab/ops.hpp"
#include "jamlab/skanet.hpp"

namespace jamlab {

/// counts[true][pred], row-major K x K.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 9, std::vector<std::string> class_names = {});
  /// The nine compound classes, named.
  static ConfusionMatrix for_compound_classes();

  std::size_t num_classes() const { return k_; }
  const std::vector<std::string>& class_names() const { return names_; }
  void update(std::size_t true_label, std::size_t predicted_label);
  std::uint64_t at(std::size_t true_label, std::size_t predicted_label) const;
  void set(std::size_t true_label, std::size_t predicted_label, std::uint64_t count);
  std::uint64_t total() const;
  std::uint64_t trace() const;
  /// Element-wise sum; both matrices must have the same K.
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix& other) const { return k_ == other.k_ && counts_ == other.counts_; }

 private:
  std::size_t k_;
  std::vector<std::string> names_;
  std::vector<std::uint64_t> counts_;
};

/// 100 * trace / total. Throws std::domain_error on an empty matrix.
double overall_accuracy(const ConfusionMatrix& cm);

struct ClassMetrics {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t support = 0;  // tp + fn
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // tp + fp == 0, reported as 0
  bool recall_undefined = false;     // tp + fn == 0, reported as 0
};

std::vector<ClassMetrics> precision_recall_f1(const ConfusionMatrix& cm);

/// Header row of predicted-class names, one row per true class.
std::string confusion_to_csv(const ConfusionMatrix& cm);
std::string metrics_to_csv(const ConfusionMatrix& cm, const std::vector<ClassMetrics>& metrics);

struct JnrAccuracy {
  double jnr_db = 0.0;
  std::size_t samples = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // percent
};

/// Accuracy per distinct JNR level, ascending.
std::vector<JnrAccuracy> accuracy_by_jnr(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                                         std::span<const double> jnr_db);
std::string jnr_table_to_csv(const std::vector<JnrAccuracy>& rows);

/// 2 * H_out * W_out * kh * kw * C_in * C_out.
std::uint64_t flops_conv_layer(std::size_t h_out, std::size_t w_out, std::size_t kh, std::size_t kw, std::size_t c_in,
                               std::size_t c_out);
/// Square-kernel form.
std::uint64_t flops_conv_layer(std::size_t h_out, std::size_t w_out, std::size_t ksize, std::size_t c_in,
                               std::size_t c_out);
/// (2 N_in - 1) * N_out.
std::uint64_t flops_linear_layer(std::size_t n_in, std::size_t n_out);

enum class LayerKind { Conv, Linear };

struct FlopsRow {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::string shape;  // human-readable layer geometry
  std::uint64_t flops = 0;
};

struct FlopsReport {
  std::vector<FlopsRow> rows;
  std::uint64_t conv_total = 0;
  std::uint64_t linear_total = 0;

  std::uint64_t total() const { return conv_total + linear_total; }
  void add(FlopsRow row);
  std::string to_table() const;
  std::string to_csv() const;
};

/// Every conv and linear layer of the model at its actual feature-map size, for
/// one input sample. ACBs are counted as one 3x3 conv each unless `train_form`,
/// which counts their 3x3, 1x3 and 3x1 kernels separately.
FlopsReport flops_model(const nn::ModelConfig& config, bool train_form = false);

struct ConvLayerSpec {
  std::string name;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::size_t kh = 3;
  std::size_t kw = 3;
  nn::Conv2dOptions opt;
};

struct LinearLayerSpec {
  std::string name;
  std::size_t n_in = 1;
  std::size_t n_out = 1;
};

using LayerSpec = std::variant<ConvLayerSpec, LinearLayerSpec>;

/// Sequential stack applied to a [C, H, W] input; a linear layer after convs sees
/// the flattened map. Throws std::invalid_argument on inconsistent dimensions.
FlopsReport flops_sequential(const std::vector<LayerSpec>& layers, std::size_t c, std::size_t h, std::size_t w);

}  // namespace jamlab
