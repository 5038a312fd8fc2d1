#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "jamlab/ops.hpp"
#include "jamlab/rng.hpp"
#include "jamlab/tensor.hpp"

namespace jamlab::nn {

enum class Ablation { Full, NoSkAcb, NoPsdStream, NoSeFusion };

std::string_view ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);
const std::vector<Ablation>& all_ablations();

struct StageSpec {
  std::size_t channels = 64;
  std::size_t blocks = 1;
  bool downsample = true;

  bool operator==(const StageSpec&) const = default;
};

struct ModelConfig {
  std::size_t input_side = 224;
  std::size_t stft_stem_channels = 32;
  std::vector<StageSpec> stft_stages{{64}, {128}, {256}, {512}};
  std::size_t psd_stem_channels = 64;
  std::vector<StageSpec> psd_stages{{64}, {128}};
  std::vector<std::size_t> sk_dilations{1, 2, 4};
  std::size_t sk_reduction = 16;
  std::size_t sk_min_dim = 16;
  std::size_t se_reduction = 16;
  std::size_t head_hidden = 256;
  std::size_t num_classes = 9;
  double dropout_p = 0.6;
  Ablation ablation = Ablation::Full;

  static ModelConfig paper();
  /// Input side 64, every channel count divided by 4.
  static ModelConfig desk();
  /// Paper-scale topology with channel counts divided by `divisor` (floored at 1).
  static ModelConfig width_scaled(std::size_t divisor, std::size_t input_side);

  void validate() const;
  std::size_t stft_features() const;
  std::size_t psd_features() const;
  bool has_psd_stream() const { return ablation != Ablation::NoPsdStream; }
  bool has_se_fusion() const { return ablation == Ablation::Full || ablation == Ablation::NoSkAcb; }
  bool uses_sk() const { return ablation != Ablation::NoSkAcb; }
  std::size_t head_features() const;
  std::size_t se_hidden() const { return head_features() / se_reduction; }
  std::size_t sk_dim(std::size_t channels) const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Rejects unknown keys with ConfigError; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
Tensor<T> kaiming_normal(Shape shape, RandomStream& rng);
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, RandomStream& rng);

/// conv (no bias) -> BN; Swish applied by the caller.
template <typename T>
struct ConvBn {
  Tensor<T> kernel;
  BatchNorm<T> bn;
  Conv2dOptions opt;

  static ConvBn create(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride, RandomStream& rng);
};

template <typename T>
Tensor<T> conv_bn_swish(const Tensor<T>& x, ConvBn<T>& layer, Mode mode);

/// Three parallel kernels (3x3, 1x3, 3x1), each with its own BN.
template <typename T>
struct AcbParams {
  Tensor<T> k3x3;
  Tensor<T> k1x3;
  Tensor<T> k3x1;
  BatchNorm<T> bn3x3;
  BatchNorm<T> bn1x3;
  BatchNorm<T> bn3x1;
  std::size_t stride = 1;
  std::size_t dilation = 1;

  static AcbParams create(std::size_t c_in, std::size_t c_out, std::size_t stride, std::size_t dilation,
                          RandomStream& rng);
  std::size_t in_channels() const { return k3x3.dim(1); }
  std::size_t out_channels() const { return k3x3.dim(0); }
  void validate() const;
  bool stats_populated() const;
};

template <typename T>
struct FusedAcb {
  Tensor<T> kernel;  // [C_out, C_in, 3, 3]
  Tensor<T> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t dilation = 1;
};

/// Padding that keeps 3x3, 1x3 and 3x1 outputs aligned at a given dilation.
Conv2dOptions acb_conv_options(std::size_t kh, std::size_t kw, std::size_t stride, std::size_t dilation);

/// BN1(conv 3x3) + BN2(conv 1x3) + BN3(conv 3x1).
template <typename T>
Tensor<T> acb_preactivation(const Tensor<T>& x, AcbParams<T>& p, Mode mode);
template <typename T>
Tensor<T> acb_forward(const Tensor<T>& x, AcbParams<T>& p, Mode mode);

/// Folds each branch's running-stat BN into its kernel, centres the 1x3/3x1
/// kernels in a 3x3 grid and sums. Throws std::logic_error if any BN has no
/// running statistics yet.
template <typename T>
FusedAcb<T> acb_fuse(const AcbParams<T>& p);

template <typename T>
Tensor<T> fused_preactivation(const Tensor<T>& x, const FusedAcb<T>& f);
template <typename T>
Tensor<T> fused_forward(const Tensor<T>& x, const FusedAcb<T>& f);

/// An ACB in either training form or fused inference form.
template <typename T>
struct AcbLayer {
  AcbParams<T> params;
  std::optional<FusedAcb<T>> fused;

  bool is_fused() const { return fused.has_value(); }
  std::size_t in_channels() const { return is_fused() ? fused->kernel.dim(1) : params.in_channels(); }
  std::size_t out_channels() const { return is_fused() ? fused->kernel.dim(0) : params.out_channels(); }
  std::size_t stride() const { return is_fused() ? fused->stride : params.stride; }
  std::size_t dilation() const { return is_fused() ? fused->dilation : params.dilation; }
};

/// Train mode requires the training form.
template <typename T>
Tensor<T> acb_layer_forward(const Tensor<T>& x, AcbLayer<T>& layer, Mode mode);

template <typename T>
struct SkAcbBlock {
  std::vector<AcbLayer<T>> branches;
  Tensor<T> reduce_weight;  // [d, C]
  Tensor<T> reduce_bias;    // [d]
  std::vector<Tensor<T>> attention;  // one [C, d] matrix per branch (A, B, C)

  static SkAcbBlock create(std::size_t c_in, std::size_t c_out, const std::vector<std::size_t>& dilations,
                           std::size_t d, RandomStream& rng);
  std::size_t channels() const { return branches.front().out_channels(); }
  std::size_t reduced_dim() const { return reduce_weight.dim(0); }
};

/// Intermediate values of one SK pass, for inspection.
template <typename T>
struct SkTrace {
  std::vector<Tensor<T>> branch_outputs;  // each [B, C, H, W]
  Tensor<T> fused;                        // U, sum of branches
  Tensor<T> squeezed;                     // s, [B, C]
  Tensor<T> reduced;                      // z, [B, d]
  Tensor<T> weights;                      // [B, M, C], softmax over M
};

template <typename T>
Tensor<T> sk_acb_forward(const Tensor<T>& x, SkAcbBlock<T>& blk, Mode mode, SkTrace<T>* trace = nullptr);

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [N_out, N_in]
  Tensor<T> bias;    // [N_out] or undefined

  static LinearParams create(std::size_t n_in, std::size_t n_out, bool with_bias, RandomStream& rng);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  return linear(x, p.weight, p.bias);
}

/// One stage: blocks (SK-ACB or plain ACB) then an optional stride-2 conv-BN-Swish.
template <typename T>
struct Stage {
  std::vector<SkAcbBlock<T>> sk_blocks;
  std::vector<AcbLayer<T>> acb_blocks;
  std::optional<ConvBn<T>> downsample;
};

template <typename T>
struct Stream {
  ConvBn<T> stem;
  std::vector<Stage<T>> stages;
  std::size_t out_channels = 0;
};

template <typename T>
Tensor<T> stream_forward(const Tensor<T>& x, Stream<T>& s, Mode mode);

template <typename T>
struct SeFusionParams {
  LinearParams<T> fc1;
  LinearParams<T> fc2;
};

/// F_cat = [f_stft, f_psd]; w = sigmoid(W2 relu(W1 F_cat)); returns w * F_cat.
template <typename T>
Tensor<T> se_fuse(const Tensor<T>& f_stft, const Tensor<T>& f_psd, const SeFusionParams<T>& p,
                  Tensor<T>* gate = nullptr);

template <typename T>
struct HeadParams {
  LinearParams<T> fc1;
  BatchNorm<T> bn;
  LinearParams<T> fc2;
  double dropout_p = 0.6;
};

/// Returns class probabilities. `rng` is needed only for Train-mode dropout with p > 0.
template <typename T>
Tensor<T> classify(const Tensor<T>& features, HeadParams<T>& head, Mode mode, RandomStream* rng,
                   Tensor<T>* logits = nullptr);

template <typename T>
class Skanet {
 public:
  Skanet(const ModelConfig& config, RandomStream& rng);
  /// Deterministic construction from a seed.
  Skanet(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Tensor<T> stft_features(const Tensor<T>& x_tfi, Mode mode);
  Tensor<T> psd_features(const Tensor<T>& x_psd, Mode mode);
  /// [B,1,S,S] x2 -> [B, K] probabilities. `x_psd` is ignored for NoPsdStream.
  Tensor<T> forward(const Tensor<T>& x_tfi, const Tensor<T>& x_psd, Mode mode, RandomStream* rng = nullptr);

  /// Trainable parameters, dotted names, construction order.
  std::vector<NamedTensor<T>> parameters() const;
  /// BN running statistics and counters.
  std::vector<NamedTensor<T>> buffers() const;
  /// parameters() then buffers().
  std::vector<NamedTensor<T>> state() const;
  std::size_t count_params() const;

  /// Replaces every ACB by its fused form. Requires populated BN statistics.
  void fuse();
  bool is_fused() const { return fused_; }
  /// Switches to the fused layout with zero tensors, ready to receive a fused checkpoint.
  void adopt_fused_layout();

  Stream<T>& stft_stream() { return stft_; }
  Stream<T>& psd_stream() { return psd_; }
  std::optional<SeFusionParams<T>>& se() { return se_; }
  HeadParams<T>& head() { return head_; }

 private:
  void build(RandomStream& rng);
  template <typename F>
  void for_each_acb(F&& f);

  ModelConfig config_;
  Stream<T> stft_;
  Stream<T> psd_;
  std::optional<SeFusionParams<T>> se_;
  HeadParams<T> head_;
  bool fused_ = false;
};

/// Scalar parameter count of the model a config would build (no allocation of activations).
std::size_t count_params(const ModelConfig& config);

}  // namespace jamlab::nn
