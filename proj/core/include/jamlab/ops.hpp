#pragma once

#include <cstddef>
#include <vector>

#include "jamlab/rng.hpp"
#include "jamlab/tensor.hpp"

namespace jamlab::nn {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t dilation = 1;
};

/// [B, C_out, H', W'] for input [B, C_in, H, W] and kernel [C_out, C_in, kh, kw];
/// H' = (H + 2 pad_h - dilation (kh - 1) - 1) / stride + 1. Throws on mismatch.
Shape conv2d_output_shape(const Shape& input, const Shape& kernel, const Conv2dOptions& opt);

/// Zero-padded cross-correlation. `bias` may be an undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, const Conv2dOptions& opt);

/// Per-channel batch normalization over every axis except 1.
template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> batches_tracked;  // shape {1}; zero until a Train-mode pass or explicit stats
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  std::size_t channels() const { return gamma.numel(); }
  bool stats_populated() const { return batches_tracked.defined() && batches_tracked[0] > T{0}; }
  void set_running_stats(std::vector<T> mean, std::vector<T> var);
};

/// Train: batch statistics (biased variance), running stats updated with
/// momentum and the unbiased variance. Eval: running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNorm<T>& bn, Mode mode);

template <typename T>
Tensor<T> swish(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// [B, C, ...spatial] -> [B, C], mean over the spatial positions.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// y = x W^T + b for x [B, N_in], W [N_out, N_in]; `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x [B, C, ...] scaled per (b, c) by s [B, C].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s);

/// Inverted dropout: survivors scaled by 1 / (1 - p) in Train mode, identity in Eval or when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, RandomStream& rng);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Drops `axis` by taking slice `index` along it.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index);

}  // namespace jamlab::nn
