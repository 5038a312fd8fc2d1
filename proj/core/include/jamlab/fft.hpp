#pragma once

#include <cstddef>
#include <span>

#include "jamlab/signal.hpp"

namespace jamlab {

/// Forward complex DFT of a fixed size, X[k] = sum_n x[n] exp(-i 2 pi k n / N).
///
/// Owns its plan and work buffers, so one instance per thread is safe; plan
/// construction is serialized internally.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);
  ~FftPlan();
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  FftPlan(FftPlan&& other) noexcept;
  FftPlan& operator=(FftPlan&& other) noexcept;

  std::size_t size() const { return n_; }

  /// Write the (zero-padded) frame here, then call execute().
  std::span<Complex> input() { return {in_, n_}; }
  std::span<const Complex> output() const { return {out_, n_}; }
  void execute();

 private:
  void release() noexcept;

  std::size_t n_ = 0;
  Complex* in_ = nullptr;
  Complex* out_ = nullptr;
  void* plan_ = nullptr;
};

}  // namespace jamlab
