#include "jamlab/fft.hpp"

#include <fftw3.h>

#include <mutex>
#include <new>
#include <stdexcept>
#include <utility>

namespace jamlab {
namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (n == 0) throw std::invalid_argument("FftPlan: size must be positive");
  std::lock_guard lock(planner_mutex());
  in_ = reinterpret_cast<Complex*>(fftw_alloc_complex(n));
  out_ = reinterpret_cast<Complex*>(fftw_alloc_complex(n));
  if (in_ == nullptr || out_ == nullptr) {
    release();
    throw std::bad_alloc();
  }
  plan_ = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in_),
                           reinterpret_cast<fftw_complex*>(out_), FFTW_FORWARD, FFTW_ESTIMATE);
  if (plan_ == nullptr) {
    release();
    throw std::runtime_error("FftPlan: planner failed");
  }
}

FftPlan::~FftPlan() {
  if (plan_ != nullptr || in_ != nullptr || out_ != nullptr) {
    std::lock_guard lock(planner_mutex());
    release();
  }
}

FftPlan::FftPlan(FftPlan&& other) noexcept
    : n_(std::exchange(other.n_, 0)),
      in_(std::exchange(other.in_, nullptr)),
      out_(std::exchange(other.out_, nullptr)),
      plan_(std::exchange(other.plan_, nullptr)) {}

FftPlan& FftPlan::operator=(FftPlan&& other) noexcept {
  if (this != &other) {
    {
      std::lock_guard lock(planner_mutex());
      release();
    }
    n_ = std::exchange(other.n_, 0);
    in_ = std::exchange(other.in_, nullptr);
    out_ = std::exchange(other.out_, nullptr);
    plan_ = std::exchange(other.plan_, nullptr);
  }
  return *this;
}

void FftPlan::execute() { fftw_execute(static_cast<fftw_plan>(plan_)); }

void FftPlan::release() noexcept {
  if (plan_ != nullptr) fftw_destroy_plan(static_cast<fftw_plan>(plan_));
  if (in_ != nullptr) fftw_free(in_);
  if (out_ != nullptr) fftw_free(out_);
  plan_ = nullptr;
  in_ = nullptr;
  out_ = nullptr;
}

}  // namespace jamlab
