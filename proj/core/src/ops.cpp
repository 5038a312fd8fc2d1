#include "jamlab/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace jamlab::nn {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
bool wants_grad(const Node<T>& n, std::size_t i) {
  return i < n.inputs.size() && n.inputs[i] != nullptr && n.inputs[i]->requires_grad;
}

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, ho, wo;
  Conv2dOptions opt;

  std::size_t k() const { return c_in * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.opt.stride + ki * g.opt.dilation) - static_cast<long>(g.opt.pad_h);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.opt.stride + kj * g.opt.dilation) - static_cast<long>(g.opt.pad_w);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    T* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.opt.stride + ki * g.opt.dilation) - static_cast<long>(g.opt.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = xc + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.opt.stride + kj * g.opt.dilation) - static_cast<long>(g.opt.pad_w);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, const Conv2dOptions& opt) {
  require(input.size() == 4, "conv2d: input must be [B, C, H, W], got " + shape_str(input));
  require(kernel.size() == 4, "conv2d: kernel must be [C_out, C_in, kh, kw], got " + shape_str(kernel));
  require(input[1] == kernel[1], "conv2d: input has " + std::to_string(input[1]) + " channels, kernel expects " +
                                     std::to_string(kernel[1]));
  require(opt.stride > 0 && opt.dilation > 0, "conv2d: stride and dilation must be positive");
  const long eff_h = static_cast<long>(opt.dilation * (kernel[2] - 1) + 1);
  const long eff_w = static_cast<long>(opt.dilation * (kernel[3] - 1) + 1);
  const long span_h = static_cast<long>(input[2] + 2 * opt.pad_h) - eff_h;
  const long span_w = static_cast<long>(input[3] + 2 * opt.pad_w) - eff_w;
  require(span_h >= 0 && span_w >= 0, "conv2d: kernel " + shape_str(kernel) + " (dilation " +
                                          std::to_string(opt.dilation) + ") larger than padded input " +
                                          shape_str(input));
  return {input[0], kernel[0], static_cast<std::size_t>(span_h) / opt.stride + 1,
          static_cast<std::size_t>(span_w) / opt.stride + 1};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, const Conv2dOptions& opt) {
  const Shape out_shape = conv2d_output_shape(x.shape(), kernel.shape(), opt);
  if (bias.defined()) {
    require(bias.numel() == kernel.dim(0), "conv2d: bias has " + std::to_string(bias.numel()) +
                                               " entries for " + std::to_string(kernel.dim(0)) + " output channels");
  }
  const ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                       out_shape[2], out_shape[3], opt};
  const std::size_t batch = x.dim(0);
  const std::size_t k = g.k();
  const std::size_t p = g.p();
  const std::size_t in_stride = g.c_in * g.h * g.w;
  const std::size_t out_stride = g.c_out * p;

  std::vector<T> out(batch * out_stride);
  std::vector<T> col(k * p);
  CMapR<T> wm(kernel.values().data(), static_cast<long>(g.c_out), static_cast<long>(k));
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.values().data() + b * in_stride, g, col.data());
    MapR<T> ob(out.data() + b * out_stride, static_cast<long>(g.c_out), static_cast<long>(p));
    ob.noalias() = wm * CMapR<T>(col.data(), static_cast<long>(k), static_cast<long>(p));
    if (bias.defined()) {
      for (std::size_t c = 0; c < g.c_out; ++c) ob.row(static_cast<long>(c)).array() += bias[c];
    }
  }

  return make_result<T>(
      out_shape, std::move(out), {x, kernel, bias}, "conv2d", [g, batch, in_stride, out_stride](Node<T>& node) {
        const std::size_t k = g.k();
        const std::size_t p = g.p();
        const Node<T>& xn = *node.inputs[0];
        const Node<T>& kn = *node.inputs[1];
        const bool gx = wants_grad(node, 0);
        const bool gk = wants_grad(node, 1);
        const bool gb = wants_grad(node, 2);
        std::vector<T> col(k * p);
        CMapR<T> wm(kn.data.data(), static_cast<long>(g.c_out), static_cast<long>(k));
        T* kgrad = gk ? node.inputs[1]->grad_buffer().data() : nullptr;
        T* xgrad = gx ? node.inputs[0]->grad_buffer().data() : nullptr;
        T* bgrad = gb ? node.inputs[2]->grad_buffer().data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          CMapR<T> go(node.grad.data() + b * out_stride, static_cast<long>(g.c_out), static_cast<long>(p));
          if (gk) {
            im2col(xn.data.data() + b * in_stride, g, col.data());
            MapR<T>(kgrad, static_cast<long>(g.c_out), static_cast<long>(k)).noalias() +=
                go * CMapR<T>(col.data(), static_cast<long>(k), static_cast<long>(p)).transpose();
          }
          if (gx) {
            MapR<T>(col.data(), static_cast<long>(k), static_cast<long>(p)).noalias() = wm.transpose() * go;
            col2im_add(col.data(), g, xgrad + b * in_stride);
          }
          if (gb) {
            for (std::size_t c = 0; c < g.c_out; ++c) bgrad[c] += go.row(static_cast<long>(c)).sum();
          }
        }
      });
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : gamma(Shape{channels}, T{1}),
      beta(Shape{channels}, T{0}),
      running_mean(Shape{channels}, T{0}),
      running_var(Shape{channels}, T{1}),
      batches_tracked(Shape{1}, T{0}) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

template <typename T>
void BatchNorm<T>::set_running_stats(std::vector<T> mean, std::vector<T> var) {
  require(mean.size() == channels() && var.size() == channels(), "set_running_stats: channel count mismatch");
  std::copy(mean.begin(), mean.end(), running_mean.mutable_values().begin());
  std::copy(var.begin(), var.end(), running_var.mutable_values().begin());
  batches_tracked.mutable_values()[0] = std::max(batches_tracked[0], T{1});
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNorm<T>& bn, Mode mode) {
  require(x.rank() >= 2, "batch_norm: input must have a channel axis, got " + shape_str(x.shape()));
  const std::size_t c_count = x.dim(1);
  require(bn.channels() == c_count, "batch_norm: expected " + std::to_string(bn.channels()) +
                                        " channels, got " + std::to_string(c_count));
  const std::size_t batch = x.dim(0);
  const std::size_t spatial = x.numel() / (batch * c_count);
  const std::size_t count = batch * spatial;
  const auto xv = x.values();
  const auto gv = bn.gamma.values();
  const auto bv = bn.beta.values();

  std::vector<T> inv_std(c_count);
  std::vector<T> mean(c_count);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < c_count; ++c) {
      T s = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xv.data() + (b * c_count + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      const T m = s / static_cast<T>(count);
      T ss = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xv.data() + (b * c_count + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const T var = ss / static_cast<T>(count);
      mean[c] = m;
      inv_std[c] = T{1} / std::sqrt(var + bn.eps);
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      auto rm = bn.running_mean.mutable_values();
      auto rv = bn.running_var.mutable_values();
      rm[c] = (T{1} - bn.momentum) * rm[c] + bn.momentum * m;
      rv[c] = (T{1} - bn.momentum) * rv[c] + bn.momentum * unbiased;
    }
    bn.batches_tracked.mutable_values()[0] += T{1};
  } else {
    for (std::size_t c = 0; c < c_count; ++c) {
      mean[c] = bn.running_mean[c];
      inv_std[c] = T{1} / std::sqrt(bn.running_var[c] + bn.eps);
    }
  }

  std::vector<T> xhat(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < c_count; ++c) {
      const std::size_t off = (b * c_count + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const T h = (xv[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gv[c] * h + bv[c];
      }
    }
  }

  const bool train = mode == Mode::Train;
  return make_result<T>(
      x.shape(), std::move(out), {x, bn.gamma, bn.beta}, "batch_norm",
      [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, c_count, spatial, count, train](Node<T>& node) {
        const auto& g = node.grad;
        const auto& gamma = node.inputs[1]->data;
        std::vector<T> sum_g(c_count, T{0});
        std::vector<T> sum_gx(c_count, T{0});
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t off = (b * c_count + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              sum_g[c] += g[off + i];
              sum_gx[c] += g[off + i] * xhat[off + i];
            }
          }
        }
        if (wants_grad(node, 1)) {
          auto gg = node.inputs[1]->grad_buffer();
          for (std::size_t c = 0; c < c_count; ++c) gg[c] += sum_gx[c];
        }
        if (wants_grad(node, 2)) {
          auto gb = node.inputs[2]->grad_buffer();
          for (std::size_t c = 0; c < c_count; ++c) gb[c] += sum_g[c];
        }
        if (!wants_grad(node, 0)) return;
        auto gx = node.inputs[0]->grad_buffer();
        const T n = static_cast<T>(count);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t off = (b * c_count + c) * spatial;
            const T scale = gamma[c] * inv_std[c];
            if (train) {
              const T mg = sum_g[c] / n;
              const T mgx = sum_gx[c] / n;
              for (std::size_t i = 0; i < spatial; ++i) {
                gx[off + i] += scale * (g[off + i] - mg - xhat[off + i] * mgx);
              }
            } else {
              for (std::size_t i = 0; i < spatial; ++i) gx[off + i] += scale * g[off + i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  const auto xv = x.values();
  std::vector<T> sig(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    sig[i] = stable_sigmoid(xv[i]);
    out[i] = xv[i] * sig[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "swish", [sig = std::move(sig)](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    const auto& xd = node.inputs[0]->data;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += node.grad[i] * sig[i] * (T{1} + xd[i] * (T{1} - sig[i]));
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, "sigmoid", [](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T y = node.data[i];
      gx[i] += node.grad[i] * y * (T{1} - y);
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return make_result<T>(x.shape(), std::move(out), {x}, "relu", [](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    const auto& xd = node.inputs[0]->data;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xd[i] > T{0}) gx[i] += node.grad[i];
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      T s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= s;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "softmax", [outer, inner, n](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    const auto& y = node.data;
    const auto& g = node.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.rank() >= 3, "global_avg_pool: expected [B, C, ...spatial], got " + shape_str(x.shape()));
  const std::size_t bc = x.dim(0) * x.dim(1);
  const std::size_t spatial = x.numel() / bc;
  require(spatial >= 1, "global_avg_pool: empty spatial extent");
  const auto xv = x.values();
  std::vector<T> out(bc);
  for (std::size_t i = 0; i < bc; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < spatial; ++j) s += xv[i * spatial + j];
    out[i] = s / static_cast<T>(spatial);
  }
  return make_result<T>({x.dim(0), x.dim(1)}, std::move(out), {x}, "global_avg_pool", [bc, spatial](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    const T inv = T{1} / static_cast<T>(spatial);
    for (std::size_t i = 0; i < bc; ++i) {
      const T v = node.grad[i] * inv;
      for (std::size_t j = 0; j < spatial; ++j) gx[i * spatial + j] += v;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() == 2, "linear: input must be [B, N_in], got " + shape_str(x.shape()));
  require(weight.rank() == 2 && weight.dim(1) == x.dim(1),
          "linear: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t n_in = x.dim(1);
  const std::size_t n_out = weight.dim(0);
  if (bias.defined()) {
    require(bias.numel() == n_out, "linear: bias has " + std::to_string(bias.numel()) + " entries, expected " +
                                       std::to_string(n_out));
  }
  std::vector<T> out(batch * n_out);
  MapR<T> y(out.data(), static_cast<long>(batch), static_cast<long>(n_out));
  y.noalias() = CMapR<T>(x.values().data(), static_cast<long>(batch), static_cast<long>(n_in)) *
                CMapR<T>(weight.values().data(), static_cast<long>(n_out), static_cast<long>(n_in)).transpose();
  if (bias.defined()) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < n_out; ++j) out[b * n_out + j] += bias[j];
    }
  }
  return make_result<T>({batch, n_out}, std::move(out), {x, weight, bias}, "linear", [batch, n_in, n_out](Node<T>& node) {
    CMapR<T> g(node.grad.data(), static_cast<long>(batch), static_cast<long>(n_out));
    if (wants_grad(node, 0)) {
      MapR<T>(node.inputs[0]->grad_buffer().data(), static_cast<long>(batch), static_cast<long>(n_in)).noalias() +=
          g * CMapR<T>(node.inputs[1]->data.data(), static_cast<long>(n_out), static_cast<long>(n_in));
    }
    if (wants_grad(node, 1)) {
      MapR<T>(node.inputs[1]->grad_buffer().data(), static_cast<long>(n_out), static_cast<long>(n_in)).noalias() +=
          g.transpose() * CMapR<T>(node.inputs[0]->data.data(), static_cast<long>(batch), static_cast<long>(n_in));
    }
    if (wants_grad(node, 2)) {
      auto gb = node.inputs[2]->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < n_out; ++j) gb[j] += node.grad[b * n_out + j];
      }
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: no inputs");
  const Shape& first = xs.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& t : xs) {
    require(t.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      require(i == axis || t.dim(i) == first[i],
              "concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(first) + " off axis " +
                  std::to_string(axis));
    }
    widths.push_back(t.dim(axis) * inner);
    total += t.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<T> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto v = xs[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    }
    offset += widths[k];
  }
  return make_result<T>(std::move(out_shape), std::move(out), xs, "concat", [widths, outer, row](Node<T>& node) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (wants_grad(node, k)) {
        auto gx = node.inputs[k]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < widths[k]; ++i) gx[o * widths[k] + i] += node.grad[o * row + offset + i];
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](Node<T>& node) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(node, k)) continue;
      auto gx = node.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](Node<T>& node) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(node, k)) continue;
      const auto& other = node.inputs[1 - k]->data;
      auto gx = node.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] * other[i];
    }
  });
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  require(x.rank() >= 2 && s.rank() == 2 && s.dim(0) == x.dim(0) && s.dim(1) == x.dim(1),
          "scale_channels: scale " + shape_str(s.shape()) + " incompatible with " + shape_str(x.shape()));
  const std::size_t bc = s.numel();
  const std::size_t inner = x.numel() / bc;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < bc; ++i) {
    for (std::size_t j = 0; j < inner; ++j) out[i * inner + j] = x[i * inner + j] * s[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x, s}, "scale_channels", [bc, inner](Node<T>& node) {
    const auto& xd = node.inputs[0]->data;
    const auto& sd = node.inputs[1]->data;
    if (wants_grad(node, 0)) {
      auto gx = node.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < bc; ++i) {
        for (std::size_t j = 0; j < inner; ++j) gx[i * inner + j] += node.grad[i * inner + j] * sd[i];
      }
    }
    if (wants_grad(node, 1)) {
      auto gs = node.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < bc; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < inner; ++j) acc += node.grad[i * inner + j] * xd[i * inner + j];
        gs[i] += acc;
      }
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, RandomStream& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = uniform(rng, 0.0, 1.0) < p ? T{0} : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "dropout", [mask = std::move(mask)](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return make_result<T>(Shape{}, {s}, {x}, "sum", [](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    for (T& v : gx) v += node.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  const T inv = T{1} / static_cast<T>(x.numel());
  T s = 0;
  for (T v : x.values()) s += v;
  return make_result<T>(Shape{}, {s * inv}, {x}, "mean", [inv](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    for (T& v : gx) v += node.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, "reshape", [](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
  });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  require(axis < x.rank() && index < x.dim(axis), "select: index out of range for " + shape_str(x.shape()));
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  std::vector<T> out(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.values().data() + (o * n + index) * inner, inner, out.data() + o * inner);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x}, "select", [outer, inner, n, index](Node<T>& node) {
    auto gx = node.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) gx[(o * n + index) * inner + i] += node.grad[o * inner + i];
    }
  });
}

#define JAMLAB_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv2dOptions&); \
  template struct BatchNorm<T>;                                                                          \
  template Tensor<T> batch_norm(const Tensor<T>&, BatchNorm<T>&, Mode);                                  \
  template Tensor<T> swish(const Tensor<T>&);                                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                          \
  template Tensor<T> relu(const Tensor<T>&);                                                             \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, RandomStream&);                             \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> mean(const Tensor<T>&);                                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                   \
  template Tensor<T> select(const Tensor<T>&, std::size_t, std::size_t);

JAMLAB_INSTANTIATE_OPS(float)
JAMLAB_INSTANTIATE_OPS(double)

#undef JAMLAB_INSTANTIATE_OPS

}  // namespace jamlab::nn
