#pragma once

// Differentiable primitives over (N, C, H, W) tensors. Every function here
// is pure: outputs depend only on the arguments.
//
// Inner sums of conv2d and dense accumulate in double, one accumulator per
// output element, summed in a fixed order so results are reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace allnet {

using Accumulator = double;

template <typename T> struct ConvParams {
  BasicTensor<T> kernel; ///< (outC, inC, kH, kW)
  std::vector<T> bias;   ///< outC
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return kernel.shape().n; }
  std::size_t in_channels() const { return kernel.shape().c; }
  std::size_t kernel_h() const { return kernel.shape().h; }
  std::size_t kernel_w() const { return kernel.shape().w; }

  void validate() const {
    if (stride < 1) throw ShapeError("conv stride must be >= 1");
    if (bias.size() != out_channels()) {
      throw ShapeError("conv bias length " + std::to_string(bias.size()) + " does not match kernel " +
                       kernel.shape().str());
    }
  }
};

template <typename T> struct DenseParams {
  BasicTensor<T> weights; ///< (outUnits, inUnits, 1, 1)
  std::vector<T> bias;    ///< outUnits

  std::size_t out_units() const { return weights.shape().n; }
  std::size_t in_units() const { return weights.shape().c; }
};

template <typename T> struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernel;
  std::vector<T> bias;
};

template <typename T> struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  std::vector<T> bias;
};

/// Pooled output plus, per output element, the flat index into the input
/// tensor of the element that won the window.
template <typename T> struct PoolResult {
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;
};

namespace detail {

/// Max-pool selection: strictly greater wins (first of equals is kept), and
/// a NaN wins over any number so it propagates.
template <typename T> bool beats(T candidate, T best) {
  return candidate > best || (std::isnan(candidate) && !std::isnan(best));
}

/// floor((in + 2*pad - k) / stride) + 1, or 0 when the window does not fit.
inline std::size_t window_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

inline void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

/// C[m][n] += sum_k A[m][k] * B[k][n] with A (M x K), B (K x N) row-major.
/// Each C element is summed in increasing k, so blocking does not change
/// the result. Rows are processed 8 at a time against 32-column tiles.
template <typename T>
void gemm_accumulate(const T* a, std::size_t M, std::size_t K, const T* b, std::size_t N, Accumulator* c) {
  constexpr std::size_t RB = 8;
  constexpr std::size_t CB = 32;
  Accumulator acc[RB][CB];
  for (std::size_t m0 = 0; m0 < M; m0 += RB) {
    const std::size_t mb = std::min(RB, M - m0);
    for (std::size_t n0 = 0; n0 < N; n0 += CB) {
      const std::size_t nb = std::min(CB, N - n0);
      for (std::size_t i = 0; i < mb; ++i)
        for (std::size_t j = 0; j < nb; ++j) acc[i][j] = c[(m0 + i) * N + n0 + j];
      if (mb == RB && nb == CB) {
        for (std::size_t k = 0; k < K; ++k) {
          const T* row = b + k * N + n0;
          Accumulator w[RB];
          for (std::size_t i = 0; i < RB; ++i) w[i] = a[(m0 + i) * K + k];
          for (std::size_t j = 0; j < CB; ++j) {
            const Accumulator x = row[j];
            for (std::size_t i = 0; i < RB; ++i) acc[i][j] += w[i] * x;
          }
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const T* row = b + k * N + n0;
          for (std::size_t i = 0; i < mb; ++i) {
            const Accumulator w = a[(m0 + i) * K + k];
            for (std::size_t j = 0; j < nb; ++j) acc[i][j] += w * static_cast<Accumulator>(row[j]);
          }
        }
      }
      for (std::size_t i = 0; i < mb; ++i)
        for (std::size_t j = 0; j < nb; ++j) c[(m0 + i) * N + n0 + j] = acc[i][j];
    }
  }
}

/// Unrolls one sample into a (K, P) matrix, K = C*kH*kW rows, P = outH*outW
/// columns. Padding positions read as zero.
template <typename T>
void im2col(std::span<const T> image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, std::vector<T>& col) {
  const std::size_t P = out_h * out_w;
  col.assign(channels * kh * kw * P, T(0));
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image.data() + c * height * width;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx, ++row) {
        T* dst = col.data() + row * P;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          const T* src = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[oy * out_w + ox] = src[ix];
          }
        }
      }
    }
  }
}

/// Transposed im2col: a (P, K) matrix, one row per output position.
template <typename T>
void im2row(std::span<const T> image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, std::vector<T>& rows) {
  const std::size_t K = channels * kh * kw;
  rows.assign(out_h * out_w * K, T(0));
  T* dst = rows.data();
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox, dst += K) {
      std::size_t k = 0;
      for (std::size_t c = 0; c < channels; ++c) {
        const T* plane = image.data() + c * height * width;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            k += kw;
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t kx = 0; kx < kw; ++kx, ++k) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[k] = src[ix];
          }
        }
      }
    }
  }
}

/// Inverse scatter of im2col: adds each column entry back onto the image
/// position it was read from.
inline void col2im_add(std::span<const Accumulator> col, std::size_t channels, std::size_t height,
                       std::size_t width, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                       std::size_t out_h, std::size_t out_w, std::span<Accumulator> image) {
  const std::size_t P = out_h * out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    Accumulator* plane = image.data() + c * height * width;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx, ++row) {
        const Accumulator* src = col.data() + row * P;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          Accumulator* dst = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip, symmetric zero padding)

template <typename T> Shape conv2d_output_shape(const Shape& in, const ConvParams<T>& p) {
  p.validate();
  if (in.c != p.in_channels()) {
    throw ShapeError("conv2d: input " + in.str() + " does not match kernel " + p.kernel.shape().str());
  }
  const std::size_t oh = detail::window_extent(in.h, p.kernel_h(), p.stride, p.padding);
  const std::size_t ow = detail::window_extent(in.w, p.kernel_w(), p.stride, p.padding);
  if (oh < 1 || ow < 1) {
    throw DegenerateOutputError("conv2d: input " + in.str() + " with kernel " + p.kernel.shape().str() +
                                " stride " + std::to_string(p.stride) + " padding " +
                                std::to_string(p.padding) + " gives an empty output");
  }
  return Shape{in.n, p.out_channels(), oh, ow};
}

template <typename T> BasicTensor<T> conv2d(const BasicTensor<T>& input, const ConvParams<T>& p) {
  const Shape in = input.shape();
  const Shape os = conv2d_output_shape(in, p);
  BasicTensor<T> out(os);

  const std::size_t K = p.in_channels() * p.kernel_h() * p.kernel_w();
  const std::size_t P = os.h * os.w;
  std::vector<T> col;
  std::vector<Accumulator> acc(os.c * P);
  const T* kernel = p.kernel.data().data();

  for (std::size_t n = 0; n < in.n; ++n) {
    detail::im2col<T>(input.sample(n), in.c, in.h, in.w, p.kernel_h(), p.kernel_w(), p.stride, p.padding, os.h,
                      os.w, col);
    std::fill(acc.begin(), acc.end(), Accumulator(0));
    detail::gemm_accumulate(kernel, os.c, K, col.data(), P, acc.data());
    T* dst = out.sample(n).data();
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      const Accumulator b = p.bias[oc];
      for (std::size_t q = 0; q < P; ++q) dst[oc * P + q] = static_cast<T>(acc[oc * P + q] + b);
    }
  }
  return out;
}

/// Gradients of conv2d with respect to input, kernel, and bias. When
/// `need_input` is false the input gradient is left zero and its cost is
/// skipped; likewise `need_params` for kernel and bias.
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const ConvParams<T>& p, const BasicTensor<T>& grad_out,
                             bool need_input = true, bool need_params = true) {
  const Shape in = input.shape();
  const Shape os = conv2d_output_shape(in, p);
  detail::require_same(grad_out.shape(), os, "conv2d_backward grad_out");

  const std::size_t K = p.in_channels() * p.kernel_h() * p.kernel_w();
  const std::size_t P = os.h * os.w;

  ConvGrads<T> g{BasicTensor<T>(in), BasicTensor<T>(p.kernel.shape()), std::vector<T>(os.c, T(0))};
  std::vector<Accumulator> gk(need_params ? os.c * K : 0, 0.0);
  std::vector<Accumulator> gb(os.c, 0.0);
  std::vector<Accumulator> gcol(need_input ? K * P : 0);
  std::vector<Accumulator> gimg(need_input ? in.per_sample() : 0);
  std::vector<T> colt;
  std::vector<T> kernel_t(need_input ? K * os.c : 0);
  const T* kernel = p.kernel.data().data();
  for (std::size_t oc = 0; oc < kernel_t.size() / K; ++oc)
    for (std::size_t k = 0; k < K; ++k) kernel_t[k * os.c + oc] = kernel[oc * K + k];

  for (std::size_t n = 0; n < in.n; ++n) {
    const T* go = grad_out.sample(n).data();

    if (need_params) {
      detail::im2row<T>(input.sample(n), in.c, in.h, in.w, p.kernel_h(), p.kernel_w(), p.stride, p.padding, os.h,
                        os.w, colt);
      detail::gemm_accumulate(go, os.c, P, colt.data(), K, gk.data());
      for (std::size_t oc = 0; oc < os.c; ++oc) {
        Accumulator bsum = 0;
        for (std::size_t q = 0; q < P; ++q) bsum += go[oc * P + q];
        gb[oc] += bsum;
      }
    }

    if (need_input) {
      std::fill(gcol.begin(), gcol.end(), Accumulator(0));
      detail::gemm_accumulate(kernel_t.data(), K, os.c, go, P, gcol.data());
      std::fill(gimg.begin(), gimg.end(), Accumulator(0));
      detail::col2im_add(gcol, in.c, in.h, in.w, p.kernel_h(), p.kernel_w(), p.stride, p.padding, os.h, os.w, gimg);
      auto dst = g.input.sample(n);
      for (std::size_t i = 0; i < gimg.size(); ++i) dst[i] = static_cast<T>(gimg[i]);
    }
  }

  if (need_params) {
    auto dk = g.kernel.data();
    for (std::size_t i = 0; i < gk.size(); ++i) dk[i] = static_cast<T>(gk[i]);
    for (std::size_t oc = 0; oc < os.c; ++oc) g.bias[oc] = static_cast<T>(gb[oc]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling

inline Shape maxpool2d_output_shape(const Shape& in, std::size_t window, std::size_t stride, std::size_t padding) {
  if (window < 1 || stride < 1) throw ShapeError("maxpool2d: window and stride must be >= 1");
  if (padding >= window) {
    throw ShapeError("maxpool2d: padding " + std::to_string(padding) + " must be smaller than window " +
                     std::to_string(window));
  }
  const std::size_t oh = detail::window_extent(in.h, window, stride, padding);
  const std::size_t ow = detail::window_extent(in.w, window, stride, padding);
  if (oh < 1 || ow < 1) {
    throw DegenerateOutputError("maxpool2d: window " + std::to_string(window) + " exceeds padded extent of " +
                                in.str());
  }
  return Shape{in.n, in.c, oh, ow};
}

/// Max over `window`-sized windows. Padded positions never win; ties go to
/// the first element in row-major order.
template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input, std::size_t window, std::size_t stride, std::size_t padding = 0) {
  const Shape in = input.shape();
  const Shape os = maxpool2d_output_shape(in, window, stride, padding);
  const std::size_t oh = os.h;
  const std::size_t ow = os.w;
  PoolResult<T> r{BasicTensor<T>(Shape{in.n, in.c, oh, ow}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const std::size_t base = input.index(n, c, 0, 0);
      for (std::size_t y = 0; y < oh; ++y) {
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(y * stride) - static_cast<std::ptrdiff_t>(padding);
        for (std::size_t x = 0; x < ow; ++x, ++o) {
          const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(x * stride) - static_cast<std::ptrdiff_t>(padding);
          bool found = false;
          T best{};
          std::size_t best_idx = 0;
          for (std::ptrdiff_t iy = std::max<std::ptrdiff_t>(y0, 0);
               iy < std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(in.h));
               ++iy) {
            for (std::ptrdiff_t ix = std::max<std::ptrdiff_t>(x0, 0);
                 ix < std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(in.w));
                 ++ix) {
              const std::size_t idx = base + static_cast<std::size_t>(iy) * in.w + static_cast<std::size_t>(ix);
              if (!found || detail::beats(input[idx], best)) {
                best = input[idx];
                best_idx = idx;
                found = true;
              }
            }
          }
          r.output[o] = best;
          r.argmax[o] = best_idx;
        }
      }
    }
  }
  return r;
}

/// Max pooling onto a fixed out_h x out_w grid. Output cell i covers input
/// rows [floor(i*H/out_h), ceil((i+1)*H/out_h)), likewise for columns, so
/// any input extent maps onto the grid (cells repeat when H < out_h).
template <typename T>
PoolResult<T> adaptive_maxpool2d(const BasicTensor<T>& input, std::size_t out_h, std::size_t out_w) {
  const Shape in = input.shape();
  if (out_h < 1 || out_w < 1) throw DegenerateOutputError("adaptive_maxpool2d: target grid must be >= 1x1");
  PoolResult<T> r{BasicTensor<T>(Shape{in.n, in.c, out_h, out_w}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const std::size_t base = input.index(n, c, 0, 0);
      for (std::size_t y = 0; y < out_h; ++y) {
        const std::size_t y0 = y * in.h / out_h;
        const std::size_t y1 = ((y + 1) * in.h + out_h - 1) / out_h;
        for (std::size_t x = 0; x < out_w; ++x, ++o) {
          const std::size_t x0 = x * in.w / out_w;
          const std::size_t x1 = ((x + 1) * in.w + out_w - 1) / out_w;
          std::size_t best_idx = base + y0 * in.w + x0;
          T best = input[best_idx];
          for (std::size_t iy = y0; iy < y1; ++iy) {
            for (std::size_t ix = x0; ix < x1; ++ix) {
              const std::size_t idx = base + iy * in.w + ix;
              if (detail::beats(input[idx], best)) {
                best = input[idx];
                best_idx = idx;
              }
            }
          }
          r.output[o] = best;
          r.argmax[o] = best_idx;
        }
      }
    }
  }
  return r;
}

/// Routes each grad_out element to its recorded source; sources hit by
/// several windows accumulate.
template <typename T>
BasicTensor<T> maxpool2d_backward(std::span<const std::size_t> argmax, const BasicTensor<T>& grad_out,
                                  const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool2d_backward: argmax map has " + std::to_string(argmax.size()) +
                     " entries but grad_out " + grad_out.shape().str() + " has " + std::to_string(grad_out.size()));
  }
  if (grad_out.shape().n != input_shape.n || grad_out.shape().c != input_shape.c) {
    throw ShapeError("maxpool2d_backward: grad_out " + grad_out.shape().str() + " incompatible with input " +
                     input_shape.str());
  }
  BasicTensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= g.size()) throw ShapeError("maxpool2d_backward: argmax index out of range");
    g[argmax[i]] += grad_out[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <typename T> BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = inputs[0]->shape();
  std::size_t channels = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Shape s = inputs[i]->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: input " + std::to_string(i) + " has shape " + s.str() +
                       ", expected batch/height/width of " + first.str());
    }
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    T* dst = out.sample(n).data();
    for (const BasicTensor<T>* t : inputs) {
      auto src = t->sample(n);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

template <typename T> BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> inputs) {
  std::vector<const BasicTensor<T>*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(ptrs));
}

/// Backward of concat_channels: cuts grad_out at the channel boundaries.
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad_out, std::span<const std::size_t> channels) {
  std::size_t total = 0;
  for (std::size_t c : channels) total += c;
  if (total != grad_out.shape().c) {
    throw ShapeError("split_channels: pieces sum to " + std::to_string(total) + " channels but grad_out is " +
                     grad_out.shape().str());
  }
  std::vector<BasicTensor<T>> pieces;
  std::size_t begin = 0;
  for (std::size_t c : channels) {
    pieces.push_back(slice_channels(grad_out, begin, begin + c));
    begin += c;
  }
  return pieces;
}

// ---------------------------------------------------------------------------
// Element-wise ops

template <typename T> BasicTensor<T> elementwise_add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "elementwise_add");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  // NaN passes through so a corrupted activation reaches the loss check.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] <= T(0) ? T(0) : x[i];
  return out;
}

template <typename T> BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  detail::require_same(x.shape(), grad_out.shape(), "relu_backward");
  BasicTensor<T> g(x.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T> T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

/// Takes the forward *output* y = sigmoid(x): dx = y (1 - y) dy.
template <typename T> BasicTensor<T> sigmoid_backward(const BasicTensor<T>& y, const BasicTensor<T>& grad_out) {
  detail::require_same(y.shape(), grad_out.shape(), "sigmoid_backward");
  BasicTensor<T> g(y.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = y[i] * (T(1) - y[i]) * grad_out[i];
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected

template <typename T> BasicTensor<T> dense(const BasicTensor<T>& input, const DenseParams<T>& p) {
  const Shape in = input.shape();
  const std::size_t I = p.in_units();
  const std::size_t O = p.out_units();
  if (in.per_sample() != I) {
    throw ShapeError("dense: input " + in.str() + " flattens to " + std::to_string(in.per_sample()) +
                     " but weights " + p.weights.shape().str() + " expect " + std::to_string(I));
  }
  if (p.bias.size() != O) throw ShapeError("dense: bias length does not match weights " + p.weights.shape().str());
  BasicTensor<T> out(Shape{in.n, O, 1, 1});
  const T* w = p.weights.data().data();
  for (std::size_t n = 0; n < in.n; ++n) {
    const T* x = input.sample(n).data();
    for (std::size_t o = 0; o < O; ++o) {
      Accumulator acc = 0;
      const T* row = w + o * I;
      for (std::size_t i = 0; i < I; ++i) acc += static_cast<Accumulator>(row[i]) * x[i];
      out.at(n, o, 0, 0) = static_cast<T>(acc + p.bias[o]);
    }
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input, const DenseParams<T>& p, const BasicTensor<T>& grad_out) {
  const Shape in = input.shape();
  const std::size_t I = p.in_units();
  const std::size_t O = p.out_units();
  if (in.per_sample() != I) throw ShapeError("dense_backward: input " + in.str() + " does not match weights");
  detail::require_same(grad_out.shape(), Shape{in.n, O, 1, 1}, "dense_backward grad_out");

  DenseGrads<T> g{BasicTensor<T>(in), BasicTensor<T>(p.weights.shape()), std::vector<T>(O)};
  std::vector<Accumulator> gw(O * I, 0.0);
  std::vector<Accumulator> gx(I);
  const T* w = p.weights.data().data();
  for (std::size_t o = 0; o < O; ++o) {
    Accumulator gb = 0;
    for (std::size_t n = 0; n < in.n; ++n) gb += grad_out[n * O + o];
    g.bias[o] = static_cast<T>(gb);
  }
  for (std::size_t n = 0; n < in.n; ++n) {
    const T* x = input.sample(n).data();
    std::fill(gx.begin(), gx.end(), 0.0);
    for (std::size_t o = 0; o < O; ++o) {
      const Accumulator go = grad_out[n * O + o];
      Accumulator* gwr = gw.data() + o * I;
      const T* row = w + o * I;
      for (std::size_t i = 0; i < I; ++i) {
        gwr[i] += go * x[i];
        gx[i] += go * row[i];
      }
    }
    auto dst = g.input.sample(n);
    for (std::size_t i = 0; i < I; ++i) dst[i] = static_cast<T>(gx[i]);
  }
  auto dw = g.weights.data();
  for (std::size_t i = 0; i < gw.size(); ++i) dw[i] = static_cast<T>(gw[i]);
  return g;
}

} // namespace allnet
