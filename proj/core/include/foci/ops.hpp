#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "foci/autograd.hpp"
#include "foci/tensor.hpp"

namespace foci {

// Square-kernel convolution parameters.
struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int in_channels = 0;
  int out_channels = 0;

  // Span of the dilated kernel: k + (k-1)(d-1).
  int effective_kernel() const { return kernel + (kernel - 1) * (dilation - 1); }

  int out_extent(int in) const {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  }

  void validate(const Shape4& input) const {
    if (kernel < 1 || stride < 1 || dilation < 1 || padding < 0)
      throw std::invalid_argument("conv spec requires k,s,d >= 1 and p >= 0");
    if (input.c != in_channels)
      throw std::invalid_argument("conv input has " + std::to_string(input.c) +
                                  " channels, spec expects " + std::to_string(in_channels));
    int keff = effective_kernel();
    if (keff > input.h + 2 * padding || keff > input.w + 2 * padding)
      throw std::invalid_argument("effective kernel " + std::to_string(keff) +
                                  " exceeds padded input " + input.str());
  }

  // Padding that keeps spatial extents unchanged at stride 1.
  static ConvSpec same(int k, int d, int in_c, int out_c) {
    return ConvSpec{k, 1, d * (k - 1) / 2, d, in_c, out_c};
  }
};

namespace detail {

inline int div_floor(int a, int b) {
  int q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}
inline int div_ceil(int a, int b) { return -div_floor(-a, b); }

// Inclusive output-index range [lo, hi] for which the input index
// o*stride - pad + tap*dilation stays inside [0, extent).
struct LoopBounds {
  int lo, hi;
};
inline LoopBounds valid_out_range(int out_extent, int in_extent, int stride, int pad,
                                  int tap_offset) {
  int lo = std::max(0, div_ceil(pad - tap_offset, stride));
  int hi = std::min(out_extent - 1, div_floor(in_extent - 1 + pad - tap_offset, stride));
  return {lo, hi};
}

template <typename T>
bool tracked(const Tensor<T>& t) {
  return t.requires_grad();
}
template <typename T, typename... Rest>
bool tracked(const Tensor<T>& t, const Rest&... rest) {
  return t.requires_grad() || tracked(rest...);
}

template <typename T>
void conv2d_value(const T* in, const T* w, const T* b, T* out, Shape4 xs, ConvSpec spec,
                  int oh_total, int ow_total) {
  const int s = spec.stride, p = spec.padding, d = spec.dilation, k = spec.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t out_plane = static_cast<std::size_t>(oh_total) * ow_total;
  for (int n = 0; n < xs.n; ++n) {
    const T* in_img = in + n * xs.c * in_plane;
    T* out_img = out + n * spec.out_channels * out_plane;
    for (int co = 0; co < spec.out_channels; ++co) {
      T* out_ch = out_img + co * out_plane;
      std::fill(out_ch, out_ch + out_plane, b ? b[co] : T(0));
      const T* w_co = w + static_cast<std::size_t>(co) * spec.in_channels * k * k;
      for (int ci = 0; ci < spec.in_channels; ++ci) {
        const T* in_ch = in_img + ci * in_plane;
        const T* w_ci = w_co + static_cast<std::size_t>(ci) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          auto [oh_lo, oh_hi] = valid_out_range(oh_total, xs.h, s, p, kh * d);
          for (int kw = 0; kw < k; ++kw) {
            const T wv = w_ci[kh * k + kw];
            if (wv == T(0)) continue;
            auto [ow_lo, ow_hi] = valid_out_range(ow_total, xs.w, s, p, kw * d);
            if (ow_lo > ow_hi) continue;
            const int off = kw * d - p;
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const int ih = oh * s - p + kh * d;
              const T* in_row = in_ch + static_cast<std::size_t>(ih) * xs.w;
              T* out_row = out_ch + static_cast<std::size_t>(oh) * ow_total;
              if (s == 1) {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) out_row[ow] += wv * in_row[ow + off];
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) out_row[ow] += wv * in_row[ow * s + off];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// Dilated 2-D cross-correlation with zero padding. Weights are
// (out_channels, in_channels, k, k); bias is one value per output channel,
// carried as a (1, out_channels, 1, 1) tensor.
template <typename T>
Tensor<T> conv2d(GradientTape<T>* tape, const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias, const ConvSpec& spec) {
  spec.validate(input.shape());
  if (weights.shape() != Shape4{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel})
    throw std::invalid_argument("conv weights shaped " + weights.shape().str() +
                                ", spec expects (" + std::to_string(spec.out_channels) + "," +
                                std::to_string(spec.in_channels) + "," +
                                std::to_string(spec.kernel) + "," + std::to_string(spec.kernel) +
                                ")");
  if (bias.shape() != Shape4{1, spec.out_channels, 1, 1})
    throw std::invalid_argument("conv bias shaped " + bias.shape().str() + ", expected (1," +
                                std::to_string(spec.out_channels) + ",1,1)");

  const Shape4 xs = input.shape();
  const int oh = spec.out_extent(xs.h), ow = spec.out_extent(xs.w);
  Tensor<T> out(xs.n, spec.out_channels, oh, ow);
  detail::conv2d_value(input.data(), weights.data(), bias.data(), out.data(), xs, spec, oh, ow);

  if (tape && detail::tracked(input, weights, bias)) {
    out.set_requires_grad(true);
    auto xn = input.node(), wn = weights.node(), bn = bias.node(), on = out.node();
    tape->record([xn, wn, bn, on, xs, spec, oh, ow] {
      if (on->grad.empty()) return;
      const T* gout = on->grad.data();
      const int s = spec.stride, p = spec.padding, d = spec.dilation, k = spec.kernel;
      const std::size_t in_plane = static_cast<std::size_t>(xs.h) * xs.w;
      const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;

      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int n = 0; n < xs.n; ++n)
          for (int co = 0; co < spec.out_channels; ++co) {
            const T* g = gout + (static_cast<std::size_t>(n) * spec.out_channels + co) * out_plane;
            T acc = 0;
            for (std::size_t i = 0; i < out_plane; ++i) acc += g[i];
            bn->grad[co] += acc;
          }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        const T* in = xn->value.data();
        for (int n = 0; n < xs.n; ++n)
          for (int co = 0; co < spec.out_channels; ++co) {
            const T* g_ch = gout + (static_cast<std::size_t>(n) * spec.out_channels + co) * out_plane;
            for (int ci = 0; ci < spec.in_channels; ++ci) {
              const T* in_ch = in + (static_cast<std::size_t>(n) * xs.c + ci) * in_plane;
              T* gw_ci = wn->grad.data() +
                         (static_cast<std::size_t>(co) * spec.in_channels + ci) * k * k;
              for (int kh = 0; kh < k; ++kh) {
                auto [oh_lo, oh_hi] = detail::valid_out_range(oh, xs.h, s, p, kh * d);
                for (int kw = 0; kw < k; ++kw) {
                  auto [ow_lo, ow_hi] = detail::valid_out_range(ow, xs.w, s, p, kw * d);
                  if (ow_lo > ow_hi) continue;
                  const int off = kw * d - p;
                  T acc = 0;
                  for (int o = oh_lo; o <= oh_hi; ++o) {
                    const int ih = o * s - p + kh * d;
                    const T* in_row = in_ch + static_cast<std::size_t>(ih) * xs.w;
                    const T* g_row = g_ch + static_cast<std::size_t>(o) * ow;
                    if (s == 1) {
                      for (int q = ow_lo; q <= ow_hi; ++q) acc += in_row[q + off] * g_row[q];
                    } else {
                      for (int q = ow_lo; q <= ow_hi; ++q) acc += in_row[q * s + off] * g_row[q];
                    }
                  }
                  gw_ci[kh * k + kw] += acc;
                }
              }
            }
          }
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const T* w = wn->value.data();
        for (int n = 0; n < xs.n; ++n)
          for (int co = 0; co < spec.out_channels; ++co) {
            const T* g_ch = gout + (static_cast<std::size_t>(n) * spec.out_channels + co) * out_plane;
            const T* w_co = w + static_cast<std::size_t>(co) * spec.in_channels * k * k;
            for (int ci = 0; ci < spec.in_channels; ++ci) {
              T* gin_ch = xn->grad.data() + (static_cast<std::size_t>(n) * xs.c + ci) * in_plane;
              const T* w_ci = w_co + static_cast<std::size_t>(ci) * k * k;
              for (int kh = 0; kh < k; ++kh) {
                auto [oh_lo, oh_hi] = detail::valid_out_range(oh, xs.h, s, p, kh * d);
                for (int kw = 0; kw < k; ++kw) {
                  const T wv = w_ci[kh * k + kw];
                  if (wv == T(0)) continue;
                  auto [ow_lo, ow_hi] = detail::valid_out_range(ow, xs.w, s, p, kw * d);
                  if (ow_lo > ow_hi) continue;
                  const int off = kw * d - p;
                  for (int o = oh_lo; o <= oh_hi; ++o) {
                    const int ih = o * s - p + kh * d;
                    T* gin_row = gin_ch + static_cast<std::size_t>(ih) * xs.w;
                    const T* g_row = g_ch + static_cast<std::size_t>(o) * ow;
                    if (s == 1) {
                      for (int q = ow_lo; q <= ow_hi; ++q) gin_row[q + off] += wv * g_row[q];
                    } else {
                      for (int q = ow_lo; q <= ow_hi; ++q) gin_row[q * s + off] += wv * g_row[q];
                    }
                  }
                }
              }
            }
          }
      }
    });
  }
  return out;
}

// 2x2 max pooling, stride 2. Gradient routes to the argmax; ties resolve to
// the first position in row-major scan order.
template <typename T>
Tensor<T> maxpool2(GradientTape<T>* tape, const Tensor<T>& input) {
  const Shape4 xs = input.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    throw std::invalid_argument("maxpool2 requires even extents, got " + xs.str());
  Tensor<T> out(xs.n, xs.c, xs.h / 2, xs.w / 2);
  std::vector<std::int32_t> argmax(out.numel());

  const T* in = input.data();
  T* o = out.data();
  const int oh = xs.h / 2, ow = xs.w / 2;
  std::size_t oi = 0;
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* plane = in + (static_cast<std::size_t>(n) * xs.c + c) * xs.h * xs.w;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x, ++oi) {
          const int base = (2 * y) * xs.w + 2 * x;
          int best = base;
          T bv = plane[base];
          const int cand[3] = {base + 1, base + xs.w, base + xs.w + 1};
          for (int idx : cand)
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          o[oi] = bv;
          argmax[oi] = static_cast<std::int32_t>(best);
        }
    }

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, xs, argmax = std::move(argmax)] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
      std::size_t oi = 0;
      const std::size_t out_plane = plane / 4;
      for (int nc = 0; nc < xs.n * xs.c; ++nc) {
        T* gin = xn->grad.data() + nc * plane;
        const T* gout = on->grad.data() + nc * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i, ++oi) gin[argmax[oi]] += gout[i];
      }
    });
  }
  return out;
}

// Nearest-neighbour 2x upsampling: every element becomes a 2x2 block.
template <typename T>
Tensor<T> upsample_nearest2(GradientTape<T>* tape, const Tensor<T>& input) {
  const Shape4 xs = input.shape();
  Tensor<T> out(xs.n, xs.c, xs.h * 2, xs.w * 2);
  const T* in = input.data();
  T* o = out.data();
  for (int nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* ip = in + static_cast<std::size_t>(nc) * xs.h * xs.w;
    T* op = o + static_cast<std::size_t>(nc) * xs.h * xs.w * 4;
    for (int y = 0; y < xs.h; ++y)
      for (int x = 0; x < xs.w; ++x) {
        const T v = ip[y * xs.w + x];
        T* row0 = op + (2 * y) * (2 * xs.w) + 2 * x;
        row0[0] = v;
        row0[1] = v;
        row0[2 * xs.w] = v;
        row0[2 * xs.w + 1] = v;
      }
  }
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, xs] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (int nc = 0; nc < xs.n * xs.c; ++nc) {
        T* gin = xn->grad.data() + static_cast<std::size_t>(nc) * xs.h * xs.w;
        const T* gout = on->grad.data() + static_cast<std::size_t>(nc) * xs.h * xs.w * 4;
        for (int y = 0; y < xs.h; ++y)
          for (int x = 0; x < xs.w; ++x) {
            const T* r0 = gout + (2 * y) * (2 * xs.w) + 2 * x;
            gin[y * xs.w + x] += r0[0] + r0[1] + r0[2 * xs.w] + r0[2 * xs.w + 1];
          }
      }
    });
  }
  return out;
}

// Per-channel batch normalization. gamma/beta/running stats are
// (1, C, 1, 1) tensors. Training mode normalizes with batch statistics
// (biased variance) and folds them into the running estimates with the
// given momentum; inference mode normalizes with the running estimates.
template <typename T>
Tensor<T> batchnorm(GradientTape<T>* tape, const Tensor<T>& input, const Tensor<T>& gamma,
                    const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                    T eps, T momentum, bool training) {
  const Shape4 xs = input.shape();
  const Shape4 want{1, xs.c, 1, 1};
  const std::array<const Tensor<T>*, 4> bn_params = {&gamma, &beta, &running_mean, &running_var};
  for (const auto* t : bn_params)
    if (t->shape() != want)
      throw std::invalid_argument("batchnorm parameter shaped " + t->shape().str() +
                                  ", expected " + want.str());
  if (eps <= T(0)) throw std::invalid_argument("batchnorm eps must be positive");

  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t m = static_cast<std::size_t>(xs.n) * plane;  // samples per channel
  Tensor<T> out(xs);
  std::vector<T> mean(xs.c), inv_std(xs.c);
  std::vector<T> xhat(input.numel());

  const T* in = input.data();
  if (training) {
    for (int c = 0; c < xs.c; ++c) {
      T mu = 0;
      for (int n = 0; n < xs.n; ++n) {
        const T* p = in + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= static_cast<T>(m);
      T var = 0;
      for (int n = 0; n < xs.n; ++n) {
        const T* p = in + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mu;
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * var;
    }
  } else {
    for (int c = 0; c < xs.c; ++c) {
      mean[c] = running_mean.data()[c];
      inv_std[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
    }
  }

  T* o = out.data();
  T* xh = xhat.data();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      const T mu = mean[c], is = inv_std[c];
      const T g = gamma.data()[c], b = beta.data()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const T v = (in[off + i] - mu) * is;
        xh[off + i] = v;
        o[off + i] = g * v + b;
      }
    }

  if (tape && detail::tracked(input, gamma, beta)) {
    out.set_requires_grad(true);
    auto xn = input.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    tape->record([xn, gn, bn, on, xs, plane, m, training, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)] {
      if (on->grad.empty()) return;
      const T* gout = on->grad.data();
      for (int c = 0; c < xs.c; ++c) {
        T sum_g = 0, sum_gx = 0;
        for (int n = 0; n < xs.n; ++n) {
          const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_g += gout[off + i];
            sum_gx += gout[off + i] * xhat[off + i];
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          bn->grad[c] += sum_g;
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          gn->grad[c] += sum_gx;
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const T g = gn->value[c], is = inv_std[c];
          if (training) {
            const T mg = sum_g / static_cast<T>(m);
            const T mgx = sum_gx / static_cast<T>(m);
            for (int n = 0; n < xs.n; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i)
                xn->grad[off + i] += g * is * (gout[off + i] - mg - xhat[off + i] * mgx);
            }
          } else {
            for (int n = 0; n < xs.n; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) xn->grad[off + i] += g * is * gout[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(GradientTape<T>* tape, const Tensor<T>& input, T alpha) {
  if (alpha < T(0) || alpha >= T(1))
    throw std::invalid_argument("leaky_relu slope must satisfy 0 <= alpha < 1");
  Tensor<T> out(input.shape());
  const T* in = input.data();
  T* o = out.data();
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) o[i] = in[i] > T(0) ? in[i] : alpha * in[i];
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, alpha, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        xn->grad[i] += on->grad[i] * (xn->value[i] > T(0) ? T(1) : alpha);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(GradientTape<T>* tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* in = input.data();
  T* o = out.data();
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) o[i] = T(1) / (T(1) + std::exp(-in[i]));
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T y = on->value[i];
        xn->grad[i] += on->grad[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp(GradientTape<T>* tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::exp(input.data()[i]);
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * on->value[i];
    });
  }
  return out;
}

// Stack along the channel axis in argument order.
template <typename T>
Tensor<T> concat_channels(GradientTape<T>* tape, const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels needs at least one input");
  const Shape4 first = inputs[0].shape();
  int total_c = 0;
  for (const auto& t : inputs) {
    if (t.n() != first.n || t.h() != first.h || t.w() != first.w)
      throw std::invalid_argument("concat_channels input " + t.shape().str() +
                                  " does not match " + first.str() + " on N/H/W");
    total_c += t.c();
  }
  Tensor<T> out(first.n, total_c, first.h, first.w);
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
  for (int n = 0; n < first.n; ++n) {
    std::size_t coff = 0;
    for (const auto& t : inputs) {
      const std::size_t bytes = static_cast<std::size_t>(t.c()) * plane;
      std::copy_n(t.data() + static_cast<std::size_t>(n) * bytes,
                  bytes, out.data() + (static_cast<std::size_t>(n) * total_c + coff) * plane);
      coff += t.c();
    }
  }
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorNode<T>>> in_nodes;
    for (const auto& t : inputs) in_nodes.push_back(t.node());
    auto on = out.node();
    tape->record([in_nodes, on, first, total_c, plane] {
      if (on->grad.empty()) return;
      for (int n = 0; n < first.n; ++n) {
        std::size_t coff = 0;
        for (auto& node : in_nodes) {
          const int c = node->shape.c;
          if (node->requires_grad) {
            node->ensure_grad();
            const T* src = on->grad.data() + (static_cast<std::size_t>(n) * total_c + coff) * plane;
            T* dst = node->grad.data() + static_cast<std::size_t>(n) * c * plane;
            for (std::size_t i = 0; i < static_cast<std::size_t>(c) * plane; ++i) dst[i] += src[i];
          }
          coff += c;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(GradientTape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add shapes differ: " + a.shape().str() + " vs " +
                                b.shape().str());
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape && detail::tracked(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    tape->record([an, bn, on, n] {
      if (on->grad.empty()) return;
      for (auto& node : {an, bn})
        if (node->requires_grad) {
          node->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) node->grad[i] += on->grad[i];
        }
    });
  }
  return out;
}

// Average-pool to an exact target grid; target extents must divide the
// source extents.
template <typename T>
Tensor<T> avgpool_to(GradientTape<T>* tape, const Tensor<T>& input, int th, int tw) {
  const Shape4 xs = input.shape();
  if (th < 1 || tw < 1 || xs.h % th != 0 || xs.w % tw != 0)
    throw std::invalid_argument("avgpool_to target " + std::to_string(th) + "x" +
                                std::to_string(tw) + " does not divide " + xs.str());
  const int bh = xs.h / th, bw = xs.w / tw;
  const T inv = T(1) / static_cast<T>(bh * bw);
  Tensor<T> out(xs.n, xs.c, th, tw);
  for (int nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* ip = input.data() + static_cast<std::size_t>(nc) * xs.h * xs.w;
    T* op = out.data() + static_cast<std::size_t>(nc) * th * tw;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) {
        T acc = 0;
        for (int dy = 0; dy < bh; ++dy)
          for (int dx = 0; dx < bw; ++dx) acc += ip[(y * bh + dy) * xs.w + x * bw + dx];
        op[y * tw + x] = acc * inv;
      }
  }
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, xs, th, tw, bh, bw, inv] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (int nc = 0; nc < xs.n * xs.c; ++nc) {
        T* gin = xn->grad.data() + static_cast<std::size_t>(nc) * xs.h * xs.w;
        const T* gout = on->grad.data() + static_cast<std::size_t>(nc) * th * tw;
        for (int y = 0; y < th; ++y)
          for (int x = 0; x < tw; ++x) {
            const T g = gout[y * tw + x] * inv;
            for (int dy = 0; dy < bh; ++dy)
              for (int dx = 0; dx < bw; ++dx) gin[(y * bh + dy) * xs.w + x * bw + dx] += g;
          }
      }
    });
  }
  return out;
}

// Elementwise a*x + b with scalar coefficients.
template <typename T>
Tensor<T> scale_shift(GradientTape<T>* tape, const Tensor<T>& input, T a, T b) {
  Tensor<T> out(input.shape());
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a * input.data()[i] + b;
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, a, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += a * on->grad[i];
    });
  }
  return out;
}

// Hadamard product of same-shape tensors.
template <typename T>
Tensor<T> mul(GradientTape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul shapes differ: " + a.shape().str() + " vs " +
                                b.shape().str());
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape && detail::tracked(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    tape->record([an, bn, on, n] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

// Multiply a single-channel gate (N,1,H,W) into every channel of x.
template <typename T>
Tensor<T> broadcast_mul(GradientTape<T>* tape, const Tensor<T>& gate, const Tensor<T>& x) {
  const Shape4 gs = gate.shape(), xs = x.shape();
  if (gs.c != 1 || gs.n != xs.n || gs.h != xs.h || gs.w != xs.w)
    throw std::invalid_argument("broadcast_mul gate " + gs.str() + " incompatible with " +
                                xs.str());
  Tensor<T> out(xs);
  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  for (int n = 0; n < xs.n; ++n) {
    const T* g = gate.data() + static_cast<std::size_t>(n) * plane;
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out.data()[off + i] = g[i] * x.data()[off + i];
    }
  }
  if (tape && detail::tracked(gate, x)) {
    out.set_requires_grad(true);
    auto gn = gate.node(), xn = x.node(), on = out.node();
    tape->record([gn, xn, on, xs, plane] {
      if (on->grad.empty()) return;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int n = 0; n < xs.n; ++n) {
          T* gg = gn->grad.data() + static_cast<std::size_t>(n) * plane;
          for (int c = 0; c < xs.c; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
              gg[i] += on->grad[off + i] * xn->value[off + i];
          }
        }
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (int n = 0; n < xs.n; ++n) {
          const T* g = gn->value.data() + static_cast<std::size_t>(n) * plane;
          for (int c = 0; c < xs.c; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) xn->grad[off + i] += on->grad[off + i] * g[i];
          }
        }
      }
    });
  }
  return out;
}

// Reduce to a 1x1x1x1 scalar by summation.
template <typename T>
Tensor<T> sum_all(GradientTape<T>* tape, const Tensor<T>& input) {
  T acc = 0;
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) acc += input.data()[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = input.node(), on = out.node();
    tape->record([xn, on, n] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      const T g = on->grad[0];
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += g;
    });
  }
  return out;
}

}  // namespace foci
