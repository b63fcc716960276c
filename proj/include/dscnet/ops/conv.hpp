// Grouped 2-D convolution (dense, grouped, depthwise with multiplier) and
// its gradients. Direct loops, double accumulators.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dscnet/runtime.hpp"
#include "dscnet/tensor.hpp"

namespace dscnet::ops {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t groups = 1;

  static ConvSpec dense(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride = 1,
                        std::size_t pad = 0) {
    return {cin, cout, k, k, stride, stride, pad, pad, 1};
  }
  // groups == in_channels, out = multiplier * in.
  static ConvSpec depthwise(std::size_t cin, std::size_t multiplier, std::size_t k, std::size_t pad) {
    return {cin, cin * multiplier, k, k, 1, 1, pad, pad, cin};
  }
  static ConvSpec pointwise(std::size_t cin, std::size_t cout) { return dense(cin, cout, 1); }

  bool is_depthwise() const { return groups == in_channels; }
  std::size_t depthwise_multiplier() const { return is_depthwise() ? out_channels / in_channels : 0; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }

  Shape weight_shape() const { return {out_channels, in_per_group(), kernel_h, kernel_w}; }

  std::size_t param_count(bool with_bias = true) const {
    return out_channels * in_per_group() * kernel_h * kernel_w + (with_bias ? out_channels : 0);
  }

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || groups == 0 || kernel_h == 0 || kernel_w == 0 ||
        stride_h == 0 || stride_w == 0)
      throw ShapeError("conv spec: channels, groups, kernel and stride must be >= 1");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      throw ShapeError("conv spec: channels (" + std::to_string(in_channels) + "->" +
                       std::to_string(out_channels) + ") not divisible by groups " + std::to_string(groups));
  }

  std::size_t out_h(std::size_t h) const { return out_extent(h, kernel_h, stride_h, pad_h); }
  std::size_t out_w(std::size_t w) const { return out_extent(w, kernel_w, stride_w, pad_w); }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 4 || in[1] != in_channels)
      throw ShapeError("conv2d: input " + to_string(in) + " does not have " + std::to_string(in_channels) +
                       " channels in NCHW layout");
    return {in[0], out_channels, out_h(in[2]), out_w(in[3])};
  }

  std::uint64_t macs(const Shape& in) const {
    auto o = output_shape(in);
    return static_cast<std::uint64_t>(o[0]) * o[1] * o[2] * o[3] * in_per_group() * kernel_h * kernel_w;
  }

 private:
  static std::size_t out_extent(std::size_t n, std::size_t k, std::size_t s, std::size_t p) {
    if (n + 2 * p < k)
      throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                       std::to_string(n + 2 * p));
    return (n + 2 * p - k) / s + 1;
  }
};

namespace detail {
// Output columns [lo, hi) whose input column ow*s + k - p lies in [0, n).
inline void valid_range(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t out,
                        std::int64_t& lo, std::int64_t& hi) {
  std::int64_t off = k - p;
  lo = off >= 0 ? 0 : (-off + s - 1) / s;
  hi = (n - 1 - off) >= 0 ? (n - 1 - off) / s + 1 : 0;
  if (hi > out) hi = out;
  if (lo > hi) lo = hi;
}

template <typename T>
void check_conv_args(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b,
                     const ConvSpec& spec) {
  spec.validate();
  spec.output_shape(x.shape());
  if (w.shape() != spec.weight_shape())
    throw ShapeError("conv2d: weight " + to_string(w.shape()) + " expected " + to_string(spec.weight_shape()));
  if (b && b->size() != spec.out_channels)
    throw ShapeError("conv2d: bias length " + std::to_string(b->size()) + " expected " +
                     std::to_string(spec.out_channels));
}
}  // namespace detail

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b,
                      const ConvSpec& spec) {
  detail::check_conv_args(x, w, b, spec);
  const auto out_shape = spec.output_shape(x.shape());
  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t C_out = spec.out_channels, OH = out_shape[2], OW = out_shape[3];
  const std::int64_t cin_g = spec.in_per_group(), cout_g = spec.out_per_group();
  const std::int64_t KH = spec.kernel_h, KW = spec.kernel_w;
  const std::int64_t SH = spec.stride_h, SW = spec.stride_w, PH = spec.pad_h, PW = spec.pad_w;
  const std::int64_t C_in = spec.in_channels;

  std::vector<T> out(numel(out_shape));
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  std::uint64_t taps = 0;
  const bool plain_1x1 = KH == 1 && KW == 1 && SH == 1 && SW == 1 && PH == 0 && PW == 0;

#pragma omp parallel for collapse(2) schedule(static) reduction(+ : taps)
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t co = 0; co < C_out; ++co) {
      std::vector<double> acc(static_cast<std::size_t>(OH * OW), b ? static_cast<double>((*b)[co]) : 0.0);
      const std::int64_t g = co / cout_g;
      for (std::int64_t cig = 0; cig < cin_g; ++cig) {
        const T* xc = xp + (n * C_in + g * cin_g + cig) * H * W;
        if (plain_1x1) {
          const double wv = wp[co * cin_g + cig];
          for (std::int64_t i = 0; i < H * W; ++i) acc[i] += wv * static_cast<double>(xc[i]);
          taps += static_cast<std::uint64_t>(H * W);
          continue;
        }
        for (std::int64_t kh = 0; kh < KH; ++kh) {
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            const double wv = wp[((co * cin_g + cig) * KH + kh) * KW + kw];
            std::int64_t lo, hi;
            detail::valid_range(W, kw, SW, PW, OW, lo, hi);
            for (std::int64_t oh = 0; oh < OH; ++oh) {
              const std::int64_t ih = oh * SH + kh - PH;
              // padded taps multiply zeros; they are counted, not computed
              taps += static_cast<std::uint64_t>(OW);
              if (ih < 0 || ih >= H) continue;
              const std::int64_t base = ih * W + kw - PW;
              double* ar = acc.data() + oh * OW;
              for (std::int64_t ow = lo; ow < hi; ++ow) ar[ow] += wv * static_cast<double>(xc[base + ow * SW]);
            }
          }
        }
      }
      T* op = out.data() + (n * C_out + co) * OH * OW;
      for (std::int64_t i = 0; i < OH * OW; ++i) op[i] = static_cast<T>(acc[i]);
    }
  }
  instrument::add_macs(taps);
  return BasicTensor<T>(out_shape, std::move(out));
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      const ConvSpec& spec) {
  return conv2d(x, w, &b, spec);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, std::nullptr_t, const ConvSpec& spec) {
  return conv2d(x, w, static_cast<const BasicTensor<T>*>(nullptr), spec);
}

// 1x1 convolution, C_in -> C_out.
template <typename T>
BasicTensor<T> pointwise(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b) {
  if (w.rank() != 4 || w.dim(2) != 1 || w.dim(3) != 1)
    throw ShapeError("pointwise: weight must be (C_out, C_in, 1, 1), got " + to_string(w.shape()));
  return conv2d(x, w, b, ConvSpec::pointwise(w.dim(1), w.dim(0)));
}

template <typename T>
BasicTensor<T> pointwise(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  return pointwise(x, w, &b);
}

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;  // empty when the conv has no bias
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x, const BasicTensor<T>& w,
                             bool has_bias, const ConvSpec& spec) {
  detail::check_conv_args<T>(x, w, nullptr, spec);
  const auto out_shape = spec.output_shape(x.shape());
  if (grad_out.shape() != out_shape)
    throw ShapeError("conv2d_backward: grad " + to_string(grad_out.shape()) + " expected " + to_string(out_shape));

  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t C_in = spec.in_channels, C_out = spec.out_channels, OH = out_shape[2], OW = out_shape[3];
  const std::int64_t cin_g = spec.in_per_group(), cout_g = spec.out_per_group();
  const std::int64_t KH = spec.kernel_h, KW = spec.kernel_w;
  const std::int64_t SH = spec.stride_h, SW = spec.stride_w, PH = spec.pad_h, PW = spec.pad_w;
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  const T* gp = grad_out.ptr();

  const bool plain_1x1 = KH == 1 && KW == 1 && SH == 1 && SW == 1 && PH == 0 && PW == 0;

  std::vector<T> dx(x.size());
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t ci = 0; ci < C_in; ++ci) {
      std::vector<double> acc(static_cast<std::size_t>(H * W), 0.0);
      const std::int64_t g = ci / cin_g, cig = ci % cin_g;
      for (std::int64_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
        const T* gc = gp + (n * C_out + co) * OH * OW;
        if (plain_1x1) {
          const double wv = wp[co * cin_g + cig];
          for (std::int64_t i = 0; i < H * W; ++i) acc[i] += wv * static_cast<double>(gc[i]);
          continue;
        }
        for (std::int64_t kh = 0; kh < KH; ++kh) {
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            const double wv = wp[((co * cin_g + cig) * KH + kh) * KW + kw];
            std::int64_t lo, hi;
            detail::valid_range(W, kw, SW, PW, OW, lo, hi);
            for (std::int64_t oh = 0; oh < OH; ++oh) {
              const std::int64_t ih = oh * SH + kh - PH;
              if (ih < 0 || ih >= H) continue;
              const std::int64_t base = ih * W + kw - PW;
              const T* gr = gc + oh * OW;
              for (std::int64_t ow = lo; ow < hi; ++ow) acc[base + ow * SW] += wv * static_cast<double>(gr[ow]);
            }
          }
        }
      }
      T* dp = dx.data() + (n * C_in + ci) * H * W;
      for (std::int64_t i = 0; i < H * W; ++i) dp[i] = static_cast<T>(acc[i]);
    }
  }

  std::vector<T> dw(w.size());
  std::vector<T> db(has_bias ? C_out : 0);
#pragma omp parallel for schedule(static)
  for (std::int64_t co = 0; co < C_out; ++co) {
    const std::int64_t g = co / cout_g;
    for (std::int64_t cig = 0; cig < cin_g; ++cig) {
      for (std::int64_t kh = 0; kh < KH; ++kh) {
        for (std::int64_t kw = 0; kw < KW; ++kw) {
          std::int64_t lo, hi;
          detail::valid_range(W, kw, SW, PW, OW, lo, hi);
          double acc = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const T* xc = xp + (n * C_in + g * cin_g + cig) * H * W;
            const T* gc = gp + (n * C_out + co) * OH * OW;
            if (plain_1x1) {
              for (std::int64_t i = 0; i < H * W; ++i) acc += static_cast<double>(gc[i]) * static_cast<double>(xc[i]);
              continue;
            }
            for (std::int64_t oh = 0; oh < OH; ++oh) {
              const std::int64_t ih = oh * SH + kh - PH;
              if (ih < 0 || ih >= H) continue;
              const std::int64_t base = ih * W + kw - PW;
              const T* gr = gc + oh * OW;
              for (std::int64_t ow = lo; ow < hi; ++ow)
                acc += static_cast<double>(gr[ow]) * static_cast<double>(xc[base + ow * SW]);
            }
          }
          dw[((co * cin_g + cig) * KH + kh) * KW + kw] = static_cast<T>(acc);
        }
      }
    }
    if (has_bias) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* gc = gp + (n * C_out + co) * OH * OW;
        for (std::int64_t i = 0; i < OH * OW; ++i) acc += static_cast<double>(gc[i]);
      }
      db[co] = static_cast<T>(acc);
    }
  }

  ConvGrads<T> r{BasicTensor<T>(x.shape(), std::move(dx)), BasicTensor<T>(w.shape(), std::move(dw)), {}};
  if (has_bias) r.bias = BasicTensor<T>({static_cast<std::size_t>(C_out)}, std::move(db));
  return r;
}

}  // namespace dscnet::ops
