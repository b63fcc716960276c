// Batch normalization (per-channel, running statistics) and ConvNeXt-style
// layer normalization over the channel axis at every spatial position.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dscnet/tensor.hpp"

namespace dscnet::ops {

template <typename T>
struct NormParams {
  BasicTensor<T> scale;         // gamma
  BasicTensor<T> shift;         // beta
  BasicTensor<T> running_mean;  // mu
  BasicTensor<T> running_var;   // sigma^2
  double eps = 1e-5;
  double momentum = 0.1;

  static NormParams identity(std::size_t channels, double eps = 1e-5) {
    return {BasicTensor<T>::full({channels}, T{1}), BasicTensor<T>::zeros({channels}),
            BasicTensor<T>::zeros({channels}), BasicTensor<T>::full({channels}, T{1}), eps, 0.1};
  }

  std::size_t channels() const { return scale.size(); }

  void validate() const {
    const auto c = scale.size();
    if (shift.size() != c || running_mean.size() != c || running_var.size() != c)
      throw ShapeError("norm params: all vectors must have " + std::to_string(c) + " entries");
    if (!(eps > 0.0)) throw std::invalid_argument("norm params: eps must be > 0");
    for (auto v : running_var.data())
      if (v < T{0}) throw std::invalid_argument("norm params: running variance must be >= 0");
  }
};

// Statistics a normalization forward pass keeps for its backward pass.
struct NormCache {
  std::vector<double> mean;     // per normalized group
  std::vector<double> inv_std;  // per normalized group
  bool batch_stats = false;
};

// Normalizes over every axis except `axis` (1 = channels, 3 = frequency
// bins for the input "mel" normalization). Training mode uses batch
// statistics and updates the running ones in place.
template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& x, NormParams<T>& p, bool training, NormCache* cache = nullptr,
                            std::size_t axis = 1) {
  p.validate();
  auto sp = dscnet::detail::split_axis(x.shape(), axis);
  if (sp.extent != p.channels())
    throw ShapeError("batch_norm2d: input has " + std::to_string(sp.extent) + " channels on axis " +
                     std::to_string(axis) + ", params have " + std::to_string(p.channels()));
  const std::size_t C = sp.extent;
  const double count = static_cast<double>(sp.outer * sp.inner);
  std::vector<double> mean(C), inv_std(C);

  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) s += x[(o * C + c) * sp.inner + i];
      mu = s / count;
      double ss = 0.0;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          double d = x[(o * C + c) * sp.inner + i] - mu;
          ss += d * d;
        }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      p.running_mean[c] = static_cast<T>((1 - p.momentum) * p.running_mean[c] + p.momentum * mu);
      p.running_var[c] = static_cast<T>((1 - p.momentum) * p.running_var[c] + p.momentum * unbiased);
    } else {
      mu = p.running_mean[c];
      var = p.running_var[c];
    }
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + p.eps);
  }

  BasicTensor<T> y = BasicTensor<T>::zeros(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < C; ++c) {
      const double a = p.scale[c] * inv_std[c];
      const double b = p.shift[c] - mean[c] * a;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto k = (o * C + c) * sp.inner + i;
        y[k] = static_cast<T>(x[k] * a + b);
      }
    }
  if (cache) *cache = NormCache{std::move(mean), std::move(inv_std), training};
  return y;
}

template <typename T>
struct NormGrads {
  BasicTensor<T> input;
  BasicTensor<T> scale;
  BasicTensor<T> shift;
};

template <typename T>
NormGrads<T> batch_norm2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                                   const NormParams<T>& p, const NormCache& cache, std::size_t axis = 1) {
  if (!grad_out.same_shape(x)) throw ShapeError("batch_norm2d_backward: grad/input shape mismatch");
  auto sp = dscnet::detail::split_axis(x.shape(), axis);
  const std::size_t C = sp.extent;
  if (cache.mean.size() != C) throw ShapeError("batch_norm2d_backward: cache does not match input");
  const double count = static_cast<double>(sp.outer * sp.inner);

  NormGrads<T> g{BasicTensor<T>::zeros(x.shape()), BasicTensor<T>::zeros({C}), BasicTensor<T>::zeros({C})};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto k = (o * C + c) * sp.inner + i;
        const double xhat = (x[k] - cache.mean[c]) * cache.inv_std[c];
        sum_dy += grad_out[k];
        sum_dy_xhat += grad_out[k] * xhat;
      }
    g.scale[c] = static_cast<T>(sum_dy_xhat);
    g.shift[c] = static_cast<T>(sum_dy);
    const double a = p.scale[c] * cache.inv_std[c];
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto k = (o * C + c) * sp.inner + i;
        if (cache.batch_stats) {
          const double xhat = (x[k] - cache.mean[c]) * cache.inv_std[c];
          g.input[k] = static_cast<T>(a / count * (count * grad_out[k] - sum_dy - xhat * sum_dy_xhat));
        } else {
          g.input[k] = static_cast<T>(a * grad_out[k]);
        }
      }
  }
  return g;
}

// Normalizes the channel vector (axis 1) at each (n, h, w) position, using
// the population variance. Accepts (N, C) or (N, C, H, W).
template <typename T>
BasicTensor<T> layer_norm_channels(const BasicTensor<T>& x, const BasicTensor<T>& scale, const BasicTensor<T>& shift,
                                   double eps = 1e-6, NormCache* cache = nullptr) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("layer_norm_channels: expected (N,C) or (N,C,H,W)");
  auto sp = dscnet::detail::split_axis(x.shape(), 1);
  const std::size_t C = sp.extent;
  if (scale.size() != C || shift.size() != C)
    throw ShapeError("layer_norm_channels: affine length must equal channel count " + std::to_string(C));

  BasicTensor<T> y = BasicTensor<T>::zeros(x.shape());
  std::vector<double> mean(sp.outer * sp.inner), inv_std(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += x[(o * C + c) * sp.inner + i];
      const double mu = s / static_cast<double>(C);
      double ss = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        double d = x[(o * C + c) * sp.inner + i] - mu;
        ss += d * d;
      }
      const double is = 1.0 / std::sqrt(ss / static_cast<double>(C) + eps);
      for (std::size_t c = 0; c < C; ++c) {
        auto k = (o * C + c) * sp.inner + i;
        y[k] = static_cast<T>((x[k] - mu) * is * scale[c] + shift[c]);
      }
      mean[o * sp.inner + i] = mu;
      inv_std[o * sp.inner + i] = is;
    }
  if (cache) *cache = NormCache{std::move(mean), std::move(inv_std), true};
  return y;
}

template <typename T>
NormGrads<T> layer_norm_channels_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                                          const BasicTensor<T>& scale, const NormCache& cache) {
  if (!grad_out.same_shape(x)) throw ShapeError("layer_norm_channels_backward: grad/input shape mismatch");
  auto sp = dscnet::detail::split_axis(x.shape(), 1);
  const std::size_t C = sp.extent;
  if (cache.mean.size() != sp.outer * sp.inner)
    throw ShapeError("layer_norm_channels_backward: cache does not match input");
  NormGrads<T> g{BasicTensor<T>::zeros(x.shape()), BasicTensor<T>::zeros({C}), BasicTensor<T>::zeros({C})};
  std::vector<double> dscale(C, 0.0), dshift(C, 0.0);
  const double Cd = static_cast<double>(C);

  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const double mu = cache.mean[o * sp.inner + i], is = cache.inv_std[o * sp.inner + i];
      double sum_d = 0.0, sum_d_xhat = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        auto k = (o * C + c) * sp.inner + i;
        const double xhat = (x[k] - mu) * is;
        const double d = grad_out[k] * static_cast<double>(scale[c]);
        sum_d += d;
        sum_d_xhat += d * xhat;
        dscale[c] += grad_out[k] * xhat;
        dshift[c] += grad_out[k];
      }
      for (std::size_t c = 0; c < C; ++c) {
        auto k = (o * C + c) * sp.inner + i;
        const double xhat = (x[k] - mu) * is;
        const double d = grad_out[k] * static_cast<double>(scale[c]);
        g.input[k] = static_cast<T>(is / Cd * (Cd * d - sum_d - xhat * sum_d_xhat));
      }
    }
  for (std::size_t c = 0; c < C; ++c) {
    g.scale[c] = static_cast<T>(dscale[c]);
    g.shift[c] = static_cast<T>(dshift[c]);
  }
  return g;
}

}  // namespace dscnet::ops
