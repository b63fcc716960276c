// 2x2 average pooling and the two global pooling heads.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dscnet/tensor.hpp"

namespace dscnet::ops {

// Odd trailing rows/columns are dropped.
template <typename T>
BasicTensor<T> avg_pool2x2(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("avg_pool2x2: expected NCHW input, got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < 2 || W < 2) throw ShapeError("avg_pool2x2: spatial dims must be >= 2, got " + to_string(x.shape()));
  const std::size_t OH = H / 2, OW = W / 2;
  auto y = BasicTensor<T>::zeros({N, C, OH, OW});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* xp = x.ptr() + nc * H * W;
    T* yp = y.ptr() + nc * OH * OW;
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        const std::size_t k = 2 * oh * W + 2 * ow;
        const double s = static_cast<double>(xp[k]) + xp[k + 1] + xp[k + W] + xp[k + W + 1];
        yp[oh * OW + ow] = static_cast<T>(0.25 * s);
      }
  }
  return y;
}

template <typename T>
BasicTensor<T> avg_pool2x2_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  const std::size_t N = input_shape.at(0), C = input_shape.at(1), H = input_shape.at(2), W = input_shape.at(3);
  const std::size_t OH = H / 2, OW = W / 2;
  if (grad_out.shape() != Shape{N, C, OH, OW}) throw ShapeError("avg_pool2x2_backward: grad shape mismatch");
  auto g = BasicTensor<T>::zeros(input_shape);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* gp = grad_out.ptr() + nc * OH * OW;
    T* dp = g.ptr() + nc * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        const T v = static_cast<T>(0.25 * gp[oh * OW + ow]);
        const std::size_t k = 2 * oh * W + 2 * ow;
        dp[k] = dp[k + 1] = dp[k + W] = dp[k + W + 1] = v;
      }
  }
  return g;
}

enum class GlobalPoolMode {
  kGap,   // mean over (H, W)
  kPann,  // mean over W, then mean + max over H
};

inline GlobalPoolMode parse_pool_mode(std::string_view s) {
  if (s == "gap") return GlobalPoolMode::kGap;
  if (s == "pann") return GlobalPoolMode::kPann;
  throw std::invalid_argument("unknown global pool mode '" + std::string(s) + "'");
}

inline const char* pool_mode_name(GlobalPoolMode m) { return m == GlobalPoolMode::kGap ? "gap" : "pann"; }

// (N, C, H, W) -> (N, C). In pann mode `argmax` receives the selected time
// index per (n, c) for the backward pass.
template <typename T>
BasicTensor<T> global_pool(const BasicTensor<T>& x, GlobalPoolMode mode, std::vector<std::size_t>* argmax = nullptr) {
  if (x.rank() != 4) throw ShapeError("global_pool: expected NCHW input, got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto y = BasicTensor<T>::zeros({N, C});
  if (argmax) argmax->assign(N * C, 0);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* xp = x.ptr() + nc * H * W;
    if (mode == GlobalPoolMode::kGap) {
      double s = 0.0;
      for (std::size_t i = 0; i < H * W; ++i) s += xp[i];
      y[nc] = static_cast<T>(s / static_cast<double>(H * W));
      continue;
    }
    double total = 0.0, best = 0.0;
    std::size_t best_h = 0;
    for (std::size_t h = 0; h < H; ++h) {
      double s = 0.0;
      for (std::size_t w = 0; w < W; ++w) s += xp[h * W + w];
      const double m = s / static_cast<double>(W);
      total += m;
      if (h == 0 || m > best) {
        best = m;
        best_h = h;
      }
    }
    y[nc] = static_cast<T>(total / static_cast<double>(H) + best);
    if (argmax) (*argmax)[nc] = best_h;
  }
  return y;
}

template <typename T>
BasicTensor<T> global_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape, GlobalPoolMode mode,
                                    const std::vector<std::size_t>& argmax = {}) {
  const std::size_t N = input_shape.at(0), C = input_shape.at(1), H = input_shape.at(2), W = input_shape.at(3);
  if (grad_out.shape() != Shape{N, C}) throw ShapeError("global_pool_backward: grad shape mismatch");
  if (mode == GlobalPoolMode::kPann && argmax.size() != N * C)
    throw ShapeError("global_pool_backward: pann mode needs the forward argmax");
  auto g = BasicTensor<T>::zeros(input_shape);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double dy = grad_out[nc];
    T* dp = g.ptr() + nc * H * W;
    const T base = static_cast<T>(dy / static_cast<double>(H * W));
    for (std::size_t i = 0; i < H * W; ++i) dp[i] = base;
    if (mode == GlobalPoolMode::kPann) {
      const T extra = static_cast<T>(dy / static_cast<double>(W));
      for (std::size_t w = 0; w < W; ++w) dp[argmax[nc] * W + w] += extra;
    }
  }
  return g;
}

}  // namespace dscnet::ops
