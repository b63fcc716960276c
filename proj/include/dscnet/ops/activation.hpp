#pragma once

#include <cmath>
#include <numbers>

#include "dscnet/tensor.hpp"

namespace dscnet::ops {

namespace detail {
template <typename T, typename F>
BasicTensor<T> map(const BasicTensor<T>& x, F f) {
  auto y = x;
  for (auto& v : y.data()) v = static_cast<T>(f(static_cast<double>(v)));
  return y;
}

template <typename T, typename F>
BasicTensor<T> map_grad(const BasicTensor<T>& grad_out, const BasicTensor<T>& x, F dfdx, const char* what) {
  if (!grad_out.same_shape(x)) throw ShapeError(std::string(what) + ": grad/input shape mismatch");
  auto g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = static_cast<T>(static_cast<double>(grad_out[i]) * dfdx(static_cast<double>(x[i])));
  return g;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); }

inline double gelu_grad(double v) {
  const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + v * pdf;
}

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace detail

// Exact GELU, x * Phi(x).
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  return detail::map(x, detail::gelu);
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return detail::map(x, [](double v) { return v > 0 ? v : 0.0; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return detail::map(x, detail::sigmoid);
}

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x) {
  return detail::map_grad(grad_out, x, detail::gelu_grad, "gelu_backward");
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x) {
  return detail::map_grad(grad_out, x, [](double v) { return v > 0 ? 1.0 : 0.0; }, "relu_backward");
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x) {
  return detail::map_grad(
      grad_out, x,
      [](double v) {
        const double s = detail::sigmoid(v);
        return s * (1.0 - s);
      },
      "sigmoid_backward");
}

}  // namespace dscnet::ops
