#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dscnet/runtime.hpp"
#include "dscnet/tensor.hpp"

namespace dscnet::ops {

// y = x w^T + b for x (N, D), w (O, D), b (O).
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  const std::size_t N = x.dim(0), D = x.dim(1), O = w.dim(0);
  if (b && b->size() != O) throw ShapeError("linear: bias length must be " + std::to_string(O));
  auto y = BasicTensor<T>::zeros({N, O});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(N); ++n)
    for (std::int64_t o = 0; o < static_cast<std::int64_t>(O); ++o) {
      double acc = b ? static_cast<double>((*b)[o]) : 0.0;
      const T* xr = x.ptr() + n * D;
      const T* wr = w.ptr() + o * D;
      for (std::size_t d = 0; d < D; ++d) acc += static_cast<double>(xr[d]) * static_cast<double>(wr[d]);
      y[n * O + o] = static_cast<T>(acc);
    }
  instrument::add_macs(static_cast<std::uint64_t>(N) * O * D);
  return y;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  return linear(x, w, &b);
}

template <typename T>
struct LinearGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x, const BasicTensor<T>& w) {
  const std::size_t N = x.dim(0), D = x.dim(1), O = w.dim(0);
  if (grad_out.shape() != Shape{N, O}) throw ShapeError("linear_backward: grad shape mismatch");
  LinearGrads<T> g{BasicTensor<T>::zeros(x.shape()), BasicTensor<T>::zeros(w.shape()), BasicTensor<T>::zeros({O})};
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(N); ++n)
    for (std::size_t d = 0; d < D; ++d) {
      double acc = 0.0;
      for (std::size_t o = 0; o < O; ++o) acc += static_cast<double>(grad_out[n * O + o]) * w[o * D + d];
      g.input[n * D + d] = static_cast<T>(acc);
    }
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < static_cast<std::int64_t>(O); ++o) {
    double db = 0.0;
    for (std::size_t n = 0; n < N; ++n) db += grad_out[n * O + o];
    g.bias[o] = static_cast<T>(db);
    for (std::size_t d = 0; d < D; ++d) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += static_cast<double>(grad_out[n * O + o]) * x[n * D + d];
      g.weight[o * D + d] = static_cast<T>(acc);
    }
  }
  return g;
}

}  // namespace dscnet::ops
