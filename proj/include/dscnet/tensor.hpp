// Dense rank<=4 tensor, row-major, (N, C, H, W) convention where H is time
// frames and W is frequency bins.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dscnet {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape));
}

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (numel(shape_) != data_.size())
      throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                       " values, got " + std::to_string(data_.size()));
  }

  static BasicTensor zeros(Shape shape) { return full(std::move(shape), T{0}); }

  static BasicTensor full(Shape shape, T value) {
    validate_shape(shape);
    auto n = numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value));
  }

  static BasicTensor from_values(Shape shape, std::span<const T> values) {
    return BasicTensor(std::move(shape), std::vector<T>(values.begin(), values.end()));
  }
  static BasicTensor from_values(Shape shape, std::initializer_list<T> values) {
    return BasicTensor(std::move(shape), std::vector<T>(values));
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; missing trailing indices are not allowed.
  template <typename... I>
  T& at(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  const T& at(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  // Same data, new shape with equal element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const BasicTensor& o) const { return shape_ == o.shape_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for " + to_string(shape_));
    std::size_t off = 0, axis = 0;
    for (auto i : idx) {
      if (i >= shape_[axis]) throw std::out_of_range("index out of range for " + to_string(shape_));
      off = off * shape_[axis++] + i;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

// --- elementwise --------------------------------------------------------

namespace detail {
template <typename T, typename F>
BasicTensor<T> zip(const BasicTensor<T>& a, const BasicTensor<T>& b, F f, const char* what) {
  if (a.size() == 1 && b.size() != 1) return zip(BasicTensor<T>::full(b.shape(), a[0]), b, f, what);
  if (b.size() == 1 && a.size() != 1) return zip(a, BasicTensor<T>::full(a.shape(), b[0]), f, what);
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return BasicTensor<T>(a.shape(), std::move(out));
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim || s.size() == 1) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

template <typename T, typename Init, typename Step, typename Finish>
BasicTensor<T> reduce(const BasicTensor<T>& x, std::size_t axis, bool keepdim, Init init, Step step,
                      Finish finish) {
  auto sp = split_axis(x.shape(), axis);
  std::vector<T> out(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto acc = init(x[o * sp.extent * sp.inner + i]);
      for (std::size_t k = 1; k < sp.extent; ++k) acc = step(acc, x[(o * sp.extent + k) * sp.inner + i]);
      out[o * sp.inner + i] = static_cast<T>(finish(acc, sp.extent));
    }
  return BasicTensor<T>(reduced_shape(x.shape(), axis, keepdim), std::move(out));
}
}  // namespace detail

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x * y; }, "mul");
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  auto out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

// In-place a += b (equal shapes).
template <typename T>
void accumulate(BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!a.same_shape(b))
    throw ShapeError("accumulate: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// Reductions accumulate in double.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis, bool keepdim = false) {
  return detail::reduce(
      x, axis, keepdim, [](T v) { return static_cast<double>(v); },
      [](double a, T v) { return a + static_cast<double>(v); }, [](double a, std::size_t) { return a; });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis, bool keepdim = false) {
  return detail::reduce(
      x, axis, keepdim, [](T v) { return static_cast<double>(v); },
      [](double a, T v) { return a + static_cast<double>(v); },
      [](double a, std::size_t n) { return a / static_cast<double>(n); });
}

template <typename T>
BasicTensor<T> max_reduce(const BasicTensor<T>& x, std::size_t axis, bool keepdim = false) {
  return detail::reduce(
      x, axis, keepdim, [](T v) { return v; }, [](T a, T v) { return std::max(a, v); },
      [](T a, std::size_t) { return a; });
}

template <typename T>
double sum_all(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
double mean_all(const BasicTensor<T>& x) {
  return sum_all(x) / static_cast<double>(x.size());
}

template <typename T>
bool all_finite(const BasicTensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace dscnet
