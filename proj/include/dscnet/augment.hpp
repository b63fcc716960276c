// Training-time augmentations: SpecAugment stripe dropping, mixup, and
// speed perturbation of raw waveforms.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dscnet/frontend.hpp"
#include "dscnet/ops/drop_path.hpp"
#include "dscnet/tensor.hpp"

namespace dscnet::augment {

struct AugmentConfig {
  std::size_t max_time_width = 64;  // frames
  std::size_t max_freq_width = 8;   // bins
  std::size_t stripes_max = 2;      // per axis
  double mixup_alpha = 1.0;         // Beta(alpha, alpha)
  double speed_lo = 0.5;
  double speed_hi = 1.5;
  std::uint64_t seed = 0;

  static AugmentConfig cnn() { return {}; }
  // 224 mel bins reduced to 56 by the stem, hence wider frequency stripes.
  static AugmentConfig convnext() {
    AugmentConfig c;
    c.max_freq_width = 28;
    return c;
  }

  void validate() const {
    if (!(mixup_alpha > 0.0)) throw std::invalid_argument("augment: mixup alpha must be > 0");
    if (!(speed_lo > 0.0 && speed_lo <= speed_hi)) throw std::invalid_argument("augment: need 0 < speed_lo <= speed_hi");
  }
};

struct Stripe {
  std::size_t sample;
  bool time_axis;  // false: frequency
  std::size_t start;
  std::size_t width;
};

// Zeroes up to `stripes_max` random time stripes and frequency stripes per
// sample of an (N, 1, frames, bins) batch. Widths exceeding the axis are
// clamped to it.
template <typename T>
BasicTensor<T> spec_augment(const BasicTensor<T>& x, const AugmentConfig& cfg, Rng& rng,
                            std::vector<Stripe>* log = nullptr) {
  if (x.rank() != 4) throw ShapeError("spec_augment: expected (N, 1, frames, bins)");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto y = x;
  std::uniform_int_distribution<std::size_t> count(0, cfg.stripes_max);
  auto drop = [&](std::size_t n, bool time_axis) {
    const std::size_t extent = time_axis ? H : W;
    const std::size_t max_w = std::min(time_axis ? cfg.max_time_width : cfg.max_freq_width, extent);
    const std::size_t stripes = count(rng);
    for (std::size_t s = 0; s < stripes; ++s) {
      const std::size_t width = std::uniform_int_distribution<std::size_t>(0, max_w)(rng);
      const std::size_t start = std::uniform_int_distribution<std::size_t>(0, extent - width)(rng);
      if (log) log->push_back({n, time_axis, start, width});
      for (std::size_t c = 0; c < C; ++c) {
        T* p = y.ptr() + (n * C + c) * H * W;
        for (std::size_t k = start; k < start + width; ++k) {
          if (time_axis) {
            std::fill_n(p + k * W, W, T{0});
          } else {
            for (std::size_t h = 0; h < H; ++h) p[h * W + k] = T{0};
          }
        }
      }
    }
  };
  for (std::size_t n = 0; n < N; ++n) {
    drop(n, true);
    drop(n, false);
  }
  return y;
}

inline double sample_beta(double alpha, double beta, Rng& rng) {
  std::gamma_distribution<double> ga(alpha, 1.0), gb(beta, 1.0);
  const double a = ga(rng), b = gb(rng);
  return a + b > 0.0 ? a / (a + b) : 0.5;
}

template <typename T>
struct Mixed {
  BasicTensor<T> x;
  BasicTensor<T> y;
  double lambda;
};

// lambda * (x1, y1) + (1 - lambda) * (x2, y2)
template <typename T>
Mixed<T> mix(const BasicTensor<T>& x1, const BasicTensor<T>& y1, const BasicTensor<T>& x2, const BasicTensor<T>& y2,
             double lambda) {
  if (!x1.same_shape(x2) || !y1.same_shape(y2)) throw ShapeError("mixup: sample or label shapes differ");
  auto combine = [lambda](const BasicTensor<T>& a, const BasicTensor<T>& b) {
    auto out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<T>(lambda * static_cast<double>(a[i]) + (1.0 - lambda) * static_cast<double>(b[i]));
    return out;
  };
  auto y = combine(y1, y2);
  for (auto& v : y.data()) v = std::clamp(v, T{0}, T{1});
  return {combine(x1, x2), std::move(y), lambda};
}

template <typename T>
Mixed<T> mixup(const BasicTensor<T>& x1, const BasicTensor<T>& y1, const BasicTensor<T>& x2, const BasicTensor<T>& y2,
               double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup: alpha must be > 0");
  return mix(x1, y1, x2, y2, sample_beta(alpha, alpha, rng));
}

// Nearest-neighbour time stretch to round(L / rate) samples (rate > 1 is
// faster and shorter), then a random crop or zero pad split between start
// and end that restores the original length.
inline frontend::Waveform speed_perturb(const frontend::Waveform& w, double rate, Rng& rng) {
  if (!(rate > 0.0)) throw std::invalid_argument("speed_perturb: rate must be > 0");
  const std::size_t L = w.samples.size();
  if (L == 0) return w;
  const auto stretched_len = static_cast<std::size_t>(std::max<long long>(1, std::llround(L / rate)));
  std::vector<float> stretched(stretched_len);
  for (std::size_t i = 0; i < stretched_len; ++i)
    stretched[i] = w.samples[std::min(static_cast<std::size_t>(std::floor(static_cast<double>(i) * rate)), L - 1)];

  frontend::Waveform out{std::vector<float>(L, 0.0f), w.sample_rate};
  if (stretched_len >= L) {
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, stretched_len - L)(rng);
    std::copy_n(stretched.begin() + static_cast<std::ptrdiff_t>(start), L, out.samples.begin());
  } else {
    const std::size_t left = std::uniform_int_distribution<std::size_t>(0, L - stretched_len)(rng);
    std::copy(stretched.begin(), stretched.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(left));
  }
  return out;
}

// Rate drawn uniformly from [speed_lo, speed_hi].
inline frontend::Waveform speed_perturb(const frontend::Waveform& w, const AugmentConfig& cfg, Rng& rng,
                                        double* rate_out = nullptr) {
  cfg.validate();
  const double r = std::uniform_real_distribution<double>(cfg.speed_lo, cfg.speed_hi)(rng);
  if (rate_out) *rate_out = r;
  return speed_perturb(w, r, rng);
}

}  // namespace dscnet::augment
