// Waveform ingestion and log-mel spectrogram extraction.
//
// Operating point: 32 kHz, 1024-point periodic Hann window, hop 320,
// 50 Hz - 14 kHz HTK mel filterbank, power spectrum, 10*log10 with a 1e-10
// floor. 64 bins for the CNN family, 224 for ConvNeXt.
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dscnet/tensor.hpp"

namespace dscnet::frontend {

class AudioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Waveform {
  std::vector<float> samples;
  std::uint32_t sample_rate = 32000;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct MelConfig {
  std::uint32_t sample_rate = 32000;
  std::size_t n_fft = 1024;
  std::size_t hop = 320;
  std::size_t n_mels = 64;
  double f_min = 50.0;
  double f_max = 14000.0;
  double log_floor = 1e-10;

  static MelConfig cnn() { return {}; }
  static MelConfig convnext() {
    MelConfig c;
    c.n_mels = 224;
    return c;
  }

  void validate() const {
    if (n_mels < 1) throw std::invalid_argument("mel config: n_mels must be >= 1");
    if (hop < 1) throw std::invalid_argument("mel config: hop must be >= 1");
    if (n_fft < 2) throw std::invalid_argument("mel config: n_fft must be >= 2");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
      throw std::invalid_argument("mel config: need 0 <= f_min < f_max <= sample_rate/2");
    if (!(log_floor > 0.0)) throw std::invalid_argument("mel config: log floor must be > 0");
  }

  std::size_t frames_for(std::size_t num_samples) const {
    return 1 + (num_samples + 2 * (n_fft / 2) - n_fft) / hop;
  }
};

// --- WAV ------------------------------------------------------------------

namespace detail {
inline std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline void put32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
}  // namespace detail

// PCM 16-bit integer or 32-bit float WAV, mono or stereo (averaged).
inline Waveform decode_wav(const std::vector<unsigned char>& bytes, const std::string& what = "wav") {
  auto fail = [&](const std::string& m) -> void { throw AudioError(what + ": " + m); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = detail::le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + len > bytes.size()) fail("truncated fmt chunk");
      format = detail::le16(bytes.data() + body);
      channels = detail::le16(bytes.data() + body + 2);
      rate = detail::le32(bytes.data() + body + 4);
      bits = detail::le16(bytes.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = detail::le16(bytes.data() + body + 24);  // extensible
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (body + len > bytes.size()) fail("truncated data chunk");
      data = bytes.data() + body;
      data_len = len;
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) fail("missing fmt chunk");
  if (!data) fail("missing data chunk");
  if (channels != 1 && channels != 2) fail("unsupported channel count " + std::to_string(channels));
  if (rate == 0) fail("zero sample rate");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");

  const std::size_t bytes_per = bits / 8;
  const std::size_t frame_bytes = bytes_per * channels;
  if (data_len % frame_bytes != 0) fail("truncated sample frame");
  const std::size_t frames = data_len / frame_bytes;
  if (frames == 0) fail("no samples");

  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * bytes_per;
      if (pcm16) {
        acc += static_cast<std::int16_t>(detail::le16(p)) / 32768.0;
      } else {
        std::uint32_t u = detail::le32(p);
        float f;
        std::memcpy(&f, &u, 4);
        acc += f;
      }
    }
    w.samples[i] = static_cast<float>(acc / channels);
  }
  for (float v : w.samples)
    if (!std::isfinite(v)) fail("non-finite sample");
  return w;
}

inline Waveform load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError(path + ": cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path);
}

// Writes mono 16-bit PCM (clipped to [-1, 1]) or 32-bit float.
inline void save_wav(const std::string& path, const Waveform& w, bool float32 = false) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw AudioError(path + ": cannot open for writing");
  const std::uint16_t bits = float32 ? 32 : 16;
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));
  os.write("RIFF", 4);
  detail::put32(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  detail::put32(os, 16);
  detail::put16(os, float32 ? 3 : 1);
  detail::put16(os, 1);
  detail::put32(os, w.sample_rate);
  detail::put32(os, w.sample_rate * (bits / 8));
  detail::put16(os, bits / 8);
  detail::put16(os, bits);
  os.write("data", 4);
  detail::put32(os, data_len);
  for (float v : w.samples) {
    if (float32) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      detail::put32(os, u);
    } else {
      const double c = std::clamp(static_cast<double>(v), -1.0, 1.0);
      detail::put16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(std::min(c * 32768.0, 32767.0)))));
    }
  }
  if (!os) throw AudioError(path + ": write failed");
}

// Linear interpolation; output length round(len * target / source).
inline Waveform resample(const Waveform& w, std::uint32_t target_rate) {
  if (target_rate < 1) throw std::invalid_argument("resample: target rate must be >= 1");
  if (w.sample_rate == target_rate || w.samples.empty()) return {w.samples, target_rate};
  const double ratio = static_cast<double>(w.sample_rate) / target_rate;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(w.samples.size()) * target_rate / static_cast<double>(w.sample_rate)));
  Waveform out{std::vector<float>(out_len), target_rate};
  const std::size_t last = w.samples.size() - 1;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = i * ratio;
    const auto i0 = std::min(static_cast<std::size_t>(pos), last);
    const std::size_t i1 = std::min(i0 + 1, last);
    const double frac = pos - static_cast<double>(i0);
    out.samples[i] = static_cast<float>(w.samples[i0] + (w.samples[i1] - w.samples[i0]) * std::min(frac, 1.0));
  }
  return out;
}

// --- mel filterbank -------------------------------------------------------

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Center frequencies of the n_mels triangular filters.
inline std::vector<double> mel_centers(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> c(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m)
    c[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(cfg.n_mels + 1));
  return c;
}

// (n_mels, n_fft/2 + 1) triangular weights, peak 1, no area normalization.
inline std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  std::vector<std::vector<double>> fb(cfg.n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb[m][k] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

// --- STFT -----------------------------------------------------------------

namespace detail {
// Cached FFTW plans; creation is serialized, execution is thread-safe with
// the new-array interface.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void execute(double* in, fftw_complex* out) const { fftw_execute_dft_r2c(plan_, in, out); }
  std::size_t size() const { return n_; }

  static const RealFft& get(std::size_t n) {
    static std::mutex cache_mutex;
    static std::map<std::size_t, std::unique_ptr<RealFft>> cache;
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealFft>(n);
    return *slot;
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};
}  // namespace detail

// Centered (reflect-padded) STFT power -> mel -> dB. Output (1, 1, frames, n_mels).
inline Tensor logmel(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.sample_rate)
    throw std::invalid_argument("logmel: waveform rate " + std::to_string(w.sample_rate) + " != config rate " +
                                std::to_string(cfg.sample_rate));
  const std::size_t n = w.samples.size(), half = cfg.n_fft / 2;
  if (n < cfg.n_fft)
    throw std::invalid_argument("logmel: signal of " + std::to_string(n) + " samples is shorter than one frame (" +
                                std::to_string(cfg.n_fft) + ")");

  // reflect padding without repeating the edge sample
  std::vector<double> padded(n + 2 * half);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    std::int64_t src = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(half);
    if (src < 0) src = -src;
    if (src >= static_cast<std::int64_t>(n)) src = 2 * static_cast<std::int64_t>(n) - 2 - src;
    padded[i] = w.samples[static_cast<std::size_t>(src)];
  }

  std::vector<double> window(cfg.n_fft);
  for (std::size_t i = 0; i < cfg.n_fft; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(cfg.n_fft));

  const auto fb = mel_filterbank(cfg);
  const std::size_t bins = half + 1, frames = cfg.frames_for(n);
  // sparse rows: [first, last) nonzero bins per filter
  std::vector<std::pair<std::size_t, std::size_t>> support(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    std::size_t a = bins, b = 0;
    for (std::size_t k = 0; k < bins; ++k)
      if (fb[m][k] > 0.0) {
        a = std::min(a, k);
        b = k + 1;
      }
    support[m] = {a, std::max(a, b)};
  }

  const auto& fft = detail::RealFft::get(cfg.n_fft);
  double* in = fftw_alloc_real(cfg.n_fft);
  fftw_complex* out = fftw_alloc_complex(bins);
  std::vector<double> power(bins);
  auto result = Tensor::zeros({1, 1, frames, cfg.n_mels});
  for (std::size_t t = 0; t < frames; ++t) {
    const double* frame = padded.data() + t * cfg.hop;
    for (std::size_t i = 0; i < cfg.n_fft; ++i) in[i] = frame[i] * window[i];
    fft.execute(in, out);
    for (std::size_t k = 0; k < bins; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = support[m].first; k < support[m].second; ++k) e += fb[m][k] * power[k];
      result[t * cfg.n_mels + m] = static_cast<float>(10.0 * std::log10(std::max(e, cfg.log_floor)));
    }
  }
  fftw_free(in);
  fftw_free(out);
  return result;
}

// Zero-pads the time axis (dim 2) at the end up to `target_frames`.
template <typename T>
BasicTensor<T> pad_time(const BasicTensor<T>& x, std::size_t target_frames) {
  if (x.rank() != 4) throw ShapeError("pad_time: expected (N, C, frames, bins)");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H > target_frames)
    throw ShapeError("pad_time: " + std::to_string(H) + " frames exceed target " + std::to_string(target_frames));
  if (H == target_frames) return x;
  auto y = BasicTensor<T>::zeros({N, C, target_frames, W});
  for (std::size_t nc = 0; nc < N * C; ++nc)
    std::copy_n(x.ptr() + nc * H * W, H * W, y.ptr() + nc * target_frames * W);
  return y;
}

// Crops or zero-pads the time axis to exactly `frames`.
template <typename T>
BasicTensor<T> fit_frames(const BasicTensor<T>& x, std::size_t frames) {
  if (x.dim(2) <= frames) return pad_time(x, frames);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto y = BasicTensor<T>::zeros({N, C, frames, W});
  for (std::size_t nc = 0; nc < N * C; ++nc) std::copy_n(x.ptr() + nc * H * W, frames * W, y.ptr() + nc * frames * W);
  return y;
}

}  // namespace dscnet::frontend
