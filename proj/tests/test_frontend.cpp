#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "dscnet/frontend.hpp"

using namespace dscnet;
using namespace dscnet::frontend;
namespace fs = std::filesystem;

namespace {

void put(std::vector<unsigned char>& b, std::uint32_t v, int n) {
  for (int i = 0; i < n; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

// Minimal WAV image with the given raw sample bytes.
std::vector<unsigned char> wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint16_t bits,
                                     std::uint32_t rate, const std::vector<unsigned char>& samples) {
  std::vector<unsigned char> b{'R', 'I', 'F', 'F'};
  put(b, 36 + static_cast<std::uint32_t>(samples.size()), 4);
  for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<unsigned char>(c));
  put(b, 16, 4);
  put(b, format, 2);
  put(b, channels, 2);
  put(b, rate, 4);
  put(b, rate * channels * bits / 8, 4);
  put(b, channels * bits / 8, 2);
  put(b, bits, 2);
  for (char c : std::string("data")) b.push_back(static_cast<unsigned char>(c));
  put(b, static_cast<std::uint32_t>(samples.size()), 4);
  b.insert(b.end(), samples.begin(), samples.end());
  return b;
}

std::vector<unsigned char> f32_bytes(std::initializer_list<float> v) {
  std::vector<unsigned char> out;
  for (float f : v) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put(out, u, 4);
  }
  return out;
}

Waveform sine(double hz, std::size_t n, double amp = 0.5, std::uint32_t rate = 32000) {
  Waveform w{std::vector<float>(n), rate};
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  return w;
}

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("dscnet_frontend_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Wav, Pcm16Scaling) {
  std::vector<unsigned char> s;
  put(s, 16384, 2);
  put(s, static_cast<std::uint16_t>(-32768), 2);
  auto w = decode_wav(wav_bytes(1, 1, 16, 32000, s));
  ASSERT_EQ(w.size(), 2u);
  EXPECT_FLOAT_EQ(w.samples[0], 0.5f);
  EXPECT_FLOAT_EQ(w.samples[1], -1.0f);
}

TEST(Wav, StereoIsAveraged) {
  auto w = decode_wav(wav_bytes(3, 2, 32, 16000, f32_bytes({0.2f, 0.4f, -1.0f, 1.0f})));
  ASSERT_EQ(w.size(), 2u);
  EXPECT_FLOAT_EQ(w.samples[0], 0.3f);
  EXPECT_FLOAT_EQ(w.samples[1], 0.0f);
  EXPECT_EQ(w.sample_rate, 16000u);
}

TEST(Wav, RejectsTruncatedAndUnsupported) {
  auto good = wav_bytes(1, 1, 16, 32000, std::vector<unsigned char>(8, 0));
  auto cut = good;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(decode_wav(cut), AudioError);
  EXPECT_THROW(decode_wav(wav_bytes(1, 1, 8, 32000, {1, 2})), AudioError);
  EXPECT_THROW(decode_wav(wav_bytes(1, 1, 16, 32000, {1, 2, 3})), AudioError);
  EXPECT_THROW(decode_wav({'n', 'o', 'p', 'e'}), AudioError);
  EXPECT_THROW(load_wav("/nonexistent/file.wav"), AudioError);
}

TEST(Wav, TenSecondFileRoundTrip) {
  const auto dir = temp_dir();
  auto w = sine(440.0, 320000, 0.25);
  save_wav((dir / "ten.wav").string(), w);
  auto r = load_wav((dir / "ten.wav").string());
  EXPECT_EQ(r.size(), 320000u);
  EXPECT_EQ(r.sample_rate, 32000u);
  for (std::size_t i = 0; i < r.size(); i += 997) EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32768 + 1e-7);
  save_wav((dir / "tenf.wav").string(), w, true);
  EXPECT_EQ(load_wav((dir / "tenf.wav").string()).samples, w.samples);
  fs::remove_all(dir);
}

TEST(Resample, LengthRuleAndIdentity) {
  Waveform w{{0.1f, 0.2f, 0.3f, 0.4f}, 16000};
  EXPECT_EQ(resample(w, 32000).size(), 8u);
  EXPECT_EQ(resample(w, 16000).samples, w.samples);
  Waveform c{std::vector<float>(441, 0.7f), 44100};
  auto r = resample(c, 32000);
  EXPECT_EQ(r.size(), 320u);
  for (float v : r.samples) EXPECT_FLOAT_EQ(v, 0.7f);
}

TEST(LogMel, TenSecondsGives1001Frames) {
  const auto cfg = MelConfig::cnn();
  EXPECT_EQ(cfg.frames_for(320000), 1001u);
  auto spec = logmel(sine(1000.0, 320000), cfg);
  EXPECT_EQ(spec.shape(), (Shape{1, 1, 1001, 64}));
  EXPECT_EQ(fit_frames(spec, 1000).shape(), (Shape{1, 1, 1000, 64}));
}

TEST(LogMel, SilenceHitsTheFloor) {
  auto spec = logmel(Waveform{std::vector<float>(4000, 0.0f), 32000}, MelConfig::cnn());
  for (float v : spec.data()) EXPECT_FLOAT_EQ(v, -100.0f);
}

TEST(LogMel, SinePeaksAtNearestCenter) {
  const auto cfg = MelConfig::cnn();
  const auto centers = mel_centers(cfg);
  for (double hz : {300.0, 1000.0, 3000.0, 8000.0}) {
    auto spec = logmel(sine(hz, 32000), cfg);
    const std::size_t t = spec.dim(2) / 2;
    std::size_t best = 0;
    for (std::size_t m = 1; m < cfg.n_mels; ++m)
      if (spec[t * cfg.n_mels + m] > spec[t * cfg.n_mels + best]) best = m;
    std::size_t nearest = 0;
    for (std::size_t m = 1; m < cfg.n_mels; ++m)
      if (std::abs(centers[m] - hz) < std::abs(centers[nearest] - hz)) nearest = m;
    EXPECT_EQ(best, nearest) << hz << " Hz";
  }
}

TEST(LogMel, ShapeDependsOnlyOnLength) {
  auto a = logmel(sine(500.0, 12345), MelConfig::convnext());
  auto b = logmel(Waveform{std::vector<float>(12345, 0.0f), 32000}, MelConfig::convnext());
  EXPECT_EQ(a.shape(), b.shape());
  EXPECT_EQ(a.dim(3), 224u);
}

TEST(LogMel, DoublingAmplitudeAdds6dB) {
  auto w = sine(700.0, 16000, 0.2);
  for (std::size_t i = 0; i < w.size(); ++i) w.samples[i] += static_cast<float>(0.05 * std::sin(0.37 * static_cast<double>((i * i) % 17)));
  auto w2 = w;
  for (auto& v : w2.samples) v *= 2.0f;
  auto a = logmel(w, MelConfig::cnn()), b = logmel(w2, MelConfig::cnn());
  const double db = 20.0 * std::log10(2.0);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > -90.0f) {
      EXPECT_NEAR(b[i] - a[i], db, 1e-3);
      ++checked;
    }
  EXPECT_GT(checked, a.size() / 2);
}

TEST(LogMel, ShortSignalAndRateMismatchThrow) {
  EXPECT_THROW(logmel(Waveform{std::vector<float>(100), 32000}, MelConfig::cnn()), std::invalid_argument);
  EXPECT_THROW(logmel(Waveform{std::vector<float>(4096), 16000}, MelConfig::cnn()), std::invalid_argument);
  auto bad = MelConfig::cnn();
  bad.f_max = 20000;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Filterbank, NonNegativeAndAtMostTwoFiltersPerBin) {
  for (auto cfg : {MelConfig::cnn(), MelConfig::convnext()}) {
    const auto fb = mel_filterbank(cfg);
    ASSERT_EQ(fb.size(), cfg.n_mels);
    for (std::size_t k = 0; k < cfg.n_fft / 2 + 1; ++k) {
      int overlap = 0;
      for (const auto& row : fb) {
        EXPECT_GE(row[k], 0.0);
        overlap += row[k] > 0.0;
      }
      EXPECT_LE(overlap, 2);
    }
  }
}

TEST(PadTime, EndPaddingTo1008) {
  auto x = Tensor::full({1, 1, 1000, 224}, 1.0f);
  auto y = pad_time(x, 1008);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1008, 224}));
  for (std::size_t i = 0; i < 1000 * 224; ++i) ASSERT_EQ(y[i], 1.0f);
  for (std::size_t i = 1000 * 224; i < y.size(); ++i) ASSERT_EQ(y[i], 0.0f);
  EXPECT_EQ(pad_time(x, 1000).values(), x.values());
  EXPECT_THROW(pad_time(x, 999), ShapeError);
}
