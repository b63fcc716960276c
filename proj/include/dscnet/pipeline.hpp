// Waveform to model input: resample, log-mel, fit to the model's time grid.
#pragma once

#include <string>
#include <type_traits>

#include "dscnet/frontend.hpp"
#include "dscnet/model/config.hpp"

namespace dscnet::pipeline {

inline frontend::MelConfig mel_config_for(const model::ModelConfig& c) {
  frontend::MelConfig m;
  m.n_mels = c.mels;
  return m;
}

// Frames fed to the network when the spectrogram has `frames` frames.
inline std::size_t input_frames_for(const model::ModelConfig& c, std::size_t frames) {
  if (frames == c.frames) return c.input_frames;
  if (c.block == model::BlockKind::kConvNeXt) return (frames + 15) / 16 * 16;
  return frames;
}

// Returns (1, 1, input_frames, mels). `frames` = 0 keeps the model default.
template <typename T = float>
BasicTensor<T> prepare(const frontend::Waveform& w, const model::ModelConfig& c, std::size_t frames = 0) {
  const auto mel = mel_config_for(c);
  frontend::Waveform x = w.sample_rate == mel.sample_rate ? w : frontend::resample(w, mel.sample_rate);
  if (x.samples.size() < mel.n_fft) x.samples.resize(mel.n_fft, 0.0f);  // very short clips: zero-extend
  if (frames == 0) frames = c.frames;
  auto spec = frontend::fit_frames(frontend::logmel(x, mel), frames);
  auto padded = frontend::pad_time(spec, input_frames_for(c, frames));
  if constexpr (std::is_same_v<T, float>)
    return padded;
  else
    return padded.template cast<T>();
}

inline Tensor load_and_prepare(const std::string& path, const model::ModelConfig& c, std::size_t frames = 0) {
  return prepare(frontend::load_wav(path), c, frames);
}

}  // namespace dscnet::pipeline
