// Parameter and MAC counting plus a wall-clock throughput harness.
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dscnet/frontend.hpp"
#include "dscnet/model/zoo.hpp"
#include "dscnet/runtime.hpp"

namespace dscnet::profiler {

template <typename T>
std::size_t count_params(const model::Model<T>& m) {
  return m.param_count();
}

// Analytic count: conv = N*Cout*H'*W'*(Cin/g)*kh*kw, linear = N*O*D, all
// other layers zero. The log-mel frontend is not included.
template <typename T>
std::uint64_t count_macs(const model::Model<T>& m, const Shape& input) {
  std::uint64_t total = 0;
  for (const auto& r : m.trace(input)) total += r.macs;
  return total;
}

// MACs grouped by layer kind ("conv", "depthwise", "pointwise", "linear").
template <typename T>
std::map<std::string, std::uint64_t> macs_by_kind(const model::Model<T>& m, const Shape& input) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& r : m.trace(input))
    if (r.macs) out[r.kind] += r.macs;
  return out;
}

// Time axis fed to the model for a clip of `seconds` at the model's frontend.
inline std::size_t frames_for_seconds(const model::ModelConfig& c, double seconds) {
  frontend::MelConfig mel;
  mel.n_mels = c.mels;
  const auto samples = static_cast<std::size_t>(std::llround(seconds * mel.sample_rate));
  std::size_t frames = std::max<std::size_t>(1, samples / mel.hop);  // the trailing centered frame is dropped
  if (c.block == model::BlockKind::kConvNeXt) frames = (frames + 15) / 16 * 16;  // same rounding as the presets
  return frames;
}

struct Summary {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr() const { return q3 - q1; }
};

// Linear-interpolated quartiles.
inline Summary summarize(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {q(0.5), q(0.25), q(0.75)};
}

struct BenchConfig {
  std::size_t batch = 1;
  double seconds_per_clip = 10.0;
  std::size_t repeats = 3;
  std::size_t warmup = 1;
  bool include_frontend = false;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::size_t batch = 0;
  std::size_t repeats = 0;
  int threads = 1;
  bool frontend = false;
  Summary samples_per_second;
  std::vector<double> runs;     // samples/sec per repeat
  bool deterministic = true;    // identical logits across repeats
};

template <typename T>
BenchResult bench_throughput(const model::Model<T>& m, const BenchConfig& cfg) {
  if (cfg.batch == 0) throw std::invalid_argument("bench: batch must be >= 1");
  if (cfg.repeats == 0) throw std::invalid_argument("bench: repeats must be >= 1");
  const auto& c = m.config();
  const std::size_t frames = frames_for_seconds(c, cfg.seconds_per_clip);

  Rng rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 0.1);
  frontend::Waveform wave;
  frontend::MelConfig mel;
  mel.n_mels = c.mels;
  wave.samples.resize(static_cast<std::size_t>(std::llround(cfg.seconds_per_clip * mel.sample_rate)));
  for (auto& s : wave.samples) s = static_cast<float>(nd(rng));

  auto make_input = [&]() {
    if (!cfg.include_frontend) {
      auto x = BasicTensor<T>::zeros({cfg.batch, 1, frames, c.mels});
      Rng local(cfg.seed + 1);
      for (auto& v : x.data()) v = static_cast<T>(nd(local));
      return x;
    }
    auto x = BasicTensor<T>::zeros({cfg.batch, 1, frames, c.mels});
    for (std::size_t n = 0; n < cfg.batch; ++n) {
      auto spec = frontend::fit_frames(frontend::logmel(wave, mel), frames);
      std::copy_n(spec.ptr(), frames * c.mels, x.ptr() + n * frames * c.mels);
    }
    return x;
  };

  BenchResult res;
  res.batch = cfg.batch;
  res.repeats = cfg.repeats;
  res.threads = num_threads();
  res.frontend = cfg.include_frontend;
  for (std::size_t i = 0; i < cfg.warmup; ++i) m.forward(make_input());

  std::vector<T> reference;
  for (std::size_t i = 0; i < cfg.repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = m.forward(make_input());
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.runs.push_back(static_cast<double>(cfg.batch) / std::max(dt, 1e-12));
    auto v = out.logits.values();
    if (reference.empty())
      reference = std::move(v);
    else if (v != reference)
      res.deterministic = false;
  }
  res.samples_per_second = summarize(res.runs);
  return res;
}

struct Report {
  std::string model;
  Shape input;
  std::size_t params = 0;
  std::uint64_t macs = 0;
  std::map<std::string, std::uint64_t> macs_by_kind;
  const BenchResult* bench = nullptr;
};

template <typename T>
Report make_report(const model::Model<T>& m, const Shape& input) {
  return {m.config().name, input, count_params(m), count_macs(m, input), macs_by_kind(m, input), nullptr};
}

inline std::string human(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  if (v >= 1e9)
    os << v / 1e9 << "G";
  else if (v >= 1e6)
    os << v / 1e6 << "M";
  else if (v >= 1e3)
    os << v / 1e3 << "k";
  else
    os << v;
  return os.str();
}

inline std::string format_text(const Report& r) {
  std::ostringstream os;
  os << "model        " << r.model << "\n"
     << "input        " << to_string(r.input) << "\n"
     << "params       " << r.params << " (" << human(static_cast<double>(r.params)) << ")\n"
     << "MACs         " << r.macs << " (" << human(static_cast<double>(r.macs)) << ")\n"
     << "FLOPs        " << 2 * r.macs << " (" << human(2.0 * static_cast<double>(r.macs)) << ", 2 per MAC)\n";
  for (const auto& [kind, v] : r.macs_by_kind) os << "  " << std::left << std::setw(11) << kind << human(static_cast<double>(v)) << "\n";
  os << "note         MACs exclude the log-mel frontend\n";
  if (r.bench) {
    const auto& b = *r.bench;
    os << std::fixed << std::setprecision(2) << "throughput   " << b.samples_per_second.median
       << " samples/s (median, IQR " << b.samples_per_second.iqr() << ", batch " << b.batch << ", " << b.repeats
       << " runs, " << b.threads << " threads" << (b.frontend ? ", incl. frontend" : "") << ")\n";
  }
  return os.str();
}

// One key=value pair per line.
inline std::string format_kv(const Report& r) {
  std::ostringstream os;
  os << "model=" << r.model << "\ninput=" << to_string(r.input) << "\nparams=" << r.params << "\nmacs=" << r.macs
     << "\nflops=" << 2 * r.macs << "\nfrontend_counted=0\n";
  for (const auto& [kind, v] : r.macs_by_kind) os << "macs." << kind << "=" << v << "\n";
  if (r.bench) {
    const auto& b = *r.bench;
    os << std::setprecision(6) << "throughput.median=" << b.samples_per_second.median
       << "\nthroughput.q1=" << b.samples_per_second.q1 << "\nthroughput.q3=" << b.samples_per_second.q3
       << "\nthroughput.iqr=" << b.samples_per_second.iqr() << "\nbatch=" << b.batch << "\nrepeats=" << b.repeats
       << "\nthreads=" << b.threads << "\nbench_frontend=" << (b.frontend ? 1 : 0)
       << "\ndeterministic=" << (b.deterministic ? 1 : 0) << "\n";
  }
  return os.str();
}

}  // namespace dscnet::profiler
