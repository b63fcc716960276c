// Desk-scale supervised training: BCE loss, AdamW, one-cycle schedule and a
// synthetic tone dataset that a correct model must be able to overfit.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dscnet/augment.hpp"
#include "dscnet/checkpoint.hpp"
#include "dscnet/evalkit.hpp"
#include "dscnet/frontend.hpp"
#include "dscnet/model/zoo.hpp"

namespace dscnet::train {

// --- loss ----------------------------------------------------------------------

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> grad;  // d loss / d logits
};

inline constexpr double kProbClamp = 1e-7;

// Mean binary cross-entropy over batch and classes. Probabilities are
// clamped to [1e-7, 1 - 1e-7] for the loss value only.
template <typename T>
LossResult<T> bce_loss(const BasicTensor<T>& probabilities, const BasicTensor<T>& targets) {
  if (!probabilities.same_shape(targets))
    throw ShapeError("bce_loss: probabilities " + to_string(probabilities.shape()) + " vs targets " +
                     to_string(targets.shape()));
  const double count = static_cast<double>(probabilities.size());
  LossResult<T> r{0.0, BasicTensor<T>::zeros(probabilities.shape())};
  double sum = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = probabilities[i], t = targets[i];
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    sum -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    r.grad[i] = static_cast<T>((p - t) / count);
  }
  r.loss = sum / count;
  return r;
}

// --- optimizer -----------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Per-parameter first/second moments keyed by table position.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }

  // Missing gradients count as zero. Parameters with decay == false (biases,
  // norm affines, layer scales) are never decayed.
  void step(model::ParameterTable<T>& table, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t k = 0;
    table.for_each([&](model::Parameter<T>& p) {
      if (!p.learnable) return;
      if (k == m_.size()) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
      auto& m = m_[k];
      auto& v = v_[k];
      ++k;
      if (m.size() != p.value.size()) throw ShapeError("adamw: state does not match parameter " + p.name);
      const bool has_grad = !p.grad.empty();
      if (has_grad && !p.grad.same_shape(p.value)) throw ShapeError("adamw: gradient shape mismatch for " + p.name);
      const double shrink = p.decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = has_grad ? static_cast<double>(p.grad[i]) : 0.0;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) * shrink - lr * update);
      }
    });
  }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// --- schedule ------------------------------------------------------------------

// Cosine warm-up from max/start_div to max at round(warmup_frac * total),
// then cosine decay to max/final_div at `total`.
inline double one_cycle_lr(std::size_t step, std::size_t total, double max_lr, double warmup_frac,
                           double start_div = 25.0, double final_div = 1e4) {
  if (total == 0) throw std::invalid_argument("one_cycle_lr: total steps must be >= 1");
  if (step > total) throw std::invalid_argument("one_cycle_lr: step beyond total");
  const double lo = max_lr / start_div, end = max_lr / final_div;
  const auto peak = static_cast<std::size_t>(std::llround(warmup_frac * static_cast<double>(total)));
  if (step <= peak) {
    const double t = peak == 0 ? 1.0 : static_cast<double>(step) / static_cast<double>(peak);
    return lo + (max_lr - lo) * 0.5 * (1.0 - std::cos(std::numbers::pi * t));
  }
  const double t = static_cast<double>(step - peak) / static_cast<double>(total - peak);
  return end + (max_lr - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// --- configuration ---------------------------------------------------------------

class TrainConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  // optimization
  std::size_t batch_size = 16;
  std::size_t steps = 300;
  double max_lr = 4e-3;
  double warmup_frac = 0.3;
  double weight_decay = 0.05;
  double start_div = 25.0;
  double final_div = 1e4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double drop_path = 0.0;
  bool mixup = false;
  double mixup_alpha = 1.0;
  bool spec_augment = false;
  std::uint64_t seed = 0;

  // synthetic data and reduced ConvNeXt
  std::size_t clips = 64;
  std::size_t classes = 8;
  std::size_t frames = 64;
  std::size_t mels = 64;
  std::vector<std::size_t> depths{1, 1, 1, 1};
  std::vector<std::size_t> channels{24, 48, 96, 192};

  // outputs; empty disables
  std::string history;
  std::string checkpoint;

  void validate() const {
    auto fail = [](const std::string& m) { throw TrainConfigError("train config: " + m); };
    if (batch_size == 0 || steps == 0) fail("batch_size and steps must be >= 1");
    if (!(max_lr > 0.0)) fail("max_lr must be > 0");
    if (!(weight_decay > 0.0)) fail("weight_decay must be > 0");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) fail("warmup_frac must be in (0, 1)");
    if (!(start_div > 0.0 && final_div > 0.0)) fail("start_div and final_div must be > 0");
    if (!(drop_path >= 0.0 && drop_path < 1.0)) fail("drop_path must be in [0, 1)");
    if (!(mixup_alpha > 0.0)) fail("mixup_alpha must be > 0");
    if (clips == 0 || classes == 0) fail("clips and classes must be >= 1");
    if (frames < 16 || mels < 16) fail("frames and mels must be >= 16");
    if (depths.empty() || depths.size() != channels.size()) fail("depths and channels need one entry per stage");
  }

  std::size_t steps_per_epoch() const { return (clips + batch_size - 1) / batch_size; }
};

namespace detail {

inline std::string trim(const std::string& s) { return eval::detail::trim(s); }

inline std::vector<std::size_t> parse_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    std::size_t pos = 0;
    const auto n = std::stoull(tok, &pos);
    if (pos != tok.size() || tok[0] == '-') throw std::invalid_argument("not an integer list");
    out.push_back(static_cast<std::size_t>(n));
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

}  // namespace detail

// `key = value` lines; '#' starts a comment. Errors name the line number.
inline TrainConfig parse_train_config(std::istream& in, const std::string& what = "config") {
  TrainConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = what + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw TrainConfigError(where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto val = detail::trim(line.substr(eq + 1));
    auto as_size = [&]() {
      std::size_t pos = 0;
      unsigned long long n = 0;
      try {
        n = std::stoull(val, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (val.empty() || pos != val.size() || val[0] == '-')
        throw TrainConfigError(where + ": '" + key + "' needs a non-negative integer, got '" + val + "'");
      return static_cast<std::size_t>(n);
    };
    auto as_double = [&]() {
      std::size_t pos = 0;
      double d = 0;
      try {
        d = std::stod(val, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (val.empty() || pos != val.size() || !std::isfinite(d))
        throw TrainConfigError(where + ": '" + key + "' needs a number, got '" + val + "'");
      return d;
    };
    auto as_bool = [&]() {
      if (val == "1" || val == "true" || val == "on" || val == "yes") return true;
      if (val == "0" || val == "false" || val == "off" || val == "no") return false;
      throw TrainConfigError(where + ": '" + key + "' needs a boolean, got '" + val + "'");
    };
    auto as_list = [&]() {
      try {
        return detail::parse_list(val);
      } catch (const std::exception&) {
        throw TrainConfigError(where + ": '" + key + "' needs a comma-separated integer list, got '" + val + "'");
      }
    };
    if (key == "batch_size") c.batch_size = as_size();
    else if (key == "steps") c.steps = as_size();
    else if (key == "max_lr") c.max_lr = as_double();
    else if (key == "warmup_frac") c.warmup_frac = as_double();
    else if (key == "weight_decay") c.weight_decay = as_double();
    else if (key == "start_div") c.start_div = as_double();
    else if (key == "final_div") c.final_div = as_double();
    else if (key == "beta1") c.beta1 = as_double();
    else if (key == "beta2") c.beta2 = as_double();
    else if (key == "eps") c.eps = as_double();
    else if (key == "drop_path") c.drop_path = as_double();
    else if (key == "mixup") c.mixup = as_bool();
    else if (key == "mixup_alpha") c.mixup_alpha = as_double();
    else if (key == "spec_augment") c.spec_augment = as_bool();
    else if (key == "seed") c.seed = as_size();
    else if (key == "clips") c.clips = as_size();
    else if (key == "classes") c.classes = as_size();
    else if (key == "frames") c.frames = as_size();
    else if (key == "mels") c.mels = as_size();
    else if (key == "depths") c.depths = as_list();
    else if (key == "channels") c.channels = as_list();
    else if (key == "history") c.history = val;
    else if (key == "checkpoint") c.checkpoint = val;
    else throw TrainConfigError(where + ": unknown key '" + key + "'");
  }
  try {
    c.validate();
  } catch (const TrainConfigError& e) {
    throw TrainConfigError(what + ": " + e.what());
  }
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainConfigError("cannot open config '" + path + "'");
  return parse_train_config(in, path);
}

// --- data ----------------------------------------------------------------------

struct Dataset {
  Tensor x;  // (N, 1, frames, mels), standardized
  Tensor y;  // (N, classes) multi-hot

  std::size_t size() const { return x.dim(0); }
  std::size_t classes() const { return y.dim(1); }

  template <typename T = float>
  std::pair<BasicTensor<T>, BasicTensor<T>> batch(const std::vector<std::size_t>& idx) const {
    const std::size_t F = x.dim(2), M = x.dim(3), C = classes();
    auto bx = BasicTensor<T>::zeros({idx.size(), 1, F, M});
    auto by = BasicTensor<T>::zeros({idx.size(), C});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t k = 0; k < F * M; ++k) bx[b * F * M + k] = static_cast<T>(x[idx[b] * F * M + k]);
      for (std::size_t k = 0; k < C; ++k) by[b * C + k] = static_cast<T>(y[idx[b] * C + k]);
    }
    return {std::move(bx), std::move(by)};
  }
};

// Clip i always contains class i % classes plus each other class with
// probability 1/4. Class c is a tone at a log-spaced centre frequency in
// 200 Hz .. 8 kHz with +-3% jitter and random phase.
inline Dataset synthetic_tones(std::size_t clips, std::size_t classes, std::size_t frames, std::size_t mels,
                               std::uint64_t seed) {
  if (clips == 0 || classes == 0) throw std::invalid_argument("synthetic_tones: need clips and classes");
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1e-3);
  frontend::MelConfig mel;
  mel.n_mels = mels;
  const std::size_t samples = frames * mel.hop;
  Dataset d{Tensor::zeros({clips, 1, frames, mels}), Tensor::zeros({clips, classes})};
  for (std::size_t i = 0; i < clips; ++i) {
    std::vector<bool> on(classes, false);
    on[i % classes] = true;
    for (std::size_t c = 0; c < classes; ++c)
      if (u01(rng) < 0.25) on[c] = true;
    frontend::Waveform w{std::vector<float>(samples, 0.0f), mel.sample_rate};
    for (std::size_t c = 0; c < classes; ++c) {
      if (!on[c]) continue;
      d.y[i * classes + c] = 1.0f;
      const double pos = classes > 1 ? static_cast<double>(c) / static_cast<double>(classes - 1) : 0.5;
      const double f = 200.0 * std::pow(40.0, pos) * (1.0 + 0.03 * (2.0 * u01(rng) - 1.0));
      const double phase = 2.0 * std::numbers::pi * u01(rng);
      for (std::size_t n = 0; n < samples; ++n)
        w.samples[n] += static_cast<float>(0.2 * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(n) /
                                                              mel.sample_rate + phase));
    }
    for (auto& s : w.samples) s += static_cast<float>(noise(rng));
    const auto spec = frontend::fit_frames(frontend::logmel(w, mel), frames);
    std::copy_n(spec.ptr(), frames * mels, d.x.ptr() + i * frames * mels);
  }
  const double mu = mean_all(d.x);
  double var = 0.0;
  for (float v : d.x.data()) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / static_cast<double>(d.x.size())) + 1e-12;
  for (auto& v : d.x.data()) v = static_cast<float>((v - mu) / sd);
  return d;
}

inline model::ModelConfig toy_model_config(const TrainConfig& c) {
  auto m = model::convnext_custom("toy-convnext", c.depths, c.channels, c.frames, c.mels);
  m.num_classes = c.classes;
  m.drop_path = c.drop_path;
  m.validate();
  return m;
}

// --- training loop -------------------------------------------------------------

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HistoryRow {
  std::size_t step;
  double lr;
  double loss;
};

struct History {
  std::vector<HistoryRow> rows;
  double final_train_map = 0.0;
  std::size_t epochs = 0;
  std::size_t checkpoints_written = 0;

  std::string csv() const {
    std::ostringstream os;
    os << "step,lr,loss\n" << std::setprecision(9);
    for (const auto& r : rows) os << r.step << "," << r.lr << "," << r.loss << "\n";
    return os.str();
  }
};

template <typename T>
double global_grad_norm(const model::ParameterTable<T>& table) {
  double s = 0.0;
  table.for_each([&](const model::Parameter<T>& p) {
    for (auto g : p.grad.data()) s += static_cast<double>(g) * static_cast<double>(g);
  });
  return std::sqrt(s);
}

// Eval-mode macro mAP over the whole dataset.
template <typename T>
double dataset_map(const model::Model<T>& m, const Dataset& d, std::size_t batch = 16) {
  std::vector<double> scores;
  std::vector<int> targets;
  for (std::size_t i = 0; i < d.size(); i += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t k = i; k < std::min(d.size(), i + batch); ++k) idx.push_back(k);
    auto [x, y] = d.batch<T>(idx);
    const auto out = m.forward(frontend::pad_time(x, m.config().input_frames));
    for (std::size_t k = 0; k < out.probabilities.size(); ++k) {
      scores.push_back(static_cast<double>(out.probabilities[k]));
      targets.push_back(y[k] > T{0.5} ? 1 : 0);
    }
  }
  return eval::evaluate_scores(scores, targets, d.classes()).map;
}

// One forward/backward pass on a batch. Leaves gradients in the table.
template <typename T>
double loss_and_grad(const model::Model<T>& m, const BasicTensor<T>& x, const BasicTensor<T>& y, bool training,
                     Rng* rng) {
  model::Tape<T> tape;
  model::Pass<T> pass{training, rng, &tape};
  const auto out = m.forward(x, pass);
  auto l = bce_loss(out.probabilities, y);
  tape.backward(l.grad);
  return l.loss;
}

template <typename T>
History train_toy(model::Model<T>& m, const Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (data.classes() != m.config().num_classes)
    throw ShapeError("train_toy: dataset has " + std::to_string(data.classes()) + " classes, model " +
                     std::to_string(m.config().num_classes));
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  AdamW<T> opt({cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
  augment::AugmentConfig aug = augment::AugmentConfig::cnn();
  History h;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t per_epoch = cfg.steps_per_epoch();

  auto finish_epoch = [&]() {
    ++h.epochs;
    if (!cfg.checkpoint.empty()) {
      checkpoint::save(m, cfg.checkpoint);
      ++h.checkpoints_written;
    }
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < std::min(cfg.batch_size, data.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto [x, y] = data.batch<T>(idx);
    if (cfg.spec_augment) x = augment::spec_augment(x, aug, rng);
    if (cfg.mixup) {
      std::vector<std::size_t> perm(idx.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<std::size_t> partner;
      for (auto p : perm) partner.push_back(idx[p]);
      auto [x2, y2] = data.batch<T>(partner);
      if (cfg.spec_augment) x2 = augment::spec_augment(x2, aug, rng);
      auto mixed = augment::mixup(x, y, x2, y2, cfg.mixup_alpha, rng);
      x = std::move(mixed.x);
      y = std::move(mixed.y);
    }
    x = frontend::pad_time(x, m.config().input_frames);

    const double lr = one_cycle_lr(step, cfg.steps, cfg.max_lr, cfg.warmup_frac, cfg.start_div, cfg.final_div);
    m.parameters().zero_grad();
    const double loss = loss_and_grad(m, x, y, true, &rng);
    const double gnorm = global_grad_norm(m.parameters());
    if (!std::isfinite(loss) || !std::isfinite(gnorm)) {
      std::ostringstream os;
      os << "training diverged at step " << step << ": loss=" << loss << " lr=" << lr << " grad_norm=" << gnorm;
      if (!h.rows.empty()) os << " last_loss=" << h.rows.back().loss << " last_lr=" << h.rows.back().lr;
      m.parameters().for_each([&](const model::Parameter<T>& p) {
        if (!all_finite(p.grad) || !all_finite(p.value)) os << "\n  non-finite: " << p.name;
      });
      throw TrainingDiverged(os.str());
    }
    opt.step(m.parameters(), lr);
    h.rows.push_back({step, lr, loss});
    if (log && (step % 25 == 0 || step + 1 == cfg.steps))
      *log << "step " << step << " lr " << lr << " loss " << loss << " grad_norm " << gnorm << "\n";
    if ((step + 1) % per_epoch == 0) finish_epoch();
  }
  if (cfg.steps % per_epoch != 0) finish_epoch();

  h.final_train_map = dataset_map(m, data);
  if (!cfg.history.empty()) {
    std::ofstream os(cfg.history, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write history '" + cfg.history + "'");
    os << h.csv();
  }
  if (log) *log << "final train mAP " << h.final_train_map << "\n";
  return h;
}

}  // namespace dscnet::train
