// dscnet command-line front end.
//
// Exit codes: 0 success, 1 unexpected runtime error, 2 bad arguments or
// config, 3 checkpoint mismatch or unreadable checkpoint, 4 audio decode
// failure, 5 training diverged.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dscnet/dscnet.hpp"

namespace {

using namespace dscnet;

enum Exit : int { kOk = 0, kRuntime = 1, kUsage = 2, kCheckpoint = 3, kAudio = 4, kDiverged = 5 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

model::ModelConfig resolve_model(const std::string& name) {
  try {
    return model::preset(name);
  } catch (const model::ConfigError& e) {
    throw UsageError(e.what());
  }
}

model::Model<float> load_model(const std::string& name, const std::string& ckpt) {
  auto m = model::Model<float>::build(resolve_model(name));
  if (!ckpt.empty()) checkpoint::apply(checkpoint::load(ckpt), m, true);
  return m;
}

std::vector<std::string> class_names(const std::string& path, std::size_t classes) {
  std::vector<std::string> names;
  if (!path.empty()) {
    try {
      names = eval::load_class_map(path);
    } catch (const eval::ManifestError& e) {
      throw UsageError(e.what());
    }
    if (names.size() != classes)
      throw UsageError("class map '" + path + "' has " + std::to_string(names.size()) + " classes, model has " +
                       std::to_string(classes));
  } else {
    for (std::size_t i = 0; i < classes; ++i) names.push_back("class_" + std::to_string(i));
  }
  return names;
}

struct TagArgs {
  std::string model, ckpt, audio, class_map;
  std::size_t topk = 10;
  std::size_t frames = 0;
};

int cmd_tag(const TagArgs& a) {
  auto m = load_model(a.model, a.ckpt);
  const auto names = class_names(a.class_map, m.config().num_classes);
  Tensor x;
  try {
    x = pipeline::prepare(frontend::load_wav(a.audio), m.config(), a.frames);
  } catch (const frontend::AudioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAudio;
  }
  const auto out = m.forward(x);
  std::vector<std::size_t> idx(m.config().num_classes);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t i, std::size_t j) { return out.probabilities[i] > out.probabilities[j]; });
  const std::size_t k = std::min(a.topk, idx.size());
  for (std::size_t i = 0; i < k; ++i) std::printf("%.3f\t%s\n", out.probabilities[idx[i]], names[idx[i]].c_str());
  return kOk;
}

struct EvalArgs {
  std::string model, ckpt, manifest, class_map, out, table;
  std::size_t frames = 0;
};

int cmd_eval(const EvalArgs& a) {
  auto m = load_model(a.model, a.ckpt);
  const std::size_t classes = m.config().num_classes;
  const auto names = a.class_map.empty() ? std::vector<std::string>{} : class_names(a.class_map, classes);
  std::vector<eval::ManifestRow> rows;
  try {
    rows = eval::load_manifest(a.manifest, classes);
  } catch (const eval::ManifestError& e) {
    throw UsageError(e.what());
  }
  if (rows.empty()) throw UsageError("manifest '" + a.manifest + "' has no clips");
  eval::EvalConfig cfg;
  cfg.frames = a.frames;
  eval::EvalReport rep;
  try {
    rep = eval::evaluate(m, rows, cfg);
  } catch (const eval::ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAudio;
  }
  if (!a.out.empty()) {
    std::ofstream os(a.out, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + a.out + "'");
    os << eval::to_json(rep, names).dump(2) << "\n";
  }
  if (!a.table.empty()) {
    std::ofstream os(a.table, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + a.table + "'");
    os << eval::format_table(rep, names);
  }
  std::cout << eval::summary_line(rep) << "\n";
  return kOk;
}

struct ProfileArgs {
  std::string model, ckpt, format = "text";
  double seconds = 10.0;
  std::size_t batch = 1;
  std::size_t repeats = 3;
  bool bench = false;
  bool frontend = false;
};

int cmd_profile(const ProfileArgs& a) {
  auto m = load_model(a.model, a.ckpt);
  const Shape input{a.batch, 1, profiler::frames_for_seconds(m.config(), a.seconds), m.config().mels};
  auto rep = profiler::make_report(m, input);
  std::optional<profiler::BenchResult> bench;
  if (a.bench) {
    profiler::BenchConfig bc;
    bc.batch = a.batch;
    bc.seconds_per_clip = a.seconds;
    bc.repeats = a.repeats;
    bc.include_frontend = a.frontend;
    bench = profiler::bench_throughput(m, bc);
    rep.bench = &*bench;
  }
  std::cout << (a.format == "kv" ? profiler::format_kv(rep) : profiler::format_text(rep));
  return kOk;
}

struct TrainArgs {
  std::string config, history, checkpoint;
  bool quiet = false;
};

int cmd_train_toy(const TrainArgs& a) {
  train::TrainConfig cfg;
  try {
    if (!a.config.empty()) cfg = train::load_train_config(a.config);
  } catch (const train::TrainConfigError& e) {
    throw UsageError(e.what());
  }
  if (!a.history.empty()) cfg.history = a.history;
  if (!a.checkpoint.empty()) cfg.checkpoint = a.checkpoint;
  const auto data = train::synthetic_tones(cfg.clips, cfg.classes, cfg.frames, cfg.mels, cfg.seed);
  auto m = model::Model<float>::build(train::toy_model_config(cfg), cfg.seed);
  try {
    const auto h = train::train_toy(m, data, cfg, a.quiet ? nullptr : &std::cerr);
    std::cout << "steps=" << h.rows.size() << " final_loss=" << h.rows.back().loss
              << " train_mAP=" << h.final_train_map << "\n";
  } catch (const train::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio tagging CNN engine: inference, evaluation, profiling and toy training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dscnet 1.0");
  app.footer("Exit codes: 0 ok, 1 runtime error, 2 bad arguments, 3 checkpoint mismatch, 4 audio decode failure, "
             "5 training diverged. DSC_THREADS sets the default --threads.");

  int threads = default_threads_from_env();
  app.add_option("--threads", threads, "Worker threads (default: DSC_THREADS or all cores)")
      ->check(CLI::PositiveNumber);

  const std::string models = model::preset_list();

  TagArgs tag;
  auto* t = app.add_subcommand("tag", "Print the top-k classes for one audio file");
  t->add_option("--model", tag.model, "Model name: " + models)->required();
  t->add_option("--ckpt", tag.ckpt, ".acnx checkpoint")->required();
  t->add_option("--audio", tag.audio, "WAV file (PCM16 or float32)")->required();
  t->add_option("--topk", tag.topk, "Number of classes to print")->check(CLI::PositiveNumber);
  t->add_option("--class-map", tag.class_map, "CSV id,name");
  t->add_option("--frames", tag.frames, "Override the log-mel frame count (default: model's)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate mAP / AUC / d-prime over a manifest");
  e->add_option("--model", ev.model, "Model name: " + models)->required();
  e->add_option("--ckpt", ev.ckpt, ".acnx checkpoint")->required();
  e->add_option("--manifest", ev.manifest, "CSV clip_id,path,label_ids (ids ';'-separated)")->required();
  e->add_option("--class-map", ev.class_map, "CSV id,name");
  e->add_option("--out", ev.out, "JSON report path");
  e->add_option("--table", ev.table, "Per-class text table path");
  e->add_option("--frames", ev.frames, "Override the log-mel frame count");

  ProfileArgs pr;
  auto* p = app.add_subcommand("profile", "Parameter count, MACs and optional throughput");
  p->add_option("--model", pr.model, "Model name: " + models)->required();
  p->add_option("--ckpt", pr.ckpt, ".acnx checkpoint (optional)");
  p->add_option("--seconds", pr.seconds, "Clip length in seconds")->check(CLI::PositiveNumber);
  p->add_option("--batch", pr.batch, "Batch size")->check(CLI::PositiveNumber);
  p->add_option("--repeats", pr.repeats, "Timed runs for --bench")->check(CLI::PositiveNumber);
  p->add_flag("--bench", pr.bench, "Measure throughput");
  p->add_flag("--frontend", pr.frontend, "Include the log-mel frontend in --bench timing");
  p->add_option("--format", pr.format, "Output format")->check(CLI::IsMember({"text", "kv"}));

  TrainArgs tr;
  auto* r = app.add_subcommand("train-toy", "Train a reduced ConvNeXt on synthetic tones");
  r->add_option("--config", tr.config, "key=value config file (default settings when omitted)");
  r->add_option("--history", tr.history, "Override the history CSV path");
  r->add_option("--checkpoint", tr.checkpoint, "Override the checkpoint path");
  r->add_flag("--quiet", tr.quiet, "No progress log on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  set_num_threads(threads);
  try {
    if (*t) return cmd_tag(tag);
    if (*e) return cmd_eval(ev);
    if (*p) return cmd_profile(pr);
    if (*r) return cmd_train_toy(tr);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const checkpoint::CheckpointError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kCheckpoint;
  } catch (const frontend::AudioError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kAudio;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
