// Multi-label tagging metrics (AP, ROC AUC, d-prime), macro aggregation and
// manifest-driven evaluation.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dscnet/model/zoo.hpp"
#include "dscnet/pipeline.hpp"

namespace dscnet::eval {

namespace detail {

inline void check_inputs(const std::vector<double>& scores, const std::vector<int>& targets, const char* what) {
  if (scores.size() != targets.size())
    throw std::invalid_argument(std::string(what) + ": scores and targets differ in length");
  for (int t : targets)
    if (t != 0 && t != 1) throw std::invalid_argument(std::string(what) + ": targets must be 0 or 1");
}

inline std::vector<std::size_t> order_desc(const std::vector<double>& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

}  // namespace detail

// Step-interpolated AP over descending score thresholds; tied scores form a
// single threshold. NaN when there are no positives.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& targets) {
  detail::check_inputs(scores, targets, "average_precision");
  const double positives = static_cast<double>(std::count(targets.begin(), targets.end(), 1));
  if (positives == 0) return std::numeric_limits<double>::quiet_NaN();
  const auto idx = detail::order_desc(scores);
  double tp = 0, seen = 0, prev_recall = 0, ap = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += targets[idx[j]];
      ++seen;
      ++j;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// P(score_pos > score_neg) + 0.5 P(tie), via midranks. NaN when either class
// is empty.
inline double auc(const std::vector<double>& scores, const std::vector<int>& targets) {
  detail::check_inputs(scores, targets, "auc");
  const std::size_t n = scores.size();
  const double pos = static_cast<double>(std::count(targets.begin(), targets.end(), 1));
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (targets[idx[k]]) rank_sum += midrank;
    i = j;
  }
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Inverse standard normal CDF: Acklam's rational approximation followed by
// one Halley step against erfc.
inline double inverse_normal_cdf(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) return std::numeric_limits<double>::quiet_NaN();
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double lo = 0.02425, hi = 1 - lo;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= hi) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

struct DPrime {
  double value = 0.0;
  bool infinite = false;  // AUC of exactly 0 or 1
};

inline DPrime d_prime(double auc_value) {
  if (std::isnan(auc_value) || auc_value < 0.0 || auc_value > 1.0)
    throw std::invalid_argument("d_prime: AUC must lie in [0, 1]");
  const double v = std::numbers::sqrt2 * inverse_normal_cdf(auc_value);
  return {v, std::isinf(v)};
}

struct ClassMetrics {
  std::size_t positives = 0;
  double ap = std::numeric_limits<double>::quiet_NaN();
  double auc = std::numeric_limits<double>::quiet_NaN();
  double d_prime = std::numeric_limits<double>::quiet_NaN();
  bool ap_skipped = true;
  bool auc_skipped = true;
  bool d_prime_infinite = false;
};

struct EvalReport {
  std::vector<ClassMetrics> classes;
  double map = std::numeric_limits<double>::quiet_NaN();
  double mauc = std::numeric_limits<double>::quiet_NaN();
  double d_prime = std::numeric_limits<double>::quiet_NaN();  // mean of per-class d'
  double d_prime_of_mauc = std::numeric_limits<double>::quiet_NaN();
  std::size_t skipped_ap = 0;       // classes without positives
  std::size_t skipped_auc = 0;      // classes without positives or negatives
  std::size_t infinite_d_prime = 0; // AUC of 0 or 1, left out of the d' mean
  std::size_t clips = 0;
  std::size_t failed_clips = 0;
  std::vector<std::string> failures;
};

// scores and targets are row-major (clips x classes).
inline EvalReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& targets,
                                  std::size_t num_classes) {
  if (num_classes == 0) throw std::invalid_argument("evaluate_scores: need at least one class");
  if (scores.size() != targets.size() || scores.size() % num_classes)
    throw std::invalid_argument("evaluate_scores: score/target matrices are inconsistent");
  const std::size_t n = scores.size() / num_classes;
  EvalReport rep;
  rep.clips = n;
  rep.classes.resize(num_classes);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(num_classes); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    std::vector<double> s(n);
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores[i * num_classes + c];
      t[i] = targets[i * num_classes + c];
    }
    auto& m = rep.classes[c];
    m.positives = static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
    m.ap = average_precision(s, t);
    m.ap_skipped = std::isnan(m.ap);
    m.auc = auc(s, t);
    m.auc_skipped = std::isnan(m.auc);
    if (!m.auc_skipped) {
      const auto d = d_prime(m.auc);
      m.d_prime = d.value;
      m.d_prime_infinite = d.infinite;
    }
  }

  double sum_ap = 0, sum_auc = 0, sum_d = 0;
  std::size_t n_ap = 0, n_auc = 0, n_d = 0;
  for (const auto& m : rep.classes) {
    if (m.ap_skipped)
      ++rep.skipped_ap;
    else
      sum_ap += m.ap, ++n_ap;
    if (m.auc_skipped) {
      ++rep.skipped_auc;
      continue;
    }
    sum_auc += m.auc, ++n_auc;
    if (m.d_prime_infinite)
      ++rep.infinite_d_prime;
    else
      sum_d += m.d_prime, ++n_d;
  }
  if (n_ap) rep.map = sum_ap / static_cast<double>(n_ap);
  if (n_auc) {
    rep.mauc = sum_auc / static_cast<double>(n_auc);
    rep.d_prime_of_mauc = d_prime(rep.mauc).value;
  }
  if (n_d) rep.d_prime = sum_d / static_cast<double>(n_d);
  return rep;
}

// --- manifests ---------------------------------------------------------------

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestRow {
  std::string clip_id;
  std::string path;
  std::vector<std::size_t> labels;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::vector<std::string> class_names;  // empty when no class map was given

  std::size_t num_classes(std::size_t fallback) const { return class_names.empty() ? fallback : class_names.size(); }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(std::string s) {
  s = trim(std::move(s));
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '"' && s[i + 1] == '"') ++i;
      out += s[i];
    }
    return out;
  }
  return s;
}

inline std::size_t parse_id(const std::string& tok, const std::string& where) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (tok.empty() || pos != tok.size() || tok[0] == '-') throw ManifestError(where + ": bad class id '" + tok + "'");
  return static_cast<std::size_t>(v);
}

inline std::string dirname(const std::string& path) {
  const auto p = path.find_last_of('/');
  return p == std::string::npos ? "" : path.substr(0, p + 1);
}

}  // namespace detail

// `id,name` rows; ids must cover 0..n-1 exactly once. A header row is allowed.
inline std::vector<std::string> read_class_map(std::istream& in, const std::string& what = "class map") {
  std::vector<std::string> names;
  std::vector<bool> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto comma = line.find(',');
    const std::string where = what + ":" + std::to_string(lineno);
    if (comma == std::string::npos) throw ManifestError(where + ": expected 'id,name'");
    const auto id_tok = detail::trim(line.substr(0, comma));
    if (lineno == 1 && id_tok == "id") continue;
    const auto id = detail::parse_id(id_tok, where);
    if (id >= names.size()) {
      names.resize(id + 1);
      seen.resize(id + 1, false);
    }
    if (seen[id]) throw ManifestError(where + ": duplicate class id " + id_tok);
    seen[id] = true;
    names[id] = detail::unquote(line.substr(comma + 1));
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw ManifestError(what + ": class id " + std::to_string(i) + " is missing");
  return names;
}

inline std::vector<std::string> load_class_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open class map '" + path + "'");
  return read_class_map(in, path);
}

// `clip_id,path,label_ids` with ';'-separated ids. Relative paths resolve
// against `base_dir`.
inline std::vector<ManifestRow> read_manifest(std::istream& in, std::size_t num_classes,
                                              const std::string& base_dir = "", const std::string& what = "manifest") {
  std::vector<ManifestRow> rows;
  std::vector<std::string> paths;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::string where = what + ":" + std::to_string(lineno);
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw ManifestError(where + ": expected 'clip_id,path,label_ids'");
    ManifestRow r;
    r.clip_id = detail::unquote(line.substr(0, c1));
    if (lineno == 1 && r.clip_id == "clip_id") continue;
    r.path = detail::unquote(line.substr(c1 + 1, c2 - c1 - 1));
    if (!r.path.empty() && r.path[0] != '/') r.path = base_dir + r.path;
    std::stringstream ids(detail::unquote(line.substr(c2 + 1)));
    std::string tok;
    while (std::getline(ids, tok, ';')) {
      tok = detail::trim(tok);
      if (tok.empty()) continue;
      const auto id = detail::parse_id(tok, where);
      if (id >= num_classes)
        throw ManifestError(where + ": label id " + tok + " outside [0, " + std::to_string(num_classes) + ")");
      if (std::find(r.labels.begin(), r.labels.end(), id) == r.labels.end()) r.labels.push_back(id);
    }
    if (std::find(paths.begin(), paths.end(), r.path) != paths.end())
      throw ManifestError(where + ": duplicate path '" + r.path + "'");
    paths.push_back(r.path);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ManifestRow> load_manifest(const std::string& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest '" + path + "'");
  return read_manifest(in, num_classes, detail::dirname(path), path);
}

struct EvalConfig {
  std::size_t frames = 0;  // 0: model default
  std::ostream* warnings = &std::cerr;
};

// Runs the model over every readable clip; unreadable clips are warned
// about, counted, and left out.
template <typename T>
EvalReport evaluate(const model::Model<T>& m, const std::vector<ManifestRow>& rows, const EvalConfig& cfg = {}) {
  const std::size_t C = m.config().num_classes;
  std::vector<double> scores;
  std::vector<int> targets;
  std::vector<std::string> failures;
  for (const auto& r : rows) {
    BasicTensor<T> x;
    try {
      x = pipeline::prepare<T>(frontend::load_wav(r.path), m.config(), cfg.frames);
    } catch (const std::exception& e) {
      failures.push_back(r.clip_id + ": " + e.what());
      if (cfg.warnings) *cfg.warnings << "warning: skipping clip " << r.clip_id << ": " << e.what() << "\n";
      continue;
    }
    const auto out = m.forward(x);
    for (std::size_t c = 0; c < C; ++c) scores.push_back(static_cast<double>(out.probabilities[c]));
    std::vector<int> t(C, 0);
    for (auto id : r.labels) t[id] = 1;
    targets.insert(targets.end(), t.begin(), t.end());
  }
  if (scores.empty()) throw ManifestError("evaluate: no readable clips");
  auto rep = evaluate_scores(scores, targets, C);
  rep.failed_clips = failures.size();
  rep.failures = std::move(failures);
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r, const std::vector<std::string>& names = {}) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["clips"] = r.clips;
  j["failed_clips"] = r.failed_clips;
  j["failures"] = r.failures;
  j["macro"] = {{"mAP", num(r.map)},
                {"AUC", num(r.mauc)},
                {"d_prime", num(r.d_prime)},
                {"d_prime_of_macro_auc", num(r.d_prime_of_mauc)}};
  j["skipped"] = {{"ap", r.skipped_ap}, {"auc", r.skipped_auc}, {"infinite_d_prime", r.infinite_d_prime}};
  auto& cls = j["classes"] = nlohmann::json::array();
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    const auto& m = r.classes[c];
    nlohmann::json e{{"id", c},
                     {"positives", m.positives},
                     {"ap", num(m.ap)},
                     {"auc", num(m.auc)},
                     {"d_prime", m.d_prime_infinite ? nlohmann::json(m.d_prime > 0 ? "inf" : "-inf") : num(m.d_prime)}};
    if (c < names.size()) e["name"] = names[c];
    cls.push_back(std::move(e));
  }
  return j;
}

inline std::string summary_line(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "mAP=" << r.map << " AUC=" << r.mauc << " d'=" << r.d_prime
     << " (d' of macro AUC=" << r.d_prime_of_mauc << ") clips=" << r.clips << " failed=" << r.failed_clips
     << " skipped_classes=" << r.skipped_ap;
  return os.str();
}

// Human-readable per-class table.
inline std::string format_table(const EvalReport& r, const std::vector<std::string>& names = {}) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "id" << std::setw(32) << "class" << std::right << std::setw(6) << "pos"
     << std::setw(9) << "AP" << std::setw(9) << "AUC" << std::setw(9) << "d'" << "\n";
  os << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    const auto& m = r.classes[c];
    os << std::left << std::setw(6) << c << std::setw(32) << (c < names.size() ? names[c].substr(0, 31) : "")
       << std::right << std::setw(6) << m.positives;
    auto cell = [&](double v, bool skipped) {
      if (skipped)
        os << std::setw(9) << "-";
      else
        os << std::setw(9) << v;
    };
    cell(m.ap, m.ap_skipped);
    cell(m.auc, m.auc_skipped);
    cell(m.d_prime, m.auc_skipped);
    os << "\n";
  }
  os << summary_line(r) << "\n";
  return os.str();
}

}  // namespace dscnet::eval
