#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dscnet/evalkit.hpp"
#include "oracles.hpp"

using namespace dscnet;
using namespace dscnet::eval;
namespace fs = std::filesystem;

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(average_precision({0.9, 0.8, 0.1}, {1, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({0.9, 0.1}, {0, 1}), 0.5);
  EXPECT_NEAR(average_precision({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0}), (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
  EXPECT_TRUE(std::isnan(average_precision({0.3, 0.2}, {0, 0})));
  EXPECT_THROW(average_precision({0.3}, {1, 0}), std::invalid_argument);
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc({0.9, 0.8, 0.2}, {1, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(auc({0.9, 0.4, 0.5, 0.1}, {1, 1, 0, 0}), 0.75);
  EXPECT_TRUE(std::isnan(auc({0.1, 0.2}, {1, 1})));
  EXPECT_TRUE(std::isnan(auc({0.1, 0.2}, {0, 0})));
}

TEST(Metrics, ExhaustiveLabelingsMatchBruteForce) {
  Rng rng(1);
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    // distinct scores, heavy ties, and random values drawn from a 3-level set
    std::vector<std::vector<double>> score_sets;
    std::vector<double> distinct(n), tied(n), coarse(n);
    for (std::size_t i = 0; i < n; ++i) {
      distinct[i] = std::uniform_real_distribution<double>(0, 1)(rng);
      tied[i] = static_cast<double>(i / 2);
      coarse[i] = static_cast<double>(std::uniform_int_distribution<int>(0, 2)(rng)) / 2.0;
    }
    score_sets = {distinct, tied, coarse};
    for (const auto& s : score_sets)
      for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        std::vector<int> t(n);
        int pos = 0;
        for (std::size_t i = 0; i < n; ++i) pos += t[i] = (mask >> i) & 1;
        const double ap = average_precision(s, t), a = auc(s, t);
        if (pos == 0) {
          EXPECT_TRUE(std::isnan(ap));
        } else {
          ASSERT_NEAR(ap, dsctest::brute_force_ap(s, t), 1e-12) << n << " " << mask;
        }
        if (pos == 0 || pos == static_cast<int>(n)) {
          EXPECT_TRUE(std::isnan(a));
        } else {
          ASSERT_NEAR(a, dsctest::brute_force_auc(s, t), 1e-12) << n << " " << mask;
        }
        ++checked;
      }
  }
  EXPECT_EQ(checked, 3u * ((1u << 9) - 2));
}

TEST(DPrime, Examples) {
  EXPECT_EQ(d_prime(0.5).value, 0.0);
  EXPECT_NEAR(d_prime(0.841345).value, 1.41421, 1e-5);
  EXPECT_NEAR(d_prime(0.975).value, 2.7718, 1e-4);
  EXPECT_TRUE(d_prime(1.0).infinite);
  EXPECT_GT(d_prime(1.0).value, 0);
  EXPECT_TRUE(d_prime(0.0).infinite);
  EXPECT_LT(d_prime(0.0).value, 0);
  EXPECT_THROW(d_prime(1.5), std::invalid_argument);
  EXPECT_THROW(d_prime(std::nan("")), std::invalid_argument);
}

TEST(DPrime, InverseNormalAgainstSeriesOracle) {
  double worst = 0;
  for (int k = 1; k < 2000; ++k) {
    const double p = static_cast<double>(k) / 2000.0;
    worst = std::max(worst, std::abs(inverse_normal_cdf(p) - dsctest::inverse_phi_bisect(p)));
  }
  for (double p : {1e-6, 1e-5, 1e-4, 1e-3, 1 - 1e-3, 1 - 1e-4, 1 - 1e-5, 1 - 1e-6})
    worst = std::max(worst, std::abs(inverse_normal_cdf(p) - dsctest::inverse_phi_bisect(p)));
  EXPECT_LT(worst, 1e-6);
  for (double x : {-4.0, -1.0, 0.0, 0.3, 2.5}) EXPECT_NEAR(normal_cdf(x), dsctest::phi_series(x), 1e-12);
}

TEST(DPrime, MonotoneAndAntisymmetric) {
  double prev = -1e300;
  for (int k = 1; k < 1000; ++k) {
    const double a = k / 1000.0;
    const double d = d_prime(a).value;
    EXPECT_GT(d, prev);
    prev = d;
    EXPECT_NEAR(d_prime(1 - a).value, -d, 1e-9);
  }
}

TEST(Metrics, InvariantUnderMonotoneTransform) {
  Rng rng(3);
  std::vector<double> s(200);
  std::vector<int> t(200);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::uniform_real_distribution<double>(0, 1)(rng);
    t[i] = std::bernoulli_distribution(0.3 + 0.4 * s[i])(rng);
  }
  std::vector<double> g(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) g[i] = std::exp(5 * s[i]) - 3;
  EXPECT_EQ(average_precision(s, t), average_precision(g, t));
  EXPECT_EQ(auc(s, t), auc(g, t));
}

TEST(EvaluateScores, MacroIsMeanOfHandComputedClasses) {
  // clips x classes
  const std::vector<double> s{0.9, 0.1, 0.8, 0.7, 0.7, 0.2, 0.6, 0.9};
  const std::vector<int> t{1, 0, 0, 1, 1, 0, 0, 1};
  auto r = evaluate_scores(s, t, 2);
  const double ap0 = average_precision({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0});
  const double ap1 = average_precision({0.1, 0.7, 0.2, 0.9}, {0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(r.map, (ap0 + ap1) / 2);
  EXPECT_EQ(r.clips, 4u);
  EXPECT_EQ(r.classes[1].positives, 2u);
  // class 1 separates perfectly: AUC 1, d' infinite, left out of the d' mean
  EXPECT_EQ(r.infinite_d_prime, 1u);
  EXPECT_DOUBLE_EQ(r.d_prime, r.classes[0].d_prime);
  EXPECT_NEAR(r.d_prime_of_mauc, d_prime(r.mauc).value, 1e-12);
}

TEST(EvaluateScores, ClassesWithoutPositivesAreSkipped) {
  const std::vector<double> s{0.9, 0.1, 0.5, 0.8, 0.2, 0.3};
  const std::vector<int> t{1, 0, 0, 0, 0, 0};
  auto r = evaluate_scores(s, t, 3);
  EXPECT_EQ(r.skipped_ap, 2u);
  EXPECT_EQ(r.skipped_auc, 2u);
  EXPECT_DOUBLE_EQ(r.map, r.classes[0].ap);
  EXPECT_THROW(evaluate_scores({0.1, 0.2, 0.3}, {0, 1, 0}, 2), std::invalid_argument);
}

TEST(EvaluateScores, MacroDPrimeDiffersFromDPrimeOfMacroAuc) {
  // per-class AUCs 0.75 and 0.5
  const std::vector<double> s{0.9, 0.9, 0.8, 0.1, 0.3, 0.6, 0.2, 0.5};
  const std::vector<int> t{1, 1, 0, 1, 1, 0, 0, 0};
  auto r = evaluate_scores(s, t, 2);
  EXPECT_TRUE(std::isfinite(r.d_prime));
  EXPECT_GT(std::abs(r.d_prime - r.d_prime_of_mauc), 1e-6);
}

TEST(EvaluateScores, RandomScoresGiveChanceAuc) {
  Rng rng(4);
  constexpr std::size_t clips = 10000, classes = 10;
  std::vector<double> s(clips * classes);
  std::vector<int> t(clips * classes);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::uniform_real_distribution<double>(0, 1)(rng);
    t[i] = std::bernoulli_distribution(0.5)(rng);
  }
  auto r = evaluate_scores(s, t, classes);
  EXPECT_NEAR(r.mauc, 0.5, 0.02);
  EXPECT_NEAR(r.map, 0.5, 0.02);
}

TEST(Manifest, ParsesRowsAndResolvesPaths) {
  std::istringstream in("clip_id,path,label_ids\na,x.wav,0;2\nb,/abs/y.wav,\nc,\"sub/z.wav\",1 ; 1\n");
  auto rows = read_manifest(in, 3, "/data/");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].path, "/data/x.wav");
  EXPECT_EQ(rows[0].labels, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(rows[1].path, "/abs/y.wav");
  EXPECT_TRUE(rows[1].labels.empty());
  EXPECT_EQ(rows[2].labels, (std::vector<std::size_t>{1}));
}

TEST(Manifest, ErrorsNameTheLine) {
  auto fails_at = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      read_manifest(in, 3, "", "m.csv");
    } catch (const ManifestError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  EXPECT_TRUE(fails_at("a,x.wav,3\n", "m.csv:1"));
  EXPECT_TRUE(fails_at("a,x.wav,0\nb,y.wav\n", "m.csv:2"));
  EXPECT_TRUE(fails_at("a,x.wav,-1\n", "bad class id"));
  EXPECT_TRUE(fails_at("a,x.wav,0\nb,x.wav,1\n", "duplicate path"));
  EXPECT_THROW(load_manifest("/nonexistent/manifest.csv", 3), ManifestError);
}

TEST(ClassMap, ParsesAndValidates) {
  std::istringstream ok("id,name\n1,\"Dog, barking\"\n0,Speech\n");
  EXPECT_EQ(read_class_map(ok), (std::vector<std::string>{"Speech", "Dog, barking"}));
  std::istringstream gap("0,a\n2,c\n");
  EXPECT_THROW(read_class_map(gap), ManifestError);
  std::istringstream dup("0,a\n0,b\n");
  EXPECT_THROW(read_class_map(dup), ManifestError);
}

TEST(Evaluate, RunsModelOverManifestAndSkipsBadClips) {
  const auto dir = fs::temp_directory_path() / ("dscnet_eval_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto cfg = model::convnext_custom("e", {1}, {4}, 100, 32);
  cfg.num_classes = 2;
  auto m = model::Model<float>::build(cfg, 1);
  std::ofstream man(dir / "m.csv");
  for (int i = 0; i < 4; ++i) {
    frontend::Waveform w{std::vector<float>(16000), 16000};
    for (std::size_t k = 0; k < w.size(); ++k) w.samples[k] = static_cast<float>(0.3 * std::sin(0.01 * (i + 1) * k));
    frontend::save_wav((dir / ("c" + std::to_string(i) + ".wav")).string(), w);
    man << "c" << i << ",c" << i << ".wav," << (i % 2) << "\n";
  }
  std::ofstream(dir / "bad.wav") << "not audio";
  man << "bad,bad.wav,0\n";
  man.close();

  std::ostringstream warnings;
  auto rows = load_manifest((dir / "m.csv").string(), 2);
  auto r = evaluate(m, rows, {0, &warnings});
  EXPECT_EQ(r.clips, 4u);
  EXPECT_EQ(r.failed_clips, 1u);
  EXPECT_NE(warnings.str().find("bad"), std::string::npos);
  EXPECT_EQ(r.skipped_ap, 0u);
  for (const auto& c : r.classes) EXPECT_EQ(c.positives, 2u);

  const auto j = to_json(r, {"zero", "one"});
  EXPECT_EQ(j["clips"], 4);
  EXPECT_EQ(j["classes"][1]["name"], "one");
  EXPECT_NE(summary_line(r).find("mAP="), std::string::npos);
  EXPECT_NE(format_table(r, {"zero", "one"}).find("zero"), std::string::npos);

  std::vector<ManifestRow> only_bad{rows.back()};
  EXPECT_THROW(evaluate(m, only_bad, {0, nullptr}), ManifestError);
  fs::remove_all(dir);
}

TEST(Evaluate, InfiniteDPrimeSerializedAsString) {
  auto r = evaluate_scores({0.9, 0.1}, {1, 0}, 1);
  auto j = to_json(r);
  EXPECT_EQ(j["classes"][0]["d_prime"], "inf");
  EXPECT_TRUE(j["macro"]["d_prime"].is_null());
}
