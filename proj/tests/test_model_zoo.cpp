#include <gtest/gtest.h>

#include <map>

#include "dscnet/model/zoo.hpp"
#include "oracles.hpp"

using namespace dscnet;
using namespace dscnet::model;

namespace {

// Closed-form learnable parameter counts, written out per family.
std::uint64_t cnn_params(const ModelConfig& c) {
  std::uint64_t n = c.input_norm ? 2 * c.mels : 0;
  std::uint64_t cin = 1;
  for (std::size_t i = 0; i < c.channels.size(); ++i) {
    const std::uint64_t co = c.channels[i], k = c.kernel;
    if (c.block == BlockKind::kRegular) {
      n += cin * co * k * k + 2 * co;
      if (c.convs_per_block == 2) n += (c.separable_second_conv ? co * 9 : co * co * 9) + 2 * co;
    } else {
      n += (i == 0 ? cin * co * k * k : cin * c.depthwise_multiplier * k * k) + co;
      n += 2 * co + (co * 4 * co + 4 * co) + (4 * co * co + co);
    }
    cin = co;
  }
  return n + cin * c.embed_dim + c.embed_dim + c.embed_dim * c.num_classes + c.num_classes;
}

std::uint64_t convnext_params(const ModelConfig& c) {
  std::uint64_t n = c.input_norm ? 2 * c.mels : 0;
  const std::uint64_t k = c.stem_kernel;
  n += k * k * c.channels[0] + c.channels[0] + 2 * c.channels[0];
  for (std::size_t s = 0; s < c.channels.size(); ++s) {
    const std::uint64_t w = c.channels[s];
    if (s > 0) n += 2 * c.channels[s - 1] + c.channels[s - 1] * w * 4 + w;
    n += c.depths[s] * ((49 * w + w) + 2 * w + (4 * w * w + 4 * w) + (4 * w * w + w) + (c.layer_scale ? w : 0));
  }
  const std::uint64_t last = c.channels.back();
  return n + 2 * last + last * c.num_classes + c.num_classes;
}

std::uint64_t closed_form(const ModelConfig& c) {
  return c.block == BlockKind::kConvNeXt ? convnext_params(c) : cnn_params(c);
}

Shape shape_of(const ShapeLog& log, const std::string& name) {
  for (const auto& [n, s] : log)
    if (n == name) return s;
  ADD_FAILURE() << "no shape logged for " << name;
  return {};
}

}  // namespace

TEST(ModelZoo, PresetParameterCountsMatchClosedForm) {
  for (const auto& name : preset_names()) {
    auto cfg = preset(name);
    auto m = Model<float>::build(cfg, 1);
    EXPECT_EQ(m.param_count(), closed_form(cfg)) << name;
  }
}

TEST(ModelZoo, PresetParameterCounts) {
  EXPECT_EQ(Model<float>::build(preset("cnn14")).param_count(), 80753615u);
  EXPECT_EQ(Model<float>::build(preset("convnext-tiny")).param_count(), 28222319u);
  EXPECT_NEAR(Model<float>::build(preset("cnn6")).param_count() / 1e6, 4.8, 0.05);
  EXPECT_NEAR(Model<float>::build(preset("cnn14sep")).param_count() / 1e6, 30.5, 0.05);
  EXPECT_NEAR(Model<float>::build(preset("convnext-small")).param_count() / 1e6, 49.9, 0.05);
}

TEST(ModelZoo, Cnn14SepSavesTheDenseSecondConvs) {
  auto dense = preset("cnn14"), sep = preset("cnn14sep");
  std::uint64_t saved = 0;
  for (auto c : dense.channels) saved += static_cast<std::uint64_t>(c) * c * 9 - c * 9;
  EXPECT_EQ(Model<float>::build(dense).param_count() - Model<float>::build(sep).param_count(), saved);
}

TEST(ModelZoo, StemPatchifiesByFour) {
  auto m = Model<float>::build(preset("convnext-tiny"), 2);
  Rng rng(3);
  auto x = dsctest::random_tensor<float>({1, 1, 1008, 224}, rng);
  EXPECT_EQ(m.stem(x).shape(), (Shape{1, 96, 252, 56}));
  auto sq = dsctest::random_tensor<float>({1, 1, 224, 224}, rng);
  EXPECT_EQ(m.stem(sq).shape(), (Shape{1, 96, 56, 56}));
  EXPECT_THROW(m.stem(dsctest::random_tensor<float>({1, 1, 1001, 224}, rng)), ShapeError);
}

TEST(ModelZoo, StageShapesFromRealForwardPass) {
  // Same spatial layout as ConvNeXt-Tiny with narrow channels.
  auto cfg = convnext_custom("narrow", {1, 1, 1, 1}, {4, 8, 8, 8}, 1000, 224);
  ASSERT_EQ(cfg.input_frames, 1008u);
  auto m = Model<float>::build(cfg, 4);
  Rng rng(5);
  ShapeLog log;
  m.forward(dsctest::random_tensor<float>({1, 1, 1008, 224}, rng), false, nullptr, &log);
  EXPECT_EQ(shape_of(log, "stem"), (Shape{1, 4, 252, 56}));
  EXPECT_EQ(shape_of(log, "stages.1"), (Shape{1, 8, 126, 28}));
  EXPECT_EQ(shape_of(log, "stages.2"), (Shape{1, 8, 63, 14}));
  EXPECT_EQ(shape_of(log, "stages.3"), (Shape{1, 8, 31, 7}));
}

TEST(ModelZoo, TinyTraceShapesMatchStageGrid) {
  auto t = Model<float>::build(preset("convnext-tiny")).trace({1, 1, 1008, 224});
  std::map<std::string, Shape> out;
  for (const auto& r : t) out[r.name] = r.output;
  EXPECT_EQ(out["stem.norm"], (Shape{1, 96, 252, 56}));
  EXPECT_EQ(out["downsample.1.conv"], (Shape{1, 192, 126, 28}));
  EXPECT_EQ(out["downsample.2.conv"], (Shape{1, 384, 63, 14}));
  EXPECT_EQ(out["downsample.3.conv"], (Shape{1, 768, 31, 7}));
  EXPECT_EQ(out["head.fc"], (Shape{1, 527}));
}

TEST(ModelZoo, InvertedBottleneckIsFourTimesWide) {
  std::size_t blocks = 0;
  for (const auto& name : preset_names()) {
    auto cfg = preset(name);
    if (cfg.block == BlockKind::kRegular) continue;
    const auto t = Model<float>::build(cfg).trace(Model<float>::build(cfg).input_shape());
    for (const auto& r : t) {
      if (r.name.ends_with(".pwconv1")) {
        EXPECT_EQ(r.output[1], 4 * r.input[1]) << name << " " << r.name;
        ++blocks;
      }
      if (r.name.ends_with(".pwconv2")) EXPECT_EQ(r.input[1], 4 * r.output[1]) << name << " " << r.name;
    }
  }
  // cnn6next 4 + tiny 18 + small 36
  EXPECT_EQ(blocks, 58u);
}

TEST(ModelZoo, Cnn14ReachesFifteenByOneGrid) {
  auto t = Model<float>::build(preset("cnn14")).trace({1, 1, 1000, 64});
  Shape last_pool;
  std::size_t pools = 0;
  for (const auto& r : t)
    if (r.kind == "avg_pool") {
      last_pool = r.output;
      ++pools;
    }
  EXPECT_EQ(pools, 6u);
  EXPECT_EQ(last_pool, (Shape{1, 2048, 15, 1}));
}

TEST(ModelZoo, Cnn6NextDoublesChannelsPerBlock) {
  auto cfg = preset("cnn6next");
  for (std::size_t i = 1; i < cfg.channels.size(); ++i) EXPECT_EQ(cfg.channels[i], 2 * cfg.channels[i - 1]);
  cfg.channels[2] = 300;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ModelZoo, ProbabilitiesInUnitIntervalAndDeterministic) {
  auto cfgs = std::vector<ModelConfig>{convnext_custom("a", {1, 1}, {4, 8}, 32, 16)};
  auto small = preset("cnn6next");
  small.channels = {4, 8};
  small.mels = 16;
  small.frames = small.input_frames = 32;
  small.embed_dim = 8;
  cfgs.push_back(small);
  for (auto cfg : cfgs) {
    cfg.num_classes = 5;
    auto a = Model<float>::build(cfg, 7), b = Model<float>::build(cfg, 7);
    Rng rng(1);
    auto x = dsctest::random_tensor<float>(a.input_shape(3), rng, -3.0, 3.0);
    auto ya = a.forward(x), yb = b.forward(x);
    EXPECT_EQ(ya.probabilities.shape(), (Shape{3, 5}));
    EXPECT_EQ(ya.probabilities.values(), yb.probabilities.values());
    for (float p : ya.probabilities.data()) {
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
    }
  }
}

TEST(ModelZoo, ZeroLayerScaleMakesBlocksIdentity) {
  auto cfg = convnext_custom("z", {2, 1}, {4, 8}, 16, 16);
  auto m = Model<float>::build(cfg, 3);
  m.parameters().for_each([](Parameter<float>& p) {
    if (p.name.ends_with(".gamma.weight") || p.name.ends_with(".gamma")) p.value.fill(0.0f);
  });
  Rng rng(2);
  auto x = dsctest::random_tensor<float>({2, 4, 4, 4}, rng);
  for (const auto& part : m.parts())
    if (part->name() == "stages.0") {
      Pass<float> pass;
      EXPECT_EQ(part->forward(x, pass).values(), x.values());
      return;
    }
  FAIL() << "stages.0 not found";
}

TEST(ModelZoo, InputShapeErrors) {
  auto m = Model<float>::build(convnext_custom("e", {1}, {4}, 16, 16), 1);
  Rng rng(1);
  EXPECT_THROW(m.forward(dsctest::random_tensor<float>({1, 1, 16, 12}, rng)), ShapeError);
  EXPECT_THROW(m.forward(dsctest::random_tensor<float>({1, 1, 18, 16}, rng)), ShapeError);
  EXPECT_THROW(m.forward(dsctest::random_tensor<float>({1, 2, 16, 16}, rng)), ShapeError);
  EXPECT_THROW(preset("resnet"), ConfigError);
}

TEST(ModelZoo, DropPathRampsOverBlocks) {
  auto cfg = preset("convnext-tiny");
  EXPECT_DOUBLE_EQ(cfg.drop_path, 0.4);
  EXPECT_DOUBLE_EQ(preset("convnext-small").drop_path, 0.8);
  EXPECT_EQ(cfg.total_blocks(), 18u);
}
