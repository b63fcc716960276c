#include <gtest/gtest.h>

#include <unistd.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>

#include "dscnet/checkpoint.hpp"
#include "oracles.hpp"

using namespace dscnet;
using namespace dscnet::checkpoint;
namespace fs = std::filesystem;

namespace {

model::ModelConfig small_convnext() {
  auto c = model::convnext_custom("ck", {1, 2}, {4, 8}, 16, 16);
  c.num_classes = 3;
  return c;
}

model::ModelConfig small_cnn(bool next) {
  auto c = model::preset(next ? "cnn6next" : "cnn6");
  c.channels = {4, 8};
  c.mels = 16;
  c.frames = c.input_frames = 16;
  c.embed_dim = 6;
  c.num_classes = 3;
  return c;
}

std::uint32_t stored_crc(const std::vector<unsigned char>& b) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[b.size() - 4 + i]) << (8 * i);
  return v;
}

}  // namespace

TEST(Checkpoint, ByteLayoutOfASingleTensor) {
  std::map<std::string, Tensor> m{{"w", Tensor::from_values({2}, {1.0f, -2.0f})}};
  const auto b = encode(m);
  // magic, version, count, name len, name, dtype, rank, dim, offset, payload len, payload, crc
  ASSERT_EQ(b.size(), 4u + 4 + 4 + 4 + 1 + 1 + 1 + 4 + 8 + 8 + 8 + 4);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "ACNX");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[8], 1);
  EXPECT_EQ(b[12], 1);
  EXPECT_EQ(b[16], 'w');
  EXPECT_EQ(b[17], 0);  // f32
  EXPECT_EQ(b[18], 1);  // rank
  EXPECT_EQ(b[19], 2);  // dim
  EXPECT_EQ(b[31], 8);  // payload length low byte
  float v[2];
  std::memcpy(v, b.data() + 39, 8);
  EXPECT_EQ(v[0], 1.0f);
  EXPECT_EQ(v[1], -2.0f);
  EXPECT_EQ(stored_crc(b), ::crc32(0L, b.data(), static_cast<uInt>(b.size() - 4)));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto m = model::Model<float>::build(small_convnext(), 5);
  Rng rng(1);
  m.parameters().for_each([&](model::Parameter<float>& p) {
    p.value = dsctest::random_tensor<float>(p.value.shape(), rng, -1e3, 1e3);
  });
  const auto bytes = encode(state_dict(m));
  auto ck = decode(bytes);
  auto fresh = model::Model<float>::build(small_convnext(), 99);
  EXPECT_TRUE(apply(ck, fresh).clean());
  m.parameters().for_each([&](const model::Parameter<float>& p) {
    const auto& q = fresh.parameters().find(p.name)->value;
    ASSERT_EQ(std::memcmp(p.value.ptr(), q.ptr(), p.value.size() * sizeof(float)), 0) << p.name;
  });
  EXPECT_EQ(encode(state_dict(fresh)), bytes);
}

TEST(Checkpoint, SpecialValuesSurvive) {
  std::map<std::string, Tensor> m{
      {"a", Tensor::from_values({4}, {-0.0f, std::numeric_limits<float>::infinity(),
                                      std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max()})}};
  const auto ck = decode(encode(m));
  auto back = ck.find("a");
  ASSERT_NE(back, nullptr);
  EXPECT_EQ(std::memcmp(back->ptr(), m.at("a").ptr(), 16), 0);
}

TEST(Checkpoint, FileRoundTripAndDeterministicBytes) {
  auto dir = fs::temp_directory_path() / ("dscnet_ck_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto m = model::Model<float>::build(small_cnn(true), 2);
  save(m, (dir / "a.acnx").string());
  save(m, (dir / "b.acnx").string());
  EXPECT_EQ(read_file((dir / "a.acnx").string()), read_file((dir / "b.acnx").string()));
  auto ck = load((dir / "a.acnx").string());
  EXPECT_EQ(ck.tensors.size(), state_dict(m).size());
  EXPECT_THROW(load((dir / "missing.acnx").string()), CheckpointError);
  fs::remove_all(dir);
}

TEST(Checkpoint, EveryFlippedByteIsDetected) {
  std::map<std::string, Tensor> m{{"x", Tensor::from_values({3}, {1, 2, 3})}, {"y", Tensor::zeros({2, 2})}};
  const auto good = encode(m);
  for (std::size_t i = 0; i < good.size(); ++i) {
    auto bad = good;
    bad[i] ^= 0x10;
    EXPECT_THROW(decode(bad), CheckpointError) << "byte " << i;
  }
}

TEST(Checkpoint, CorruptionMessageMentionsCrc) {
  auto b = encode({{"x", Tensor::zeros({1})}});
  b[b.size() - 6] ^= 1;
  try {
    decode(b, "file.acnx");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("file.acnx"), std::string::npos);
  }
}

namespace {

// Re-stamps a valid CRC after editing so the structural checks are reached.
std::vector<unsigned char> restamp(std::vector<unsigned char> b) {
  const auto crc = ::crc32(0L, b.data(), static_cast<uInt>(b.size() - 4));
  for (int i = 0; i < 4; ++i) b[b.size() - 4 + i] = static_cast<unsigned char>(crc >> (8 * i));
  return b;
}

}  // namespace

TEST(Checkpoint, StructuralErrors) {
  const auto good = encode({{"x", Tensor::zeros({2})}});
  auto magic = good;
  magic[0] = 'B';
  EXPECT_THROW(decode(restamp(magic)), CheckpointError);
  auto version = good;
  version[4] = 2;
  EXPECT_THROW(decode(restamp(version)), CheckpointError);
  auto dtype = good;
  dtype[17] = 1;
  EXPECT_THROW(decode(restamp(dtype)), CheckpointError);
  auto trailing = good;
  trailing.insert(trailing.end() - 4, 0);
  EXPECT_THROW(decode(restamp(trailing)), CheckpointError);
  EXPECT_THROW(decode(std::vector<unsigned char>(good.begin(), good.begin() + 10)), CheckpointError);
  EXPECT_THROW(decode({}), CheckpointError);
}

TEST(Checkpoint, StrictApplyNamesTheOffenderAndLeavesModelUntouched) {
  auto m = model::Model<float>::build(small_convnext(), 1);
  auto sd = state_dict(m);
  auto node = sd.extract("head.fc.weight");
  node.key() = "head.classifier.weight";
  sd.insert(std::move(node));
  auto ck = decode(encode(sd));

  auto target = model::Model<float>::build(small_convnext(), 2);
  const auto before = state_dict(target);
  try {
    apply(ck, target);
    FAIL() << "strict apply accepted a renamed tensor";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("head.fc.weight"), std::string::npos) << msg;
    EXPECT_NE(msg.find("head.classifier.weight"), std::string::npos) << msg;
  }
  EXPECT_EQ(encode(state_dict(target)), encode(before));
}

TEST(Checkpoint, NonStrictCrossArchitectureReport) {
  auto cnn6 = model::Model<float>::build(small_cnn(false), 1);
  auto next = model::Model<float>::build(small_cnn(true), 2);
  auto rep = apply(decode(encode(state_dict(cnn6))), next, false);
  EXPECT_FALSE(rep.clean());
  EXPECT_FALSE(rep.missing.empty());
  EXPECT_FALSE(rep.unexpected.empty());
  EXPECT_NE(std::find(rep.unexpected.begin(), rep.unexpected.end(), "blocks.0.bn1.weight"), rep.unexpected.end());
  EXPECT_NE(std::find(rep.missing.begin(), rep.missing.end(), "blocks.1.pwconv1.weight"), rep.missing.end());
  // head layers share names and shapes
  EXPECT_NE(std::find(rep.loaded.begin(), rep.loaded.end(), "fc_audioset.weight"), rep.loaded.end());
  EXPECT_EQ(next.parameters().find("fc_audioset.weight")->value.values(),
            cnn6.parameters().find("fc_audioset.weight")->value.values());
  EXPECT_NE(rep.summary().find("missing"), std::string::npos);
}

TEST(Checkpoint, ShapeMismatchReported) {
  auto a = small_convnext();
  auto b = a;
  b.num_classes = 4;
  auto src = model::Model<float>::build(a, 1);
  auto dst = model::Model<float>::build(b, 1);
  auto ck = decode(encode(state_dict(src)));
  EXPECT_THROW(apply(ck, dst), CheckpointError);
  auto rep = apply(ck, dst, false);
  ASSERT_EQ(rep.mismatched.size(), 2u);
  EXPECT_NE(rep.mismatched[0].find("head.fc"), std::string::npos);
}

TEST(Checkpoint, DoubleModelLoadsFloatCheckpoint) {
  auto f = model::Model<float>::build(small_convnext(), 3);
  auto d = model::Model<double>::build(small_convnext(), 4);
  EXPECT_TRUE(apply(decode(encode(state_dict(f))), d).clean());
  Rng rng(1);
  auto x = dsctest::random_tensor<float>(f.input_shape(2), rng);
  auto pf = f.forward(x).probabilities;
  auto pd = d.forward(x.cast<double>()).probabilities;
  for (std::size_t i = 0; i < pf.size(); ++i) EXPECT_NEAR(pf[i], pd[i], 1e-5);
}
