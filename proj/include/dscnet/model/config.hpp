// Declarative architecture descriptions for the model family.
#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "dscnet/ops/pool.hpp"

namespace dscnet::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class BlockKind {
  kRegular,   // PANN conv -> BN -> ReLU blocks (CNN6, CNN14, CNN14Sep)
  kCnn6Next,  // 7x7 (depthwise K=2) conv + inverted bottleneck, no residual
  kConvNeXt,  // stem, residual depthwise 7x7 blocks, strided downsamplers
};

struct ModelConfig {
  std::string name;
  std::size_t frames = 1000;        // log-mel frames produced by the frontend
  std::size_t mels = 64;            // log-mel bins
  std::size_t input_frames = 1000;  // time extent fed to the network (after padding)
  BlockKind block = BlockKind::kRegular;

  std::vector<std::size_t> channels;  // per block (CNN family) or per stage (ConvNeXt)
  std::vector<std::size_t> depths;    // ConvNeXt blocks per stage

  // CNN family
  std::size_t kernel = 3;
  std::size_t convs_per_block = 2;
  bool separable_second_conv = false;  // CNN14Sep
  bool pool_after_last_block = true;
  std::size_t embed_dim = 2048;        // width of the FC+ReLU before the classifier
  std::size_t depthwise_multiplier = 2;  // CNN6Next

  // ConvNeXt
  std::size_t stem_kernel = 4;
  std::size_t expansion = 4;
  bool layer_scale = true;
  double layer_scale_init = 1e-6;
  double drop_path = 0.0;  // maximum rate, ramped linearly over blocks

  std::size_t num_classes = 527;
  ops::GlobalPoolMode pool = ops::GlobalPoolMode::kPann;
  bool input_norm = true;  // batch norm over mel bins on the raw input

  void validate() const {
    auto fail = [&](const std::string& m) { throw ConfigError("model '" + name + "': " + m); };
    if (channels.empty()) fail("channels must not be empty");
    if (std::any_of(channels.begin(), channels.end(), [](auto c) { return c == 0; })) fail("channels must be >= 1");
    if (num_classes == 0) fail("num_classes must be >= 1");
    if (frames == 0 || mels == 0 || input_frames < frames) fail("bad input extents");
    if (!(drop_path >= 0.0 && drop_path < 1.0)) fail("drop_path must be in [0, 1)");
    switch (block) {
      case BlockKind::kConvNeXt:
        if (depths.size() != channels.size()) fail("depths and channels must have one entry per stage");
        if (std::any_of(depths.begin(), depths.end(), [](auto d) { return d == 0; })) fail("depths must be >= 1");
        if (stem_kernel == 0 || expansion == 0) fail("stem kernel and expansion must be >= 1");
        break;
      case BlockKind::kCnn6Next:
        for (std::size_t i = 1; i < channels.size(); ++i)
          if (channels[i] != depthwise_multiplier * channels[i - 1])
            fail("cnn6next channels must grow by the depthwise multiplier per block");
        if (expansion == 0) fail("expansion must be >= 1");
        [[fallthrough]];
      case BlockKind::kRegular:
        if (kernel == 0 || kernel % 2 == 0) fail("kernel must be odd");
        if (convs_per_block < 1 || convs_per_block > 2) fail("convs_per_block must be 1 or 2");
        if (embed_dim == 0) fail("embed_dim must be >= 1");
        break;
    }
  }

  std::size_t total_blocks() const {
    if (block != BlockKind::kConvNeXt) return channels.size();
    std::size_t n = 0;
    for (auto d : depths) n += d;
    return n;
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"cnn6",     "cnn6next",      "cnn14",
                                              "cnn14sep", "convnext-tiny", "convnext-small"};
  return names;
}

inline std::string preset_list() {
  std::string s;
  for (const auto& n : preset_names()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

// Reduced ConvNeXt used for desk-scale training.
inline ModelConfig convnext_custom(std::string name, std::vector<std::size_t> depths, std::vector<std::size_t> channels,
                                   std::size_t frames, std::size_t mels) {
  ModelConfig c;
  c.name = std::move(name);
  c.block = BlockKind::kConvNeXt;
  c.depths = std::move(depths);
  c.channels = std::move(channels);
  c.frames = frames;
  c.mels = mels;
  c.input_frames = (frames + 15) / 16 * 16;
  c.pool = ops::GlobalPoolMode::kGap;
  c.input_norm = false;
  return c;
}

inline ModelConfig preset(const std::string& name) {
  ModelConfig c;
  c.name = name;
  if (name == "cnn6" || name == "cnn6next") {
    c.channels = {64, 128, 256, 512};
    c.embed_dim = 512;
    c.pool_after_last_block = false;  // pooling between blocks only
    if (name == "cnn6") {
      c.kernel = 5;
      c.convs_per_block = 1;
    } else {
      c.block = BlockKind::kCnn6Next;
      c.kernel = 7;
      c.convs_per_block = 1;
    }
  } else if (name == "cnn14" || name == "cnn14sep") {
    c.channels = {64, 128, 256, 512, 1024, 2048};
    c.kernel = 3;
    c.convs_per_block = 2;
    c.embed_dim = 2048;
    c.separable_second_conv = name == "cnn14sep";
  } else if (name == "convnext-tiny" || name == "convnext-small") {
    c = convnext_custom(name, name == "convnext-tiny" ? std::vector<std::size_t>{3, 3, 9, 3}
                                                     : std::vector<std::size_t>{3, 3, 27, 3},
                        {96, 192, 384, 768}, 1000, 224);
    c.input_frames = 1008;
    c.drop_path = name == "convnext-tiny" ? 0.4 : 0.8;
  } else {
    throw ConfigError("unknown model '" + name + "'; valid names: " + preset_list());
  }
  c.validate();
  return c;
}

}  // namespace dscnet::model
