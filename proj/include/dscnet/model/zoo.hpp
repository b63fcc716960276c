// Builders and forward graphs for CNN6, CNN6Next, CNN14, CNN14Sep and the
// audio ConvNeXt variants.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dscnet/model/config.hpp"
#include "dscnet/model/layers.hpp"

namespace dscnet::model {

template <typename T>
struct Output {
  BasicTensor<T> logits;         // (N, classes)
  BasicTensor<T> probabilities;  // sigmoid(logits)
};

using ShapeLog = std::vector<std::pair<std::string, Shape>>;

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed = 0) {
    Rng rng(seed);
    return build(config, rng);
  }

  static Model build(const ModelConfig& config, Rng& rng) {
    config.validate();
    Model m(config);
    switch (config.block) {
      case BlockKind::kRegular:
      case BlockKind::kCnn6Next:
        m.build_cnn(rng);
        break;
      case BlockKind::kConvNeXt:
        m.build_convnext(rng);
        break;
    }
    return m;
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterTable<T>& parameters() { return params_; }
  const ParameterTable<T>& parameters() const { return params_; }
  std::size_t param_count() const { return params_.learnable_count(); }

  Shape input_shape(std::size_t batch = 1) const { return {batch, 1, config_.input_frames, config_.mels}; }

  // Inference (or training without gradients when `training` is set).
  Output<T> forward(const BasicTensor<T>& x, bool training = false, Rng* rng = nullptr,
                    ShapeLog* shapes = nullptr) const {
    Pass<T> pass{training, rng, nullptr};
    return forward(x, pass, shapes);
  }

  Output<T> forward(const BasicTensor<T>& x, Pass<T>& pass, ShapeLog* shapes = nullptr) const {
    check_input(x.shape());
    BasicTensor<T> h = x;
    for (const auto& part : parts_) {
      h = part->forward(h, pass);
      if (shapes) shapes->emplace_back(part->name(), h.shape());
    }
    auto probs = ops::sigmoid(h);
    return {std::move(h), std::move(probs)};
  }

  // Patchify stem of the ConvNeXt family: conv k x k / stride k, channel LN.
  BasicTensor<T> stem(const BasicTensor<T>& x) const {
    if (config_.block != BlockKind::kConvNeXt) throw ConfigError(config_.name + " has no stem");
    if (x.rank() != 4 || x.dim(2) % config_.stem_kernel || x.dim(3) % config_.stem_kernel)
      throw ShapeError("stem: time/frequency extents of " + to_string(x.shape()) + " must be divisible by " +
                       std::to_string(config_.stem_kernel));
    Pass<T> pass;
    return parts_.front()->forward(x, pass);
  }

  Trace trace(const Shape& input) const {
    check_input(input);
    Trace t;
    Shape s = input;
    for (const auto& part : parts_) s = part->trace(s, t);
    return t;
  }

  const std::vector<std::unique_ptr<Layer<T>>>& parts() const { return parts_; }

  // Copies every tensor by name from a model of the same architecture.
  template <typename U>
  void copy_parameters_from(const Model<U>& other) {
    params_.for_each([&](Parameter<T>& p) {
      const auto* src = other.parameters().find(p.name);
      if (!src || src->value.shape() != p.value.shape())
        throw ShapeError("copy_parameters_from: no matching tensor for " + p.name);
      p.value = src->value.template cast<T>();
    });
  }

 private:
  explicit Model(ModelConfig c) : config_(std::move(c)) {}

  void check_input(const Shape& s) const {
    if (s.size() != 4 || s[1] != 1 || s[3] != config_.mels)
      throw ShapeError(config_.name + ": expected input (N, 1, frames, " + std::to_string(config_.mels) + "), got " +
                       to_string(s));
    if (config_.block == BlockKind::kConvNeXt &&
        (s[2] % config_.stem_kernel != 0 || s[3] % config_.stem_kernel != 0))
      throw ShapeError(config_.name + ": time extent " + std::to_string(s[2]) + " not divisible by the stem stride " +
                       std::to_string(config_.stem_kernel) + " (pad the time axis first)");
  }

  template <typename L, typename... Args>
  L* part(Args&&... args) {
    auto l = std::make_unique<L>(std::forward<Args>(args)...);
    auto* raw = l.get();
    parts_.push_back(std::move(l));
    return raw;
  }

  void build_cnn(Rng& rng) {
    const auto& c = config_;
    if (c.input_norm) part<BatchNorm<T>>("bn0", c.mels, params_, 3);
    std::size_t cin = 1;
    for (std::size_t i = 0; i < c.channels.size(); ++i) {
      const std::size_t cout = c.channels[i];
      const std::string prefix = "blocks." + std::to_string(i);
      auto* blk = part<Sequential<T>>(prefix);
      if (c.block == BlockKind::kRegular) {
        blk->template add<Conv2d<T>>(prefix + ".conv1", ops::ConvSpec::dense(cin, cout, c.kernel, 1, c.kernel / 2),
                                     false, params_, rng);
        blk->template add<BatchNorm<T>>(prefix + ".bn1", cout, params_);
        blk->template add<ActivationLayer<T>>(prefix + ".relu1", Activation::kRelu);
        if (c.convs_per_block == 2) {
          auto spec = c.separable_second_conv ? ops::ConvSpec::depthwise(cout, 1, 3, 1)
                                              : ops::ConvSpec::dense(cout, cout, 3, 1, 1);
          blk->template add<Conv2d<T>>(prefix + ".conv2", spec, false, params_, rng);
          blk->template add<BatchNorm<T>>(prefix + ".bn2", cout, params_);
          blk->template add<ActivationLayer<T>>(prefix + ".relu2", Activation::kRelu);
        }
      } else {
        // First block sees a single input channel and is a regular conv.
        auto spec = i == 0 ? ops::ConvSpec::dense(cin, cout, c.kernel, 1, c.kernel / 2)
                           : ops::ConvSpec::depthwise(cin, c.depthwise_multiplier, c.kernel, c.kernel / 2);
        blk->template add<Conv2d<T>>(prefix + ".dwconv", spec, true, params_, rng);
        add_inverted_bottleneck(*blk, prefix, cout, rng);
      }
      if (i + 1 < c.channels.size() || c.pool_after_last_block)
        part<AvgPool2x2<T>>("pools." + std::to_string(i));
      cin = cout;
    }
    part<GlobalPool<T>>("global_pool", c.pool);
    part<Linear<T>>("fc1", cin, c.embed_dim, params_, rng);
    part<ActivationLayer<T>>("fc1.relu", Activation::kRelu);
    part<Linear<T>>("fc_audioset", c.embed_dim, c.num_classes, params_, rng);
  }

  // LN -> pointwise C->eC -> GELU -> pointwise eC->C
  void add_inverted_bottleneck(Sequential<T>& seq, const std::string& prefix, std::size_t width, Rng& rng) {
    const std::size_t hidden = config_.expansion * width;
    seq.template add<LayerNormChannels<T>>(prefix + ".norm", width, params_);
    seq.template add<Conv2d<T>>(prefix + ".pwconv1", ops::ConvSpec::pointwise(width, hidden), true, params_, rng);
    seq.template add<ActivationLayer<T>>(prefix + ".act", Activation::kGelu);
    seq.template add<Conv2d<T>>(prefix + ".pwconv2", ops::ConvSpec::pointwise(hidden, width), true, params_, rng);
  }

  void build_convnext(Rng& rng) {
    const auto& c = config_;
    if (c.input_norm) part<BatchNorm<T>>("bn0", c.mels, params_, 3);
    auto* stem = part<Sequential<T>>("stem");
    const std::size_t k = c.stem_kernel;
    stem->template add<Conv2d<T>>("stem.conv", ops::ConvSpec{1, c.channels[0], k, k, k, k, 0, 0, 1}, true, params_,
                                  rng);
    stem->template add<LayerNormChannels<T>>("stem.norm", c.channels[0], params_);

    const std::size_t total = c.total_blocks();
    std::size_t block_index = 0;
    for (std::size_t s = 0; s < c.channels.size(); ++s) {
      const std::size_t width = c.channels[s];
      if (s > 0) {
        const std::string prefix = "downsample." + std::to_string(s);
        auto* down = part<Sequential<T>>(prefix);
        down->template add<LayerNormChannels<T>>(prefix + ".norm", c.channels[s - 1], params_);
        down->template add<Conv2d<T>>(prefix + ".conv", ops::ConvSpec::dense(c.channels[s - 1], width, 2, 2, 0), true,
                                      params_, rng);
      }
      auto* stage = part<Sequential<T>>("stages." + std::to_string(s));
      for (std::size_t b = 0; b < c.depths[s]; ++b, ++block_index) {
        const std::string prefix = "stages." + std::to_string(s) + ".blocks." + std::to_string(b);
        auto branch = std::make_unique<Sequential<T>>(prefix + ".branch");
        branch->template add<Conv2d<T>>(prefix + ".dwconv", ops::ConvSpec::depthwise(width, 1, 7, 3), true, params_,
                                        rng);
        add_inverted_bottleneck(*branch, prefix, width, rng);
        if (c.layer_scale) branch->template add<LayerScale<T>>(prefix + ".gamma", width, c.layer_scale_init, params_);
        const double rate =
            total > 1 ? c.drop_path * static_cast<double>(block_index) / static_cast<double>(total - 1) : 0.0;
        stage->template add<Residual<T>>(prefix, std::move(branch), rate);
      }
    }
    part<GlobalPool<T>>("head.pool", c.pool);
    part<LayerNormChannels<T>>("head.norm", c.channels.back(), params_);
    part<Linear<T>>("head.fc", c.channels.back(), c.num_classes, params_, rng);
  }

  ModelConfig config_;
  ParameterTable<T> params_;
  std::vector<std::unique_ptr<Layer<T>>> parts_;
};

}  // namespace dscnet::model
