// Concrete layers. Each registers its parameters in the model's table at
// construction and records a backward step on the tape when one is present.
#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dscnet/model/module.hpp"
#include "dscnet/nn_ops.hpp"

namespace dscnet::model {

// Truncated normal at +/- 2 sigma, the ConvNeXt weight init.
template <typename T>
BasicTensor<T> trunc_normal(Shape shape, double stddev, Rng& rng) {
  auto t = BasicTensor<T>::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) {
    double s;
    do {
      s = dist(rng);
    } while (std::abs(s) > 2.0 * stddev);
    v = static_cast<T>(s);
  }
  return t;
}

constexpr double kInitStd = 0.02;

inline std::string join(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::string name, const ops::ConvSpec& spec, bool bias, ParameterTable<T>& table, Rng& rng)
      : Layer<T>(std::move(name)), spec_(spec) {
    spec_.validate();
    weight_ = table.add(join(this->name(), "weight"), trunc_normal<T>(spec_.weight_shape(), kInitStd, rng));
    if (bias) bias_ = table.add(join(this->name(), "bias"), BasicTensor<T>::zeros({spec_.out_channels}), true, false);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    auto y = ops::conv2d(x, weight_->value, bias_ ? &bias_->value : nullptr, spec_);
    if (pass.tape) {
      pass.tape->push([x, w = weight_, b = bias_, spec = spec_](const BasicTensor<T>& gy) {
        auto g = ops::conv2d_backward(gy, x, w->value, b != nullptr, spec);
        w->accumulate_grad(g.weight);
        if (b) b->accumulate_grad(g.bias);
        return std::move(g.input);
      });
    }
    return y;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    auto o = spec_.output_shape(in);
    out.push_back({this->name(), kind(), in, o, spec_.macs(in)});
    return o;
  }

  const ops::ConvSpec& spec() const { return spec_; }

 private:
  std::string kind() const {
    if (spec_.kernel_h == 1 && spec_.kernel_w == 1 && spec_.groups == 1) return "pointwise";
    if (spec_.groups > 1 && spec_.is_depthwise()) return "depthwise";
    return "conv";
  }

  ops::ConvSpec spec_;
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

// Batch norm over `axis` (1 = channels, 3 = mel bins for the input norm).
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  BatchNorm(std::string name, std::size_t channels, ParameterTable<T>& table, std::size_t axis = 1)
      : Layer<T>(std::move(name)), axis_(axis) {
    scale_ = table.add(join(this->name(), "weight"), BasicTensor<T>::full({channels}, T{1}), true, false);
    shift_ = table.add(join(this->name(), "bias"), BasicTensor<T>::zeros({channels}), true, false);
    mean_ = table.add(join(this->name(), "running_mean"), BasicTensor<T>::zeros({channels}), false, false);
    var_ = table.add(join(this->name(), "running_var"), BasicTensor<T>::full({channels}, T{1}), false, false);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    auto p = params();
    ops::NormCache cache;
    auto y = ops::batch_norm2d(x, p, pass.training, &cache, axis_);
    if (pass.training) {
      mean_->value = p.running_mean;
      var_->value = p.running_var;
    }
    if (pass.tape) {
      pass.tape->push([x, p, cache = std::move(cache), s = scale_, b = shift_,
                       axis = axis_](const BasicTensor<T>& gy) {
        auto g = ops::batch_norm2d_backward(gy, x, p, cache, axis);
        s->accumulate_grad(g.scale);
        b->accumulate_grad(g.shift);
        return std::move(g.input);
      });
    }
    return y;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    out.push_back({this->name(), "batch_norm", in, in, 0});
    return in;
  }

 private:
  ops::NormParams<T> params() const {
    return {scale_->value, shift_->value, mean_->value, var_->value, 1e-5, 0.1};
  }

  std::size_t axis_;
  Parameter<T>* scale_;
  Parameter<T>* shift_;
  Parameter<T>* mean_;
  Parameter<T>* var_;
};

template <typename T>
class LayerNormChannels : public Layer<T> {
 public:
  static constexpr double kEps = 1e-6;

  LayerNormChannels(std::string name, std::size_t channels, ParameterTable<T>& table) : Layer<T>(std::move(name)) {
    scale_ = table.add(join(this->name(), "weight"), BasicTensor<T>::full({channels}, T{1}), true, false);
    shift_ = table.add(join(this->name(), "bias"), BasicTensor<T>::zeros({channels}), true, false);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    ops::NormCache cache;
    auto y = ops::layer_norm_channels(x, scale_->value, shift_->value, kEps, pass.tape ? &cache : nullptr);
    if (pass.tape) {
      pass.tape->push([x, cache = std::move(cache), s = scale_, b = shift_](const BasicTensor<T>& gy) {
        auto g = ops::layer_norm_channels_backward(gy, x, s->value, cache);
        s->accumulate_grad(g.scale);
        b->accumulate_grad(g.shift);
        return std::move(g.input);
      });
    }
    return y;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    out.push_back({this->name(), "layer_norm", in, in, 0});
    return in;
  }

 private:
  Parameter<T>* scale_;
  Parameter<T>* shift_;
};

enum class Activation { kRelu, kGelu };

template <typename T>
class ActivationLayer : public Layer<T> {
 public:
  ActivationLayer(std::string name, Activation kind) : Layer<T>(std::move(name)), kind_(kind) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    if (pass.tape) {
      pass.tape->push([x, kind = kind_](const BasicTensor<T>& gy) {
        return kind == Activation::kRelu ? ops::relu_backward(gy, x) : ops::gelu_backward(gy, x);
      });
    }
    return kind_ == Activation::kRelu ? ops::relu(x) : ops::gelu(x);
  }

  Shape trace(const Shape& in, Trace& out) const override {
    out.push_back({this->name(), kind_ == Activation::kRelu ? "relu" : "gelu", in, in, 0});
    return in;
  }

 private:
  Activation kind_;
};

template <typename T>
class AvgPool2x2 : public Layer<T> {
 public:
  using Layer<T>::Layer;

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    if (pass.tape) {
      pass.tape->push([shape = x.shape()](const BasicTensor<T>& gy) { return ops::avg_pool2x2_backward(gy, shape); });
    }
    return ops::avg_pool2x2(x);
  }

  Shape trace(const Shape& in, Trace& out) const override {
    if (in.size() != 4 || in[2] < 2 || in[3] < 2) throw ShapeError("avg_pool2x2: bad input " + to_string(in));
    Shape o{in[0], in[1], in[2] / 2, in[3] / 2};
    out.push_back({this->name(), "avg_pool", in, o, 0});
    return o;
  }
};

template <typename T>
class GlobalPool : public Layer<T> {
 public:
  GlobalPool(std::string name, ops::GlobalPoolMode mode) : Layer<T>(std::move(name)), mode_(mode) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    std::vector<std::size_t> argmax;
    auto y = ops::global_pool(x, mode_, &argmax);
    if (pass.tape) {
      pass.tape->push([shape = x.shape(), mode = mode_, argmax = std::move(argmax)](const BasicTensor<T>& gy) {
        return ops::global_pool_backward(gy, shape, mode, argmax);
      });
    }
    return y;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    if (in.size() != 4) throw ShapeError("global_pool: bad input " + to_string(in));
    Shape o{in[0], in[1]};
    out.push_back({this->name(), std::string("global_pool_") + ops::pool_mode_name(mode_), in, o, 0});
    return o;
  }

 private:
  ops::GlobalPoolMode mode_;
};

template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, ParameterTable<T>& table, Rng& rng)
      : Layer<T>(std::move(name)) {
    weight_ = table.add(join(this->name(), "weight"), trunc_normal<T>({out, in}, kInitStd, rng));
    bias_ = table.add(join(this->name(), "bias"), BasicTensor<T>::zeros({out}), true, false);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    auto y = ops::linear(x, weight_->value, bias_->value);
    if (pass.tape) {
      pass.tape->push([x, w = weight_, b = bias_](const BasicTensor<T>& gy) {
        auto g = ops::linear_backward(gy, x, w->value);
        w->accumulate_grad(g.weight);
        b->accumulate_grad(g.bias);
        return std::move(g.input);
      });
    }
    return y;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    const auto& ws = weight_->value.shape();
    if (in.size() != 2 || in[1] != ws[1]) throw ShapeError("linear: bad input " + to_string(in));
    Shape o{in[0], ws[0]};
    out.push_back({this->name(), "linear", in, o, static_cast<std::uint64_t>(in[0]) * ws[0] * ws[1]});
    return o;
  }

 private:
  Parameter<T>* weight_;
  Parameter<T>* bias_;
};

// Per-channel learnable multiplier on a residual branch.
template <typename T>
class LayerScale : public Layer<T> {
 public:
  LayerScale(std::string name, std::size_t channels, double init, ParameterTable<T>& table)
      : Layer<T>(std::move(name)) {
    gamma_ = table.add(this->name(), BasicTensor<T>::full({channels}, static_cast<T>(init)), true, false);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    const auto& g = gamma_->value;
    auto sp = dscnet::detail::split_axis(x.shape(), 1);
    if (sp.extent != g.size()) throw ShapeError("layer_scale: channel mismatch");
    auto y = x;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t c = 0; c < sp.extent; ++c)
        for (std::size_t i = 0; i < sp.inner; ++i) y[(o * sp.extent + c) * sp.inner + i] *= g[c];
    if (pass.tape) {
      pass.tape->push([x, p = gamma_](const BasicTensor<T>& gy) {
        auto sp = dscnet::detail::split_axis(x.shape(), 1);
        auto dx = gy;
        auto dg = BasicTensor<T>::zeros({sp.extent});
        for (std::size_t c = 0; c < sp.extent; ++c) {
          double acc = 0.0;
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
              auto k = (o * sp.extent + c) * sp.inner + i;
              acc += static_cast<double>(gy[k]) * x[k];
              dx[k] = gy[k] * p->value[c];
            }
          dg[c] = static_cast<T>(acc);
        }
        p->accumulate_grad(dg);
        return dx;
      });
    }
    return y;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    out.push_back({this->name(), "layer_scale", in, in, 0});
    return in;
  }

 private:
  Parameter<T>* gamma_;
};

// x + drop_path(branch(x)). The branch must preserve the input shape.
template <typename T>
class Residual : public Layer<T> {
 public:
  Residual(std::string name, std::unique_ptr<Sequential<T>> branch, double drop_rate)
      : Layer<T>(std::move(name)), branch_(std::move(branch)), drop_rate_(drop_rate) {
    ops::check_drop_rate(drop_rate_);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    auto sub_tape = pass.tape ? std::make_shared<Tape<T>>() : nullptr;
    Pass<T> sub{pass.training, pass.rng, sub_tape.get()};
    auto branch = branch_->forward(x, sub);
    if (branch.shape() != x.shape())
      throw ShapeError(this->name() + ": block changed shape " + to_string(x.shape()) + " -> " +
                       to_string(branch.shape()));
    std::vector<T> keep;
    if (pass.training && drop_rate_ > 0.0) {
      if (!pass.rng) throw std::logic_error(this->name() + ": drop-path in training needs an rng");
      branch = ops::drop_path(branch, drop_rate_, true, *pass.rng, &keep);
    }
    if (pass.tape) {
      pass.tape->push([sub_tape, keep](const BasicTensor<T>& gy) {
        auto gb = keep.empty() ? gy : ops::drop_path_backward(gy, keep);
        auto gx = sub_tape->backward(gb);
        dscnet::accumulate(gx, gy);
        return gx;
      });
    }
    dscnet::accumulate(branch, x);
    return branch;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    auto o = branch_->trace(in, out);
    if (o != in) throw ShapeError(this->name() + ": block changed shape");
    return o;
  }

  double drop_rate() const { return drop_rate_; }
  const Sequential<T>& branch() const { return *branch_; }

 private:
  std::unique_ptr<Sequential<T>> branch_;
  double drop_rate_;
};

}  // namespace dscnet::model
