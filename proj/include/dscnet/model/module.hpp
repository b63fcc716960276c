// Named parameter table, backward tape, and the layer interface shared by
// every architecture in the zoo.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dscnet/ops/drop_path.hpp"
#include "dscnet/tensor.hpp"

namespace dscnet::model {

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;     // empty until the first backward pass
  bool learnable = true;   // false for running statistics
  bool decay = true;       // eligible for weight decay

  void accumulate_grad(const BasicTensor<T>& g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    dscnet::accumulate(grad, g);
  }
};

// Flat table in registration order; names are canonical dotted paths such
// as "stages.2.blocks.4.dwconv.weight".
template <typename T>
class ParameterTable {
 public:
  ParameterTable() = default;
  ParameterTable(const ParameterTable&) = delete;
  ParameterTable& operator=(const ParameterTable&) = delete;
  ParameterTable(ParameterTable&&) noexcept = default;
  ParameterTable& operator=(ParameterTable&&) noexcept = default;

  Parameter<T>* add(std::string name, BasicTensor<T> value, bool learnable = true, bool decay = true) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = std::move(value);
    p->learnable = learnable;
    p->decay = decay;
    auto* raw = p.get();
    index_[std::move(name)] = raw;
    params_.push_back(std::move(p));
    return raw;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  std::size_t size() const { return params_.size(); }

  std::size_t learnable_count() const {
    std::size_t n = 0;
    for (auto& p : params_)
      if (p->learnable) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad = BasicTensor<T>();
  }

  template <typename F>
  void for_each(F&& f) {
    for (auto& p : params_) f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& p : params_) f(static_cast<const Parameter<T>&>(*p));
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, Parameter<T>*> index_;
};

// Reverse-mode record of a forward pass. Each step maps the gradient of a
// layer's output to the gradient of its input and accumulates parameter
// gradients as a side effect.
template <typename T>
class Tape {
 public:
  using Step = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

  void push(Step s) { steps_.push_back(std::move(s)); }
  std::size_t size() const { return steps_.size(); }

  BasicTensor<T> backward(BasicTensor<T> grad) {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) grad = (*it)(grad);
    steps_.clear();
    return grad;
  }

 private:
  std::vector<Step> steps_;
};

template <typename T>
struct Pass {
  bool training = false;
  Rng* rng = nullptr;       // required when training with drop-path
  Tape<T>* tape = nullptr;  // set to record a backward pass
};

struct TraceRecord {
  std::string name;
  std::string kind;
  Shape input;
  Shape output;
  std::uint64_t macs = 0;
};

using Trace = std::vector<TraceRecord>;

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const = 0;
  // Shape propagation and analytic MAC count, no arithmetic.
  virtual Shape trace(const Shape& in, Trace& out) const = 0;

  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  explicit Sequential(std::string name) : Layer<T>(std::move(name)) {}

  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto l = std::make_unique<L>(std::forward<Args>(args)...);
    auto* raw = l.get();
    layers_.push_back(std::move(l));
    return raw;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Pass<T>& pass) const override {
    if (layers_.empty()) return x;
    BasicTensor<T> h = layers_.front()->forward(x, pass);
    for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, pass);
    return h;
  }

  Shape trace(const Shape& in, Trace& out) const override {
    Shape s = in;
    for (auto& l : layers_) s = l->trace(s, out);
    return s;
  }

  const std::vector<std::unique_ptr<Layer<T>>>& layers() const { return layers_; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace dscnet::model
