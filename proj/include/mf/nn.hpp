#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mf/ops.hpp"

namespace mf {

/// Seeded source for parameter init. The [0,1) mapping is done by hand so the
/// stream is identical across standard libraries.
class ParamRng {
 public:
  explicit ParamRng(std::uint64_t seed) : engine_(seed) {}

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Ordered, uniquely named set of trainable leaves.
template <typename Scalar>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  Tensor<Scalar> add(const std::string& name, Tensor<Scalar> t) {
    if (find(name) != nullptr) throw ContractError("duplicate parameter name " + name);
    t.set_requires_grad(true);
    entries_.emplace_back(name, t);
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Tensor<Scalar>* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return &e.second;
    }
    return nullptr;
  }
  Tensor<Scalar>* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.first == name) return &e.second;
    }
    return nullptr;
  }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

/// Convolution weights plus options; bias is always present.
template <typename Scalar>
struct Conv2dLayer {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  Conv2dOptions options;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return conv2d(x, weight, std::optional(bias), options); }

  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }

  void fill_zero() {
    for (auto& v : weight.mutable_data()) v = Scalar(0);
    for (auto& v : bias.mutable_data()) v = Scalar(0);
  }
};

/// Registers `<name>.weight` / `<name>.bias`. Weights are uniform in
/// +-sqrt(1/fan_in); biases start at zero.
template <typename Scalar>
Conv2dLayer<Scalar> make_conv(ParameterStore<Scalar>& store, const std::string& name, Index in, Index out,
                              Index kernel, ParamRng& rng, Conv2dOptions options = {}) {
  if (in < 1 || out < 1) throw ConfigError("conv " + name + ": channel counts must be >= 1");
  Conv2dLayer<Scalar> layer;
  layer.options = options;
  Tensor<Scalar> w({out, in, kernel, kernel});
  const double bound = std::sqrt(1.0 / static_cast<double>(in * kernel * kernel));
  for (auto& v : w.mutable_data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  layer.weight = store.add(name + ".weight", w);
  layer.bias = store.add(name + ".bias", Tensor<Scalar>({out}));
  return layer;
}

/// Closed-form parameter count of a make_conv layer.
constexpr Index conv_param_count(Index in, Index out, Index kernel) { return out * in * kernel * kernel + out; }

}  // namespace mf
