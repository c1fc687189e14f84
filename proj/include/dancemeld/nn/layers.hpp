#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dancemeld/autograd/ops.hpp"

namespace dancemeld::nn {

using ag::Var;

// Named, ordered collection of trainable leaves. Modules hold shared handles
// to the same nodes, so updating a parameter here updates the module.
template <typename T>
class ParameterSet {
 public:
  Var<T> create(std::string name, Tensor<T> init) {
    DM_THROW_IF(find(name) != nullptr, InvalidArgument, "duplicate parameter " + name);
    Var<T> v(std::move(init), true);
    items_.emplace_back(std::move(name), v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

  const Var<T>* find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return &v;
    return nullptr;
  }

  const Var<T>& at(const std::string& name) const {
    const auto* v = find(name);
    DM_THROW_IF(v == nullptr, NotFound, "no parameter named " + name);
    return *v;
  }

  void zero_grad() {
    for (auto& [n, v] : items_) {
      Var<T> handle = v;
      handle.zero_grad();
    }
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v.value().size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, v] : items_)
      if (!v.value().all_finite()) return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
};

template <typename T, typename Rng>
Tensor<T> uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(rows, cols);
  for (auto& v : t.storage()) v = T(dist(rng));
  return t;
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  template <typename Rng>
  Linear(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool zero_init = false) {
    const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(double(in));
    weight_ = params.create(name + ".weight", uniform_init<T>(in, out, bound, rng));
    bias_ = params.create(name + ".bias", uniform_init<T>(1, out, bound, rng));
  }

  Var<T> operator()(const Var<T>& x) const { return ag::add_row(ag::matmul(x, weight_), bias_); }

  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }
  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  template <typename Rng>
  Conv1d(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
         ag::ConvGeometry geometry, Rng& rng)
      : geometry_(geometry) {
    const double bound = 1.0 / std::sqrt(double(in * geometry.kernel));
    weight_ = params.create(name + ".weight", uniform_init<T>(geometry.kernel * in, out, bound, rng));
    bias_ = params.create(name + ".bias", uniform_init<T>(1, out, bound, rng));
  }

  Var<T> operator()(const Var<T>& x) const { return ag::conv1d(x, weight_, bias_, geometry_); }

  const ag::ConvGeometry& geometry() const { return geometry_; }
  std::size_t out_channels() const { return weight_.cols(); }

 private:
  ag::ConvGeometry geometry_;
  Var<T> weight_;
  Var<T> bias_;
};

// relu -> dilated conv(k=3) -> relu -> conv(k=1) -> + skip
template <typename T>
class ResBlock1d {
 public:
  ResBlock1d() = default;
  template <typename Rng>
  ResBlock1d(ParameterSet<T>& params, const std::string& name, std::size_t channels, std::size_t dilation,
             Rng& rng)
      : conv_a_(params, name + ".conv_a", channels, channels, {3, 1, dilation, dilation}, rng),
        conv_b_(params, name + ".conv_b", channels, channels, {1, 1, 0, 1}, rng) {}

  Var<T> operator()(const Var<T>& x) const {
    return ag::add(x, conv_b_(ag::relu(conv_a_(ag::relu(x)))));
  }

 private:
  Conv1d<T> conv_a_;
  Conv1d<T> conv_b_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& params, const std::string& name, std::size_t width)
      : gain_(params.create(name + ".gain", Tensor<T>(1, width, T(1)))),
        bias_(params.create(name + ".bias", Tensor<T>(1, width, T(0)))) {}

  Var<T> operator()(const Var<T>& x) const { return ag::layer_norm(x, gain_, bias_); }

 private:
  Var<T> gain_;
  Var<T> bias_;
};

}  // namespace dancemeld::nn
