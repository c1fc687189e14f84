#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dancemeld/nn/layers.hpp"

namespace dancemeld::nn {

// Scales every gradient so the global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, v] : params.items())
    for (T g : v.grad().storage()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = T(max_norm / (norm + 1e-12));
    for (const auto& [name, v] : params.items()) {
      Var<T> h = v;
      if (h.grad().empty()) continue;
      for (auto& g : h.grad_buffer().storage()) g *= s;
    }
  }
  return norm;
}

// Optimizer moments are exposed as named tensors so checkpoints can resume
// training bit-exactly.
template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(ParameterSet<T>& params, Options opt) : params_(&params), opt_(opt) {
    for (const auto& [name, v] : params.items()) {
      m_.emplace_back(v.rows(), v.cols());
      v_.emplace_back(v.rows(), v.cols());
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    std::size_t k = 0;
    for (const auto& [name, var] : params_->items()) {
      Var<T> p = var;
      if (!p.grad().empty()) {
        auto& w = p.mutable_value();
        const auto& g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = g[i];
          m_[k][i] = T(opt_.beta1 * m_[k][i] + (1.0 - opt_.beta1) * gi);
          v_[k][i] = T(opt_.beta2 * v_[k][i] + (1.0 - opt_.beta2) * gi * gi);
          const double mhat = m_[k][i] / bc1;
          const double vhat = v_[k][i] / bc2;
          w[i] = T(w[i] - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps));
        }
      }
      ++k;
    }
  }

  void set_lr(double lr) { opt_.lr = lr; }
  std::size_t steps() const { return t_; }

  NamedTensors<T> state() const {
    NamedTensors<T> out;
    std::size_t k = 0;
    for (const auto& [name, v] : params_->items()) {
      out.emplace_back("adam.m." + name, m_[k]);
      out.emplace_back("adam.v." + name, v_[k]);
      ++k;
    }
    out.emplace_back("adam.t", Tensor<T>::scalar(T(t_)));
    return out;
  }

  void load_state(const NamedTensors<T>& state) {
    std::size_t k = 0;
    for (const auto& [name, v] : params_->items()) {
      for (const auto& [n, t] : state) {
        if (n == "adam.m." + name) m_[k] = t;
        if (n == "adam.v." + name) v_[k] = t;
      }
      ++k;
    }
    for (const auto& [n, t] : state)
      if (n == "adam.t") t_ = std::size_t(t[0]);
  }

 private:
  ParameterSet<T>* params_;
  Options opt_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Adaptive Nesterov momentum (Adan): first moment of the gradient, of the
// gradient difference, and second moment of the Nesterov-corrected gradient.
// Betas use the EMA convention (close to one).
template <typename T>
class Adan {
 public:
  struct Options {
    double lr = 4e-4;
    double beta1 = 0.98;
    double beta2 = 0.92;
    double beta3 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adan(ParameterSet<T>& params, Options opt) : params_(&params), opt_(opt) {
    for (const auto& [name, v] : params.items()) {
      m_.emplace_back(v.rows(), v.cols());
      d_.emplace_back(v.rows(), v.cols());
      n_.emplace_back(v.rows(), v.cols());
      prev_.emplace_back(v.rows(), v.cols());
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    const double bc3 = 1.0 - std::pow(opt_.beta3, double(t_));
    std::size_t k = 0;
    for (const auto& [name, var] : params_->items()) {
      Var<T> p = var;
      if (!p.grad().empty()) {
        auto& w = p.mutable_value();
        const auto& g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = g[i];
          const double diff = t_ == 1 ? 0.0 : gi - double(prev_[k][i]);
          m_[k][i] = T(opt_.beta1 * m_[k][i] + (1.0 - opt_.beta1) * gi);
          d_[k][i] = T(opt_.beta2 * d_[k][i] + (1.0 - opt_.beta2) * diff);
          const double nest = gi + opt_.beta2 * diff;
          n_[k][i] = T(opt_.beta3 * n_[k][i] + (1.0 - opt_.beta3) * nest * nest);
          const double denom = std::sqrt(n_[k][i] / bc3) + opt_.eps;
          const double update = (m_[k][i] / bc1 + opt_.beta2 * d_[k][i] / bc2) / denom;
          w[i] = T((w[i] - opt_.lr * update) / (1.0 + opt_.lr * opt_.weight_decay));
          prev_[k][i] = g[i];
        }
      }
      ++k;
    }
  }

  void set_lr(double lr) { opt_.lr = lr; }
  std::size_t steps() const { return t_; }

  NamedTensors<T> state() const {
    NamedTensors<T> out;
    std::size_t k = 0;
    for (const auto& [name, v] : params_->items()) {
      out.emplace_back("adan.m." + name, m_[k]);
      out.emplace_back("adan.d." + name, d_[k]);
      out.emplace_back("adan.n." + name, n_[k]);
      out.emplace_back("adan.prev." + name, prev_[k]);
      ++k;
    }
    out.emplace_back("adan.t", Tensor<T>::scalar(T(t_)));
    return out;
  }

  void load_state(const NamedTensors<T>& state) {
    std::size_t k = 0;
    for (const auto& [name, v] : params_->items()) {
      for (const auto& [n, t] : state) {
        if (n == "adan.m." + name) m_[k] = t;
        if (n == "adan.d." + name) d_[k] = t;
        if (n == "adan.n." + name) n_[k] = t;
        if (n == "adan.prev." + name) prev_[k] = t;
      }
      ++k;
    }
    for (const auto& [n, t] : state)
      if (n == "adan.t") t_ = std::size_t(t[0]);
  }

 private:
  ParameterSet<T>* params_;
  Options opt_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, d_, n_, prev_;
};

}  // namespace dancemeld::nn
