#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dancemeld/nn/layers.hpp"

namespace dancemeld::diffusion {

using ag::Var;

struct DenoiserConfig {
  std::size_t layers = 8;
  std::size_t heads = 8;
  std::size_t latent_dim = 512;
  std::size_t feed_forward = 1024;
  double dropout = 0.1;
  std::size_t seq_len = 128;
  std::size_t input_dim = 1536;
  std::size_t cond_dim = 4800;
  std::uint64_t seed = 0;

  void validate() const {
    DM_THROW_IF(layers == 0 || heads == 0 || latent_dim == 0 || feed_forward == 0 || seq_len == 0 ||
                    input_dim == 0 || cond_dim == 0,
                InvalidArgument, "denoiser sizes must be positive");
    DM_THROW_IF(latent_dim % heads != 0, InvalidArgument, "latent_dim must be divisible by heads");
    DM_THROW_IF(!(dropout >= 0.0 && dropout < 1.0), InvalidArgument, "dropout must lie in [0, 1)");
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DenoiserConfig, layers, heads, latent_dim, feed_forward, dropout, seq_len,
                                   input_dim, cond_dim, seed)

// Sinusoidal embedding of an integer position or diffusion step.
inline std::vector<double> sinusoidal_embedding(double x, std::size_t dim) {
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double freq = std::pow(10000.0, -double(2 * (i / 2)) / double(dim));
    out[i] = i % 2 == 0 ? std::sin(x * freq) : std::cos(x * freq);
  }
  return out;
}

template <typename T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  template <typename Rng>
  TransformerLayer(nn::ParameterSet<T>& p, const std::string& name, const DenoiserConfig& cfg, Rng& rng)
      : heads_(cfg.heads),
        dropout_(T(cfg.dropout)),
        norm_a_(p, name + ".norm_a", cfg.latent_dim),
        qkv_(p, name + ".qkv", cfg.latent_dim, 3 * cfg.latent_dim, rng),
        out_(p, name + ".attn_out", cfg.latent_dim, cfg.latent_dim, rng),
        norm_b_(p, name + ".norm_b", cfg.latent_dim),
        ff_in_(p, name + ".ff_in", cfg.latent_dim, cfg.feed_forward, rng),
        ff_out_(p, name + ".ff_out", cfg.feed_forward, cfg.latent_dim, rng) {}

  // Pre-norm residual block. rng == nullptr disables dropout.
  Var<T> operator()(const Var<T>& x, std::mt19937_64* rng) const {
    auto h = ag::add(x, drop(out_(attention(norm_a_(x))), rng));
    return ag::add(h, drop(ff_out_(drop(ag::gelu(ff_in_(norm_b_(h))), rng)), rng));
  }

 private:
  Var<T> drop(const Var<T>& v, std::mt19937_64* rng) const { return rng ? ag::dropout(v, dropout_, *rng) : v; }

  Var<T> attention(const Var<T>& x) const {
    const std::size_t D = x.cols(), dh = D / heads_;
    const auto qkv = qkv_(x);
    const T scale = T(1.0 / std::sqrt(double(dh)));
    std::vector<Var<T>> outs;
    for (std::size_t h = 0; h < heads_; ++h) {
      const auto q = ag::slice_cols(qkv, h * dh, (h + 1) * dh);
      const auto k = ag::slice_cols(qkv, D + h * dh, D + (h + 1) * dh);
      const auto v = ag::slice_cols(qkv, 2 * D + h * dh, 2 * D + (h + 1) * dh);
      outs.push_back(ag::matmul(ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), scale)), v));
    }
    return ag::concat_cols(outs);
  }

  std::size_t heads_ = 1;
  T dropout_ = 0;
  nn::LayerNorm<T> norm_a_;
  nn::Linear<T> qkv_, out_;
  nn::LayerNorm<T> norm_b_;
  nn::Linear<T> ff_in_, ff_out_;
};

// G(h_noisy, t, music) -> clean estimate. Tokens: one step token followed by
// one token per latent frame; music is projected and added per frame.
template <typename T>
class TransformerDenoiser {
 public:
  explicit TransformerDenoiser(DenoiserConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    auto& p = params_;
    in_ = nn::Linear<T>(p, "in_proj", cfg_.input_dim, cfg_.latent_dim, rng);
    cond_ = nn::Linear<T>(p, "cond_proj", cfg_.cond_dim, cfg_.latent_dim, rng);
    time_a_ = nn::Linear<T>(p, "time.a", cfg_.latent_dim, cfg_.latent_dim, rng);
    time_b_ = nn::Linear<T>(p, "time.b", cfg_.latent_dim, cfg_.latent_dim, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      layers_.emplace_back(p, "layer" + std::to_string(l), cfg_, rng);
    norm_ = nn::LayerNorm<T>(p, "final_norm", cfg_.latent_dim);
    // Zero output layer: an untrained model predicts zeros.
    out_ = nn::Linear<T>(p, "out_proj", cfg_.latent_dim, cfg_.input_dim, rng, true);
  }

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  Tensor<T> step_embedding(std::size_t t) const {
    const auto e = sinusoidal_embedding(double(t), cfg_.latent_dim);
    Tensor<T> out(1, e.size());
    for (std::size_t i = 0; i < e.size(); ++i) out[i] = T(e[i]);
    return out;
  }

  Var<T> operator()(const Tensor<T>& h_noisy, std::size_t t, const Tensor<T>& cond,
                    std::mt19937_64* dropout_rng = nullptr) const {
    DM_THROW_IF(h_noisy.cols() != cfg_.input_dim, ShapeMismatch,
                "latent width " + std::to_string(h_noisy.cols()) + " != " + std::to_string(cfg_.input_dim));
    DM_THROW_IF(cond.cols() != cfg_.cond_dim, ShapeMismatch,
                "condition width " + std::to_string(cond.cols()) + " != " + std::to_string(cfg_.cond_dim));
    DM_THROW_IF(cond.rows() != h_noisy.rows(), ShapeMismatch, "condition length differs from latent length");
    const std::size_t L = h_noisy.rows();
    auto frames = ag::add(in_(ag::constant(h_noisy)), cond_(ag::constant(cond)));
    auto step = time_b_(ag::silu(time_a_(ag::constant(step_embedding(t)))));
    auto x = ag::add(ag::concat_rows<T>({step, frames}), ag::constant(positions(L + 1)));
    for (const auto& layer : layers_) x = layer(x, dropout_rng);
    return out_(norm_(ag::slice_rows(x, 1, L + 1)));
  }

 private:
  Tensor<T> positions(std::size_t n) const {
    Tensor<T> out(n, cfg_.latent_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto e = sinusoidal_embedding(double(i), cfg_.latent_dim);
      for (std::size_t c = 0; c < e.size(); ++c) out(i, c) = T(e[c]);
    }
    return out;
  }

  DenoiserConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Linear<T> in_, cond_, time_a_, time_b_;
  std::vector<TransformerLayer<T>> layers_;
  nn::LayerNorm<T> norm_;
  nn::Linear<T> out_;
};

}  // namespace dancemeld::diffusion
