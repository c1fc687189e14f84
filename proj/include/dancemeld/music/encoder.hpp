#pragma once

#include "dancemeld/music/features.hpp"
#include "dancemeld/nn/layers.hpp"

namespace dancemeld::music {

inline constexpr std::size_t kMusicPooling = 8;

// Small learnable reducer that brings per-frame music features to the top
// code's rate and width: strided conv (kernel = stride = 8) -> ReLU -> linear.
template <typename T>
class MusicEncoder {
 public:
  MusicEncoder() = default;
  template <typename Rng>
  MusicEncoder(nn::ParameterSet<T>& params, const std::string& name, std::size_t feature_dim, std::size_t hidden,
               std::size_t out_dim, Rng& rng)
      : pool_(params, name + ".pool", feature_dim, hidden, {kMusicPooling, kMusicPooling, 0, 1}, rng),
        proj_(params, name + ".proj", hidden, out_dim, rng) {}

  // Pads by repeating the last frame until the length divides by 8.
  static Tensor<T> pad_to_multiple(const Tensor<T>& x) {
    const std::size_t rem = x.rows() % kMusicPooling;
    if (rem == 0) return x;
    Tensor<T> out(x.rows() + (kMusicPooling - rem), x.cols());
    std::copy(x.storage().begin(), x.storage().end(), out.storage().begin());
    for (std::size_t r = x.rows(); r < out.rows(); ++r)
      std::copy_n(x.data() + (x.rows() - 1) * x.cols(), x.cols(), out.data() + r * x.cols());
    return out;
  }

  ag::Var<T> operator()(const Tensor<T>& features) const {
    DM_THROW_IF(features.rows() == 0, SequenceTooShort, "empty music sequence");
    return proj_(ag::relu(pool_(ag::constant(pad_to_multiple(features)))));
  }

 private:
  nn::Conv1d<T> pool_;
  nn::Linear<T> proj_;
};

}  // namespace dancemeld::music
