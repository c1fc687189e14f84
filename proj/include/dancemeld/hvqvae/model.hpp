#pragma once

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dancemeld/hvqvae/codebook.hpp"
#include "dancemeld/motion/kinematics.hpp"
#include "dancemeld/music/encoder.hpp"
#include "dancemeld/nn/layers.hpp"

namespace dancemeld::hvqvae {

using ag::Var;

inline constexpr std::size_t kBottomRate = 4;  // E_b temporal downsampling
inline constexpr std::size_t kTopRate = 2;     // further E_t downsampling
inline constexpr std::size_t kWindowAlign = kBottomRate * kTopRate;

struct HVQVAEConfig {
  std::size_t motion_dim = motion::kMotionWidth;
  std::size_t hidden = 512;
  std::size_t code_dim = 512;
  std::size_t bottom_codes = 512;
  std::size_t top_codes = 128;
  std::size_t bottom_blocks = 2;
  std::size_t top_blocks = 1;
  std::size_t music_dim = music::kDefaultFeatureDim;
  std::size_t music_hidden = 256;
  std::uint64_t seed = 0;

  friend bool operator==(const HVQVAEConfig&, const HVQVAEConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(HVQVAEConfig, motion_dim, hidden, code_dim, bottom_codes, top_codes,
                                                bottom_blocks, top_blocks, music_dim, music_hidden, seed)

// Continuous features: h_b and h_t from the encoders, h_b' = [D_t(e_t), h_b].
template <typename T>
struct LatentFeatures {
  Tensor<T> h_b;        // N/4 x D
  Tensor<T> h_t;        // N/8 x D
  Tensor<T> h_b_prime;  // N/4 x 2D
};

struct LatentCodes {
  CodeIndices top;     // N/8 entries into the top codebook
  CodeIndices bottom;  // N/4 entries into the bottom codebook

  friend bool operator==(const LatentCodes&, const LatentCodes&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LatentCodes, top, bottom)

// Everything the training losses need from one forward pass.
template <typename T>
struct ForwardBundle {
  Var<T> h_b, h_t;
  Var<T> top_entries;       // codebook rows gathered for e_t (codebook gradient path)
  Var<T> top_st;            // e_t with straight-through gradient to h_t
  Var<T> h_b_prime;
  Var<T> bottom_projected;  // P(h_b')
  Var<T> bottom_entries;
  Var<T> bottom_st;
  Var<T> reconstruction;
  Quantized<T> top, bottom;
};

// Two-level temporal VQ-VAE. Bottom stream: E_b (x4 down), top stream: E_t
// (x2 down). D_t's first stage U (nearest x2 + conv) is shared with the
// decoder input path; P projects the 2D-wide h_b' to the code width before
// bottom quantization.
template <typename T>
class HVQVAE {
 public:
  explicit HVQVAE(HVQVAEConfig cfg) : cfg_(cfg) {
    std::mt19937_64 rng(cfg.seed);
    const std::size_t H = cfg.hidden, D = cfg.code_dim;
    auto& p = params_;
    using nn::Conv1d;
    using nn::ResBlock1d;

    eb_in_ = Conv1d<T>(p, "enc_b.in", cfg.motion_dim, H, {3, 1, 1, 1}, rng);
    eb_down1_ = Conv1d<T>(p, "enc_b.down1", H, H, {4, 2, 1, 1}, rng);
    eb_down2_ = Conv1d<T>(p, "enc_b.down2", H, H, {4, 2, 1, 1}, rng);
    for (std::size_t b = 0; b < cfg.bottom_blocks; ++b)
      eb_res_.emplace_back(p, "enc_b.res" + std::to_string(b), H, dilation(b), rng);
    eb_out_ = Conv1d<T>(p, "enc_b.out", H, D, {3, 1, 1, 1}, rng);

    et_down_ = Conv1d<T>(p, "enc_t.down", D, H, {4, 2, 1, 1}, rng);
    for (std::size_t b = 0; b < cfg.top_blocks; ++b)
      et_res_.emplace_back(p, "enc_t.res" + std::to_string(b), H, dilation(b), rng);
    et_out_ = Conv1d<T>(p, "enc_t.out", H, D, {3, 1, 1, 1}, rng);

    dt_up_ = Conv1d<T>(p, "dec_t.up", D, D, {3, 1, 1, 1}, rng);
    for (std::size_t b = 0; b < cfg.top_blocks; ++b)
      dt_res_.emplace_back(p, "dec_t.res" + std::to_string(b), D, dilation(b), rng);
    dt_out_ = Conv1d<T>(p, "dec_t.out", D, D, {3, 1, 1, 1}, rng);

    proj_ = Conv1d<T>(p, "bottom_proj", 2 * D, D, {1, 1, 0, 1}, rng);

    db_in_ = Conv1d<T>(p, "dec_b.in", 2 * D, H, {3, 1, 1, 1}, rng);
    for (std::size_t b = 0; b < cfg.bottom_blocks; ++b)
      db_res_.emplace_back(p, "dec_b.res" + std::to_string(b), H, dilation(b), rng);
    db_up1_ = Conv1d<T>(p, "dec_b.up1", H, H, {3, 1, 1, 1}, rng);
    db_up2_ = Conv1d<T>(p, "dec_b.up2", H, H, {3, 1, 1, 1}, rng);
    db_out_ = Conv1d<T>(p, "dec_b.out", H, cfg.motion_dim, {3, 1, 1, 1}, rng);

    top_codebook_ = p.create("codebook.top", nn::uniform_init<T>(cfg.top_codes, D, 1.0 / double(cfg.top_codes), rng));
    bottom_codebook_ =
        p.create("codebook.bottom", nn::uniform_init<T>(cfg.bottom_codes, D, 1.0 / double(cfg.bottom_codes), rng));

    music_ = music::MusicEncoder<T>(p, "music_enc", cfg.music_dim, cfg.music_hidden, D, rng);

    // Start the decoder at the rest pose: identity 6-D blocks, zero translation.
    if (cfg.motion_dim == motion::kMotionWidth) {
      auto bias = *p.find("dec_b.out.bias");
      for (std::size_t j = 0; j < motion::kJointCount; ++j) {
        bias.mutable_value()[3 + 6 * j + 0] = T(1);
        bias.mutable_value()[3 + 6 * j + 4] = T(1);
      }
    }
  }

  const HVQVAEConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  const Var<T>& top_codebook() const { return top_codebook_; }
  const Var<T>& bottom_codebook() const { return bottom_codebook_; }
  const music::MusicEncoder<T>& music_encoder() const { return music_; }

  static void check_length(std::size_t N) {
    DM_THROW_IF(N == 0 || N % kWindowAlign != 0, BadLength,
                "sequence length " + std::to_string(N) + " is not a positive multiple of 8");
  }

  // h_b = E_b(x), h_t = E_t(h_b)
  std::pair<Var<T>, Var<T>> encode(const Var<T>& x) const {
    check_length(x.rows());
    DM_THROW_IF(x.cols() != cfg_.motion_dim, DimMismatch, "motion width mismatch");
    auto h = ag::relu(eb_in_(x));
    h = ag::relu(eb_down1_(h));
    h = eb_down2_(h);
    for (const auto& r : eb_res_) h = r(h);
    auto h_b = eb_out_(ag::relu(h));

    auto g = et_down_(h_b);
    for (const auto& r : et_res_) g = r(g);
    auto h_t = et_out_(ag::relu(g));
    return {h_b, h_t};
  }

  LatentFeatures<T> encode(const Tensor<T>& x) const {
    auto [h_b, h_t] = encode(ag::constant(x));
    LatentFeatures<T> out;
    out.h_b = h_b.value();
    out.h_t = h_t.value();
    out.h_b_prime = form_hb_prime(h_b, ag::constant(quantize(h_t.value(), top_codebook_.value()).vectors)).value();
    return out;
  }

  // U: the x2 upsampling stage shared by D_t and the decoder input.
  Var<T> upsample_top(const Var<T>& e_t) const { return dt_up_(ag::upsample_rows(e_t, kTopRate)); }

  Var<T> top_decoder(const Var<T>& e_t) const {
    auto g = upsample_top(e_t);
    for (const auto& r : dt_res_) g = r(g);
    return dt_out_(ag::relu(g));
  }

  // h_b' = Concat(D_t(e_t), h_b), D_t(e_t) first.
  Var<T> form_hb_prime(const Var<T>& h_b, const Var<T>& e_t) const {
    DM_THROW_IF(e_t.rows() * kTopRate != h_b.rows(), LengthMismatch,
                "top length " + std::to_string(e_t.rows()) + " x2 != bottom length " + std::to_string(h_b.rows()));
    return ag::concat_cols<T>({top_decoder(e_t), h_b});
  }

  Var<T> project_bottom(const Var<T>& h_b_prime) const {
    DM_THROW_IF(h_b_prime.cols() != 2 * cfg_.code_dim, DimMismatch, "h_b' width mismatch");
    return proj_(h_b_prime);
  }

  Quantized<T> quantize_top(const Tensor<T>& h_t) const { return quantize(h_t, top_codebook_.value()); }

  Quantized<T> quantize_bottom(const Tensor<T>& h_b_prime) const {
    return quantize(project_bottom(ag::constant(h_b_prime)).value(), bottom_codebook_.value());
  }

  // x_hat = D_b(Concat(U(e_t), e_b))
  Var<T> decode(const Var<T>& e_t, const Var<T>& e_b) const {
    DM_THROW_IF(e_t.rows() * kTopRate != e_b.rows(), LengthMismatch,
                "top length " + std::to_string(e_t.rows()) + " x2 != bottom length " + std::to_string(e_b.rows()));
    auto h = db_in_(ag::concat_cols<T>({upsample_top(e_t), e_b}));
    for (const auto& r : db_res_) h = r(h);
    h = ag::relu(db_up1_(ag::upsample_rows(ag::relu(h), 2)));
    h = ag::relu(db_up2_(ag::upsample_rows(h, 2)));
    return db_out_(h);
  }

  Tensor<T> decode(const LatentCodes& codes) const {
    return decode(ag::constant(lookup(top_codebook_.value(), codes.top)),
                  ag::constant(lookup(bottom_codebook_.value(), codes.bottom)))
        .value();
  }

  LatentCodes encode_codes(const Tensor<T>& x) const {
    auto [h_b, h_t] = encode(ag::constant(x));
    auto top = quantize_top(h_t.value());
    auto h_b_prime = form_hb_prime(h_b, ag::constant(top.vectors));
    auto bottom = quantize(project_bottom(h_b_prime).value(), bottom_codebook_.value());
    return {std::move(top.indices), std::move(bottom.indices)};
  }

  // Full training-time pass with straight-through paths.
  ForwardBundle<T> forward(const Var<T>& x) const {
    ForwardBundle<T> b;
    std::tie(b.h_b, b.h_t) = encode(x);
    b.top = quantize_top(b.h_t.value());
    b.top_entries = ag::gather_rows(top_codebook_, std::span<const std::int32_t>(b.top.indices));
    b.top_st = ag::straight_through(b.h_t, b.top.vectors);
    b.h_b_prime = form_hb_prime(b.h_b, b.top_st);
    b.bottom_projected = project_bottom(b.h_b_prime);
    b.bottom = quantize(b.bottom_projected.value(), bottom_codebook_.value());
    b.bottom_entries = ag::gather_rows(bottom_codebook_, std::span<const std::int32_t>(b.bottom.indices));
    b.bottom_st = ag::straight_through(b.bottom_projected, b.bottom.vectors);
    b.reconstruction = decode(b.top_st, b.bottom_st);
    return b;
  }

  // Frames of decoded motion on either side of a code's own window that a
  // change to that code can reach (top code; a bottom code reaches less).
  std::size_t decoder_reach() const {
    std::size_t r = 1;  // input conv at the bottom rate
    for (std::size_t b = 0; b < cfg_.bottom_blocks; ++b) r += dilation(b);
    r += 1;  // U's conv, measured at the bottom rate
    return 4 * r + 4;
  }

  Var<T> encode_music(const Tensor<T>& features) const { return music_(features); }

  // Overwrites codebook rows (dead-code re-seeding, data-dependent init).
  void set_code(bool top, std::size_t k, std::span<const T> value) {
    auto cb = top ? top_codebook_ : bottom_codebook_;
    DM_THROW_IF(value.size() != cb.cols(), DimMismatch, "code vector width");
    std::copy(value.begin(), value.end(), cb.mutable_value().data() + k * cb.cols());
  }

 private:
  static std::size_t dilation(std::size_t block) {
    std::size_t d = 1;
    for (std::size_t i = 0; i < block; ++i) d *= 3;
    return d;
  }

  HVQVAEConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Conv1d<T> eb_in_, eb_down1_, eb_down2_, eb_out_;
  std::vector<nn::ResBlock1d<T>> eb_res_;
  nn::Conv1d<T> et_down_, et_out_;
  std::vector<nn::ResBlock1d<T>> et_res_;
  nn::Conv1d<T> dt_up_, dt_out_;
  std::vector<nn::ResBlock1d<T>> dt_res_;
  nn::Conv1d<T> proj_;
  nn::Conv1d<T> db_in_, db_up1_, db_up2_, db_out_;
  std::vector<nn::ResBlock1d<T>> db_res_;
  Var<T> top_codebook_, bottom_codebook_;
  music::MusicEncoder<T> music_;
};

}  // namespace dancemeld::hvqvae
