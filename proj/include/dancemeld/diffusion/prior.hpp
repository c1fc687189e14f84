#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <utility>

#include "dancemeld/diffusion/denoiser.hpp"
#include "dancemeld/diffusion/schedule.hpp"
#include "dancemeld/hvqvae/train.hpp"
#include "dancemeld/nn/optim.hpp"

namespace dancemeld::diffusion {

using hvqvae::HVQVAE;
using hvqvae::LatentCodes;

// Bottom-rate latent h = [h_b' | h_t repeated twice in time].
template <typename T>
Tensor<T> pack(const Tensor<T>& h_b_prime, const Tensor<T>& h_t) {
  DM_THROW_IF(h_t.rows() * 2 != h_b_prime.rows(), LengthMismatch,
              "top length " + std::to_string(h_t.rows()) + " x2 != bottom length " +
                  std::to_string(h_b_prime.rows()));
  const std::size_t Wb = h_b_prime.cols(), Wt = h_t.cols();
  Tensor<T> out(h_b_prime.rows(), Wb + Wt);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    std::copy_n(h_b_prime.data() + r * Wb, Wb, out.data() + r * out.cols());
    std::copy_n(h_t.data() + (r / 2) * Wt, Wt, out.data() + r * out.cols() + Wb);
  }
  return out;
}

// Inverse of pack: h_t is read from the even rows.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> unpack(const Tensor<T>& h, std::size_t bottom_width) {
  DM_THROW_IF(bottom_width > h.cols(), DimMismatch, "bottom width exceeds packed width");
  DM_THROW_IF(h.rows() % 2 != 0, BadLength, "packed length must be even");
  auto h_b_prime = h.slice_cols(0, bottom_width);
  const std::size_t Wt = h.cols() - bottom_width;
  Tensor<T> h_t(h.rows() / 2, Wt);
  for (std::size_t r = 0; r < h_t.rows(); ++r)
    std::copy_n(h.data() + 2 * r * h.cols() + bottom_width, Wt, h_t.data() + r * Wt);
  return {std::move(h_b_prime), std::move(h_t)};
}

// Music at the bottom latent rate: mean over each group of four frames.
inline Tensor<float> pool_music(const Tensor<float>& features) {
  DM_THROW_IF(features.rows() % hvqvae::kBottomRate != 0, BadLength,
              "music length " + std::to_string(features.rows()) + " is not a multiple of 4");
  Tensor<float> out(features.rows() / hvqvae::kBottomRate, features.cols());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      double s = 0;
      for (std::size_t k = 0; k < hvqvae::kBottomRate; ++k) s += features(r * hvqvae::kBottomRate + k, c);
      out(r, c) = float(s / double(hvqvae::kBottomRate));
    }
  return out;
}

// Per-channel standardisation fitted on the latent corpus.
struct LatentStats {
  Tensor<float> mean, std;  // 1 x W each

  template <typename Range>
  static LatentStats fit(const Range& latents) {
    DM_THROW_IF(latents.empty(), TooFewSamples, "no latents to fit statistics on");
    const std::size_t W = latents.front().cols();
    std::vector<double> s(W, 0.0), sq(W, 0.0);
    double n = 0;
    for (const auto& h : latents) {
      DM_THROW_IF(h.cols() != W, DimMismatch, "latent widths differ");
      for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < W; ++c) {
          s[c] += h(r, c);
          sq[c] += double(h(r, c)) * h(r, c);
        }
      n += double(h.rows());
    }
    LatentStats out{Tensor<float>(1, W), Tensor<float>(1, W)};
    for (std::size_t c = 0; c < W; ++c) {
      const double m = s[c] / n;
      out.mean[c] = float(m);
      out.std[c] = float(std::sqrt(std::max(sq[c] / n - m * m, 0.0)) + 1e-5);
    }
    return out;
  }

  Tensor<float> normalise(const Tensor<float>& h) const {
    check(h);
    Tensor<float> out(h.rows(), h.cols());
    for (std::size_t r = 0; r < h.rows(); ++r)
      for (std::size_t c = 0; c < h.cols(); ++c) out(r, c) = (h(r, c) - mean[c]) / std[c];
    return out;
  }

  Tensor<float> denormalise(const Tensor<float>& z) const {
    check(z);
    Tensor<float> out(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) = z(r, c) * std[c] + mean[c];
    return out;
  }

 private:
  void check(const Tensor<float>& h) const {
    DM_THROW_IF(h.cols() != mean.cols(), DimMismatch, "latent width differs from the statistics");
  }
};

// Mean squared error between h0 and the denoiser's estimate from step t.
template <typename T>
Var<T> diffusion_training_loss(const TransformerDenoiser<T>& g, const NoiseSchedule& s, const Tensor<T>& h0,
                               const Tensor<T>& cond, std::size_t t, const Tensor<T>& noise,
                               std::mt19937_64* dropout_rng = nullptr) {
  return ag::mse(g(q_sample(s, h0, t, noise), t, cond, dropout_rng), ag::constant(h0));
}

struct LatentSample {
  Tensor<float> h;     // packed, unnormalised
  Tensor<float> cond;  // pooled music
};

// Runs the frozen VQ-VAE over the training windows.
inline std::vector<LatentSample> build_latent_corpus(const HVQVAE<float>& vq, const dataset::Corpus& corpus,
                                                     dataset::WindowSpec spec) {
  ag::NoGrad guard;
  std::vector<LatentSample> out;
  for (const auto& w : dataset::windows(corpus.split(dataset::Split::train), spec)) {
    const auto d = dataset::window_data(w, spec);
    const auto f = vq.encode(d.motion);
    out.push_back({pack(f.h_b_prime, f.h_t), pool_music(d.music)});
  }
  DM_THROW_IF(out.empty(), ClipTooShort, "no training windows in the corpus");
  return out;
}

// Frozen-parameter generator: schedule, statistics and denoiser.
class DiffusionPrior {
 public:
  DiffusionPrior(DenoiserConfig cfg, std::size_t steps, LatentStats stats)
      : schedule_(build_cosine_schedule(steps)), stats_(std::move(stats)), denoiser_(std::move(cfg)) {
    DM_THROW_IF(stats_.mean.cols() != denoiser_.config().input_dim, DimMismatch,
                "statistics width differs from the denoiser input width");
  }

  const DenoiserConfig& config() const { return denoiser_.config(); }
  const NoiseSchedule& schedule() const { return schedule_; }
  const LatentStats& stats() const { return stats_; }
  TransformerDenoiser<float>& denoiser() { return denoiser_; }
  const TransformerDenoiser<float>& denoiser() const { return denoiser_; }

  // One packed latent window (unnormalised) for pooled music `cond`.
  Tensor<float> sample(const Tensor<float>& cond, std::size_t num_steps, std::mt19937_64& rng) const {
    ag::NoGrad guard;
    const auto z = ddim_sample<float>(
        schedule_, cond.rows(), config().input_dim, num_steps,
        [&](const Tensor<float>& h, std::size_t t) { return denoiser_(h, t, cond).value(); }, rng);
    return stats_.denormalise(z);
  }

 private:
  NoiseSchedule schedule_;
  LatentStats stats_;
  TransformerDenoiser<float> denoiser_;
};

struct PriorTrainConfig {
  DenoiserConfig denoiser;
  std::size_t steps = kDefaultSteps;
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  double lr = 4e-4;
  double grad_clip = 1.0;
  std::size_t window = 512;
  std::size_t stride = 40;
  std::size_t max_windows_per_epoch = 0;  // 0: every window
  std::uint64_t seed = 0;

  dataset::WindowSpec window_spec() const { return {window, stride}; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PriorTrainConfig, denoiser, steps, epochs, batch_size, lr, grad_clip, window,
                                   stride, max_windows_per_epoch, seed)

struct PriorEpochLog {
  std::size_t epoch = 0;
  double loss = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PriorEpochLog, epoch, loss)

// Generation-stage training over latents of a frozen VQ-VAE: uniform steps,
// reconstruction of the clean latent, Adan.
class PriorTrainer {
 public:
  PriorTrainer(const PriorTrainConfig& cfg, const HVQVAE<float>& vq, const dataset::Corpus& corpus)
      : PriorTrainer(cfg, vq.config(), build_latent_corpus(vq, corpus, cfg.window_spec())) {}

  PriorTrainer(PriorTrainConfig cfg, hvqvae::HVQVAEConfig vq_config, std::vector<LatentSample> latents)
      : cfg_(std::move(cfg)), vq_config_(std::move(vq_config)), rng_(cfg_.seed) {
    DM_THROW_IF(latents.empty(), TooFewSamples, "empty latent corpus");
    const auto& first = latents.front();
    DM_THROW_IF(first.h.cols() != cfg_.denoiser.input_dim, DimMismatch,
                "latent width " + std::to_string(first.h.cols()) + " != denoiser input_dim " +
                    std::to_string(cfg_.denoiser.input_dim));
    DM_THROW_IF(first.cond.cols() != cfg_.denoiser.cond_dim, DimMismatch,
                "music width " + std::to_string(first.cond.cols()) + " != denoiser cond_dim " +
                    std::to_string(cfg_.denoiser.cond_dim));
    DM_THROW_IF(first.h.rows() != cfg_.denoiser.seq_len, BadLength,
                "latent length " + std::to_string(first.h.rows()) + " != denoiser seq_len " +
                    std::to_string(cfg_.denoiser.seq_len));
    std::vector<Tensor<float>> raw;
    for (const auto& s : latents) raw.push_back(s.h);
    prior_ = std::make_unique<DiffusionPrior>(cfg_.denoiser, cfg_.steps, LatentStats::fit(raw));
    for (auto& s : latents) data_.push_back({prior_->stats().normalise(s.h), std::move(s.cond)});
    adan_ = std::make_unique<nn::Adan<float>>(prior_->denoiser().params(), nn::Adan<float>::Options{.lr = cfg_.lr});
  }

  const DiffusionPrior& prior() const { return *prior_; }
  DiffusionPrior& prior() { return *prior_; }
  const std::vector<PriorEpochLog>& history() const { return history_; }
  std::size_t epoch() const { return epoch_; }
  const PriorTrainConfig& config() const { return cfg_; }
  // Normalised training latents.
  const std::vector<LatentSample>& latents() const { return data_; }

  std::function<void(const PriorTrainer&)> on_divergence;

  PriorEpochLog run_epoch() {
    std::vector<std::size_t> order(data_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    if (cfg_.max_windows_per_epoch > 0 && order.size() > cfg_.max_windows_per_epoch)
      order.resize(cfg_.max_windows_per_epoch);

    auto& g = prior_->denoiser();
    const auto& s = prior_->schedule();
    std::uniform_int_distribution<std::size_t> step(0, s.T - 1);
    PriorEpochLog log;
    log.epoch = epoch_;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      const float inv_b = 1.0f / float(end - start);
      g.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& d = data_[order[k]];
        const std::size_t t = step(rng_);
        const auto noise = gaussian_like<float>(d.h.rows(), d.h.cols(), rng_);
        const auto loss = diffusion_training_loss(g, s, d.h, d.cond, t, noise, &rng_);
        if (!std::isfinite(loss.item())) diverged("loss became non-finite at epoch " + std::to_string(epoch_));
        ag::backward(ag::scale(loss, inv_b));
        log.loss += loss.item();
      }
      nn::clip_grad_norm(g.params(), cfg_.grad_clip);
      adan_->step();
      if (!g.params().all_finite()) diverged("parameters became non-finite at epoch " + std::to_string(epoch_));
    }
    log.loss /= double(order.size());
    history_.push_back(log);
    ++epoch_;
    return log;
  }

  void train(const std::function<void(const PriorEpochLog&)>& on_epoch = {}) {
    while (epoch_ < cfg_.epochs) {
      const auto log = run_epoch();
      if (on_epoch) on_epoch(log);
    }
  }

  io::Checkpoint checkpoint() const {
    io::Checkpoint ck;
    ck.header["kind"] = "prior";
    ck.header["config"] = cfg_.denoiser;
    ck.header["steps"] = cfg_.steps;
    ck.header["vq_config"] = vq_config_;
    ck.header["train_config"] = cfg_;
    ck.header["epoch"] = epoch_;
    ck.header["rng"] = hvqvae::rng_state(rng_);
    ck.header["history"] = history_;
    io::append_parameters(ck, prior_->denoiser().params());
    ck.tensors.emplace_back("stats.mean", prior_->stats().mean);
    ck.tensors.emplace_back("stats.std", prior_->stats().std);
    io::append_tensors(ck, adan_->state());
    return ck;
  }

  void resume(const io::Checkpoint& ck) {
    DM_THROW_IF(ck.header.value("kind", "") != "prior", FormatError, "checkpoint is not a prior checkpoint");
    DM_THROW_IF(ck.header.at("config").get<DenoiserConfig>() != cfg_.denoiser, InvariantViolation,
                "checkpoint denoiser config differs from the training config");
    io::load_parameters(ck, prior_->denoiser().params());
    adan_->load_state(io::tensors_with_prefix<float>(ck, "adan."));
    epoch_ = ck.header.at("epoch").get<std::size_t>();
    hvqvae::set_rng_state(rng_, ck.header.at("rng").get<std::string>());
    history_ = ck.header.at("history").get<std::vector<PriorEpochLog>>();
  }

 private:
  [[noreturn]] void diverged(const std::string& why) {
    if (on_divergence) on_divergence(*this);
    throw Error(ErrorKind::DivergenceDetected, why);
  }

  PriorTrainConfig cfg_;
  hvqvae::HVQVAEConfig vq_config_;
  std::mt19937_64 rng_;
  std::unique_ptr<DiffusionPrior> prior_;
  std::unique_ptr<nn::Adan<float>> adan_;
  std::vector<LatentSample> data_;
  std::size_t epoch_ = 0;
  std::vector<PriorEpochLog> history_;
};

inline std::unique_ptr<DiffusionPrior> load_prior(const io::Checkpoint& ck) {
  DM_THROW_IF(ck.header.value("kind", "") != "prior", FormatError, "checkpoint is not a prior checkpoint");
  LatentStats stats{ck.at("stats.mean"), ck.at("stats.std")};
  auto prior = std::make_unique<DiffusionPrior>(ck.header.at("config").get<DenoiserConfig>(),
                                                ck.header.at("steps").get<std::size_t>(), std::move(stats));
  io::load_parameters(ck, prior->denoiser().params());
  return prior;
}

inline std::unique_ptr<DiffusionPrior> load_prior(const io::fs::path& path) {
  return load_prior(io::load_checkpoint(path));
}

struct Generation {
  motion::MotionSequence motion;
  LatentCodes codes;
};

// Windows of 4 * seq_len frames are sampled independently, quantised, and the
// concatenated codes are decoded in one pass.
inline Generation generate(const music::MusicFeatureSequence& music, const HVQVAE<float>& vq,
                           const DiffusionPrior& prior, std::size_t num_steps, std::uint64_t seed) {
  const auto& cfg = prior.config();
  const std::size_t window = hvqvae::kBottomRate * cfg.seq_len;
  DM_THROW_IF(music.length() == 0 || music.length() % window != 0, BadLength,
              "music length " + std::to_string(music.length()) + " is not a positive multiple of " +
                  std::to_string(window));
  DM_THROW_IF(music.dim() != cfg.cond_dim, DimMismatch,
              "music width " + std::to_string(music.dim()) + " != prior cond_dim " + std::to_string(cfg.cond_dim));
  const std::size_t bottom_width = 2 * vq.config().code_dim;
  DM_THROW_IF(cfg.input_dim != bottom_width + vq.config().code_dim, DimMismatch,
              "prior input_dim does not match the VQ-VAE code dimension");
  ag::NoGrad guard;
  std::mt19937_64 rng(seed);
  Generation out;
  for (std::size_t start = 0; start < music.length(); start += window) {
    const auto cond = pool_music(music.features.slice_rows(start, start + window));
    const auto h = prior.sample(cond, num_steps, rng);
    const auto [h_b_prime, h_t] = unpack(h, bottom_width);
    const auto top = vq.quantize_top(h_t);
    const auto bottom = vq.quantize_bottom(h_b_prime);
    out.codes.top.insert(out.codes.top.end(), top.indices.begin(), top.indices.end());
    out.codes.bottom.insert(out.codes.bottom.end(), bottom.indices.begin(), bottom.indices.end());
  }
  out.motion = {vq.decode(out.codes), motion::kFps};
  return out;
}

}  // namespace dancemeld::diffusion
