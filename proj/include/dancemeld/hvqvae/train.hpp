#pragma once

#include <functional>
#include <numeric>
#include <sstream>

#include "dancemeld/dataset/corpus.hpp"
#include "dancemeld/hvqvae/losses.hpp"
#include "dancemeld/io/checkpoint.hpp"

namespace dancemeld::hvqvae {

struct VQTrainConfig {
  HVQVAEConfig model;
  LossWeights weights;
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  double grad_clip = 1.0;
  std::size_t window = 512;
  std::size_t stride = 40;
  std::size_t dead_code_epochs = 5;
  std::size_t max_windows_per_epoch = 0;  // 0: every window
  std::uint64_t seed = 0;

  dataset::WindowSpec window_spec() const { return {window, stride}; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(VQTrainConfig, model, weights, epochs, batch_size, lr, grad_clip, window, stride,
                                   dead_code_epochs, max_windows_per_epoch, seed)

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0, vq = 0, aux = 0, ma = 0;
  double top_perplexity = 0, bottom_perplexity = 0;
  std::size_t top_used = 0, bottom_used = 0, reseeded = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochLog, epoch, loss, vq, aux, ma, top_perplexity, bottom_perplexity, top_used,
                                   bottom_used, reseeded)

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

inline void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream s(state);
  s >> rng;
  DM_THROW_IF(!s, FormatError, "corrupt random-generator state");
}

// Loads an HVQVAE from a checkpoint written by VQTrainer (or save_hvqvae).
inline std::unique_ptr<HVQVAE<float>> load_hvqvae(const io::Checkpoint& ck) {
  DM_THROW_IF(ck.header.value("kind", "") != "hvqvae", FormatError, "checkpoint is not an hvqvae checkpoint");
  auto model = std::make_unique<HVQVAE<float>>(ck.header.at("config").get<HVQVAEConfig>());
  io::load_parameters(ck, model->params());
  return model;
}

inline std::unique_ptr<HVQVAE<float>> load_hvqvae(const io::fs::path& path) {
  return load_hvqvae(io::load_checkpoint(path));
}

// Mean per-joint position error (metres) of reconstructions.
inline double reconstruction_mpjpe(const HVQVAE<float>& model, const std::vector<Tensor<float>>& windows,
                                   const motion::Skeleton& skel) {
  ag::NoGrad guard;
  double total = 0;
  std::size_t count = 0;
  for (const auto& x : windows) {
    const auto x_hat = model.decode(model.encode_codes(x));
    const auto a = motion::forward_kinematics(x.cast<double>(), skel);
    const auto b = motion::forward_kinematics(x_hat.cast<double>(), skel);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < motion::kJointCount; ++j) {
        double sq = 0;
        for (std::size_t c = 0; c < 3; ++c) sq += std::pow(a(i, 3 * j + c) - b(i, 3 * j + c), 2);
        total += std::sqrt(sq);
        ++count;
      }
  }
  return count ? total / double(count) : 0.0;
}

// Decouple-stage training: minibatches of windows, the full objective per
// window averaged over the batch, global-norm clipping, Adam. Holds all state
// needed to resume bit-exactly from a checkpoint.
class VQTrainer {
 public:
  VQTrainer(VQTrainConfig cfg, const dataset::Corpus& corpus)
      : cfg_(std::move(cfg)),
        corpus_(&corpus),
        model_(std::make_unique<HVQVAE<float>>(cfg_.model)),
        adam_(model_->params(), {.lr = cfg_.lr}),
        rng_(cfg_.seed),
        top_idle_(cfg_.model.top_codes, 0),
        bottom_idle_(cfg_.model.bottom_codes, 0) {
    cfg_.weights.validate();
    const auto spec = cfg_.window_spec();
    for (const auto& w : dataset::windows(corpus.split(dataset::Split::train), spec)) {
      auto d = dataset::window_data(w, spec);
      DM_THROW_IF(d.music.cols() != cfg_.model.music_dim, DimMismatch,
                  "corpus music has " + std::to_string(d.music.cols()) + " channels, config expects " +
                      std::to_string(cfg_.model.music_dim));
      const auto pos = motion::joint_positions({d.motion, motion::kFps}, corpus.skeleton);
      contacts_.push_back(motion::detect_foot_contacts(pos, corpus.skeleton));
      data_.push_back(std::move(d));
    }
    DM_THROW_IF(data_.empty(), ClipTooShort, "no training windows in the corpus");
  }

  const HVQVAE<float>& model() const { return *model_; }
  HVQVAE<float>& model() { return *model_; }
  const std::vector<EpochLog>& history() const { return history_; }
  std::size_t epoch() const { return epoch_; }
  const VQTrainConfig& config() const { return cfg_; }
  const std::vector<dataset::WindowData>& windows() const { return data_; }

  // Writes a checkpoint before throwing when the loss stops being finite.
  std::function<void(const VQTrainer&)> on_divergence;

  EpochLog run_epoch() {
    std::vector<std::size_t> order(data_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    if (cfg_.max_windows_per_epoch > 0 && order.size() > cfg_.max_windows_per_epoch)
      order.resize(cfg_.max_windows_per_epoch);

    if (!codebooks_initialised_) initialise_codebooks(order);

    EpochLog log;
    log.epoch = epoch_;
    CodeUsage top_usage(cfg_.model.top_codes), bottom_usage(cfg_.model.bottom_codes);
    std::vector<std::vector<float>> top_pool, bottom_pool;
    const auto& skel = corpus_->skeleton;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      const float inv_b = 1.0f / float(end - start);
      model_->params().zero_grad();
      top_pool.clear();
      bottom_pool.clear();
      for (std::size_t k = start; k < end; ++k) {
        const auto& d = data_[order[k]];
        const auto x = ag::constant(d.motion);
        const auto bundle = model_->forward(x);
        const auto l_vq = vq_loss(x, bundle, cfg_.weights);
        AuxTerms terms;
        const auto l_aux = aux_loss(x, bundle.reconstruction, contacts_[order[k]], skel, cfg_.weights, &terms);
        const auto l_ma = modality_alignment_loss(bundle.top_st, model_->encode_music(d.music));
        const auto total = total_loss(l_vq, l_aux, l_ma, cfg_.weights);
        if (!std::isfinite(total.item())) diverged("loss became non-finite at epoch " + std::to_string(epoch_));
        ag::backward(ag::scale(total, inv_b));
        log.loss += total.item();
        log.vq += l_vq.item();
        log.aux += l_aux.item();
        log.ma += l_ma.item();
        top_usage.add(bundle.top.indices);
        bottom_usage.add(bundle.bottom.indices);
        collect_rows(bundle.h_t.value(), top_pool);
        collect_rows(bundle.bottom_projected.value(), bottom_pool);
      }
      nn::clip_grad_norm(model_->params(), cfg_.grad_clip);
      adam_.step();
      if (!model_->params().all_finite()) diverged("parameters became non-finite at epoch " + std::to_string(epoch_));
    }
    const double n = double(order.size());
    log.loss /= n;
    log.vq /= n;
    log.aux /= n;
    log.ma /= n;
    log.top_perplexity = top_usage.perplexity();
    log.bottom_perplexity = bottom_usage.perplexity();
    log.top_used = top_usage.distinct();
    log.bottom_used = bottom_usage.distinct();
    log.reseeded = reseed_dead_codes(true, top_usage, top_idle_, top_pool) +
                   reseed_dead_codes(false, bottom_usage, bottom_idle_, bottom_pool);
    top_usage_ = std::move(top_usage);
    bottom_usage_ = std::move(bottom_usage);
    history_.push_back(log);
    ++epoch_;
    return log;
  }

  void train(const std::function<void(const EpochLog&)>& on_epoch = {}) {
    while (epoch_ < cfg_.epochs) {
      const auto log = run_epoch();
      if (on_epoch) on_epoch(log);
    }
  }

  io::Checkpoint checkpoint() const {
    io::Checkpoint ck;
    ck.header["kind"] = "hvqvae";
    ck.header["config"] = cfg_.model;
    ck.header["loss_weights"] = cfg_.weights;
    ck.header["train_config"] = cfg_;
    ck.header["epoch"] = epoch_;
    ck.header["rng"] = rng_state(rng_);
    ck.header["codebooks_initialised"] = codebooks_initialised_;
    ck.header["usage"] = {{"top", top_usage_.counts}, {"bottom", bottom_usage_.counts}};
    ck.header["idle_epochs"] = {{"top", top_idle_}, {"bottom", bottom_idle_}};
    ck.header["history"] = history_;
    io::append_parameters(ck, model_->params());
    io::append_tensors(ck, adam_.state());
    return ck;
  }

  void resume(const io::Checkpoint& ck) {
    DM_THROW_IF(ck.header.at("config").get<HVQVAEConfig>() != cfg_.model, InvariantViolation,
                "checkpoint model config differs from the training config");
    io::load_parameters(ck, model_->params());
    adam_.load_state(io::tensors_with_prefix<float>(ck, "adam."));
    epoch_ = ck.header.at("epoch").get<std::size_t>();
    set_rng_state(rng_, ck.header.at("rng").get<std::string>());
    codebooks_initialised_ = ck.header.at("codebooks_initialised").get<bool>();
    top_usage_.counts = ck.header.at("usage").at("top").get<std::vector<std::uint64_t>>();
    bottom_usage_.counts = ck.header.at("usage").at("bottom").get<std::vector<std::uint64_t>>();
    top_idle_ = ck.header.at("idle_epochs").at("top").get<std::vector<std::size_t>>();
    bottom_idle_ = ck.header.at("idle_epochs").at("bottom").get<std::vector<std::size_t>>();
    history_ = ck.header.at("history").get<std::vector<EpochLog>>();
  }

 private:
  [[noreturn]] void diverged(const std::string& why) {
    if (on_divergence) on_divergence(*this);
    throw Error(ErrorKind::DivergenceDetected, why);
  }

  static void collect_rows(const Tensor<float>& t, std::vector<std::vector<float>>& pool) {
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto row = t.row(r);
      pool.emplace_back(row.begin(), row.end());
    }
  }

  // Codebooks start from encoder outputs of the first batch so that every
  // entry lies where the data is.
  void initialise_codebooks(const std::vector<std::size_t>& order) {
    ag::NoGrad guard;
    std::vector<std::vector<float>> top_pool, bottom_pool;
    const std::size_t n = std::min(order.size(), cfg_.batch_size);
    for (std::size_t k = 0; k < n; ++k) {
      const auto b = model_->forward(ag::constant(data_[order[k]].motion));
      collect_rows(b.h_t.value(), top_pool);
      collect_rows(b.bottom_projected.value(), bottom_pool);
    }
    std::normal_distribution<float> jitter(0.0f, 1e-3f);
    auto fill = [&](bool top, std::size_t K, const std::vector<std::vector<float>>& pool) {
      for (std::size_t k = 0; k < K; ++k) {
        auto v = pool[std::size_t(rng_() % pool.size())];
        for (auto& e : v) e += jitter(rng_);
        model_->set_code(top, k, v);
      }
    };
    fill(true, cfg_.model.top_codes, top_pool);
    fill(false, cfg_.model.bottom_codes, bottom_pool);
    codebooks_initialised_ = true;
  }

  std::size_t reseed_dead_codes(bool top, const CodeUsage& usage, std::vector<std::size_t>& idle,
                                const std::vector<std::vector<float>>& pool) {
    std::size_t reseeded = 0;
    for (std::size_t k = 0; k < idle.size(); ++k) {
      idle[k] = usage.counts[k] > 0 ? 0 : idle[k] + 1;
      if (cfg_.dead_code_epochs > 0 && idle[k] >= cfg_.dead_code_epochs && !pool.empty()) {
        model_->set_code(top, k, pool[std::size_t(rng_() % pool.size())]);
        idle[k] = 0;
        ++reseeded;
      }
    }
    return reseeded;
  }

  VQTrainConfig cfg_;
  const dataset::Corpus* corpus_;
  std::unique_ptr<HVQVAE<float>> model_;
  nn::Adam<float> adam_;
  std::mt19937_64 rng_;
  std::vector<dataset::WindowData> data_;
  std::vector<motion::FootContactLabels> contacts_;
  bool codebooks_initialised_ = false;
  std::size_t epoch_ = 0;
  CodeUsage top_usage_, bottom_usage_;
  std::vector<std::size_t> top_idle_, bottom_idle_;
  std::vector<EpochLog> history_;
};

}  // namespace dancemeld::hvqvae
