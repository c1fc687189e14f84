#pragma once

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "dancemeld/diffusion/prior.hpp"
#include "dancemeld/service/session.hpp"

namespace dancemeld::service {

using nlohmann::json;

// Transport-agnostic reply: HTTP status plus JSON body.
struct Reply {
  int status = 200;
  json body;
};

inline int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::ModelsNotLoaded: return 409;
    case ErrorKind::InvalidArgument:
    case ErrorKind::IndexOutOfRange:
    case ErrorKind::RatioViolation:
    case ErrorKind::InvalidTempo:
    case ErrorKind::BadLength:
    case ErrorKind::InvalidStepCount:
    case ErrorKind::LengthMismatch:
    case ErrorKind::DimMismatch:
    case ErrorKind::FormatError: return 400;
    default: return 500;
  }
}

inline io::fs::path default_data_dir(const io::fs::path& fallback = "dancemeld_data") {
  if (const char* env = std::getenv("DM_DATA_DIR"); env && *env) return env;
  return fallback;
}

struct LoadedModels {
  std::shared_ptr<const hvqvae::HVQVAE<float>> vq;
  std::shared_ptr<const diffusion::DiffusionPrior> prior;
  json vq_info, prior_info;  // checkpoint header summaries
  std::vector<std::uint64_t> top_usage, bottom_usage;
};

inline LoadedModels load_models(const io::fs::path& vq_path, const io::fs::path& prior_path) {
  LoadedModels m;
  const auto vq_ck = io::load_checkpoint(vq_path);
  const auto prior_ck = io::load_checkpoint(prior_path);
  m.vq = hvqvae::load_hvqvae(vq_ck);
  m.prior = diffusion::load_prior(prior_ck);
  auto summary = [](const io::Checkpoint& ck, const io::fs::path& p) {
    return json{{"kind", ck.header.value("kind", "")},
                {"format_version", ck.header.value("format_version", 0)},
                {"epoch", ck.header.value("epoch", std::size_t(0))},
                {"file", p.filename().string()}};
  };
  m.vq_info = summary(vq_ck, vq_path);
  m.prior_info = summary(prior_ck, prior_path);
  if (vq_ck.header.contains("usage")) {
    m.top_usage = vq_ck.header.at("usage").at("top").get<std::vector<std::uint64_t>>();
    m.bottom_usage = vq_ck.header.at("usage").at("bottom").get<std::vector<std::uint64_t>>();
  }
  return m;
}

// Request handlers. Inference reads frozen parameters only; the store
// handles its own locking, so handlers may run concurrently.
class Service {
 public:
  Service(std::optional<LoadedModels> models, io::fs::path data_dir, motion::Skeleton skeleton)
      : models_(std::move(models)),
        store_(data_dir / "sessions"),
        music_dir_(data_dir / "music"),
        skeleton_(std::move(skeleton)) {}

  SessionStore& store() { return store_; }

  Reply health() const {
    json versions = json::object();
    if (models_) versions = {{"vq", models_->vq_info}, {"prior", models_->prior_info}};
    return {200, {{"v", kApiVersion}, {"status", models_ ? "ok" : "models_not_loaded"}, {"model_versions", versions}}};
  }

  Reply codebooks() const {
    return guarded([&] {
      const auto& m = require_models();
      const auto& c = m.vq->config();
      auto level = [](std::size_t size, std::size_t dim, const std::vector<std::uint64_t>& usage) {
        std::size_t used = 0;
        for (auto u : usage) used += u > 0;
        return json{{"size", size}, {"dim", dim}, {"usage", usage}, {"used", used}};
      };
      return Reply{200,
                   {{"v", kApiVersion},
                    {"top", level(c.top_codes, c.code_dim, m.top_usage)},
                    {"bottom", level(c.bottom_codes, c.code_dim, m.bottom_usage)}}};
    });
  }

  // {music: "click:BPM" | feature id, steps, seed, windows}
  Reply generate(const json& req) {
    return guarded([&] {
      const auto& m = require_models();
      check_version(req);
      const auto music_spec = field<std::string>(req, "music");
      const auto steps = field_or<std::size_t>(req, "steps", 50);
      const auto seed = field_or<std::uint64_t>(req, "seed", 0);
      const auto windows = field_or<std::size_t>(req, "windows", 1);
      DM_THROW_IF(windows == 0 || windows > 16, InvalidArgument, "windows must lie in [1, 16]");
      const std::size_t frames = windows * hvqvae::kBottomRate * m.prior->config().seq_len;
      auto [features, beats] = resolve_music(music_spec, frames, m.prior->config().cond_dim, seed);
      const auto gen = diffusion::generate(features, *m.vq, *m.prior, steps, seed);
      SessionRecord r;
      r.codes = gen.codes;
      r.motion = gen.motion;
      r.music_id = music_spec;
      r.beats = std::move(beats);
      return Reply{200, payload(*store_.create(std::move(r)))};
    });
  }

  Reply get(const std::string& id) const {
    return guarded([&] { return Reply{200, payload(*store_.get(id))}; });
  }

  // {ops: [EditOp]}; a payload {"session": id} on a swap borrows that
  // session's codes.
  Reply edit(const std::string& id, const json& req) {
    return guarded([&] {
      const auto& m = require_models();
      check_version(req);
      const auto parent = store_.get(id);
      DM_THROW_IF(!req.contains("ops") || !req.at("ops").is_array(), InvalidArgument, "body needs an ops array");
      std::vector<latent::EditOp> ops;
      for (auto op : req.at("ops")) {
        if (op.contains("payload") && op.at("payload").is_object() && op.at("payload").contains("session")) {
          const auto donor = store_.get(op.at("payload").at("session").get<std::string>());
          op["payload"] = donor->codes;
        }
        ops.push_back(op.get<latent::EditOp>());
      }
      const auto result = latent::apply_edits(parent->codes, ops, *m.vq);
      SessionRecord r;
      r.parent_id = parent->id;
      r.codes = result.codes;
      r.motion = result.motion;
      r.music_id = parent->music_id;
      r.beats = parent->beats;
      return Reply{200, payload(*store_.create(std::move(r)))};
    });
  }

  // Full record plus FK joint positions for playback.
  json payload(const SessionRecord& r) const {
    auto j = metadata_document(r);
    const auto pos = motion::joint_positions(r.motion, skeleton_);
    std::vector<std::vector<double>> frames(pos.length());
    for (std::size_t i = 0; i < pos.length(); ++i) {
      const auto row = pos.positions.row(i);
      frames[i].assign(row.begin(), row.end());
    }
    j["joint_positions"] = std::move(frames);
    j["parents"] = skeleton_.parent_index;
    return j;
  }

 private:
  template <typename F>
  Reply guarded(F&& f) const {
    try {
      return f();
    } catch (const Error& e) {
      const int status = http_status(e.kind());
      if (status == 500) return internal_error(e.what());
      return {status, {{"v", kApiVersion}, {"error", std::string(e.name())}, {"message", e.detail()}}};
    } catch (const nlohmann::json::exception& e) {
      return {400, {{"v", kApiVersion}, {"error", "InvalidArgument"}, {"message", e.what()}}};
    } catch (const std::exception& e) {
      return internal_error(e.what());
    }
  }

  // Opaque id in the reply; details only in the server log.
  Reply internal_error(const std::string& what) const {
    const auto n = error_counter_.fetch_add(1);
    char id[32];
    std::snprintf(id, sizeof id, "err-%06llu", static_cast<unsigned long long>(n));
    std::cerr << "[dancemeld] " << id << ": " << what << std::endl;
    return {500, {{"v", kApiVersion}, {"error", "Internal"}, {"id", id}}};
  }

  const LoadedModels& require_models() const {
    DM_THROW_IF(!models_, ModelsNotLoaded, "no VQ-VAE / prior checkpoints are loaded");
    return *models_;
  }

  static void check_version(const json& req) {
    DM_THROW_IF(!req.is_object(), InvalidArgument, "request body must be a JSON object");
    DM_THROW_IF(req.contains("v") && req.at("v") != kApiVersion, InvalidArgument, "unsupported API version");
  }

  template <typename V>
  static V field(const json& req, const char* name) {
    DM_THROW_IF(!req.contains(name), InvalidArgument, std::string("missing field '") + name + "'");
    return req.at(name).get<V>();
  }

  template <typename V>
  static V field_or(const json& req, const char* name, V fallback) {
    return req.contains(name) ? req.at(name).get<V>() : fallback;
  }

  std::pair<music::MusicFeatureSequence, music::BeatTimes> resolve_music(const std::string& spec, std::size_t frames,
                                                                         std::size_t dim, std::uint64_t seed) const {
    if (spec.rfind("click:", 0) == 0) {
      double bpm = 0;
      try {
        bpm = std::stod(spec.substr(6));
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidArgument, "malformed click spec '" + spec + "'");
      }
      auto click = music::synth_click_features(bpm, double(frames) / motion::kFps, dim, seed);
      return {std::move(click.music), std::move(click.beats)};
    }
    DM_THROW_IF(spec.empty() || spec.find_first_of("/\\") != std::string::npos || spec.find("..") != std::string::npos,
                InvalidArgument, "music must be click:BPM or a feature id");
    const auto path = music_dir_ / (spec + ".dmft");
    DM_THROW_IF(!io::fs::exists(path), NotFound, "no music features '" + spec + "'");
    auto m = music::load_precomputed_features(path);
    DM_THROW_IF(m.length() < frames, BadLength,
                "music '" + spec + "' has " + std::to_string(m.length()) + " frames, need " + std::to_string(frames));
    m.features = m.features.slice_rows(0, frames);
    auto beats = music::extract_beats(m);
    return {std::move(m), std::move(beats)};
  }

  std::optional<LoadedModels> models_;
  SessionStore store_;
  io::fs::path music_dir_;
  motion::Skeleton skeleton_;
  mutable std::atomic<std::uint64_t> error_counter_{0};
};

}  // namespace dancemeld::service
