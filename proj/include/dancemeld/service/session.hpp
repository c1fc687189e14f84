#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "dancemeld/latent/tools.hpp"
#include "dancemeld/music/features.hpp"

namespace dancemeld::service {

inline constexpr int kApiVersion = 1;

struct SessionRecord {
  std::string id;
  std::optional<std::string> parent_id;
  hvqvae::LatentCodes codes;
  motion::MotionSequence motion;  // decode of `codes`
  std::string music_id;
  music::BeatTimes beats;
  std::string created_at;  // ISO 8601, UTC
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, int(ms));
  return out;
}

// Metadata document stored next to the binary motion payload.
inline nlohmann::json metadata_document(const SessionRecord& r) {
  nlohmann::json j = {{"v", kApiVersion},
                      {"id", r.id},
                      {"parent_id", r.parent_id ? nlohmann::json(*r.parent_id) : nlohmann::json(nullptr)},
                      {"codes", r.codes},
                      {"music_id", r.music_id},
                      {"beats", r.beats.beats},
                      {"fps", r.motion.fps},
                      {"frames", r.motion.frames.rows()},
                      {"created_at", r.created_at}};
  return j;
}

// On-disk store: <dir>/<id>.json plus <dir>/<id>.dmmo. Records never change
// after creation; reads are served from memory once loaded.
class SessionStore {
 public:
  explicit SessionStore(io::fs::path dir) : dir_(std::move(dir)), rng_(std::random_device{}()) {
    std::error_code ec;
    io::fs::create_directories(dir_, ec);
    DM_THROW_IF(ec, IoError, dir_.string() + ": cannot create session directory: " + ec.message());
  }

  const io::fs::path& directory() const { return dir_; }

  // Assigns a fresh id and creation time, persists, returns the stored record.
  std::shared_ptr<const SessionRecord> create(SessionRecord r) {
    {
      std::lock_guard lock(id_mutex_);
      do r.id = fresh_id();
      while (io::fs::exists(json_path(r.id)) || cache_contains(r.id));
    }
    r.created_at = utc_timestamp();
    io::write_file_atomic(motion_path(r.id),
                          io::encode_frame_array(io::kMotionMagic, r.motion.frames, std::uint32_t(r.motion.fps)));
    io::write_file_atomic(json_path(r.id), metadata_document(r).dump(2));
    auto rec = std::make_shared<const SessionRecord>(std::move(r));
    std::unique_lock lock(cache_mutex_);
    cache_[rec->id] = rec;
    return rec;
  }

  std::shared_ptr<const SessionRecord> get(const std::string& id) const {
    DM_THROW_IF(!valid_id(id), NotFound, "no session '" + id + "'");
    {
      std::shared_lock lock(cache_mutex_);
      if (auto it = cache_.find(id); it != cache_.end()) return it->second;
    }
    DM_THROW_IF(!io::fs::exists(json_path(id)), NotFound, "no session '" + id + "'");
    auto rec = std::make_shared<SessionRecord>(load(id));
    std::unique_lock lock(cache_mutex_);
    return cache_.emplace(id, std::move(rec)).first->second;
  }

 private:
  static bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 64) return false;
    for (char c : id)
      if (!std::isalnum(static_cast<unsigned char>(c))) return false;
    return true;
  }

  bool cache_contains(const std::string& id) const {
    std::shared_lock lock(cache_mutex_);
    return cache_.count(id) > 0;
  }

  std::string fresh_id() {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng_()));
    return buf;
  }

  io::fs::path json_path(const std::string& id) const { return dir_ / (id + ".json"); }
  io::fs::path motion_path(const std::string& id) const { return dir_ / (id + ".dmmo"); }

  SessionRecord load(const std::string& id) const {
    const auto path = json_path(id);
    try {
      const auto j = nlohmann::json::parse(io::read_file(path));
      SessionRecord r;
      r.id = j.at("id").get<std::string>();
      if (!j.at("parent_id").is_null()) r.parent_id = j.at("parent_id").get<std::string>();
      r.codes = j.at("codes").get<hvqvae::LatentCodes>();
      r.music_id = j.at("music_id").get<std::string>();
      r.beats.beats = j.at("beats").get<std::vector<double>>();
      r.created_at = j.at("created_at").get<std::string>();
      auto [header, frames] = io::decode_frame_array(io::kMotionMagic, io::read_file(motion_path(id)),
                                                     motion_path(id).string());
      r.motion = {std::move(frames), double(header.fps)};
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
    }
  }

  io::fs::path dir_;
  std::mt19937_64 rng_;
  std::mutex id_mutex_;
  mutable std::shared_mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const SessionRecord>> cache_;
};

}  // namespace dancemeld::service
