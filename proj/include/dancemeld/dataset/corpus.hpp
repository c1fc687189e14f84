#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dancemeld/motion/kinematics.hpp"
#include "dancemeld/music/features.hpp"

namespace dancemeld::dataset {

using motion::MotionSequence;
using music::BeatTimes;
using music::MusicFeatureSequence;

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error(ErrorKind::FormatError, "unknown split '" + s + "'");
}

struct MotionClip {
  std::string id;
  MotionSequence motion;
  MusicFeatureSequence music;
  BeatTimes beats;
  Split split = Split::train;
  double bpm = 0.0;  // 0 when unknown

  std::size_t length() const { return motion.length(); }

  void validate() const {
    DM_THROW_IF(motion.length() != music.length(), InvariantViolation,
                "clip " + id + ": motion has " + std::to_string(motion.length()) + " frames, music has " +
                    std::to_string(music.length()));
    DM_THROW_IF(motion.fps != motion::kFps || music.fps != motion::kFps, InvariantViolation,
                "clip " + id + ": fps must be 60");
    try {
      motion.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::InvariantViolation, "clip " + id + ": " + e.detail());
    }
  }
};

struct Corpus {
  motion::Skeleton skeleton = motion::builtin_skeleton();
  std::vector<MotionClip> clips;

  std::vector<const MotionClip*> split(Split s) const {
    std::vector<const MotionClip*> out;
    for (const auto& c : clips)
      if (c.split == s) out.push_back(&c);
    return out;
  }
};

// ---------------------------------------------------------------- windows

struct WindowSpec {
  std::size_t length = 512;
  std::size_t stride = 40;

  void validate() const {
    DM_THROW_IF(length == 0 || length % 8 != 0, BadLength, "window length must be a positive multiple of 8");
    DM_THROW_IF(stride == 0, InvalidArgument, "window stride must be >= 1");
  }
};

struct Window {
  const MotionClip* clip = nullptr;
  std::size_t start = 0;
};

// Starts 0, stride, 2*stride, ... while start + length <= N.
inline std::vector<std::size_t> window_starts(std::size_t clip_length, const WindowSpec& spec) {
  spec.validate();
  DM_THROW_IF(clip_length < spec.length, ClipTooShort,
              "clip of " + std::to_string(clip_length) + " frames is shorter than the " +
                  std::to_string(spec.length) + "-frame window");
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + spec.length <= clip_length; s += spec.stride) out.push_back(s);
  return out;
}

inline std::vector<Window> windows(const std::vector<const MotionClip*>& clips, const WindowSpec& spec) {
  std::vector<Window> out;
  for (const auto* c : clips)
    for (auto s : window_starts(c->length(), spec)) out.push_back({c, s});
  return out;
}

struct WindowData {
  Tensor<float> motion;  // length x 147
  Tensor<float> music;   // length x D_m
};

inline WindowData window_data(const Window& w, const WindowSpec& spec) {
  return {w.clip->motion.frames.slice_rows(w.start, w.start + spec.length),
          w.clip->music.features.slice_rows(w.start, w.start + spec.length)};
}

// ---------------------------------------------------------------- synthesis

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t clips = 24;
  std::size_t pose_clusters = 8;
  std::vector<double> tempos{90.0, 120.0, 150.0};
  std::size_t frames = 640;
  std::size_t music_dim = music::kDefaultFeatureDim;
  double pose_noise = 0.02;  // radians, per axis-angle component
  std::size_t test_every = 5;  // every k-th clip goes to the test split
};

// Joints that the synthetic dancer moves and the axis-angle amplitude they
// may take, in radians. Other joints stay at rest.
struct ActiveJoint {
  int joint;
  double amplitude;
};

inline const std::vector<ActiveJoint>& active_joints() {
  using namespace motion::joint;
  static const std::vector<ActiveJoint> j{{left_hip, 0.6},      {right_hip, 0.6},      {left_knee, 0.8},
                                          {right_knee, 0.8},    {spine1, 0.25},        {spine3, 0.25},
                                          {neck, 0.3},          {left_shoulder, 1.0},  {right_shoulder, 1.0},
                                          {left_elbow, 1.0},    {right_elbow, 1.0},    {left_collar, 0.2},
                                          {right_collar, 0.2}};
  return j;
}

using PoseVector = std::vector<double>;  // 3 axis-angle values per active joint

struct PoseClusters {
  std::vector<PoseVector> centroids;
  double noise = 0.02;

  // Expected L2 norm of a pose's noise vector.
  double noise_scale() const { return noise * std::sqrt(double(centroids.front().size())); }
};

inline double pose_distance(const PoseVector& a, const PoseVector& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Centroids are rejection-sampled until every pair is at least 5x the noise
// scale apart.
inline PoseClusters sample_pose_clusters(std::mt19937_64& rng, std::size_t count, double noise) {
  PoseClusters out;
  out.noise = noise;
  const auto& joints = active_joints();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double min_gap = 5.0 * noise * std::sqrt(double(3 * joints.size()));
  while (out.centroids.size() < count) {
    PoseVector c;
    for (const auto& j : joints)
      for (int a = 0; a < 3; ++a) c.push_back(j.amplitude * u(rng));
    bool ok = true;
    for (const auto& other : out.centroids) ok = ok && pose_distance(c, other) >= min_gap;
    if (ok) out.centroids.push_back(std::move(c));
  }
  return out;
}

inline std::array<motion::Mat3<double>, motion::kJointCount> pose_rotations(const PoseVector& p) {
  std::array<motion::Mat3<double>, motion::kJointCount> r;
  r.fill(motion::Mat3<double>::Identity());
  const auto& joints = active_joints();
  for (std::size_t k = 0; k < joints.size(); ++k)
    r[std::size_t(joints[k].joint)] = motion::axis_angle_to_matrix<double>(motion::Vec3<double>(p[3 * k], p[3 * k + 1], p[3 * k + 2]));
  return r;
}

// Poses keyed at click frames; in between, a cosine ease so joint speed
// falls to zero on every beat.
inline MotionSequence beat_locked_motion(const std::vector<PoseVector>& keys, const std::vector<std::size_t>& key_frames,
                                         std::size_t frames) {
  MotionSequence m;
  m.frames = Tensor<float>(frames, motion::kMotionWidth);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < frames; ++i) {
    while (seg + 2 < key_frames.size() && key_frames[seg + 1] <= i) ++seg;
    const double a = double(key_frames[seg]), b = double(key_frames[seg + 1]);
    const double u = std::clamp((double(i) - a) / (b - a), 0.0, 1.0);
    const double s = 0.5 - 0.5 * std::cos(M_PI * u);
    PoseVector p(keys[seg].size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = (1 - s) * keys[seg][k] + s * keys[seg + 1][k];
    motion::write_frame<float>(m.frames.row(i), motion::Vec3<double>::Zero(), pose_rotations(p));
  }
  return m;
}

inline Corpus generate_synthetic_corpus(const SynthOptions& opt) {
  DM_THROW_IF(opt.pose_clusters < 2, InvalidArgument, "need at least two pose clusters");
  DM_THROW_IF(opt.tempos.empty(), InvalidArgument, "need at least one tempo");
  DM_THROW_IF(opt.frames < 8, InvalidArgument, "clips need at least 8 frames");
  std::mt19937_64 rng(opt.seed);
  const auto clusters = sample_pose_clusters(rng, opt.pose_clusters, opt.pose_noise);
  std::normal_distribution<double> noise(0.0, opt.pose_noise);

  Corpus corpus;
  for (std::size_t c = 0; c < opt.clips; ++c) {
    MotionClip clip;
    char id[32];
    std::snprintf(id, sizeof id, "clip%03zu", c);
    clip.id = id;
    clip.bpm = opt.tempos[c % opt.tempos.size()];
    clip.split = opt.test_every > 0 && c % opt.test_every == opt.test_every - 1 ? Split::test : Split::train;

    const double duration = double(opt.frames) / motion::kFps;
    auto click = music::synth_click_features(clip.bpm, duration, opt.music_dim, rng());
    clip.music = std::move(click.music);
    clip.beats = std::move(click.beats);

    // One key pose per beat plus one past the end; consecutive clusters differ.
    auto key_frames = music::click_frames(clip.bpm, opt.frames);
    const double period = 60.0 / clip.bpm * motion::kFps;
    key_frames.push_back(std::size_t(std::llround(double(key_frames.size()) * period)));
    std::vector<PoseVector> keys;
    std::size_t prev = opt.pose_clusters;
    for (std::size_t k = 0; k < key_frames.size(); ++k) {
      std::size_t pick;
      do pick = std::size_t(rng() % opt.pose_clusters);
      while (pick == prev);
      prev = pick;
      PoseVector p = clusters.centroids[pick];
      for (auto& v : p) v += noise(rng);
      keys.push_back(std::move(p));
    }
    clip.motion = beat_locked_motion(keys, key_frames, opt.frames);
    corpus.clips.push_back(std::move(clip));
  }
  return corpus;
}

// ---------------------------------------------------------------- storage
//
// Manifest: {"version": 1, "skeleton": "builtin" | {...},
//            "clips": [{"id", "motion_path", "music_path", "beats", "split", "bpm"}]}
// Paths are relative to the manifest's directory. Motion files use the
// frame-array layout with magic "DMMO" (N x 147 float32).

inline void save_motion(const io::fs::path& path, const MotionSequence& m) {
  io::write_file_atomic(path, io::encode_frame_array(io::kMotionMagic, m.frames, std::uint32_t(std::lround(m.fps))));
}

inline MotionSequence load_motion(const io::fs::path& path) {
  auto [header, data] = io::decode_frame_array(io::kMotionMagic, io::read_file(path), path.string());
  MotionSequence m{std::move(data), double(header.fps)};
  m.validate();
  return m;
}

inline void save_corpus(const Corpus& corpus, const io::fs::path& dir) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : corpus.clips) {
    c.validate();
    const std::string motion_path = "motion/" + c.id + ".dmmo";
    const std::string music_path = "music/" + c.id + ".dmft";
    save_motion(dir / motion_path, c.motion);
    music::save_features(dir / music_path, c.music);
    clips.push_back({{"id", c.id},
                     {"motion_path", motion_path},
                     {"music_path", music_path},
                     {"beats", c.beats.beats},
                     {"split", to_string(c.split)},
                     {"bpm", c.bpm}});
  }
  const nlohmann::json manifest{{"version", 1}, {"skeleton", motion::skeleton_to_json(corpus.skeleton)}, {"clips", clips}};
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2));
}

// Accepts the manifest file or the directory holding manifest.json. With
// `center`, every clip's first root position is moved to the ground-plane origin.
inline Corpus load_corpus(const io::fs::path& path, bool center = false) {
  const auto manifest_path = io::fs::is_directory(path) ? path / "manifest.json" : path;
  const auto dir = manifest_path.parent_path();
  Corpus corpus;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, manifest_path.string() + ": " + e.what());
  }
  try {
    DM_THROW_IF(manifest.at("version").get<int>() != 1, FormatError, "unsupported manifest version");
    corpus.skeleton = motion::skeleton_from_json(manifest.at("skeleton"));
    for (const auto& e : manifest.at("clips")) {
      MotionClip c;
      c.id = e.at("id").get<std::string>();
      c.motion = load_motion(dir / e.at("motion_path").get<std::string>());
      if (center) c.motion = motion::center_root(std::move(c.motion));
      c.music = music::load_precomputed_features(dir / e.at("music_path").get<std::string>());
      c.beats.beats = e.at("beats").get<std::vector<double>>();
      c.split = split_from_string(e.at("split").get<std::string>());
      c.bpm = e.value("bpm", 0.0);
      c.validate();
      corpus.clips.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, manifest_path.string() + ": " + e.what());
  }
  return corpus;
}

}  // namespace dancemeld::dataset
