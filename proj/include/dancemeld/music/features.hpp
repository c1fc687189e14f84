#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dancemeld/io/binary.hpp"
#include "dancemeld/motion/skeleton.hpp"

namespace dancemeld::music {

inline constexpr std::size_t kDefaultFeatureDim = 4800;

// Per-frame conditioning features at the motion frame rate.
struct MusicFeatureSequence {
  Tensor<float> features;  // N_m x D_m
  double fps = motion::kFps;

  std::size_t length() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

struct BeatTimes {
  std::vector<double> beats;  // seconds, strictly increasing

  friend bool operator==(const BeatTimes&, const BeatTimes&) = default;
};

inline void save_features(const io::fs::path& path, const MusicFeatureSequence& m) {
  io::write_file_atomic(path, io::encode_frame_array(io::kFeatureMagic, m.features, std::uint32_t(std::lround(m.fps))));
}

inline MusicFeatureSequence load_precomputed_features(const io::fs::path& path) {
  auto [header, data] = io::decode_frame_array(io::kFeatureMagic, io::read_file(path), path.string());
  DM_THROW_IF(header.fps != 60, FormatError, path.string() + ": feature fps must be 60");
  DM_THROW_IF(!data.all_finite(), FormatError, path.string() + ": non-finite feature values");
  return {std::move(data), double(header.fps)};
}

struct ClickTrack {
  MusicFeatureSequence music;
  BeatTimes beats;
};

// Frames of a click track at `bpm`, starting at t = 0.
inline std::vector<std::size_t> click_frames(double bpm, std::size_t frames, double fps = motion::kFps) {
  std::vector<std::size_t> out;
  const double period = 60.0 / bpm;
  for (std::size_t k = 0;; ++k) {
    const auto f = std::size_t(std::llround(double(k) * period * fps));
    if (f >= frames) break;
    out.push_back(f);
  }
  return out;
}

// Synthetic stand-in for encoder features. Channel layout:
//   [0, D/4)         decaying impulse at each beat frame (onset signal)
//   [D/4, D/2)       sine/cosine pairs of the beat phase at a few harmonics
//                    (constant magnitude, so they never create onsets)
//   [D/2, D)         low-amplitude Gaussian noise
inline ClickTrack synth_click_features(double bpm, double duration_s, std::size_t dim, std::uint64_t seed = 0) {
  DM_THROW_IF(!(bpm >= 30.0 && bpm <= 300.0), InvalidTempo, "bpm must lie in [30, 300], got " + std::to_string(bpm));
  DM_THROW_IF(!(duration_s > 0.0), InvalidArgument, "duration must be positive");
  DM_THROW_IF(dim == 0, InvalidArgument, "feature dimension must be positive");
  const double fps = motion::kFps;
  const auto N = std::size_t(std::llround(duration_s * fps));
  ClickTrack out;
  out.music.features = Tensor<float>(N, dim);
  out.music.fps = fps;

  const auto beat_frames = click_frames(bpm, N, fps);
  for (std::size_t k = 0; k < beat_frames.size(); ++k) out.beats.beats.push_back(double(k) * 60.0 / bpm);

  const std::size_t impulse_end = std::max<std::size_t>(1, dim / 4);
  const std::size_t phase_end = std::max(impulse_end, dim / 2);
  const double period_frames = 60.0 / bpm * fps;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.01);

  std::size_t next = 0;
  std::ptrdiff_t last_beat = -1;
  for (std::size_t i = 0; i < N; ++i) {
    if (next < beat_frames.size() && beat_frames[next] == i) {
      last_beat = std::ptrdiff_t(i);
      ++next;
    }
    const double impulse = last_beat < 0 ? 0.0 : std::exp(-double(std::ptrdiff_t(i) - last_beat) / 3.0);
    for (std::size_t c = 0; c < impulse_end; ++c) out.music.features(i, c) = float(impulse);
    const double phase = 2.0 * M_PI * double(i) / period_frames;
    for (std::size_t c = impulse_end; c + 1 < phase_end; c += 2) {
      const double harmonic = double(1 + ((c - impulse_end) / 2) % 4);
      out.music.features(i, c) = float(0.5 * std::sin(harmonic * phase));
      out.music.features(i, c + 1) = float(0.5 * std::cos(harmonic * phase));
    }
    for (std::size_t c = phase_end; c < dim; ++c) out.music.features(i, c) = float(noise(rng));
  }
  return out;
}

struct BeatPickOptions {
  double relative_threshold = 0.3;
  std::size_t min_gap_frames = 10;
};

// Half-wave rectified first difference of the per-frame feature L2 norm.
// The frame before the clip counts as silence.
inline std::vector<double> onset_envelope(const MusicFeatureSequence& m) {
  std::vector<double> env(m.length(), 0.0);
  double prev = 0.0;
  for (std::size_t i = 0; i < m.length(); ++i) {
    double sq = 0.0;
    for (float v : m.features.row(i)) sq += double(v) * double(v);
    const double mag = std::sqrt(sq);
    env[i] = std::max(0.0, mag - prev);
    prev = mag;
  }
  return env;
}

// Local maxima of a non-negative curve above threshold * max, greedily kept
// strongest-first subject to a minimum gap. Returns ascending frame indices.
inline std::vector<std::size_t> pick_peaks(const std::vector<double>& env, BeatPickOptions opt) {
  if (env.empty()) return {};
  const double peak = *std::max_element(env.begin(), env.end());
  if (!(peak > 0.0)) return {};
  const double floor = opt.relative_threshold * peak;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double left = i > 0 ? env[i - 1] : 0.0;
    const double right = i + 1 < env.size() ? env[i + 1] : 0.0;
    if (env[i] > 0.0 && env[i] >= floor && env[i] >= left && env[i] >= right) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return env[a] > env[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t c : candidates) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return (c > k ? c - k : k - c) < opt.min_gap_frames;
    });
    if (clear) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline BeatTimes extract_beats(const MusicFeatureSequence& m, BeatPickOptions opt = {}) {
  BeatTimes out;
  if (m.length() < 3) return out;
  for (std::size_t f : pick_peaks(onset_envelope(m), opt)) out.beats.push_back(double(f) / m.fps);
  return out;
}

}  // namespace dancemeld::music
