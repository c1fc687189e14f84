#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dancemeld/motion/kinematics.hpp"
#include "dancemeld/music/features.hpp"

namespace dancemeld::metrics {

using motion::JointPositions;
using motion::Skeleton;
using FeatureVector = std::vector<double>;

inline constexpr std::size_t kKineticDim = motion::kJointCount;
inline constexpr std::size_t kGeometricDim = 16;

// Mean squared joint velocity (m/s) per joint, 24 values.
inline FeatureVector kinetic_features(const JointPositions& pos, double fps = motion::kFps) {
  const std::size_t N = pos.length();
  FeatureVector out(kKineticDim, 0.0);
  if (N < 2) return out;
  for (std::size_t i = 0; i + 1 < N; ++i)
    for (std::size_t j = 0; j < kKineticDim; ++j) out[j] += ((pos.at(i + 1, j) - pos.at(i, j)) * fps).squaredNorm();
  for (auto& v : out) v /= double(N - 1);
  return out;
}

namespace detail {

inline double joint_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d u = a - b, v = c - b;
  const double d = u.norm() * v.norm();
  if (d < 1e-12) return M_PI;
  return std::acos(std::clamp(u.dot(v) / d, -1.0, 1.0));
}

}  // namespace detail

// Names of the 16 relational predicates, in feature order.
inline const std::array<const char*, kGeometricDim> kGeometricPredicates{
    "left_hand_above_head",  "right_hand_above_head", "left_hand_above_shoulder", "right_hand_above_shoulder",
    "left_knee_bent",        "right_knee_bent",       "left_elbow_bent",          "right_elbow_bent",
    "feet_crossed",          "hands_crossed",         "left_foot_raised",         "right_foot_raised",
    "wide_stance",           "hands_apart",           "torso_leaning",            "crouching"};

// Per-frame predicate truth values. Thresholds scale with skeleton height.
inline std::array<bool, kGeometricDim> geometric_predicates(const JointPositions& pos, std::size_t i, double height) {
  using namespace motion::joint;
  auto p = [&](int j) { return Eigen::Vector3d(pos.at(i, std::size_t(j))); };
  const double bent = 150.0 * M_PI / 180.0;
  const Eigen::Vector3d up(0, 1, 0);
  const Eigen::Vector3d torso = p(neck) - p(pelvis);
  const double lean = torso.norm() < 1e-12 ? 0.0 : std::acos(std::clamp(torso.normalized().dot(up), -1.0, 1.0));
  auto xz = [](Eigen::Vector3d v) { return Eigen::Vector2d(v.x(), v.z()); };
  return {
      p(left_wrist).y() > p(head).y(),
      p(right_wrist).y() > p(head).y(),
      p(left_wrist).y() > p(left_shoulder).y(),
      p(right_wrist).y() > p(right_shoulder).y(),
      detail::joint_angle(p(left_hip), p(left_knee), p(left_ankle)) < bent,
      detail::joint_angle(p(right_hip), p(right_knee), p(right_ankle)) < bent,
      detail::joint_angle(p(left_shoulder), p(left_elbow), p(left_wrist)) < bent,
      detail::joint_angle(p(right_shoulder), p(right_elbow), p(right_wrist)) < bent,
      (p(left_ankle) - p(right_ankle)).dot(p(left_hip) - p(right_hip)) < 0.0,
      (p(left_wrist) - p(right_wrist)).dot(p(left_shoulder) - p(right_shoulder)) < 0.0,
      p(left_ankle).y() > p(right_ankle).y() + 0.05 * height,
      p(right_ankle).y() > p(left_ankle).y() + 0.05 * height,
      xz(p(left_ankle) - p(right_ankle)).norm() > 2.0 * xz(p(left_hip) - p(right_hip)).norm(),
      (p(left_wrist) - p(right_wrist)).norm() > 0.6 * height,
      lean > 30.0 * M_PI / 180.0,
      p(pelvis).y() - std::min(p(left_ankle).y(), p(right_ankle).y()) < 0.4 * height,
  };
}

// Fraction of frames on which each predicate holds.
inline FeatureVector geometric_features(const JointPositions& pos, const Skeleton& skel) {
  FeatureVector out(kGeometricDim, 0.0);
  const std::size_t N = pos.length();
  if (N == 0) return out;
  const double h = skel.height();
  for (std::size_t i = 0; i < N; ++i) {
    const auto pred = geometric_predicates(pos, i, h);
    for (std::size_t k = 0; k < kGeometricDim; ++k) out[k] += pred[k] ? 1.0 : 0.0;
  }
  for (auto& v : out) v /= double(N);
  return out;
}

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The cross term is
// computed as the trace of sqrt(sqrt(S_a) S_b sqrt(S_a)), a symmetric matrix.
inline double frechet_distance(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b) {
  DM_THROW_IF(a.size() < 2 || b.size() < 2, TooFewSamples, "Frechet distance needs at least two samples per set");
  const std::size_t d = a.front().size();
  for (const auto* set : {&a, &b})
    for (const auto& v : *set) DM_THROW_IF(v.size() != d, DimMismatch, "feature vectors differ in length");

  auto stats = [d](const std::vector<FeatureVector>& s) {
    Eigen::MatrixXd m(Eigen::Index(s.size()), Eigen::Index(d));
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) m(Eigen::Index(i), Eigen::Index(k)) = s[i][k];
    const Eigen::VectorXd mu = m.colwise().mean();
    const Eigen::MatrixXd c = m.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / double(s.size() - 1);
    cov.diagonal().array() += 1e-6;
    return std::pair{mu, cov};
  };
  auto sym_sqrt = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  const auto [mu_a, cov_a] = stats(a);
  const auto [mu_b, cov_b] = stats(b);
  const Eigen::MatrixXd sa = sym_sqrt(cov_a);
  const double cross = sym_sqrt(sa * cov_b * sa).trace();
  const double fd = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
  return std::max(0.0, fd);
}

// Mean Euclidean distance over all unordered pairs.
inline double diversity(const std::vector<FeatureVector>& features) {
  DM_THROW_IF(features.size() < 2, TooFewSamples, "diversity needs at least two samples");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t j = i + 1; j < features.size(); ++j) {
      DM_THROW_IF(features[i].size() != features[j].size(), DimMismatch, "feature vectors differ in length");
      double sq = 0.0;
      for (std::size_t k = 0; k < features[i].size(); ++k) sq += (features[i][k] - features[j][k]) * (features[i][k] - features[j][k]);
      total += std::sqrt(sq);
      ++pairs;
    }
  return total / double(pairs);
}

// Mean joint speed per frame (central differences inside the clip, one-sided
// at the ends), smoothed with a centred moving average of `window` frames.
inline std::vector<double> smoothed_joint_speed(const JointPositions& pos, std::size_t window = 5) {
  const std::size_t N = pos.length();
  std::vector<double> speed(N, 0.0);
  if (N < 2) return speed;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1, hi = i + 1 == N ? i : i + 1;
    double s = 0.0;
    for (std::size_t j = 0; j < motion::kJointCount; ++j) s += (pos.at(hi, j) - pos.at(lo, j)).norm();
    speed[i] = s / (double(hi - lo) * double(motion::kJointCount));
  }
  std::vector<double> out(N, 0.0);
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t lo = i >= half ? i - half : 0, hi = std::min(N - 1, i + half);
    double s = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) s += speed[k];
    out[i] = s / double(hi - lo + 1);
  }
  return out;
}

// Motion beats: interior local minima of the smoothed mean joint speed.
inline music::BeatTimes motion_beats(const JointPositions& pos, double fps = motion::kFps) {
  const auto s = smoothed_joint_speed(pos);
  music::BeatTimes out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i)
    if (s[i] < s[i - 1] && s[i] <= s[i + 1]) out.beats.push_back(double(i) / fps);
  return out;
}

// Mean over music beats of exp(-d^2 / (2 sigma^2)), d the distance to the
// nearest motion beat.
inline double beat_alignment(const music::BeatTimes& motion_beat_times, const music::BeatTimes& music_beats,
                             double sigma = 0.1) {
  DM_THROW_IF(music_beats.beats.empty(), NoMusicBeats, "beat alignment needs at least one music beat");
  if (motion_beat_times.beats.empty()) return 0.0;
  double total = 0.0;
  for (double t : music_beats.beats) {
    double best = std::numeric_limits<double>::infinity();
    for (double b : motion_beat_times.beats) best = std::min(best, (t - b) * (t - b));
    total += std::exp(-best / (2.0 * sigma * sigma));
  }
  return total / double(music_beats.beats.size());
}

// Foot-contact plausibility: horizontal acceleration of the centre of mass
// (mean joint position), normalised by its clip maximum, times the product of
// each foot's normalised speed (the slower of its ankle and toe joints);
// averaged over time. Lower is better.
inline double pfc(const JointPositions& pos, double fps = motion::kFps) {
  using namespace motion::joint;
  const std::size_t N = pos.length();
  if (N < 3) return 0.0;
  std::vector<Eigen::Vector2d> com(N, Eigen::Vector2d::Zero());
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < motion::kJointCount; ++j) com[i] += Eigen::Vector2d(pos.at(i, j).x(), pos.at(i, j).z());
    com[i] /= double(motion::kJointCount);
  }
  const std::size_t M = N - 2;
  std::vector<double> acc(M), left(M), right(M);
  auto speed = [&](std::size_t i, int j) { return (pos.at(i + 1, std::size_t(j)) - pos.at(i, std::size_t(j))).norm() * fps; };
  for (std::size_t i = 0; i < M; ++i) {
    acc[i] = (com[i + 2] - 2.0 * com[i + 1] + com[i]).norm() * fps * fps;
    left[i] = std::min(speed(i + 1, left_ankle), speed(i + 1, left_foot));
    right[i] = std::min(speed(i + 1, right_ankle), speed(i + 1, right_foot));
  }
  auto normalise = [](std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    for (auto& x : v) x = m > 0.0 ? x / m : 0.0;
  };
  normalise(acc);
  normalise(left);
  normalise(right);
  double total = 0.0;
  for (std::size_t i = 0; i < M; ++i) total += acc[i] * left[i] * right[i];
  return total / double(M);
}

struct MetricReport {
  int schema_version = 1;
  double fid_k = 0, fid_g = 0, div_k = 0, div_g = 0, bas = 0, pfc = 0;
  std::size_t generated = 0, reference = 0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricReport, schema_version, fid_k, fid_g, div_k, div_g, bas, pfc, generated,
                                   reference)

inline std::string report_table(const MetricReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "metric   value\n"
                "FID_k    %.6g\nFID_g    %.6g\nDiv_k    %.6g\nDiv_g    %.6g\nBAS      %.6g\nPFC      %.6g\n",
                r.fid_k, r.fid_g, r.div_k, r.div_g, r.bas, r.pfc);
  return buf;
}

// Everything the report needs from one clip.
struct ClipFeatures {
  FeatureVector kinetic, geometric;
  double bas = 0, pfc = 0;
};

inline ClipFeatures clip_features(const JointPositions& pos, const Skeleton& skel, const music::BeatTimes* music_beats) {
  ClipFeatures f;
  f.kinetic = kinetic_features(pos);
  f.geometric = geometric_features(pos, skel);
  f.pfc = pfc(pos);
  if (music_beats && !music_beats->beats.empty()) f.bas = beat_alignment(motion_beats(pos), *music_beats);
  return f;
}

inline MetricReport evaluate(const std::vector<ClipFeatures>& generated, const std::vector<ClipFeatures>& reference) {
  MetricReport r;
  r.generated = generated.size();
  r.reference = reference.size();
  auto pick = [](const std::vector<ClipFeatures>& s, bool kinetic) {
    std::vector<FeatureVector> out;
    for (const auto& f : s) out.push_back(kinetic ? f.kinetic : f.geometric);
    return out;
  };
  r.fid_k = frechet_distance(pick(generated, true), pick(reference, true));
  r.fid_g = frechet_distance(pick(generated, false), pick(reference, false));
  r.div_k = diversity(pick(generated, true));
  r.div_g = diversity(pick(generated, false));
  for (const auto& f : generated) {
    r.bas += f.bas;
    r.pfc += f.pfc;
  }
  r.bas /= double(generated.size());
  r.pfc /= double(generated.size());
  return r;
}

}  // namespace dancemeld::metrics
