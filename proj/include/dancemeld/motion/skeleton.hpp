#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dancemeld/motion/rotation.hpp"

namespace dancemeld::motion {

inline constexpr std::size_t kJointCount = 24;
inline constexpr std::size_t kRotationWidth = 6;
inline constexpr std::size_t kMotionWidth = 3 + kJointCount * kRotationWidth;  // 147
inline constexpr std::size_t kPositionWidth = kJointCount * 3;                 // 72
inline constexpr double kFps = 60.0;

// SMPL-ordered joint names for the built-in humanoid.
inline const std::array<const char*, kJointCount> kJointNames = {
    "pelvis",      "left_hip",       "right_hip",  "spine1",         "left_knee",  "right_knee",
    "spine2",      "left_ankle",     "right_ankle", "spine3",        "left_foot",  "right_foot",
    "neck",        "left_collar",    "right_collar", "head",         "left_shoulder", "right_shoulder",
    "left_elbow",  "right_elbow",    "left_wrist", "right_wrist",    "left_hand",  "right_hand"};

namespace joint {
inline constexpr int pelvis = 0, left_hip = 1, right_hip = 2, spine1 = 3, left_knee = 4, right_knee = 5,
                     spine2 = 6, left_ankle = 7, right_ankle = 8, spine3 = 9, left_foot = 10, right_foot = 11,
                     neck = 12, left_collar = 13, right_collar = 14, head = 15, left_shoulder = 16,
                     right_shoulder = 17, left_elbow = 18, right_elbow = 19, left_wrist = 20, right_wrist = 21,
                     left_hand = 22, right_hand = 23;
}

struct Skeleton {
  std::vector<int> parent_index;          // -1 for the root
  std::vector<Vec3<double>> rest_offset;  // metres, relative to parent
  std::vector<int> foot_joint_ids;        // heels and toes

  std::size_t joint_count() const { return parent_index.size(); }

  void validate() const {
    DM_THROW_IF(parent_index.size() != kJointCount || rest_offset.size() != kJointCount, InvariantViolation,
                "skeleton must have exactly 24 joints");
    DM_THROW_IF(parent_index[0] != -1, InvariantViolation, "joint 0 must be the root");
    for (std::size_t j = 1; j < kJointCount; ++j)
      DM_THROW_IF(parent_index[j] < 0 || parent_index[j] >= int(j), InvariantViolation,
                  "joint " + std::to_string(j) + " parent must precede it");
    for (int f : foot_joint_ids)
      DM_THROW_IF(f < 0 || f >= int(kJointCount), InvariantViolation, "foot joint id out of range");
  }

  // World positions of the rest pose with zero root translation.
  std::vector<Vec3<double>> rest_positions() const {
    std::vector<Vec3<double>> p(joint_count());
    for (std::size_t j = 0; j < joint_count(); ++j)
      p[j] = (parent_index[j] < 0 ? Vec3<double>::Zero() : p[std::size_t(parent_index[j])]) + rest_offset[j];
    return p;
  }

  double height() const {
    const auto p = rest_positions();
    double lo = p[0].y(), hi = p[0].y();
    for (const auto& q : p) {
      lo = std::min(lo, q.y());
      hi = std::max(hi, q.y());
    }
    return hi - lo;
  }
};

// A ~1.7 m, y-up humanoid in SMPL joint order. The root offset lifts the
// pelvis so the toes touch y ~= 0 at zero translation.
inline Skeleton builtin_skeleton() {
  Skeleton s;
  s.parent_index = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  s.rest_offset = {
      {0.0, 0.95, 0.0},     // pelvis
      {0.08, -0.09, 0.0},   // left_hip
      {-0.08, -0.09, 0.0},  // right_hip
      {0.0, 0.11, -0.02},   // spine1
      {0.01, -0.39, 0.0},   // left_knee
      {-0.01, -0.39, 0.0},  // right_knee
      {0.0, 0.13, 0.0},     // spine2
      {0.0, -0.40, -0.03},  // left_ankle
      {0.0, -0.40, -0.03},  // right_ankle
      {0.0, 0.06, 0.02},    // spine3
      {0.0, -0.05, 0.13},   // left_foot
      {0.0, -0.05, 0.13},   // right_foot
      {0.0, 0.21, -0.02},   // neck
      {0.07, 0.12, 0.0},    // left_collar
      {-0.07, 0.12, 0.0},   // right_collar
      {0.0, 0.24, 0.03},    // head
      {0.11, 0.03, 0.0},    // left_shoulder
      {-0.11, 0.03, 0.0},   // right_shoulder
      {0.26, 0.0, 0.0},     // left_elbow
      {-0.26, 0.0, 0.0},    // right_elbow
      {0.25, 0.0, 0.0},     // left_wrist
      {-0.25, 0.0, 0.0},    // right_wrist
      {0.08, 0.0, 0.0},     // left_hand
      {-0.08, 0.0, 0.0},    // right_hand
  };
  s.foot_joint_ids = {joint::left_ankle, joint::right_ankle, joint::left_foot, joint::right_foot};
  return s;
}

inline nlohmann::json skeleton_to_json(const Skeleton& s) {
  nlohmann::json offsets = nlohmann::json::array();
  for (const auto& o : s.rest_offset) offsets.push_back({o.x(), o.y(), o.z()});
  return {{"parents", s.parent_index}, {"offsets", offsets}, {"feet", s.foot_joint_ids}};
}

// Accepts the string "builtin" or an inline {parents, offsets, feet} object.
inline Skeleton skeleton_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    DM_THROW_IF(j.get<std::string>() != "builtin", FormatError, "unknown skeleton reference " + j.dump());
    return builtin_skeleton();
  }
  Skeleton s;
  try {
    s.parent_index = j.at("parents").get<std::vector<int>>();
    for (const auto& o : j.at("offsets")) s.rest_offset.emplace_back(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());
    s.foot_joint_ids = j.at("feet").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("skeleton: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace dancemeld::motion
