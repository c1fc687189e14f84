#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dancemeld/autograd/ops.hpp"
#include "dancemeld/motion/skeleton.hpp"

namespace dancemeld::motion {

// N x 147 frames: root translation (metres) then 24 six-D rotation blocks.
struct MotionSequence {
  Tensor<float> frames;
  double fps = kFps;

  std::size_t length() const { return frames.rows(); }

  void validate() const {
    DM_THROW_IF(frames.cols() != kMotionWidth, ShapeMismatch,
                "motion width " + std::to_string(frames.cols()) + " != 147");
    DM_THROW_IF(!frames.all_finite(), InvariantViolation, "motion contains non-finite values");
  }
};

// N x 72: joint j of frame i lives at columns [3j, 3j + 3).
struct JointPositions {
  Tensor<double> positions;

  std::size_t length() const { return positions.rows(); }
  Vec3<double> at(std::size_t frame, std::size_t j) const {
    return {positions(frame, 3 * j), positions(frame, 3 * j + 1), positions(frame, 3 * j + 2)};
  }
};

struct FootContactLabels {
  std::vector<std::uint8_t> labels;  // row-major N x |feet|
  std::size_t frames = 0;
  std::size_t feet = 0;

  std::uint8_t operator()(std::size_t i, std::size_t f) const { return labels[i * feet + f]; }
};

namespace detail {

template <typename T>
void frame_rotations(const T* row, const Skeleton& skel, std::array<Mat3<T>, kJointCount>& local,
                     std::array<Mat3<T>, kJointCount>& world) {
  for (std::size_t j = 0; j < kJointCount; ++j) {
    local[j] = rot6d_to_matrix<T>(std::span<const T>(row + 3 + 6 * j, 6));
    const int p = skel.parent_index[j];
    world[j] = p < 0 ? local[j] : Mat3<T>(world[std::size_t(p)] * local[j]);
  }
}

}  // namespace detail

// Per frame: root = translation + root offset; each child = parent position
// + parent world rotation * rest offset.
template <typename T>
Tensor<T> forward_kinematics(const Tensor<T>& frames, const Skeleton& skel) {
  DM_THROW_IF(frames.cols() != kMotionWidth, ShapeMismatch, "forward_kinematics expects 147-wide frames");
  const std::size_t N = frames.rows();
  Tensor<T> out(N, kPositionWidth);
  std::array<Mat3<T>, kJointCount> local, world;
  std::array<Vec3<T>, kJointCount> pos;
  for (std::size_t i = 0; i < N; ++i) {
    const T* row = frames.data() + i * kMotionWidth;
    detail::frame_rotations(row, skel, local, world);
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Vec3<T> off = skel.rest_offset[j].template cast<T>();
      const int p = skel.parent_index[j];
      pos[j] = p < 0 ? Vec3<T>(Vec3<T>(row[0], row[1], row[2]) + off)
                     : Vec3<T>(pos[std::size_t(p)] + world[std::size_t(p)] * off);
      for (int c = 0; c < 3; ++c) out(i, 3 * j + std::size_t(c)) = pos[j][c];
    }
  }
  return out;
}

// Reverse pass of forward_kinematics: dL/dframes from dL/dpositions.
template <typename T>
Tensor<T> forward_kinematics_backward(const Tensor<T>& frames, const Skeleton& skel, const Tensor<T>& grad_pos) {
  const std::size_t N = frames.rows();
  Tensor<T> grad(N, kMotionWidth);
  std::array<Mat3<T>, kJointCount> local, world, g_world;
  std::array<Vec3<T>, kJointCount> g_pos;
  for (std::size_t i = 0; i < N; ++i) {
    const T* row = frames.data() + i * kMotionWidth;
    T* grow = grad.data() + i * kMotionWidth;
    detail::frame_rotations(row, skel, local, world);
    for (std::size_t j = 0; j < kJointCount; ++j) {
      g_pos[j] = Vec3<T>(grad_pos(i, 3 * j), grad_pos(i, 3 * j + 1), grad_pos(i, 3 * j + 2));
      g_world[j].setZero();
    }
    // Children have larger indices than parents, so a reverse sweep sees each
    // joint's gradient complete before pushing it to its parent.
    for (std::size_t j = kJointCount; j-- > 1;) {
      const auto p = std::size_t(skel.parent_index[j]);
      const Vec3<T> off = skel.rest_offset[j].template cast<T>();
      g_pos[p] += g_pos[j];
      g_world[p] += g_pos[j] * off.transpose();
      g_world[p] += g_world[j] * local[j].transpose();
      const Mat3<T> g_local = world[p].transpose() * g_world[j];
      rot6d_backward<T>(std::span<const T>(row + 3 + 6 * j, 6), g_local, std::span<T>(grow + 3 + 6 * j, 6));
    }
    rot6d_backward<T>(std::span<const T>(row + 3, 6), g_world[0], std::span<T>(grow + 3, 6));
    for (int c = 0; c < 3; ++c) grow[c] += g_pos[0][c];
  }
  return grad;
}

// Differentiable FK node for training graphs.
template <typename T>
ag::Var<T> forward_kinematics(const ag::Var<T>& frames, const Skeleton& skel) {
  Tensor<T> out = forward_kinematics(frames.value(), skel);
  return ag::make_result<T>(std::move(out), {frames.node()}, [&skel](ag::Node<T>& self) {
    auto& p = *self.parents[0];
    p.grad_buffer() += forward_kinematics_backward(p.value, skel, self.grad);
  });
}

inline JointPositions joint_positions(const MotionSequence& m, const Skeleton& skel) {
  return {forward_kinematics(m.frames.cast<double>(), skel)};
}

template <typename T>
Tensor<T> temporal_difference(const Tensor<T>& series) {
  DM_THROW_IF(series.rows() < 2, SequenceTooShort, "temporal_difference needs N >= 2");
  Tensor<T> out(series.rows() - 1, series.cols());
  for (std::size_t i = 0; i + 1 < series.rows(); ++i)
    for (std::size_t c = 0; c < series.cols(); ++c) out(i, c) = series(i + 1, c) - series(i, c);
  return out;
}

struct ContactThresholds {
  double velocity = 0.01;  // metres per frame at 60 fps
  double height = 0.05;    // metres above the joint's lowest point in the clip
};

// A foot joint is in contact when it is both slow and near its own lowest
// height in the clip (strict comparisons). The last frame repeats the
// previous label.
inline FootContactLabels detect_foot_contacts(const JointPositions& pos, const Skeleton& skel,
                                              ContactThresholds th = {}) {
  const std::size_t N = pos.length();
  DM_THROW_IF(N < 2, SequenceTooShort, "foot contact detection needs N >= 2");
  FootContactLabels out;
  out.frames = N;
  out.feet = skel.foot_joint_ids.size();
  out.labels.assign(N * out.feet, 0);
  for (std::size_t f = 0; f < out.feet; ++f) {
    const auto j = std::size_t(skel.foot_joint_ids[f]);
    double floor = pos.at(0, j).y();
    for (std::size_t i = 1; i < N; ++i) floor = std::min(floor, pos.at(i, j).y());
    for (std::size_t i = 0; i + 1 < N; ++i) {
      const double speed = (pos.at(i + 1, j) - pos.at(i, j)).norm();
      const double height = pos.at(i, j).y() - floor;
      out.labels[i * out.feet + f] = (speed < th.velocity && height < th.height) ? 1 : 0;
    }
    out.labels[(N - 1) * out.feet + f] = out.labels[(N - 2) * out.feet + f];
  }
  return out;
}

// Optional ingestion step: moves the first frame's root to the origin in the
// ground plane (x, z). Height is left untouched.
inline MotionSequence center_root(MotionSequence m) {
  if (m.length() == 0) return m;
  const float x0 = m.frames(0, 0), z0 = m.frames(0, 2);
  for (std::size_t i = 0; i < m.length(); ++i) {
    m.frames(i, 0) -= x0;
    m.frames(i, 2) -= z0;
  }
  return m;
}

// Builds a frame row from a root translation and 24 per-joint rotations.
template <typename T>
void write_frame(std::span<T> row, const Vec3<double>& translation, const std::array<Mat3<double>, kJointCount>& rotations) {
  for (int c = 0; c < 3; ++c) row[std::size_t(c)] = T(translation[c]);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const auto r6 = matrix_to_rot6d<double>(rotations[j]);
    for (std::size_t k = 0; k < 6; ++k) row[3 + 6 * j + k] = T(r6[k]);
  }
}

inline MotionSequence rest_motion(std::size_t frames) {
  MotionSequence m;
  m.frames = Tensor<float>(frames, kMotionWidth);
  std::array<Mat3<double>, kJointCount> identity;
  identity.fill(Mat3<double>::Identity());
  for (std::size_t i = 0; i < frames; ++i) write_frame<float>(m.frames.row(i), Vec3<double>::Zero(), identity);
  return m;
}

}  // namespace dancemeld::motion
