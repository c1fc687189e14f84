#pragma once

#include <array>
#include <cmath>
#include <span>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "dancemeld/errors.hpp"

namespace dancemeld::motion {

template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

inline constexpr double kDegenerateEps = 1e-8;

// Continuous 6-D rotation: the first two columns of the matrix, stacked.
// Decoding is two-column Gram-Schmidt: b1 = normalize(a1),
// b2 = normalize(a2 - (b1.a2) b1), b3 = b1 x b2; the matrix columns are b1, b2, b3.
template <typename T>
Mat3<T> rot6d_to_matrix(std::span<const T> r) {
  const Vec3<T> a1(r[0], r[1], r[2]);
  const Vec3<T> a2(r[3], r[4], r[5]);
  const T n1 = a1.norm();
  DM_THROW_IF(!(n1 > T(kDegenerateEps)), DegenerateRotation, "first 6D column has near-zero norm");
  const Vec3<T> b1 = a1 / n1;
  const Vec3<T> u = a2 - b1.dot(a2) * b1;
  const T nu = u.norm();
  DM_THROW_IF(!(nu > T(kDegenerateEps) * std::max(T(1), a2.norm())), DegenerateRotation,
              "6D columns are parallel");
  const Vec3<T> b2 = u / nu;
  Mat3<T> m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

template <typename T>
Mat3<T> rot6d_to_matrix(const std::array<T, 6>& r) {
  return rot6d_to_matrix<T>(std::span<const T>(r.data(), 6));
}

template <typename T>
std::array<T, 6> matrix_to_rot6d(const Mat3<T>& m) {
  const double ortho_err = (m.transpose() * m - Mat3<T>::Identity()).cwiseAbs().maxCoeff();
  DM_THROW_IF(!(ortho_err <= 1e-4), NotARotation,
              "matrix is not orthonormal (max error " + std::to_string(ortho_err) + ")");
  DM_THROW_IF(!(m.determinant() > T(0)), NotARotation, "matrix is a reflection");
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

// Accumulates dL/dr into grad_r given dL/dM for M = rot6d_to_matrix(r).
template <typename T>
void rot6d_backward(std::span<const T> r, const Mat3<T>& grad_m, std::span<T> grad_r) {
  const Vec3<T> a1(r[0], r[1], r[2]);
  const Vec3<T> a2(r[3], r[4], r[5]);
  const T n1 = a1.norm();
  const Vec3<T> b1 = a1 / n1;
  const T proj = b1.dot(a2);
  const Vec3<T> u = a2 - proj * b1;
  const T nu = u.norm();
  const Vec3<T> b2 = u / nu;

  Vec3<T> g1 = grad_m.col(0);
  Vec3<T> g2 = grad_m.col(1);
  const Vec3<T> g3 = grad_m.col(2);
  // b3 = b1 x b2
  g1 += b2.cross(g3);
  g2 += g3.cross(b1);
  // b2 = u / |u|
  const Vec3<T> gu = (g2 - b2 * b2.dot(g2)) / nu;
  // u = a2 - (b1.a2) b1
  const Vec3<T> ga2 = gu - b1 * b1.dot(gu);
  g1 -= proj * gu + a2 * b1.dot(gu);
  // b1 = a1 / |a1|
  const Vec3<T> ga1 = (g1 - b1 * b1.dot(g1)) / n1;
  for (int i = 0; i < 3; ++i) {
    grad_r[std::size_t(i)] += ga1[i];
    grad_r[std::size_t(i) + 3] += ga2[i];
  }
}

template <typename T>
Mat3<T> axis_angle_to_matrix(const Vec3<T>& axis_angle) {
  const T angle = axis_angle.norm();
  if (angle < T(1e-12)) return Mat3<T>::Identity();
  return Eigen::AngleAxis<T>(angle, axis_angle / angle).toRotationMatrix();
}

}  // namespace dancemeld::motion
