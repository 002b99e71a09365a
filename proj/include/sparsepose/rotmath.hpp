#pragma once

// Rotation representations: 3x3 matrices, unit quaternions and the continuous
// 6D representation (first two matrix columns, decoded by Gram-Schmidt).
// All angles are radians unless a name ends in _deg.

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "sparsepose/errors.hpp"

namespace sparsepose {

using Vec3 = Eigen::Vector3d;
using RotMat = Eigen::Matrix3d;
/// Columns c1 then c2 of a rotation matrix: [c1x c1y c1z c2x c2y c2z].
using Rot6D = Eigen::Matrix<double, 6, 1>;

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quat identity() { return {}; }
  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }
  Quat conjugate() const { return {w, -x, -y, -z}; }
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  Quat operator-() const { return {-w, -x, -y, -z}; }

  friend Quat operator*(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  }
  friend bool operator==(const Quat&, const Quat&) = default;
};

inline Quat quat_from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 u = axis.normalized();
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), u.x() * s, u.y() * s, u.z() * s};
}

inline RotMat axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline RotMat rot_x(double angle) { return axis_angle(Vec3::UnitX(), angle); }
inline RotMat rot_y(double angle) { return axis_angle(Vec3::UnitY(), angle); }
inline RotMat rot_z(double angle) { return axis_angle(Vec3::UnitZ(), angle); }

inline bool is_rotation(const RotMat& r, double tol = 1e-6) {
  return (r.transpose() * r - RotMat::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

/// Gram-Schmidt decode without the degeneracy check. Norms are floored at
/// 1e-12 so the map stays finite for any input; on non-degenerate input it is
/// identical to rot6d_to_matrix.
inline RotMat gram_schmidt(const Rot6D& r) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();
  const Vec3 c1 = a1 / std::max(a1.norm(), 1e-12);
  const Vec3 u = a2 - c1.dot(a2) * c1;
  const Vec3 c2 = u / std::max(u.norm(), 1e-12);
  RotMat m;
  m.col(0) = c1;
  m.col(1) = c2;
  m.col(2) = c1.cross(c2);
  return m;
}

/// Pulls dL/dR (3x3, column k = dL/dc_k) back through gram_schmidt to dL/dr.
inline Rot6D gram_schmidt_backward(const Rot6D& r, const RotMat& grad_r) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();
  const double n1 = std::max(a1.norm(), 1e-12);
  const Vec3 c1 = a1 / n1;
  const Vec3 u = a2 - c1.dot(a2) * c1;
  const double nu = std::max(u.norm(), 1e-12);
  const Vec3 c2 = u / nu;

  Vec3 g1 = grad_r.col(0);
  Vec3 g2 = grad_r.col(1);
  const Vec3 g3 = grad_r.col(2);
  // c3 = c1 x c2
  g1 += c2.cross(g3);
  g2 += g3.cross(c1);
  // c2 = u / |u|
  const Vec3 du = (g2 - c2 * c2.dot(g2)) / nu;
  // u = a2 - (c1.a2) c1
  const Vec3 da2 = du - c1 * c1.dot(du);
  g1 -= c1.dot(a2) * du + a2 * c1.dot(du);
  // c1 = a1 / |a1|
  const Vec3 da1 = (g1 - c1 * c1.dot(g1)) / n1;

  Rot6D out;
  out.head<3>() = da1;
  out.tail<3>() = da2;
  return out;
}

inline RotMat rot6d_to_matrix(const Rot6D& r) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();
  const double n1 = a1.norm();
  const double n2 = a2.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0) || !std::isfinite(n1) || !std::isfinite(n2)) {
    throw DegenerateRotation("6D rotation has a zero or non-finite column");
  }
  // sin of the angle between the columns must exceed sin(1e-6)
  if (a1.cross(a2).norm() / (n1 * n2) <= std::sin(1e-6)) {
    throw DegenerateRotation("6D rotation columns are parallel");
  }
  return gram_schmidt(r);
}

inline Rot6D matrix_to_rot6d(const RotMat& m) {
  Rot6D r;
  r.head<3>() = m.col(0);
  r.tail<3>() = m.col(1);
  return r;
}

/// Rotation angle of A*B^T in radians, in [0, pi].
inline double geodesic_angle(const RotMat& a, const RotMat& b) {
  const double c = std::clamp(((a * b.transpose()).trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

inline double geodesic_angle_deg(const RotMat& a, const RotMat& b) { return geodesic_angle(a, b) * kRadToDeg; }

inline RotMat quat_to_matrix(const Quat& q) {
  const double n = q.norm();
  if (!(std::abs(n - 1.0) <= 1e-3)) throw NonUnitQuaternion("quaternion norm deviates from 1 by more than 1e-3");
  const Quat u{q.w / n, q.x / n, q.y / n, q.z / n};
  const double ww = u.w * u.w, xx = u.x * u.x, yy = u.y * u.y, zz = u.z * u.z;
  const double xy = u.x * u.y, xz = u.x * u.z, yz = u.y * u.z;
  const double wx = u.w * u.x, wy = u.w * u.y, wz = u.w * u.z;
  RotMat m;
  m << ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy),  //
      2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx),   //
      2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz;
  return m;
}

/// Shepperd's method; the result has w >= 0.
inline Quat matrix_to_quat(const RotMat& m) {
  const double tr = m.trace();
  Quat q;
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = std::sqrt(1.0 + tr) * 2.0;
    q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s};
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s};
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s};
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s};
  }
  q = q.normalized();
  return q.w < 0.0 ? -q : q;
}

/// Spherical interpolation along the shorter arc.
inline Quat slerp(Quat a, Quat b, double t) {
  double d = a.dot(b);
  if (d < 0.0) {
    b = -b;
    d = -d;
  }
  if (d > 1.0 - 1e-12) {
    const Quat q{a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)};
    return q.normalized();
  }
  const double theta = std::acos(std::min(d, 1.0));
  const double s = std::sin(theta);
  const double wa = std::sin((1.0 - t) * theta) / s;
  const double wb = std::sin(t * theta) / s;
  return Quat{wa * a.w + wb * b.w, wa * a.x + wb * b.x, wa * a.y + wb * b.y, wa * a.z + wb * b.z}.normalized();
}

/// Closest rotation in the Frobenius sense (polar factor via SVD, det forced to +1).
inline RotMat nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace sparsepose
