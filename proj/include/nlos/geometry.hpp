#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "nlos/errors.hpp"

namespace nlos {

using Vec3 = Eigen::Vector3d;
using Mat3X = Eigen::Matrix3Xd;

// Axis-aligned box containing the hidden scene volume.
struct SceneBounds {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  SceneBounds() = default;
  SceneBounds(const Vec3& lo, const Vec3& hi) : min(lo), max(hi) {
    if (!(min.x() < max.x() && min.y() < max.y() && min.z() < max.z())) {
      throw NlosError(ErrorCode::InvariantViolation,
                      "scene bounds must satisfy min < max componentwise");
    }
  }

  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  // Uniform normalization scale: half the largest extent.
  double half_scale() const { return 0.5 * extent().maxCoeff(); }

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }

  Vec3 corner(int i) const {
    return Vec3(i & 1 ? max.x() : min.x(), i & 2 ? max.y() : min.y(),
                i & 4 ? max.z() : min.z());
  }

  // Entry/exit of a ray with the box; returns false when it misses.
  bool clip_ray(const Vec3& origin, const Vec3& dir, double& t0, double& t1) const {
    t0 = 0.0;
    t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (std::abs(dir[a]) < 1e-15) {
        if (origin[a] < min[a] || origin[a] > max[a]) return false;
        continue;
      }
      double ta = (min[a] - origin[a]) / dir[a];
      double tb = (max[a] - origin[a]) / dir[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    return t0 <= t1;
  }
};

// Right-handed orthonormal frame with n as the third axis. Deterministic
// choice of tangents so sampling layouts are reproducible.
struct Frame {
  Vec3 u, v, n;

  static Frame from_normal(const Vec3& normal) {
    Frame f;
    f.n = normal.normalized();
    Vec3 a = std::abs(f.n.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    f.u = (a - a.dot(f.n) * f.n).normalized();
    f.v = f.n.cross(f.u);
    return f;
  }

  Vec3 to_world(const Vec3& local) const {
    return local.x() * u + local.y() * v + local.z() * n;
  }
};

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

}  // namespace nlos
