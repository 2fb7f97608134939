#include "reldist/geom3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace reldist {

namespace {

constexpr double kDriftTol = 1e-9;

Mat3 repair(const Mat3& r) {
  if (orthogonality_drift(r) > kDriftTol) return nearest_rotation(r);
  return r;
}

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

double orthogonality_drift(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

bool is_rotation(const Mat3& r, double tol) {
  return orthogonality_drift(r) <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = repair(a.rotation * b.rotation);
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

PointCloud apply(const RigidTransform& t, const PointCloud& p) {
  PointCloud out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const Vec3 x = p.row(i).transpose();
    out.row(i) = (t.rotation * x + t.translation).transpose();
  }
  return out;
}

Vec3 apply(const RigidTransform& t, const Vec3& p) { return t.rotation * p + t.translation; }

RigidTransform inverse(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation);
  return out;
}

Mat3 quaternion_to_matrix(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
      2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
      2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return r;
}

RigidTransform random_transform(std::uint64_t seed, double max_translation) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double q[4];
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& v : q) {
      v = normal(rng);
      n2 += v * v;
    }
  } while (n2 < 1e-20);
  RigidTransform t;
  t.rotation = repair(quaternion_to_matrix(q[0], q[1], q[2], q[3]));
  std::uniform_real_distribution<double> uni(-max_translation, max_translation);
  for (int k = 0; k < 3; ++k) t.translation[k] = max_translation > 0.0 ? uni(rng) : 0.0;
  return t;
}

double rotation_error(const RigidTransform& a, const RigidTransform& b) {
  // Angle from its sine (skew part) and cosine (trace) of R_a^T R_b.
  const Mat3 r = a.rotation.transpose() * b.rotation;
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double s = 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

Vec3 centroid(const PointCloud& p) { return p.colwise().mean().transpose(); }

double translation_error(const RigidTransform& a, const RigidTransform& b, const PointCloud& p) {
  const Vec3 c = centroid(p);
  return ((a.rotation * c + a.translation) - (b.rotation * c + b.translation)).norm();
}

Mat3 axis_angle(const Vec3& axis, double degrees) {
  const Vec3 k = axis.normalized();
  const double th = deg2rad(degrees);
  Mat3 kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + std::sin(th) * kx + (1.0 - std::cos(th)) * kx * kx;
}

Mat3 rot_x(double degrees) { return axis_angle(Vec3::UnitX(), degrees); }
Mat3 rot_y(double degrees) { return axis_angle(Vec3::UnitY(), degrees); }
Mat3 rot_z(double degrees) { return axis_angle(Vec3::UnitZ(), degrees); }

}  // namespace reldist
