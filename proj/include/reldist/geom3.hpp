#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "reldist/linalg3.hpp"

namespace reldist {

/// N x 3, one point per row.
using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
};

/// Applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
PointCloud apply(const RigidTransform& t, const PointCloud& p);
Vec3 apply(const RigidTransform& t, const Vec3& p);
RigidTransform inverse(const RigidTransform& t);

/// Uniform rotation (normalized Gaussian quaternion) and translation uniform in
/// [-max_translation, max_translation]^3.
RigidTransform random_transform(std::uint64_t seed, double max_translation);

/// Geodesic angle between the two rotations, in degrees.
double rotation_error(const RigidTransform& a, const RigidTransform& b);
/// Distance between the centroids of p moved by a and by b.
double translation_error(const RigidTransform& a, const RigidTransform& b, const PointCloud& p);

Mat3 quaternion_to_matrix(double w, double x, double y, double z);
Mat3 axis_angle(const Vec3& axis, double degrees);
Mat3 rot_x(double degrees);
Mat3 rot_y(double degrees);
Mat3 rot_z(double degrees);

Vec3 centroid(const PointCloud& p);

/// Largest entry of |R^T R - I|.
double orthogonality_drift(const Mat3& r);
/// Orthogonal within 1e-9 and det = +1 within 1e-9.
bool is_rotation(const Mat3& r, double tol = 1e-9);

}  // namespace reldist
