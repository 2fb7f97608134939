#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "reldist/autodiff.hpp"
#include "reldist/geom3.hpp"

namespace reldist {

/// Closed-form least-squares receiver position from distances to beacons.
/// Radii enter squared; beacons must be at least four and not coplanar.
Vec3 mul_solve(const Eigen::VectorXd& radii, const PointCloud& beacons);

/// Row i of the result is mul_solve(r.row(i), beacons).
PointCloud mul_batch(const Mat& r, const PointCloud& beacons);

/// sum_i (|beacon_i - p|^2 - r_i^2)^2
double mul_objective(const Vec3& p, const Eigen::VectorXd& radii, const PointCloud& beacons);

struct MulOracleResult {
  Vec3 position = Vec3::Zero();
  double objective = 0.0;
  /// Two distinct minima of equal depth were found (e.g. mirror images
  /// across a beacon plane).
  bool ambiguous = false;
  Vec3 alternate = Vec3::Zero();
  int converged_restarts = 0;
};

/// Damped-Newton (Levenberg-Marquardt) minimization of mul_objective from
/// `restarts` random starts inside the beacon bounding box.
MulOracleResult mul_oracle(const Eigen::VectorXd& radii, const PointCloud& beacons, int restarts,
                           std::uint64_t seed = 0);

/// Differentiable version of mul_solve for a batch of radius rows (M x N)
/// against beacons (N x 3); returns M x 3. Both inputs may carry gradients.
Var mul_tape(const Var& radii, const Var& beacons);

}  // namespace reldist
