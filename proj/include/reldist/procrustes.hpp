#pragma once

#include <functional>

#include <Eigen/Core>

#include "reldist/geom3.hpp"

namespace reldist {

/// Weighted rigid alignment: the transform minimizing
/// sum_i w_i |R p_i + t - q_i|^2, always a proper rotation.
/// An empty weight vector means uniform weights.
RigidTransform pro_solve(const PointCloud& p, const PointCloud& q, const Eigen::VectorXd& w = {});

double pro_objective(const RigidTransform& t, const PointCloud& p, const PointCloud& q,
                     const Eigen::VectorXd& w = {});

/// Signature shared by pro_solve and injected replacements used in testing.
using ProSolver = std::function<RigidTransform(const PointCloud&, const PointCloud&, const Eigen::VectorXd&)>;

}  // namespace reldist
