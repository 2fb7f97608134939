#include "reldist/procrustes.hpp"

#include <string>

#include "reldist/error.hpp"

namespace reldist {

namespace {

Eigen::VectorXd resolve_weights(const Eigen::VectorXd& w, Eigen::Index n) {
  if (w.size() == 0) return Eigen::VectorXd::Ones(n);
  if (w.size() != n) {
    throw Error(ErrorCode::CountMismatch, std::to_string(w.size()) + " weights for " + std::to_string(n) + " points");
  }
  int positive = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "weight " + std::to_string(i) + " is negative or non-finite");
    }
    if (w[i] > 0.0) ++positive;
  }
  if (positive == 0) throw Error(ErrorCode::AllZeroWeights, "all weights are zero");
  if (positive < 3) {
    throw Error(ErrorCode::DegenerateConfiguration, "need at least 3 positive weights, got " + std::to_string(positive));
  }
  return w;
}

}  // namespace

RigidTransform pro_solve(const PointCloud& p, const PointCloud& q, const Eigen::VectorXd& weights) {
  const Eigen::Index n = p.rows();
  if (q.rows() != n) {
    throw Error(ErrorCode::CountMismatch, std::to_string(n) + " source vs " + std::to_string(q.rows()) + " target points");
  }
  if (n < 3) throw Error(ErrorCode::DegenerateConfiguration, "need at least 3 points");
  const Eigen::VectorXd w = resolve_weights(weights, n);
  const double wsum = w.sum();

  Vec3 pbar = Vec3::Zero();
  Vec3 qbar = Vec3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    pbar += w[i] * p.row(i).transpose();
    qbar += w[i] * q.row(i).transpose();
  }
  pbar /= wsum;
  qbar /= wsum;

  // S = X W Y^T with X, Y the centered clouds as 3 x N.
  Mat3 s = Mat3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 x = p.row(i).transpose() - pbar;
    const Vec3 y = q.row(i).transpose() - qbar;
    s += w[i] * x * y.transpose();
  }
  const Svd3 svd = svd3(s);
  if (!(svd.sigma[0] > 0.0) || !(svd.sigma[1] > 1e-12 * svd.sigma[0])) {
    throw Error(ErrorCode::DegenerateConfiguration, "cross-covariance has rank < 2 (collinear or coincident points)");
  }
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.v * svd.u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = svd.v * d * svd.u.transpose();
  t.translation = qbar - t.rotation * pbar;
  return t;
}

double pro_objective(const RigidTransform& t, const PointCloud& p, const PointCloud& q, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd w = weights.size() == 0 ? Eigen::VectorXd::Ones(p.rows()) : weights;
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    s += w[i] * (t.rotation * p.row(i).transpose() + t.translation - q.row(i).transpose()).squaredNorm();
  }
  return s;
}

}  // namespace reldist
