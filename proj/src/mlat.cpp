#include "reldist/mlat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <Eigen/Cholesky>

#include "reldist/error.hpp"

namespace reldist {

namespace {

constexpr double kCoplanarRatio = 1e-9;
constexpr double kMaxCondition = 1e12;

void check_beacons(const PointCloud& beacons) {
  const Eigen::Index n = beacons.rows();
  if (n < 4) throw Error(ErrorCode::DegenerateBeacons, "need at least 4 beacons, got " + std::to_string(n));
  if (!beacons.allFinite()) throw Error(ErrorCode::NonFinite, "beacon coordinates must be finite");
  const Vec3 c = centroid(beacons);
  Mat3 cov = Mat3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 x = beacons.row(i).transpose() - c;
    cov += x * x.transpose();
  }
  cov /= static_cast<double>(n);
  const SymEigen3 e = sym_eigen3(cov);
  if (!(e.values[2] > kCoplanarRatio * e.values[0])) {
    throw Error(ErrorCode::DegenerateBeacons, "beacons are coplanar (eigenvalue ratio " +
                                                  std::to_string(e.values[2] / e.values[0]) + ")");
  }
}

void check_radii(const Eigen::VectorXd& radii, Eigen::Index n) {
  if (radii.size() != n) {
    throw Error(ErrorCode::CountMismatch,
                std::to_string(radii.size()) + " radii for " + std::to_string(n) + " beacons");
  }
  for (Eigen::Index i = 0; i < radii.size(); ++i) {
    if (!std::isfinite(radii[i]) || !(radii[i] > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "radius " + std::to_string(i) + " is not strictly positive");
    }
  }
}

}  // namespace

Vec3 mul_solve(const Eigen::VectorXd& radii, const PointCloud& beacons) {
  check_radii(radii, beacons.rows());
  check_beacons(beacons);
  const Eigen::Index n = beacons.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  Vec3 a = Vec3::Zero();
  Mat3 b = Mat3::Zero();
  Vec3 c = Vec3::Zero();
  Mat3 outer = Mat3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 p = beacons.row(i).transpose();
    const double pp = p.dot(p);
    const double r2 = radii[i] * radii[i];
    const Mat3 ppt = p * p.transpose();
    a += pp * p - r2 * p;
    b += -2.0 * ppt - pp * Mat3::Identity() + r2 * Mat3::Identity();
    c += p;
    outer += ppt;
  }
  a *= inv_n;
  b *= inv_n;
  c *= inv_n;
  const Vec3 f = a + b * c + 2.0 * c * c.dot(c);
  const Mat3 h = -2.0 * inv_n * outer + 2.0 * c * c.transpose();
  const double cond = condition3(h);
  if (!(cond < kMaxCondition)) {
    throw Error(ErrorCode::DegenerateBeacons, "H is singular (condition " + std::to_string(cond) + ")");
  }
  const Vec3 q = -(inverse3(h) * f);
  return q + c;
}

PointCloud mul_batch(const Mat& r, const PointCloud& beacons) {
  PointCloud out(r.rows(), 3);
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    try {
      out.row(i) = mul_solve(r.row(i).transpose(), beacons).transpose();
    } catch (const Error& e) {
      throw Error(e.code(), "row " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

double mul_objective(const Vec3& p, const Eigen::VectorXd& radii, const PointCloud& beacons) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < beacons.rows(); ++i) {
    const double e = (beacons.row(i).transpose() - p).squaredNorm() - radii[i] * radii[i];
    s += e * e;
  }
  return s;
}

namespace {

struct LocalMin {
  Vec3 p;
  double obj;
  bool converged;
};

// Damped Newton on the exact Hessian 2 (J^T J + 2 sum(res) I), J_i = 2 (p - b_i)^T.
LocalMin newton_lm(Vec3 p, const Eigen::VectorXd& radii, const PointCloud& beacons) {
  const Eigen::Index n = beacons.rows();
  auto grad_hess = [&](const Vec3& x, Vec3& g, Mat3& h) {
    g.setZero();
    h.setZero();
    double rs = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 d = x - beacons.row(i).transpose();
      const double res = d.squaredNorm() - radii[i] * radii[i];
      const Vec3 j = 2.0 * d;
      g += 2.0 * res * j;
      h += 2.0 * j * j.transpose();
      rs += res;
    }
    h += 4.0 * rs * Mat3::Identity();
  };
  const double eps = std::numeric_limits<double>::epsilon();
  double obj = mul_objective(p, radii, beacons);
  const double obj0 = obj;
  Vec3 g;
  Mat3 h;
  grad_hess(p, g, h);
  const double g0 = std::max(g.norm(), 1.0);
  double lambda = 1e-3 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
  bool converged = false;
  for (int it = 0; it < 500; ++it) {
    if (g.norm() <= 1e3 * eps * g0 || obj <= 1e3 * eps * obj0) {
      converged = true;
      break;
    }
    const Mat3 damped = h + lambda * Mat3::Identity();
    const Eigen::LLT<Mat3> llt(damped);
    if (llt.info() != Eigen::Success) {
      lambda *= 10.0;
      continue;
    }
    const Vec3 step = -llt.solve(g);
    const Vec3 trial = p + step;
    const double tobj = mul_objective(trial, radii, beacons);
    if (tobj <= obj) {
      const bool stalled = step.norm() <= 4.0 * eps * std::max(1.0, p.norm());
      p = trial;
      obj = tobj;
      grad_hess(p, g, h);
      lambda = std::max(lambda * 0.1, 1e-15);
      if (stalled) {
        converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e30) break;
    }
  }
  return {p, obj, converged};
}

}  // namespace

MulOracleResult mul_oracle(const Eigen::VectorXd& radii, const PointCloud& beacons, int restarts,
                           std::uint64_t seed) {
  check_radii(radii, beacons.rows());
  if (beacons.rows() < 3) throw Error(ErrorCode::DegenerateBeacons, "need at least 3 beacons");
  Vec3 lo = beacons.colwise().minCoeff().transpose();
  Vec3 hi = beacons.colwise().maxCoeff().transpose();
  // A flat box axis is widened to half the diagonal each way so starts can leave the plane.
  const double diag = (hi - lo).norm();
  for (int k = 0; k < 3; ++k) {
    if (hi[k] - lo[k] <= 1e-9 * diag) {
      lo[k] -= 0.5 * diag;
      hi[k] += 0.5 * diag;
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<LocalMin> found;
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    Vec3 start;
    for (int k = 0; k < 3; ++k) start[k] = lo[k] + (hi[k] - lo[k]) * uni(rng);
    LocalMin m = newton_lm(start, radii, beacons);
    if (m.converged) found.push_back(m);
  }
  if (found.empty()) throw Error(ErrorCode::NoConvergence, "no restart converged");
  std::sort(found.begin(), found.end(), [](const LocalMin& a, const LocalMin& b) { return a.obj < b.obj; });
  MulOracleResult out;
  out.position = found[0].p;
  out.objective = found[0].obj;
  out.converged_restarts = static_cast<int>(found.size());
  const double scale = std::max(1.0, diag);
  const double depth_tol = 1e-9 * std::max(1.0, found[0].obj) + 1e-12;
  for (std::size_t i = 1; i < found.size(); ++i) {
    if (found[i].obj - found[0].obj <= depth_tol && (found[i].p - found[0].p).norm() > 1e-6 * scale) {
      out.ambiguous = true;
      out.alternate = found[i].p;
      break;
    }
  }
  return out;
}

Var mul_tape(const Var& radii, const Var& beacons) {
  const Eigen::Index n = beacons.rows();
  if (beacons.cols() != 3) throw Error(ErrorCode::ShapeMismatch, "beacons must be N x 3");
  if (radii.cols() != n) {
    throw Error(ErrorCode::CountMismatch,
                std::to_string(radii.cols()) + " radii per row for " + std::to_string(n) + " beacons");
  }
  check_beacons(PointCloud(beacons.value()));
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::Index m = radii.rows();

  const Var& p = beacons;
  const Var c = ad::mean_rows(p);                                 // 1 x 3
  const Var sq = ad::sum_cols(ad::square(p));                      // N x 1
  const Var ms = ad::mean_rows(sq);                                // 1 x 1
  const Var r2 = ad::square(radii);                                // M x N
  const Var s = ad::mean_cols(r2);                                 // M x 1
  const Var mom = ad::scale(ad::matmul(ad::transpose(p), p), inv_n);  // 3 x 3

  // a_i = mean_j |p_j|^2 p_j - mean_j r_ij^2 p_j
  const Var a_const = ad::mean_rows(ad::mul(ad::broadcast_cols(sq, 3), p));
  const Var a = ad::sub(ad::broadcast_rows(a_const, m), ad::scale(ad::matmul(r2, p), inv_n));
  // B_i c = -2 mom c - mean|p|^2 c + s_i c
  const Var bc_const = ad::sub(ad::scale(ad::matmul(c, mom), -2.0), ad::mul(ad::broadcast_cols(ms, 3), c));
  const Var cc = ad::sum_cols(ad::square(c));                      // 1 x 1
  const Var tail = ad::add(bc_const, ad::scale(ad::mul(ad::broadcast_cols(cc, 3), c), 2.0));
  const Var f = ad::add(ad::add_row(a, tail), ad::matmul(s, c));   // M x 3
  const Var h = ad::add(ad::scale(mom, -2.0), ad::scale(ad::matmul(ad::transpose(c), c), 2.0));
  Var h_inv;
  try {
    h_inv = ad::inverse3(h);
  } catch (const Error& e) {
    throw Error(ErrorCode::DegenerateBeacons, e.what());
  }
  const Var q = ad::scale(ad::matmul(f, ad::transpose(h_inv)), -1.0);
  return ad::add_row(q, c);
}

}  // namespace reldist
