#include "reldist/linalg3.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace reldist {

namespace {

constexpr int kMaxSweeps = 64;

// Descending permutation of three values; ties keep index order.
std::array<int, 3> descending_order(const Vec3& v) {
  std::array<int, 3> idx{0, 1, 2};
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });
  return idx;
}

}  // namespace

SymEigen3 sym_eigen3(const Mat3& m) {
  Mat3 a = 0.5 * (m + m.transpose());
  Mat3 v = Mat3::Identity();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    const double diag = a(0, 0) * a(0, 0) + a(1, 1) * a(1, 1) + a(2, 2) * a(2, 2);
    if (off <= std::numeric_limits<double>::epsilon() * std::numeric_limits<double>::epsilon() * diag ||
        off == 0.0) {
      break;
    }
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  const Vec3 raw = a.diagonal();
  const auto order = descending_order(raw);
  SymEigen3 out;
  for (int k = 0; k < 3; ++k) {
    out.values[k] = raw[order[k]];
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

Svd3 svd3(const Mat3& input) {
  Mat3 a = input;
  Mat3 v = Mat3::Identity();
  const double eps = std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int k = 0; k < 3; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    if (!rotated) break;
  }

  Vec3 norms;
  for (int k = 0; k < 3; ++k) norms[k] = a.col(k).norm();
  const auto order = descending_order(norms);

  Svd3 out;
  out.u.setZero();
  const double tiny = std::max(norms.maxCoeff(), 1.0) * eps * 8.0;
  int filled = 0;
  for (int k = 0; k < 3; ++k) {
    const int src = order[k];
    out.sigma[k] = norms[src];
    out.v.col(k) = v.col(src);
    if (norms[src] > tiny) {
      out.u.col(k) = a.col(src) / norms[src];
      ++filled;
    }
  }
  // Complete U for rank-deficient input.
  if (filled == 2) {
    out.u.col(2) = out.u.col(0).cross(out.u.col(1)).normalized();
  } else if (filled == 1) {
    const Vec3 u0 = out.u.col(0);
    Vec3 trial = std::abs(u0.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 u1 = (trial - u0 * u0.dot(trial)).normalized();
    out.u.col(1) = u1;
    out.u.col(2) = u0.cross(u1);
  } else if (filled == 0) {
    out.u = Mat3::Identity();
  }
  return out;
}

Mat3 inverse3(const Mat3& a) {
  Mat3 adj;
  adj(0, 0) = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  adj(0, 1) = a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2);
  adj(0, 2) = a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1);
  adj(1, 0) = a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2);
  adj(1, 1) = a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0);
  adj(1, 2) = a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2);
  adj(2, 0) = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
  adj(2, 1) = a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1);
  adj(2, 2) = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  const double det = a(0, 0) * adj(0, 0) + a(0, 1) * adj(1, 0) + a(0, 2) * adj(2, 0);
  return adj / det;
}

double condition3(const Mat3& a) {
  const double det = a.determinant();
  if (det == 0.0 || !std::isfinite(det)) return std::numeric_limits<double>::infinity();
  const Mat3 inv = inverse3(a);
  if (!inv.allFinite()) return std::numeric_limits<double>::infinity();
  return a.norm() * inv.norm();
}

Mat3 nearest_rotation(const Mat3& a) {
  const Svd3 s = svd3(a);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (s.u * s.v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return s.u * d * s.v.transpose();
}

}  // namespace reldist
