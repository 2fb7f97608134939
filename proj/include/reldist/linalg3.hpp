#pragma once

#include <Eigen/Dense>

namespace reldist {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Eigenvalues are sorted descending; column k of `vectors` pairs with
/// `values[k]`.
struct SymEigen3 {
  Vec3 values;
  Mat3 vectors;
};
SymEigen3 sym_eigen3(const Mat3& m);

/// A = U * diag(sigma) * V^T with sigma sorted descending and U, V orthogonal.
/// Computed by one-sided Jacobi, so the result is a deterministic function of A.
/// When A has rank < 3 the missing columns of U are completed to an
/// orthonormal basis (their sign is arbitrary).
struct Svd3 {
  Mat3 u;
  Vec3 sigma;
  Mat3 v;
};
Svd3 svd3(const Mat3& a);

/// Inverse via the adjugate. No singularity check; see condition3().
Mat3 inverse3(const Mat3& a);

/// Frobenius-norm condition estimate ||A||_F * ||A^-1||_F; +inf when det = 0.
double condition3(const Mat3& a);

/// Closest rotation in the Frobenius sense (polar factor with det = +1).
Mat3 nearest_rotation(const Mat3& a);

}  // namespace reldist
