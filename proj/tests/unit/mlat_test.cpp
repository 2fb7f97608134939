#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "reldist/error.hpp"
#include "reldist/mlat.hpp"

using namespace reldist;

namespace {

PointCloud uniform_cloud(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  PointCloud p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

Eigen::VectorXd distances(const PointCloud& beacons, const Vec3& p) {
  Eigen::VectorXd r(beacons.rows());
  for (Eigen::Index i = 0; i < beacons.rows(); ++i) r[i] = (beacons.row(i).transpose() - p).norm();
  return r;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Io;
}

}  // namespace

TEST(MulSolve, FourBeaconsToOrigin) {
  PointCloud b(4, 3);
  const double s = 2.0 / std::sqrt(3.0);
  b << 1, 0, 0, 0, 1, 0, 0, 0, 1, s, s, s;
  EXPECT_LE(mul_solve(distances(b, Vec3::Zero()), b).norm(), 1e-9);
}

TEST(MulSolve, RecoversRandomReceiver) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const PointCloud b = uniform_cloud(rng, 10, -1.0, 1.0);
    const Vec3 p = uniform_cloud(rng, 1, 0.0, 1.0).row(0).transpose();
    EXPECT_LE((mul_solve(distances(b, p), b) - p).norm(), 1e-8);
  }
}

TEST(MulSolve, Errors) {
  std::mt19937_64 rng(2);
  const PointCloud b = uniform_cloud(rng, 6, -1.0, 1.0);
  EXPECT_EQ(code_of([&] { mul_solve(Eigen::VectorXd::Ones(5), b); }), ErrorCode::CountMismatch);
  EXPECT_EQ(code_of([&] { mul_solve(Eigen::VectorXd::Ones(3), b.topRows(3)); }), ErrorCode::DegenerateBeacons);
  PointCloud flat = b;
  flat.col(2).setZero();
  EXPECT_EQ(code_of([&] { mul_solve(Eigen::VectorXd::Ones(6), flat); }), ErrorCode::DegenerateBeacons);
  Eigen::VectorXd neg = Eigen::VectorXd::Ones(6);
  neg[2] = -1.0;
  EXPECT_EQ(code_of([&] { mul_solve(neg, b); }), ErrorCode::InvalidArgument);
}

TEST(MulSolve, Equivariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> r(0.5, 2.0);
  for (std::uint64_t t = 0; t < 100; ++t) {
    const PointCloud b = uniform_cloud(rng, 12, -1.0, 1.0);
    Eigen::VectorXd radii(12);
    for (auto& x : radii) x = r(rng);
    const RigidTransform tr = random_transform(t, 10.0);
    EXPECT_LE((mul_solve(radii, apply(tr, b)) - apply(tr, mul_solve(radii, b))).norm(), 1e-8);
  }
}

TEST(MulBatch, MatchesLoopBitForBit) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> r(0.5, 2.0);
  const PointCloud b = uniform_cloud(rng, 16, -1.0, 1.0);
  Mat radii(8, 16);
  for (Eigen::Index i = 0; i < radii.size(); ++i) radii.data()[i] = r(rng);
  const PointCloud out = mul_batch(radii, b);
  for (int i = 0; i < 8; ++i) {
    const Vec3 single = mul_solve(radii.row(i).transpose(), b);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(out(i, k), single[k]);
  }
  Mat swapped = radii;
  swapped.row(0).swap(swapped.row(5));
  const PointCloud out2 = mul_batch(swapped, b);
  EXPECT_EQ(out2.row(0), out.row(5));
  EXPECT_EQ(out2.row(5), out.row(0));
}

TEST(MulBatch, RowIndexInError) {
  std::mt19937_64 rng(5);
  const PointCloud b = uniform_cloud(rng, 6, -1.0, 1.0);
  Mat radii = Mat::Ones(3, 6);
  radii(2, 1) = 0.0;
  try {
    mul_batch(radii, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

TEST(MulOracle, ExactRadiiHaveTinyResidual) {
  std::mt19937_64 rng(6);
  const PointCloud b = uniform_cloud(rng, 10, -1.0, 1.0);
  const Vec3 p(0.2, -0.1, 0.3);
  const MulOracleResult o = mul_oracle(distances(b, p), b, 20, 1);
  EXPECT_LT(o.objective, 1e-16);
  EXPECT_LE((o.position - p).norm(), 1e-8);
}

TEST(MulOracle, ClosedFormIsNoWorseOnConsistentInstances) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const PointCloud b = uniform_cloud(rng, 10, -1.0, 1.0);
    const Vec3 p = uniform_cloud(rng, 1, 0.0, 1.0).row(0).transpose();
    const Eigen::VectorXd r = distances(b, p);
    const MulOracleResult o = mul_oracle(r, b, 20, t);
    EXPECT_LE(mul_objective(mul_solve(r, b), r, b), o.objective + 1e-10);
  }
}

TEST(MulOracle, CoplanarBeaconsAreAmbiguous) {
  std::mt19937_64 rng(8);
  PointCloud b = uniform_cloud(rng, 8, -1.0, 1.0);
  b.col(2).setZero();
  const Vec3 p(0.1, 0.2, 0.5);
  const MulOracleResult o = mul_oracle(distances(b, p), b, 20, 2);
  EXPECT_TRUE(o.ambiguous);
  const Vec3 mirror(p.x(), p.y(), -p.z());
  const bool found = ((o.position - p).norm() < 1e-6 && (o.alternate - mirror).norm() < 1e-6) ||
                     ((o.position - mirror).norm() < 1e-6 && (o.alternate - p).norm() < 1e-6);
  EXPECT_TRUE(found);
}

TEST(MulTape, MatchesSolveAndGradient) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> r(0.5, 2.0);
  const PointCloud b = uniform_cloud(rng, 10, -1.0, 1.0);
  Mat radii(3, 10);
  for (Eigen::Index i = 0; i < radii.size(); ++i) radii.data()[i] = r(rng);
  Tape t;
  const Mat out = mul_tape(t.leaf(radii), t.leaf(Mat(b))).value();
  EXPECT_LE((out - Mat(mul_batch(radii, b))).cwiseAbs().maxCoeff(), 1e-12);
  for (int k = 0; k < 3; ++k) {
    auto f = [&](Tape& tape, const Var& x) {
      return ad::sum(ad::slice_cols(mul_tape(x, tape.constant(Mat(b))), k, 1));
    };
    EXPECT_LT(gradient_check(f, radii), 1e-4);
  }
}
