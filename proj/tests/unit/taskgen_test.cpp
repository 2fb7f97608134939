#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "reldist/error.hpp"
#include "reldist/taskgen.hpp"

using namespace reldist;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("reldist_taskgen_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

bool same(const PointCloud& a, const PointCloud& b) {
  return a.rows() == b.rows() && (a.array() == b.array()).all();
}

bool same(const RigidTransform& a, const RigidTransform& b) {
  return (a.rotation.array() == b.rotation.array()).all() && (a.translation.array() == b.translation.array()).all();
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

TEST(RingOnPeg, DeterministicAndSized) {
  const GoalPair a = gen_ring_on_peg(5), b = gen_ring_on_peg(5);
  EXPECT_TRUE(same(a.pa, b.pa));
  EXPECT_TRUE(same(a.pb, b.pb));
  EXPECT_EQ(a.pa.rows(), 256);
  EXPECT_EQ(a.pb.rows(), 256);
  EXPECT_NEAR(diameter(a.pa, a.pb), 1.0, 1e-12);
  EXPECT_FALSE(same(a.pa, gen_ring_on_peg(6).pa));
}

TEST(RingOnPeg, ZeroVariationTwiceIsIdentical) {
  const GoalPair a = gen_ring_on_peg(1, 256, 0.0), b = gen_ring_on_peg(1, 256, 0.0);
  EXPECT_TRUE(same(a.pa, b.pa));
  EXPECT_TRUE(same(a.pb, b.pb));
}

TEST(RingOnPeg, RingClearsPeg) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GoalPair g = gen_ring_on_peg(s);
    // Peg axis is the z axis through the peg's top-center; radius from peg points at mid height.
    double peg_r = 0.0;
    const double zmax = g.pb.col(2).maxCoeff();
    for (Eigen::Index i = 0; i < g.pb.rows(); ++i)
      if (g.pb(i, 2) > zmax - 0.05) peg_r = std::max(peg_r, std::hypot(g.pb(i, 0), g.pb(i, 1)));
    double ring_min = 1e9;
    for (Eigen::Index i = 0; i < g.pa.rows(); ++i) ring_min = std::min(ring_min, std::hypot(g.pa(i, 0), g.pa(i, 1)));
    EXPECT_GE(ring_min, peg_r - 1e-12) << s;
  }
}

TEST(RingOnPeg, TooFewPoints) {
  EXPECT_EQ(code_of([] { gen_ring_on_peg(1, 32); }), ErrorCode::InvalidArgument);
}

TEST(LidOnBox, DeterministicAndFootprint) {
  const GoalPair a = gen_lid_on_box(3), b = gen_lid_on_box(3);
  EXPECT_TRUE(same(a.pa, b.pa));
  EXPECT_TRUE(same(a.pb, b.pb));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GoalPair g = gen_lid_on_box(s);
    for (int k = 0; k < 2; ++k) {
      EXPECT_GE(g.pa.col(k).minCoeff(), g.pb.col(k).minCoeff() - 0.05);
      EXPECT_LE(g.pa.col(k).maxCoeff(), g.pb.col(k).maxCoeff() + 0.05);
    }
  }
}

TEST(LidOnBox, VariationMonotone) {
  // Shape distance: difference of the per-axis extents of both objects.
  auto extents = [](const GoalPair& g) {
    Eigen::Matrix<double, 6, 1> e;
    e << (g.pa.colwise().maxCoeff() - g.pa.colwise().minCoeff()).transpose(),
        (g.pb.colwise().maxCoeff() - g.pb.colwise().minCoeff()).transpose();
    return e;
  };
  auto spread = [&](double variation) {
    double total = 0.0;
    const auto ref = extents(gen_lid_on_box(0, 256, variation));
    for (std::uint64_t s = 1; s < 20; ++s) total += (extents(gen_lid_on_box(s, 256, variation)) - ref).norm();
    return total;
  };
  EXPECT_LT(spread(0.01), spread(0.1));
}

TEST(Generate, UnknownFamily) {
  EXPECT_EQ(code_of([] { generate("teapot", 1, 256, 0.05); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(family_names().size(), 2u);
}

TEST(Perturb, InvariantsHold) {
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const GoalPair g = gen_ring_on_peg(s % 10, 64);
    const TaskInstance t = perturb(g, s, 10.0);
    EXPECT_LE((apply(t.t_cross_gt, t.pa_init) - apply(t.t_beta, t.pa_goal)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(rotation_error(t.t_cross_gt, t.t_cross_gt), 0.0);
    EXPECT_EQ(translation_error(t.t_cross_gt, t.t_cross_gt, t.pa_init), 0.0);
  }
}

TEST(Perturb, FixedModeZeroTranslationIsIdentity) {
  const TaskInstance t = perturb(gen_ring_on_peg(1), 3, 0.0, PoseMode::Fixed);
  EXPECT_LE((t.t_cross_gt.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE(t.t_cross_gt.translation.norm(), 1e-15);
}

TEST(Perturb, UprightRotatesAboutVertical) {
  const TaskInstance t = perturb(gen_ring_on_peg(1), 3, 1.0, PoseMode::Upright);
  EXPECT_LE((t.t_alpha.rotation.col(2) - Vec3::UnitZ()).norm(), 1e-12);
  EXPECT_LE((t.t_beta.rotation.col(2) - Vec3::UnitZ()).norm(), 1e-12);
}

TEST(DeriveSeed, DistinctStreams) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
}

TEST(Dataset, RoundTripBitExact) {
  Dataset d;
  d.seed = 4;
  for (int i = 0; i < 2; ++i) d.demos.push_back(perturb(gen_ring_on_peg(i, 64), 10 + i, 1.0, PoseMode::Random, "ring_on_peg"));
  d.evals.push_back(perturb(gen_ring_on_peg(7, 64), 20, 1.0, PoseMode::Random, "ring_on_peg"));
  const auto dir = temp_dir("rt");
  dataset_write(d, dir);
  const Dataset r = dataset_read(dir);
  ASSERT_EQ(r.demos.size(), 2u);
  ASSERT_EQ(r.evals.size(), 1u);
  EXPECT_EQ(r.seed, 4u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(same(r.demos[i].pa_init, d.demos[i].pa_init));
    EXPECT_TRUE(same(r.demos[i].pb_goal, d.demos[i].pb_goal));
    EXPECT_TRUE(same(r.demos[i].t_alpha, d.demos[i].t_alpha));
    EXPECT_TRUE(same(r.demos[i].t_cross_gt, d.demos[i].t_cross_gt));
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, EmptyRoundTrip) {
  const auto dir = temp_dir("empty");
  dataset_write(Dataset{}, dir);
  const Dataset r = dataset_read(dir);
  EXPECT_TRUE(r.demos.empty());
  EXPECT_TRUE(r.evals.empty());
  std::filesystem::remove_all(dir);
}

TEST(Dataset, CorruptByteIsChecksumError) {
  Dataset d;
  d.demos.push_back(perturb(gen_ring_on_peg(1, 64), 1, 1.0));
  const auto dir = temp_dir("corrupt");
  dataset_write(d, dir);
  {
    std::fstream f(dir / "demo_0000_pa_init.rpcl", std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(100);
    char c;
    f.read(&c, 1);
    c ^= 0x10;
    f.seekp(100);
    f.write(&c, 1);
  }
  EXPECT_EQ(code_of([&] { dataset_read(dir); }), ErrorCode::ChecksumMismatch);
  std::filesystem::remove_all(dir);
  EXPECT_EQ(code_of([&] { dataset_read(dir); }), ErrorCode::Io);
}

TEST(Cloud, BadVersion) {
  const auto dir = temp_dir("cloud");
  std::filesystem::create_directories(dir);
  PointCloud p = PointCloud::Ones(4, 3);
  write_cloud(p, dir / "c.rpcl");
  EXPECT_TRUE(same(read_cloud(dir / "c.rpcl"), p));
  {
    std::fstream f(dir / "c.rpcl", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v = 7;
    f.write(&v, 1);
  }
  EXPECT_EQ(code_of([&] { read_cloud(dir / "c.rpcl"); }), ErrorCode::VersionMismatch);
  std::filesystem::remove_all(dir);
}
