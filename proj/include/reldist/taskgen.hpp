#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "reldist/geom3.hpp"

namespace reldist {

struct GoalPair {
  PointCloud pa;
  PointCloud pb;
};

struct TaskInstance {
  PointCloud pa_init;
  PointCloud pb_init;
  PointCloud pa_goal;
  PointCloud pb_goal;
  /// pa_init = apply(t_alpha, pa_goal), pb_init = apply(t_beta, pb_goal).
  RigidTransform t_alpha;
  RigidTransform t_beta;
  /// compose(t_beta, inverse(t_alpha)).
  RigidTransform t_cross_gt;
  std::string family;
  std::uint64_t seed = 0;
};

/// Torus ring with a dense arc and two tabs (object A) resting on a cylinder
/// peg with an off-center base plate (object B). Scene scaled to unit diameter.
GoalPair gen_ring_on_peg(std::uint64_t seed, int n_points = 256, double variation = 0.05);

/// Lid with a corner tab (object A) seated on an open box with an off-center
/// divider (object B). Scene scaled to unit diameter.
GoalPair gen_lid_on_box(std::uint64_t seed, int n_points = 256, double variation = 0.05);

GoalPair generate(const std::string& family, std::uint64_t seed, int n_points, double variation);
const std::vector<std::string>& family_names();

enum class PoseMode {
  Random,   // uniform rotations
  Upright,  // rotations about the vertical axis only
  Fixed,    // identity rotations, translations only
};

TaskInstance perturb(const GoalPair& goal, std::uint64_t seed, double max_translation,
                     PoseMode mode = PoseMode::Random, const std::string& family = "");

/// Deterministic 64-bit seed derived from (seed, stream, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Largest distance between any two points of the union.
double diameter(const PointCloud& a, const PointCloud& b);

struct Dataset {
  std::string family = "ring_on_peg";
  std::uint64_t seed = 0;
  int n_points = 256;
  double variation = 0.05;
  double max_translation = 1.0;
  std::vector<TaskInstance> demos;
  std::vector<TaskInstance> evals;
};

struct DatasetSpec {
  std::string family = "ring_on_peg";
  std::uint64_t seed = 0;
  int demos = 10;
  int evals = 100;
  int n_points = 256;
  double variation = 0.05;
  double max_translation = 1.0;
  PoseMode eval_poses = PoseMode::Random;
  /// Held-out instances re-pose the demo shapes (cycling) instead of new shapes.
  bool eval_on_demo_geometry = false;
};

/// Demo i: shape derive_seed(seed, 1, i), pose derive_seed(seed, 2, i).
/// Eval i: shape derive_seed(seed, 3, i), pose derive_seed(seed, 4, i).
Dataset make_dataset(const DatasetSpec& spec);

void dataset_write(const Dataset& data, const std::filesystem::path& dir);
Dataset dataset_read(const std::filesystem::path& dir);

void write_cloud(const PointCloud& p, const std::filesystem::path& file);
PointCloud read_cloud(const std::filesystem::path& file);

}  // namespace reldist
