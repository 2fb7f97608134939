#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "reldist/encoder.hpp"
#include "reldist/geom3.hpp"
#include "reldist/procrustes.hpp"
#include "reldist/taskgen.hpp"

namespace reldist {

struct CrossPoseResult {
  RigidTransform transform;
  /// Predicted goal positions of the sampled A points, in B's frame.
  PointCloud predicted_goals;
  std::vector<int> rows;
  std::vector<int> cols;
  Mat kernel;
};

/// T_AB = PRO(P_A, MUL(R_AB, P_B)). sample_k = 0 uses every point.
CrossPoseResult cross_pose(const PointCloud& pa, const PointCloud& pb, const EncoderParams& params, int sample_k,
                           std::uint64_t seed, const ProSolver& pro = {});

/// The MUL and PRO stages run on a given kernel matrix.
CrossPoseResult cross_pose_from_kernel(const PointCloud& pa, const PointCloud& pb, const KernelMatrix& kernel,
                                       const ProSolver& pro = {});

/// Distances between goal-configuration points of A (rows) and B (columns).
KernelMatrix reldist_target(const PointCloud& pa_goal, const PointCloud& pb_goal);

double loss_direct_correspondence(const PointCloud& pred_goals, const PointCloud& true_goals);
double loss_displacement(const RigidTransform& transform, const PointCloud& pa, const RigidTransform& t_gt);
double loss_consistency(const PointCloud& pred_goals, const RigidTransform& transform, const PointCloud& pa_sampled);

/// Mean over rows of the squared row distance, on the tape.
Var mean_squared_distance(const Var& a, const Var& b);

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-3;
  /// Cosine schedule from learning_rate down to learning_rate * final_lr_scale
  /// over all steps; 1 keeps the rate constant.
  double final_lr_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int sample_k = 64;
  /// Kernel sample size for the per-epoch held-out metric.
  int monitor_sample_k = 64;
  double lambda_disp = 0.0;
  double lambda_corr = 1.0;
  double lambda_cons = 0.1;
  /// Per-step Gaussian point noise, as a fraction of the goal-configuration
  /// diameter, added to both training clouds; 0 disables it.
  double jitter = 0.01;
  std::uint64_t seed = 0;
  EncoderConfig encoder;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double loss_corr = 0.0;
  double loss_cons = 0.0;
  double loss_disp = 0.0;
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
  double seconds = 0.0;
};

/// Encoder inputs cached for one training instance.
struct PreparedInstance {
  const TaskInstance* instance = nullptr;
  Mat input_a;
  Mat input_b;
  /// apply(t_cross_gt, pa_init): where each A point belongs in B's frame.
  PointCloud true_goals;
};

PreparedInstance prepare(const TaskInstance& inst, const EncoderConfig& config);

/// Copy of `inst` with independent N(0, sigma^2) noise on every initial point;
/// goal clouds follow through the ground-truth transforms.
TaskInstance jittered(const TaskInstance& inst, double sigma, std::uint64_t seed);

struct StepLosses {
  double corr = 0.0;
  double cons = 0.0;
  double disp = 0.0;
  double total = 0.0;
};

/// Builds the training loss for one instance with the given sampling seed and
/// accumulates parameter gradients into `grads` (same keys as params). The
/// consistency target uses `fixed_transform` when given instead of the PRO
/// output of this evaluation.
StepLosses loss_and_gradient(const PreparedInstance& inst, const EncoderParams& params, const TrainConfig& cfg,
                             std::uint64_t sample_seed, std::map<std::string, Mat>* grads,
                             const RigidTransform* fixed_transform = nullptr, RigidTransform* used_transform = nullptr);

/// Adam over all demos, one instance per step, kernel sample redrawn every
/// step. `heldout` (optional) is evaluated once per epoch for the log.
EncoderParams train(const std::vector<TaskInstance>& demos, const TrainConfig& cfg,
                    const TaskInstance* heldout = nullptr,
                    const std::function<void(const EpochLog&)>& on_epoch = {},
                    const EncoderParams* initial = nullptr);

struct EvalRow {
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
};

EvalRow evaluate_instance(const TaskInstance& inst, const EncoderParams& params, int sample_k, std::uint64_t seed);

/// Instance i uses sampling seed derive_seed(seed, 5, i).
std::vector<EvalRow> evaluate(const std::vector<TaskInstance>& instances, const EncoderParams& params, int sample_k,
                              std::uint64_t seed);

double median(std::vector<double> v);

}  // namespace reldist
