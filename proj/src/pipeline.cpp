#include "reldist/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <numeric>

#if defined(__GLIBC__)
#endif

#include "reldist/error.hpp"
#include "reldist/mlat.hpp"

namespace reldist {

namespace {

PointCloud gather(const PointCloud& p, const std::vector<int>& idx) {
  PointCloud out(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(idx[i]);
  return out;
}

double mean_sq_rows(const PointCloud& a, const PointCloud& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::CountMismatch, std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + " points");
  }
  if (a.rows() == 0) return 0.0;
  return (a - b).rowwise().squaredNorm().mean();
}

template <typename F>
auto staged(const char* stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(stage) + " stage: " + e.what());
  }
}

}  // namespace

CrossPoseResult cross_pose_from_kernel(const PointCloud& pa, const PointCloud& pb, const KernelMatrix& kernel,
                                       const ProSolver& pro) {
  const PointCloud beacons = gather(pb, kernel.cols);
  const PointCloud pa_s = gather(pa, kernel.rows);
  CrossPoseResult out;
  out.predicted_goals = staged("MUL", [&] { return mul_batch(kernel.entries, beacons); });
  out.transform = staged("PRO", [&] {
    return pro ? pro(pa_s, out.predicted_goals, Eigen::VectorXd()) : pro_solve(pa_s, out.predicted_goals);
  });
  out.rows = kernel.rows;
  out.cols = kernel.cols;
  out.kernel = kernel.entries;
  return out;
}

CrossPoseResult cross_pose(const PointCloud& pa, const PointCloud& pb, const EncoderParams& params, int sample_k,
                           std::uint64_t seed, const ProSolver& pro) {
  const Eigen::Index need = std::max<Eigen::Index>(4, sample_k);
  if (pa.rows() < need || pb.rows() < need) {
    throw Error(ErrorCode::TooFewPoints, "clouds need at least " + std::to_string(need) + " points");
  }
  const KernelMatrix km = staged("encoder", [&] {
    Tape tape;
    const ParamVars pv = to_tape(tape, params, false);
    const Var fa = encode_tape(tape.constant(encoder_input(pa, params.config)), pv, params.encoder_prefix(Side::A));
    const Var fb = encode_tape(tape.constant(encoder_input(pb, params.config)), pv, params.encoder_prefix(Side::B));
    auto [ha, hb] = cross_attention_tape(fa, fb, pv, params.config.heads);
    return kernel_matrix(ha.value(), hb.value(), params, sample_k, seed);
  });
  return cross_pose_from_kernel(pa, pb, km, pro);
}

KernelMatrix reldist_target(const PointCloud& pa_goal, const PointCloud& pb_goal) {
  KernelMatrix km;
  km.entries.resize(pa_goal.rows(), pb_goal.rows());
  for (Eigen::Index i = 0; i < pa_goal.rows(); ++i) {
    for (Eigen::Index j = 0; j < pb_goal.rows(); ++j) km.entries(i, j) = (pa_goal.row(i) - pb_goal.row(j)).norm();
  }
  km.rows.resize(static_cast<std::size_t>(pa_goal.rows()));
  km.cols.resize(static_cast<std::size_t>(pb_goal.rows()));
  std::iota(km.rows.begin(), km.rows.end(), 0);
  std::iota(km.cols.begin(), km.cols.end(), 0);
  return km;
}

double loss_direct_correspondence(const PointCloud& pred_goals, const PointCloud& true_goals) {
  return mean_sq_rows(pred_goals, true_goals);
}

double loss_displacement(const RigidTransform& transform, const PointCloud& pa, const RigidTransform& t_gt) {
  return mean_sq_rows(apply(transform, pa), apply(t_gt, pa));
}

double loss_consistency(const PointCloud& pred_goals, const RigidTransform& transform, const PointCloud& pa_sampled) {
  return mean_sq_rows(pred_goals, apply(transform, pa_sampled));
}

Var mean_squared_distance(const Var& a, const Var& b) {
  return ad::mean(ad::sum_cols(ad::square(ad::sub(a, b))));
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  encoder.validate();
  if (epochs < 0) throw Error(ErrorCode::Config, "epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::Config, "learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorCode::Config, "betas must lie in [0, 1)");
  if (!(final_lr_scale > 0.0 && final_lr_scale <= 1.0)) throw Error(ErrorCode::Config, "final_lr_scale must be in (0, 1]");
  if (!(adam_eps > 0.0)) throw Error(ErrorCode::Config, "adam_eps must be > 0");
  if (sample_k < 4) throw Error(ErrorCode::Config, "sample_k must be >= 4");
  if (monitor_sample_k < 0) throw Error(ErrorCode::Config, "monitor_sample_k must be >= 0");
  if (lambda_disp < 0.0 || lambda_corr < 0.0 || lambda_cons < 0.0) throw Error(ErrorCode::Config, "loss weights must be >= 0");
  if (!(jitter >= 0.0 && jitter < 0.5)) throw Error(ErrorCode::Config, "jitter must be in [0, 0.5)");
  if (lambda_corr == 0.0 && lambda_cons == 0.0) {
    throw Error(ErrorCode::Config, "lambda_corr and lambda_cons cannot both be zero");
  }
}

PreparedInstance prepare(const TaskInstance& inst, const EncoderConfig& config) {
  PreparedInstance p;
  p.instance = &inst;
  p.input_a = encoder_input(inst.pa_init, config);
  p.input_b = encoder_input(inst.pb_init, config);
  p.true_goals = apply(inst.t_cross_gt, inst.pa_init);
  return p;
}

TaskInstance jittered(const TaskInstance& inst, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) return inst;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  TaskInstance out = inst;
  for (PointCloud* p : {&out.pa_init, &out.pb_init}) {
    for (Eigen::Index i = 0; i < p->rows(); ++i) {
      for (int k = 0; k < 3; ++k) (*p)(i, k) += noise(rng);
    }
  }
  out.pa_goal = apply(inverse(inst.t_alpha), out.pa_init);
  out.pb_goal = apply(inverse(inst.t_beta), out.pb_init);
  return out;
}

StepLosses loss_and_gradient(const PreparedInstance& prep, const EncoderParams& params, const TrainConfig& cfg,
                             std::uint64_t sample_seed, std::map<std::string, Mat>* grads,
                             const RigidTransform* fixed_transform, RigidTransform* used_transform) {
  const TaskInstance& inst = *prep.instance;
  Tape tape;
  const ParamVars pv = to_tape(tape, params, grads != nullptr);
  const Var fa = encode_tape(tape.constant(prep.input_a), pv, params.encoder_prefix(Side::A));
  const Var fb = encode_tape(tape.constant(prep.input_b), pv, params.encoder_prefix(Side::B));
  auto [ha, hb] = cross_attention_tape(fa, fb, pv, params.config.heads);
  const auto [rows, cols] = sample_pairs(static_cast<int>(inst.pa_init.rows()), static_cast<int>(inst.pb_init.rows()),
                                         cfg.sample_k, sample_seed);
  const Var r = kernel_tape(ad::gather_rows(ha, rows), ad::gather_rows(hb, cols), pv);
  const Var goals = mul_tape(r, tape.constant(gather(inst.pb_init, cols)));
  const PointCloud pa_s = gather(inst.pa_init, rows);

  const Var l_corr = mean_squared_distance(goals, tape.constant(gather(prep.true_goals, rows)));
  const RigidTransform t = fixed_transform ? *fixed_transform : pro_solve(pa_s, PointCloud(goals.value()));
  if (used_transform) *used_transform = t;
  const Var l_cons = mean_squared_distance(goals, tape.constant(apply(t, pa_s)));
  const Var total = ad::add(ad::scale(l_corr, cfg.lambda_corr), ad::scale(l_cons, cfg.lambda_cons));

  StepLosses out;
  out.corr = l_corr.item();
  out.cons = l_cons.item();
  out.disp = loss_displacement(t, pa_s, inst.t_cross_gt);
  out.total = total.item();
  if (!std::isfinite(out.total)) throw Error(ErrorCode::NonFinite, "loss is not finite");
  if (grads) {
    tape.backward(total);
    for (const auto& [name, var] : pv) {
      Mat g = var.grad();
      if (!g.allFinite()) throw Error(ErrorCode::NonFinite, "gradient of " + name + " is not finite");
      auto it = grads->find(name);
      if (it == grads->end()) {
        grads->emplace(name, std::move(g));
      } else {
        it->second += g;
      }
    }
  }
  return out;
}

EvalRow evaluate_instance(const TaskInstance& inst, const EncoderParams& params, int sample_k, std::uint64_t seed) {
  const CrossPoseResult r = cross_pose(inst.pa_init, inst.pb_init, params, sample_k, seed);
  return {rotation_error(r.transform, inst.t_cross_gt), translation_error(r.transform, inst.t_cross_gt, inst.pa_init)};
}

EncoderParams train(const std::vector<TaskInstance>& demos, const TrainConfig& cfg, const TaskInstance* heldout,
                    const std::function<void(const EpochLog&)>& on_epoch, const EncoderParams* initial) {
  cfg.validate();
  if (demos.empty()) throw Error(ErrorCode::InvalidArgument, "training set is empty");
  EncoderParams params = initial ? *initial : EncoderParams::init(cfg.encoder, derive_seed(cfg.seed, 1));
  if (cfg.epochs == 0) return params;
  keep_large_blocks_on_heap();

  std::vector<PreparedInstance> prepared;
  std::vector<double> diameters;
  prepared.reserve(demos.size());
  for (const TaskInstance& d : demos) {
    prepared.push_back(prepare(d, params.config));
    diameters.push_back(cfg.jitter > 0.0 ? diameter(d.pa_goal, d.pb_goal) : 0.0);
  }

  std::map<std::string, Mat> m1, m2;
  for (const auto& [name, t] : params.tensors) {
    m1[name] = Mat::Zero(t.rows(), t.cols());
    m2[name] = Mat::Zero(t.rows(), t.cols());
  }
  const auto start = std::chrono::steady_clock::now();
  std::uint64_t step = 0;
  const double total_steps = static_cast<double>(cfg.epochs) * static_cast<double>(prepared.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    for (std::size_t s = 0; s < prepared.size(); ++s, ++step) {
      std::map<std::string, Mat> grads;
      StepLosses l;
      try {
        if (cfg.jitter > 0.0) {
          const TaskInstance noisy = jittered(demos[s], cfg.jitter * diameters[s], derive_seed(cfg.seed, 4, step));
          l = loss_and_gradient(prepare(noisy, params.config), params, cfg, derive_seed(cfg.seed, 2, step), &grads);
        } else {
          l = loss_and_gradient(prepared[s], params, cfg, derive_seed(cfg.seed, 2, step), &grads);
        }
      } catch (const Error& e) {
        const std::string where = "epoch " + std::to_string(epoch + 1) + " step " + std::to_string(s + 1) + ": ";
        if (e.code() == ErrorCode::NonFinite) throw Error(ErrorCode::NonFiniteLoss, where + e.what());
        throw Error(e.code(), where + e.what());
      }
      log.loss_corr += l.corr;
      log.loss_cons += l.cons;
      log.loss_disp += l.disp;
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      const double lr = cfg.learning_rate * (cfg.final_lr_scale + (1.0 - cfg.final_lr_scale) * cosine);
      for (auto& [name, w] : params.tensors) {
        const Mat& g = grads.at(name);
        Mat& a = m1[name];
        Mat& b = m2[name];
        a = cfg.beta1 * a + (1.0 - cfg.beta1) * g;
        b = cfg.beta2 * b + (1.0 - cfg.beta2) * g.cwiseAbs2();
        w.array() -= lr * (a.array() / c1) / ((b.array() / c2).sqrt() + cfg.adam_eps);
      }
    }
    const double n = static_cast<double>(prepared.size());
    log.loss_corr /= n;
    log.loss_cons /= n;
    log.loss_disp /= n;
    if (heldout) {
      const EvalRow e = evaluate_instance(*heldout, params, cfg.monitor_sample_k, derive_seed(cfg.seed, 3));
      log.rot_err_deg = e.rot_err_deg;
      log.trans_err = e.trans_err;
    } else {
      log.rot_err_deg = std::nan("");
      log.trans_err = std::nan("");
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_epoch) on_epoch(log);
  }
  return params;
}

std::vector<EvalRow> evaluate(const std::vector<TaskInstance>& instances, const EncoderParams& params, int sample_k,
                              std::uint64_t seed) {
  std::vector<EvalRow> rows;
  rows.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i)
    rows.push_back(evaluate_instance(instances[i], params, sample_k, derive_seed(seed, 5, i)));
  return rows;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace reldist
