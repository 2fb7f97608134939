// Acceptance checks. `acceptance setup DIR` trains the models the learning
// criteria need; `acceptance criterion N DIR` prints one [PASS]/[FAIL] line.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "reldist/certify.hpp"
#include "reldist/error.hpp"
#include "reldist/mlat.hpp"
#include "reldist/pipeline.hpp"
#include "reldist/procrustes.hpp"
#include "reldist/taskgen.hpp"

namespace fs = std::filesystem;
using namespace reldist;

namespace {

constexpr std::uint64_t kSeed = 2024;
constexpr int kTrainSampleK = 64;
constexpr int kEvalSampleK = 256;
constexpr int kOneDemoEpochs = 600;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int report(int id, const std::string& title, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s: %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  return pass ? 0 : 1;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

DatasetSpec ten_demo_spec(PoseMode eval_poses) {
  DatasetSpec s;
  s.seed = kSeed;
  s.demos = 10;
  s.evals = 100;
  s.eval_poses = eval_poses;
  return s;
}

DatasetSpec one_demo_spec() {
  DatasetSpec s;
  s.seed = kSeed + 1;
  s.demos = 1;
  s.evals = 50;
  s.eval_on_demo_geometry = true;
  return s;
}

TrainConfig ten_demo_config() {
  TrainConfig c;
  c.seed = kSeed;
  c.sample_k = kTrainSampleK;
  return c;
}

TrainConfig one_demo_config() {
  TrainConfig c = ten_demo_config();
  c.epochs = kOneDemoEpochs;
  return c;
}

// ------------------------------------------------------------------ setup

int setup(const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json timing;

  const Dataset ten = make_dataset(ten_demo_spec(PoseMode::Random));
  auto t0 = Clock::now();
  const TrainConfig c10 = ten_demo_config();
  const EncoderParams m10 = train(ten.demos, c10, &ten.evals.front(), [](const EpochLog& e) {
    if (e.epoch % 25 == 0) std::printf("  10-demo epoch %d  eps_r %.3f  %.0fs\n", e.epoch, e.rot_err_deg, e.seconds);
    std::fflush(stdout);
  });
  timing["ten_demo_seconds"] = seconds_since(t0);
  timing["ten_demo_epochs"] = c10.epochs;
  save_checkpoint(m10, dir / "ten_demo.rpkt");

  const Dataset one = make_dataset(one_demo_spec());
  t0 = Clock::now();
  const EncoderParams m1 = train(one.demos, one_demo_config(), &one.evals.front());
  timing["one_demo_seconds"] = seconds_since(t0);
  save_checkpoint(m1, dir / "one_demo.rpkt");

  std::ofstream(dir / "timing.json") << timing.dump(2) << "\n";
  std::printf("trained 10-demo model in %.1f s and 1-demo model in %.1f s\n", timing["ten_demo_seconds"].get<double>(),
              timing["one_demo_seconds"].get<double>());
  return 0;
}

EncoderParams load_model(const fs::path& dir, const std::string& name) {
  return load_checkpoint(dir / (name + ".rpkt"));
}

// ------------------------------------------------------------------ criterion 1

struct EquivarianceResult {
  double rot = 0.0;
  double trans = 0.0;
};

EquivarianceResult cross_pose_equivariance(const EncoderParams& params, int instances, std::uint64_t seed) {
  EquivarianceResult r;
  for (int i = 0; i < instances; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const TaskInstance inst = perturb(gen_ring_on_peg(derive_seed(seed, 10, ui)), derive_seed(seed, 11, ui), 1.0);
    const RigidTransform ta = random_transform(derive_seed(seed, 12, ui), 10.0);
    const RigidTransform tb = random_transform(derive_seed(seed, 13, ui), 10.0);
    const std::uint64_t s = derive_seed(seed, 14, ui);
    const RigidTransform base = cross_pose(inst.pa_init, inst.pb_init, params, kTrainSampleK, s).transform;
    const PointCloud moved_a = apply(ta, inst.pa_init);
    const RigidTransform moved = cross_pose(moved_a, apply(tb, inst.pb_init), params, kTrainSampleK, s).transform;
    const RigidTransform expect = compose(tb, compose(base, inverse(ta)));
    r.rot = std::max(r.rot, rotation_error(moved, expect));
    r.trans = std::max(r.trans, translation_error(moved, expect, moved_a));
  }
  return r;
}

int criterion1(const fs::path& dir) {
  const auto t0 = Clock::now();
  const EquivarianceResult u = cross_pose_equivariance(EncoderParams::init(EncoderConfig{}, derive_seed(kSeed, 20)), 100, kSeed);
  const EquivarianceResult t = cross_pose_equivariance(load_model(dir, "ten_demo"), 100, kSeed + 7);
  const double secs = seconds_since(t0);
  const bool pass = u.rot <= 1e-5 && t.rot <= 1e-5 && u.trans <= 1e-7 && t.trans <= 1e-7 && secs <= 60.0;
  char d[256];
  std::snprintf(d, sizeof(d),
                "untrained rot %.2e deg trans %.2e, trained rot %.2e deg trans %.2e (limits 1e-5 deg, 1e-7), %.1f s "
                "(limit 60 s)",
                u.rot, u.trans, t.rot, t.trans, secs);
  return report(1, "Cross-pose equivariance", pass, d);
}

// ------------------------------------------------------------------ criterion 2

PointCloud uniform_cloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

Eigen::VectorXd ranges(const PointCloud& b, const Vec3& p) {
  Eigen::VectorXd r(b.rows());
  for (Eigen::Index i = 0; i < b.rows(); ++i) r[i] = (b.row(i).transpose() - p).norm();
  return r;
}

int criterion2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> cube(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.01);
  double exact = 0.0, agree = 0.0, excess = -1e300;
  for (int i = 0; i < 200; ++i) {
    const PointCloud b = uniform_cloud(rng, 10);
    const Vec3 p(cube(rng), cube(rng), cube(rng));
    Eigen::VectorXd r = ranges(b, p);
    exact = std::max(exact, (mul_solve(r, b) - p).norm());
    for (auto& x : r) x += noise(rng);
    const Vec3 closed = mul_solve(r, b);
    const MulOracleResult o = mul_oracle(r, b, 20, derive_seed(kSeed, 30, static_cast<std::uint64_t>(i)));
    agree = std::max(agree, (closed - o.position).norm());
    excess = std::max(excess, mul_objective(closed, r, b) - o.objective);
  }
  const double secs = seconds_since(t0);
  const bool pass = exact <= 1e-8 && agree <= 1e-6 && excess <= 1e-10 && secs <= 30.0;
  char d[256];
  std::snprintf(d, sizeof(d),
                "exact recovery %.2e (limit 1e-8), noisy oracle agreement %.2e (limit 1e-6), objective excess %.2e "
                "(limit 1e-10), %.1f s (limit 30 s)",
                exact, agree, excess, secs);
  return report(2, "MUL correctness", pass, d);
}

// ------------------------------------------------------------------ criterion 3

int criterion3() {
  std::mt19937_64 rng(kSeed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> wdist(0.1, 2.0);
  double recovery = 0.0, eq_rot = 0.0, eq_trans = 0.0, det = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    PointCloud p(20, 3), q(20, 3);
    for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = g(rng);
    for (Eigen::Index k = 0; k < q.size(); ++k) q.data()[k] = g(rng);
    Eigen::VectorXd w(20);
    for (auto& x : w) x = wdist(rng);

    const RigidTransform gt = random_transform(derive_seed(kSeed, 40, ui), 10.0);
    const RigidTransform rec = pro_solve(p, apply(gt, p));
    recovery = std::max(recovery, rotation_error(rec, gt));

    const RigidTransform ta = random_transform(derive_seed(kSeed, 41, ui), 10.0);
    const RigidTransform tb = random_transform(derive_seed(kSeed, 42, ui), 10.0);
    const RigidTransform base = pro_solve(p, q, w);
    const RigidTransform lhs = pro_solve(apply(ta, p), apply(tb, q), w);
    const RigidTransform rhs = compose(tb, compose(base, inverse(ta)));
    eq_rot = std::max(eq_rot, rotation_error(lhs, rhs));
    eq_trans = std::max(eq_trans, (lhs.translation - rhs.translation).norm());

    PointCloud mirrored = apply(gt, p);
    mirrored.col(0) *= -1.0;
    for (const RigidTransform& t : {rec, base, lhs, pro_solve(p, mirrored, w)})
      det = std::max(det, std::abs(t.rotation.determinant() - 1.0));
  }
  const bool pass = recovery <= 1e-9 && eq_rot <= 1e-7 && det <= 1e-10;
  char d[256];
  std::snprintf(d, sizeof(d),
                "recovery %.2e deg (limit 1e-9), two-sided equivariance %.2e deg / %.2e (limit 1e-7 deg), "
                "max |det R - 1| %.2e incl. reflected inputs",
                recovery, eq_rot, eq_trans, det);
  return report(3, "PRO correctness", pass, d);
}

// ------------------------------------------------------------------ criterion 4

int criterion4() {
  double rot = 0.0, trans = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const TaskInstance inst = perturb(gen_ring_on_peg(derive_seed(kSeed, 50, ui)), derive_seed(kSeed, 51, ui), 10.0);
    KernelMatrix target = reldist_target(inst.pa_goal, inst.pb_goal);
    const CrossPoseResult r = cross_pose_from_kernel(inst.pa_init, inst.pb_init, target);
    rot = std::max(rot, rotation_error(r.transform, inst.t_cross_gt));
    trans = std::max(trans, translation_error(r.transform, inst.t_cross_gt, inst.pa_init));
  }
  const bool pass = rot <= 1e-6 && trans <= 1e-8;
  char d[200];
  std::snprintf(d, sizeof(d), "50 instances: rot %.2e deg (limit 1e-6), trans %.2e diameters (limit 1e-8)", rot, trans);
  return report(4, "Oracle-exact pipeline", pass, d);
}

// ------------------------------------------------------------------ criterion 5

int criterion5() {
  const EncoderParams params = EncoderParams::init(EncoderConfig{}, derive_seed(kSeed, 60));
  const std::vector<CertifyRow> rows = certify_gradients(params, kSeed, 16, 0);
  bool pass = true;
  std::string d;
  for (const CertifyRow& r : rows) {
    if (r.name == "grad_training_loss") continue;
    pass = pass && r.pass && r.worst <= 1e-4;
    d += r.name + " " + fmt("%.1e", r.worst) + ", ";
  }
  d += "16 points, every coordinate (limit 1e-4)";
  return report(5, "Gradient certification", pass, d);
}

// ------------------------------------------------------------------ criteria 6-8

struct Medians {
  double rot = 0.0;
  double trans = 0.0;
};

Medians medians(const std::vector<EvalRow>& rows) {
  std::vector<double> r, t;
  for (const EvalRow& e : rows) {
    r.push_back(e.rot_err_deg);
    t.push_back(e.trans_err);
  }
  return {median(r), median(t)};
}

int criterion6(const fs::path& dir) {
  const nlohmann::json timing = nlohmann::json::parse(std::ifstream(dir / "timing.json"));
  const double train_secs = timing.at("ten_demo_seconds").get<double>();
  const int epochs = timing.at("ten_demo_epochs").get<int>();
  const EncoderParams params = load_model(dir, "ten_demo");
  const Dataset random = make_dataset(ten_demo_spec(PoseMode::Random));
  const Dataset upright = make_dataset(ten_demo_spec(PoseMode::Upright));
  const std::vector<EvalRow> rr = evaluate(random.evals, params, kEvalSampleK, kSeed);
  const std::vector<EvalRow> ru = evaluate(upright.evals, params, kEvalSampleK, kSeed);
  const Medians mr = medians(rr), mu = medians(ru);
  const double rot_ratio = mu.rot / mr.rot, trans_ratio = mu.trans / mr.trans;
  const bool pass = mr.rot <= 5.0 && mr.trans <= 0.05 && std::abs(rot_ratio - 1.0) <= 0.1 &&
                    std::abs(trans_ratio - 1.0) <= 0.1 && train_secs <= 900.0 && epochs <= 2000;
  char d[400];
  std::snprintf(d, sizeof(d),
                "100 held-out: median eps_r %.3f deg (limit 5), median eps_p %.4f diameters (limit 0.05); upright/random "
                "median ratio eps_r %.4f eps_p %.4f (limit +-10%%); training %d epochs in %.0f s (limit 900 s)",
                mr.rot, mr.trans, rot_ratio, trans_ratio, epochs, train_secs);
  return report(6, "Desk-scale learning", pass, d);
}

int criterion7(const fs::path& dir) {
  const EncoderParams params = load_model(dir, "one_demo");
  const EquivarianceResult eq = cross_pose_equivariance(params, 100, kSeed + 9);
  const Dataset one = make_dataset(one_demo_spec());
  const Medians m = medians(evaluate(one.evals, params, kEvalSampleK, kSeed));
  const bool pass = eq.rot <= 1e-5 && eq.trans <= 1e-7 && m.rot <= 15.0;
  char d[300];
  std::snprintf(d, sizeof(d),
                "1 demo, %d epochs: median eps_r %.3f deg on 50 re-posed instances (limit 15); equivariance rot %.2e deg "
                "trans %.2e",
                kOneDemoEpochs, m.rot, eq.rot, eq.trans);
  return report(7, "One-demo ablation", pass, d);
}

int criterion8(const fs::path& dir) {
  const EncoderParams params = load_model(dir, "ten_demo");
  const Dataset random = make_dataset(ten_demo_spec(PoseMode::Random));
  const Medians k256 = medians(evaluate(random.evals, params, 256, kSeed));
  const Medians k100 = medians(evaluate(random.evals, params, 100, kSeed));
  const bool pass = k256.rot <= k100.rot + 1.0;
  char d[200];
  std::snprintf(d, sizeof(d), "median eps_r K=256 %.3f deg, K=100 %.3f deg (limit K=100 + 1)", k256.rot, k100.rot);
  return report(8, "Sampling consistency", pass, d);
}

int usage() {
  std::fprintf(stderr, "usage: acceptance setup DIR | acceptance criterion N DIR\n");
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) return usage();
  const std::string mode = argv[1];
  try {
    if (mode == "setup") return setup(argv[2]);
    if (mode != "criterion" || argc < 4) return usage();
    const fs::path dir = argv[3];
    switch (std::atoi(argv[2])) {
      case 1: return criterion1(dir);
      case 2: return criterion2();
      case 3: return criterion3();
      case 4: return criterion4();
      case 5: return criterion5();
      case 6: return criterion6(dir);
      case 7: return criterion7(dir);
      case 8: return criterion8(dir);
      default: return usage();
    }
  } catch (const std::exception& e) {
    std::printf("[FAIL] %s %s: error: %s\n", mode.c_str(), argc > 2 ? argv[2] : "", e.what());
    return 1;
  }
}
