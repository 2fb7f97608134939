// Command-line front end: gen-data, train, eval, certify.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reldist/certify.hpp"
#include "reldist/config.hpp"
#include "reldist/error.hpp"
#include "reldist/pipeline.hpp"
#include "reldist/taskgen.hpp"

namespace fs = std::filesystem;
using namespace reldist;

namespace {

enum Exit { kOk = 0, kFail = 1, kUsage = 2, kIo = 3, kTrain = 4, kCheckpoint = 5 };

int exit_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Io:
    case ErrorCode::ChecksumMismatch:
      return kIo;
    case ErrorCode::VersionMismatch:
      return kIo;
    case ErrorCode::NonFiniteLoss:
      return kTrain;
    case ErrorCode::Config:
    case ErrorCode::InvalidArgument:
    case ErrorCode::WidthNotDivisible:
    case ErrorCode::SampleTooLarge:
      return kUsage;
    default:
      return kFail;
  }
}

struct GenArgs {
  std::string family = "ring_on_peg";
  int demos = 10;
  int evals = 100;
  std::uint64_t seed = 0;
  std::string out;
  int points = 256;
  double variation = 0.05;
  double max_translation = 1.0;
  std::string eval_poses = "random";
  std::string eval_geometry = "new";
};

int run_gen(const GenArgs& a) {
  DatasetSpec spec;
  spec.family = a.family;
  spec.seed = a.seed;
  spec.demos = a.demos;
  spec.evals = a.evals;
  spec.n_points = a.points;
  spec.variation = a.variation;
  spec.max_translation = a.max_translation;
  spec.eval_poses = a.eval_poses == "upright" ? PoseMode::Upright
                    : a.eval_poses == "fixed" ? PoseMode::Fixed
                                              : PoseMode::Random;
  spec.eval_on_demo_geometry = a.eval_geometry == "demo";
  dataset_write(make_dataset(spec), a.out);
  std::printf("wrote %d demos and %d evals (%s) to %s\n", a.demos, a.evals, a.family.c_str(), a.out.c_str());
  return kOk;
}

int run_train(const std::string& data_dir, const std::string& config_path, const std::string& out_dir) {
  TrainConfig cfg;
  try {
    cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    cfg.validate();
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return e.code() == ErrorCode::Io ? kIo : kUsage;
  }
  const Dataset data = dataset_read(data_dir);
  if (data.demos.empty()) {
    std::cerr << "dataset has no demos\n";
    return kUsage;
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.csv");
  if (!log) throw Error(ErrorCode::Io, "cannot write training log");
  log << "epoch,loss_corr,loss_cons,loss_disp,rot_err_deg,trans_err\n";
  log.precision(10);
  const TaskInstance* heldout = data.evals.empty() ? nullptr : &data.evals.front();
  const EncoderParams params = train(data.demos, cfg, heldout, [&](const EpochLog& e) {
    log << e.epoch << "," << e.loss_corr << "," << e.loss_cons << "," << e.loss_disp << "," << e.rot_err_deg << ","
        << e.trans_err << "\n";
    log.flush();
    std::printf("epoch %4d  corr %.3e  cons %.3e  disp %.3e  eps_r %7.3f  eps_p %.4f  %6.1fs\n", e.epoch, e.loss_corr,
                e.loss_cons, e.loss_disp, e.rot_err_deg, e.trans_err, e.seconds);
    std::fflush(stdout);
  });
  save_checkpoint(params, fs::path(out_dir) / "checkpoint.rpkt");
  std::ofstream(fs::path(out_dir) / "config.ini") << format_train_config(cfg);
  std::printf("checkpoint written to %s\n", (fs::path(out_dir) / "checkpoint.rpkt").c_str());
  return kOk;
}

nlohmann::json stats(const std::vector<double>& v) {
  double sum = 0.0, mx = 0.0;
  for (double x : v) {
    sum += x;
    mx = std::max(mx, x);
  }
  return {{"mean", v.empty() ? 0.0 : sum / static_cast<double>(v.size())}, {"median", median(v)}, {"max", mx}};
}

int run_eval(const std::string& data_dir, const std::string& ckpt, const std::string& out_dir, int sample_k,
             std::uint64_t seed, const std::string& split) {
  EncoderParams params;
  try {
    params = load_checkpoint(ckpt);
  } catch (const Error& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpoint;
  }
  const Dataset data = dataset_read(data_dir);
  const std::vector<TaskInstance>& list = split == "demo" ? data.demos : data.evals;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir);
  std::ofstream csv(fs::path(out_dir) / "eval.csv");
  if (!csv) throw Error(ErrorCode::Io, "cannot write eval.csv");
  csv.precision(17);
  csv << "instance,rot_err_deg,trans_err\n";
  std::vector<double> rot, trans;
  const std::vector<EvalRow> rows = evaluate(list, params, sample_k, seed);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const EvalRow& r = rows[i];
    rot.push_back(r.rot_err_deg);
    trans.push_back(r.trans_err);
    csv << split << "_" << i << "," << r.rot_err_deg << "," << r.trans_err << "\n";
  }
  nlohmann::json summary = {{"rot_err_deg", stats(rot)}, {"trans_err", stats(trans)}, {"n", rot.size()}};
  std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
  std::printf("n=%zu  median eps_r %.4f deg  median eps_p %.5f\n", rot.size(), median(rot), median(trans));
  return kOk;
}

int run_certify(const std::string& ckpt, int trials, std::uint64_t seed, bool gradients, bool inject_reflection) {
  EncoderParams params;
  if (ckpt.empty()) {
    params = EncoderParams::init(EncoderConfig{}, derive_seed(seed, 900));
  } else {
    try {
      params = load_checkpoint(ckpt);
    } catch (const Error& e) {
      std::cerr << "checkpoint error: " << e.what() << "\n";
      return kCheckpoint;
    }
  }
  CertifyOptions o;
  o.trials = trials;
  o.seed = seed;
  o.gradients = gradients;
  ProSolver pro;
  if (inject_reflection) {
    // Kabsch without the reflection correction.
    pro = [](const PointCloud& p, const PointCloud& q, const Eigen::VectorXd&) {
      const Vec3 pb = centroid(p), qb = centroid(q);
      Mat3 s = Mat3::Zero();
      for (Eigen::Index i = 0; i < p.rows(); ++i) s += (p.row(i).transpose() - pb) * (q.row(i).transpose() - qb).transpose();
      const Svd3 d = svd3(s);
      RigidTransform t;
      t.rotation = d.v * d.u.transpose();
      t.translation = qb - t.rotation * pb;
      return t;
    };
  }
  const CertifyReport r = certify(params, o, pro);
  std::fputs(r.table().c_str(), stdout);
  std::printf("%s\n", r.all_pass() ? "ALL PASS" : "FAILURES PRESENT");
  return r.all_pass() ? kOk : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equivariant relative-placement pipeline: data generation, training, evaluation, certification"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a procedural placement dataset");
  g->add_option("--family", gen.family, "Task family")->check(CLI::IsMember(family_names()));
  g->add_option("--demos", gen.demos, "Number of demonstrations")->check(CLI::NonNegativeNumber);
  g->add_option("--evals", gen.evals, "Number of held-out instances")->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "Seed");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--points", gen.points, "Points per object")->check(CLI::Range(64, 100000));
  g->add_option("--variation", gen.variation, "Relative shape jitter")->check(CLI::Range(0.0, 0.5));
  g->add_option("--max-translation", gen.max_translation, "Largest perturbation translation")->check(CLI::NonNegativeNumber);
  g->add_option("--eval-poses", gen.eval_poses, "Pose distribution of held-out instances")
      ->check(CLI::IsMember({"random", "upright", "fixed"}));
  g->add_option("--eval-geometry", gen.eval_geometry, "new: unseen shapes; demo: demo shapes re-posed")
      ->check(CLI::IsMember({"new", "demo"}));

  std::string data_dir, config_path, out_dir, ckpt, split = "eval";
  int sample_k = 256, trials = 100;
  std::uint64_t seed = 0;
  bool no_gradients = false, inject = false;

  auto* t = app.add_subcommand("train", "Train encoder, attention and kernel");
  t->add_option("--data", data_dir, "Dataset directory")->required();
  t->add_option("--config", config_path, "INI config ([train], [encoder])");
  t->add_option("--out", out_dir, "Output directory")->required();

  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--data", data_dir, "Dataset directory")->required();
  e->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  e->add_option("--out", out_dir, "Output directory")->required();
  e->add_option("--sample-k", sample_k, "Kernel sample size (0 = all points)")->check(CLI::NonNegativeNumber);
  e->add_option("--seed", seed, "Sampling seed");
  e->add_option("--split", split, "Which instances to evaluate")->check(CLI::IsMember({"eval", "demo"}));

  auto* c = app.add_subcommand("certify", "Run the equivariance and gradient property suites");
  c->add_option("--checkpoint", ckpt, "Checkpoint file (random parameters when omitted)");
  c->add_option("--trials", trials, "Random trials per property")->check(CLI::PositiveNumber);
  c->add_option("--seed", seed, "Seed");
  c->add_flag("--no-gradients", no_gradients, "Skip gradient checks");
  c->add_flag("--inject-reflection-bug", inject, "Replace PRO with a variant lacking reflection correction")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(data_dir, config_path, out_dir);
    if (*e) return run_eval(data_dir, ckpt, out_dir, sample_k, seed, split);
    if (*c) return run_certify(ckpt, trials, seed, !no_gradients, inject);
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return exit_for(ex);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kFail;
  }
  return kUsage;
}
