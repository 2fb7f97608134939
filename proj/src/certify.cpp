#include "reldist/certify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "reldist/error.hpp"
#include "reldist/mlat.hpp"
#include "reldist/pipeline.hpp"
#include "reldist/taskgen.hpp"

namespace reldist {

bool CertifyReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const CertifyRow& r) { return r.pass; });
}

const CertifyRow* CertifyReport::find(const std::string& name) const {
  for (const CertifyRow& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::string CertifyReport::table() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %-6s %-14s %-10s %s\n", "check", "result", "worst", "tolerance", "detail");
  os << line;
  for (const CertifyRow& r : rows) {
    std::snprintf(line, sizeof(line), "%-28s %-6s %-14.4e %-10.1e %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                  r.worst, r.tolerance, r.detail.c_str());
    os << line;
  }
  return os.str();
}

namespace {

CertifyRow upper_row(const std::string& name, double worst, double tol, std::string detail = "") {
  return {name, std::isfinite(worst) && worst <= tol, worst, tol, std::move(detail)};
}

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

PointCloud random_cloud(std::mt19937_64& rng, Eigen::Index n, double s = 1.0) { return PointCloud(randn(rng, n, 3, s)); }

RigidTransform solve_with(const ProSolver& pro, const PointCloud& p, const PointCloud& q, const Eigen::VectorXd& w) {
  return pro ? pro(p, q, w) : pro_solve(p, q, w);
}

}  // namespace

std::vector<CertifyRow> certify_mul(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 101));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double worst_equiv = 0.0, worst_exact = 0.0, worst_excess = -INFINITY;
  for (int t = 0; t < trials; ++t) {
    PointCloud beacons(10, 3);
    for (Eigen::Index i = 0; i < beacons.size(); ++i) beacons.data()[i] = uni(rng) * 2.0 - 1.0;
    Vec3 target;
    for (int k = 0; k < 3; ++k) target[k] = uni(rng);
    Eigen::VectorXd exact(10), noisy(10);
    std::normal_distribution<double> noise(0.0, 0.01);
    for (Eigen::Index i = 0; i < 10; ++i) {
      exact[i] = (beacons.row(i).transpose() - target).norm();
      noisy[i] = std::max(exact[i] + noise(rng), 1e-3);
    }
    const RigidTransform tr = random_transform(derive_seed(seed, 102, static_cast<std::uint64_t>(t)), 10.0);
    const Vec3 moved = mul_solve(noisy, apply(tr, beacons));
    const Vec3 expect = apply(tr, mul_solve(noisy, beacons));
    worst_equiv = std::max(worst_equiv, (moved - expect).norm());
    const Vec3 rec = mul_solve(exact, beacons);
    worst_exact = std::max(worst_exact, (rec - target).norm());
    const MulOracleResult o = mul_oracle(exact, beacons, 5, derive_seed(seed, 103, static_cast<std::uint64_t>(t)));
    worst_excess = std::max(worst_excess, mul_objective(rec, exact, beacons) - o.objective);
  }
  return {upper_row("mul_equivariance", worst_equiv, 1e-8, "|MUL(T b) - T MUL(b)|"),
          upper_row("mul_exact_recovery", worst_exact, 1e-8, "|p - p*| with exact radii"),
          upper_row("mul_optimality", worst_excess, 1e-10, "objective excess over oracle")};
}

std::vector<CertifyRow> certify_pro(int trials, std::uint64_t seed, const ProSolver& pro) {
  std::mt19937_64 rng(derive_seed(seed, 201));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double rec_rot = 0.0, rec_trans = 0.0, eq_rot = 0.0, eq_trans = 0.0, det_dev = 0.0, scale_dev = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto ts = static_cast<std::uint64_t>(t);
    const Eigen::Index n = 3 + static_cast<Eigen::Index>(uni(rng) * 48);
    const PointCloud p = random_cloud(rng, n);
    const RigidTransform truth = random_transform(derive_seed(seed, 202, ts), 5.0);
    Eigen::VectorXd w(n);
    const bool weighted = t % 2 == 1;
    for (Eigen::Index i = 0; i < n; ++i) w[i] = weighted ? (uni(rng) < 0.2 && i >= 3 ? 0.0 : uni(rng) + 0.05) : 1.0;

    const PointCloud q_exact = apply(truth, p);
    const RigidTransform rec = solve_with(pro, p, q_exact, w);
    rec_rot = std::max(rec_rot, rotation_error(rec, truth));
    rec_trans = std::max(rec_trans, (rec.translation - truth.translation).norm());

    const PointCloud q = q_exact + PointCloud(randn(rng, n, 3, 0.05));
    const RigidTransform ta = random_transform(derive_seed(seed, 203, ts), 10.0);
    const RigidTransform tb = random_transform(derive_seed(seed, 204, ts), 10.0);
    const RigidTransform base = solve_with(pro, p, q, w);
    const RigidTransform lhs = solve_with(pro, apply(ta, p), apply(tb, q), w);
    const RigidTransform rhs = compose(tb, compose(base, inverse(ta)));
    eq_rot = std::max(eq_rot, rotation_error(lhs, rhs));
    eq_trans = std::max(eq_trans, translation_error(lhs, rhs, apply(ta, p)));

    const RigidTransform scaled = solve_with(pro, p, q, w * (0.1 + 10.0 * uni(rng)));
    scale_dev = std::max({scale_dev, (scaled.rotation - base.rotation).cwiseAbs().maxCoeff(),
                          (scaled.translation - base.translation).cwiseAbs().maxCoeff()});

    PointCloud mirrored = q;
    mirrored.col(2) *= -1.0;
    for (const RigidTransform& r : {base, lhs, solve_with(pro, p, mirrored, w)}) {
      det_dev = std::max({det_dev, std::abs(r.rotation.determinant() - 1.0), orthogonality_drift(r.rotation)});
    }
  }
  return {upper_row("pro_recovery_rotation", rec_rot, 1e-9, "deg"),
          upper_row("pro_recovery_translation", rec_trans, 1e-10, ""),
          upper_row("pro_equivariance_rotation", eq_rot, 1e-7, "deg, two-sided"),
          upper_row("pro_equivariance_translation", eq_trans, 1e-8, "two-sided"),
          upper_row("pro_weight_scaling", scale_dev, 1e-10, ""),
          upper_row("pro_det_positive", det_dev, 1e-10, "|det R - 1|, incl. reflected inputs")};
}

std::vector<CertifyRow> certify_kernel(const EncoderParams& params, const CertifyOptions& o) {
  double inv = 0.0, sym = 0.0, min_entry = INFINITY;
  std::mt19937_64 rng(derive_seed(o.seed, 301));
  const int n = std::max(64, std::min(o.n_points, 96));
  for (int t = 0; t < o.trials; ++t) {
    const auto ts = static_cast<std::uint64_t>(t);
    const GoalPair g = generate(o.family, derive_seed(o.seed, 302, ts), n, 0.05);
    const RigidTransform ta = random_transform(derive_seed(o.seed, 303, ts), o.max_translation);
    const RigidTransform tb = random_transform(derive_seed(o.seed, 304, ts), o.max_translation);
    auto features = [&](const PointCloud& a, const PointCloud& b) {
      return cross_attention(encode(a, Side::A, params), encode(b, Side::B, params), params);
    };
    const auto [fa, fb] = features(g.pa, g.pb);
    const auto [ga, gb] = features(apply(ta, g.pa), apply(tb, g.pb));
    const int k = std::min<int>(16, n);
    const std::uint64_t s = derive_seed(o.seed, 305, ts);
    const KernelMatrix k1 = kernel_matrix(fa, fb, params, k, s);
    const KernelMatrix k2 = kernel_matrix(ga, gb, params, k, s);
    inv = std::max(inv, (k1.entries - k2.entries).cwiseAbs().maxCoeff());
    min_entry = std::min({min_entry, k1.entries.minCoeff(), k2.entries.minCoeff()});
    for (int r = 0; r < 4; ++r) {
      const Eigen::VectorXd x = fa.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n))).transpose();
      const Eigen::VectorXd y = fb.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n))).transpose();
      sym = std::max(sym, std::abs(kernel_eval(x, y, params) - kernel_eval(y, x, params)));
    }
  }
  CertifyRow pos{"kernel_positivity", min_entry > 0.0, min_entry, 0.0, "smallest entry (must be > 0)"};
  return {upper_row("kernel_invariance", inv, 1e-9, "max |R_AB(T_A P_A, T_B P_B) - R_AB|"),
          upper_row("kernel_symmetry", sym, 0.0, "|k(x,y) - k(y,x)|, exact"), pos};
}

std::vector<CertifyRow> certify_end_to_end(const EncoderParams& params, const CertifyOptions& o, const ProSolver& pro) {
  double rot = 0.0, trans = 0.0, det_dev = 0.0;
  for (int t = 0; t < o.trials; ++t) {
    const auto ts = static_cast<std::uint64_t>(t);
    const GoalPair g = generate(o.family, derive_seed(o.seed, 401, ts), o.n_points, 0.05);
    const TaskInstance inst = perturb(g, derive_seed(o.seed, 402, ts), 1.0, PoseMode::Random, o.family);
    const RigidTransform ta = random_transform(derive_seed(o.seed, 403, ts), o.max_translation);
    const RigidTransform tb = random_transform(derive_seed(o.seed, 404, ts), o.max_translation);
    const std::uint64_t s = derive_seed(o.seed, 405, ts);
    const PointCloud pa2 = apply(ta, inst.pa_init);
    const CrossPoseResult base = cross_pose(inst.pa_init, inst.pb_init, params, o.sample_k, s, pro);
    const CrossPoseResult moved = cross_pose(pa2, apply(tb, inst.pb_init), params, o.sample_k, s, pro);
    const RigidTransform expect = compose(tb, compose(base.transform, inverse(ta)));
    rot = std::max(rot, rotation_error(expect, moved.transform));
    trans = std::max(trans, translation_error(expect, moved.transform, pa2));
    for (const RigidTransform& r : {base.transform, moved.transform}) {
      det_dev = std::max({det_dev, std::abs(r.rotation.determinant() - 1.0), orthogonality_drift(r.rotation)});
    }
  }
  return {upper_row("cross_pose_rotation", rot, 1e-5, "deg"), upper_row("cross_pose_translation", trans, 1e-7, "diameters"),
          upper_row("cross_pose_is_rotation", det_dev, 1e-9, "")};
}

// ---------------------------------------------------------------- gradients

std::vector<std::pair<std::string, double>> primitive_gradient_errors(int inputs, std::uint64_t seed) {
  using F = std::function<Var(Tape&, const Var&)>;
  struct Case {
    std::string name;
    Eigen::Index rows, cols;
    std::function<Mat(std::mt19937_64&)> make;
    std::function<F(std::mt19937_64&)> build;
  };
  auto weighted = [](Mat w, std::function<Var(Tape&, const Var&)> op) -> F {
    return [w, op](Tape& t, const Var& x) { return ad::sum(ad::mul(op(t, x), t.constant(w))); };
  };
  auto gauss = [](Eigen::Index r, Eigen::Index c) {
    return [r, c](std::mt19937_64& g) { return randn(g, r, c); };
  };
  auto away_from_zero = [](Eigen::Index r, Eigen::Index c) {
    return [r, c](std::mt19937_64& g) {
      Mat m = randn(g, r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += m.data()[i] >= 0 ? 0.05 : -0.05;
      return m;
    };
  };
  auto positive = [](Eigen::Index r, Eigen::Index c) {
    return [r, c](std::mt19937_64& g) { return Mat((randn(g, r, c).array().abs() + 0.5).matrix()); };
  };
  std::vector<Case> cases;
  auto unary = [&](const std::string& name, Eigen::Index r, Eigen::Index c, Eigen::Index orows, Eigen::Index ocols,
                   std::function<Var(const Var&)> op, std::function<Mat(std::mt19937_64&)> make = {}) {
    cases.push_back({name, r, c, make ? make : gauss(r, c), [=](std::mt19937_64& g) {
                       return weighted(randn(g, orows, ocols), [op](Tape&, const Var& x) { return op(x); });
                     }});
  };
  auto binary = [&](const std::string& name, Eigen::Index r, Eigen::Index c, Eigen::Index cr, Eigen::Index cc,
                    Eigen::Index orows, Eigen::Index ocols, std::function<Var(const Var&, const Var&)> op) {
    cases.push_back({name + "_lhs", r, c, gauss(r, c), [=](std::mt19937_64& g) {
                       Mat other = randn(g, cr, cc);
                       return weighted(randn(g, orows, ocols),
                                       [op, other](Tape& t, const Var& x) { return op(x, t.constant(other)); });
                     }});
    cases.push_back({name + "_rhs", cr, cc, gauss(cr, cc), [=](std::mt19937_64& g) {
                       Mat other = randn(g, r, c);
                       return weighted(randn(g, orows, ocols),
                                       [op, other](Tape& t, const Var& x) { return op(t.constant(other), x); });
                     }});
  };
  binary("add", 3, 4, 3, 4, 3, 4, ad::add);
  binary("sub", 3, 4, 3, 4, 3, 4, ad::sub);
  binary("mul", 3, 4, 3, 4, 3, 4, ad::mul);
  binary("matmul", 3, 4, 4, 2, 3, 2, ad::matmul);
  binary("add_row", 3, 4, 1, 4, 3, 4, ad::add_row);
  binary("pair_add", 3, 4, 2, 4, 6, 4, ad::pair_add);
  binary("div_scalar", 3, 4, 1, 1, 3, 4, ad::div_scalar);
  binary("concat_cols", 3, 4, 3, 2, 3, 6, [](const Var& a, const Var& b) { return ad::concat_cols({a, b}); });
  binary("concat_rows", 3, 4, 2, 4, 5, 4, [](const Var& a, const Var& b) { return ad::concat_rows({a, b}); });
  unary("transpose", 3, 4, 4, 3, ad::transpose);
  unary("sum", 3, 4, 1, 1, [](const Var& x) { return ad::square(ad::sum(x)); });
  unary("mean", 3, 4, 1, 1, [](const Var& x) { return ad::square(ad::mean(x)); });
  unary("sum_rows", 3, 4, 1, 4, ad::sum_rows);
  unary("mean_rows", 3, 4, 1, 4, ad::mean_rows);
  unary("sum_cols", 3, 4, 3, 1, ad::sum_cols);
  unary("mean_cols", 3, 4, 3, 1, ad::mean_cols);
  unary("broadcast_rows", 1, 4, 3, 4, [](const Var& x) { return ad::broadcast_rows(x, 3); });
  unary("broadcast_cols", 3, 1, 3, 4, [](const Var& x) { return ad::broadcast_cols(x, 4); });
  unary("softplus", 3, 4, 3, 4, ad::softplus);
  unary("relu", 3, 4, 3, 4, ad::relu, away_from_zero(3, 4));
  unary("softmax_rows", 3, 4, 3, 4, ad::softmax_rows);
  unary("slice_cols", 3, 4, 3, 2, [](const Var& x) { return ad::slice_cols(x, 1, 2); });
  unary("slice_rows", 3, 4, 2, 4, [](const Var& x) { return ad::slice_rows(x, 1, 2); });
  unary("gather_rows", 3, 4, 4, 4, [](const Var& x) { return ad::gather_rows(x, {2, 0, 2, 1}); });
  unary("reshape", 3, 4, 2, 6, [](const Var& x) { return ad::reshape(x, 2, 6); });
  unary("square", 3, 4, 3, 4, ad::square);
  unary("sqrt", 3, 4, 3, 4, ad::sqrt, positive(3, 4));
  unary("scale", 3, 4, 3, 4, [](const Var& x) { return ad::scale(x, -1.7); });
  unary("inverse3", 3, 3, 3, 3, ad::inverse3,
        [](std::mt19937_64& g) { return Mat(Mat::Identity(3, 3) * 2.0 + randn(g, 3, 3, 0.3)); });

  std::vector<std::pair<std::string, double>> out;
  std::mt19937_64 rng(derive_seed(seed, 501));
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int i = 0; i < inputs; ++i) {
      const Mat x = c.make(rng);
      const F f = c.build(rng);
      worst = std::max(worst, gradient_check(f, x, 1e-5));
    }
    out.emplace_back(c.name, worst);
  }
  return out;
}

namespace {

// Central-difference check of selected coordinates of every parameter tensor
// of the training loss, with the PRO transform held at its base value.
double training_loss_gradient_error(const EncoderParams& params, std::uint64_t seed, int points, int per_tensor,
                                    std::string* worst_name) {
  GoalPair g = generate("ring_on_peg", derive_seed(seed, 601), 64, 0.05);
  g.pa.conservativeResize(points, 3);
  g.pb.conservativeResize(points, 3);
  const TaskInstance inst = perturb(g, derive_seed(seed, 602), 1.0);
  TrainConfig cfg;
  cfg.encoder = params.config;
  cfg.sample_k = points;
  const PreparedInstance prep = prepare(inst, params.config);
  const std::uint64_t s = derive_seed(seed, 603);
  std::map<std::string, Mat> grads;
  RigidTransform fixed;
  loss_and_gradient(prep, params, cfg, s, &grads, nullptr, &fixed);
  std::mt19937_64 rng(derive_seed(seed, 604));
  const double h = 1e-5;
  double worst = 0.0;
  EncoderParams probe = params;
  for (auto& [name, tensor] : probe.tensors) {
    for (int c = 0; c < per_tensor; ++c) {
      const Eigen::Index i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(tensor.size()));
      const double orig = tensor.data()[i];
      tensor.data()[i] = orig + h;
      const double fp = loss_and_gradient(prep, probe, cfg, s, nullptr, &fixed).total;
      tensor.data()[i] = orig - h;
      const double fm = loss_and_gradient(prep, probe, cfg, s, nullptr, &fixed).total;
      tensor.data()[i] = orig;
      const double a = grads.at(name).data()[i];
      const double err = std::abs(a - (fp - fm) / (2 * h)) / std::max(1.0, std::abs(a));
      if (err > worst) {
        worst = err;
        if (worst_name) *worst_name = name;
      }
    }
  }
  return worst;
}

}  // namespace

std::vector<CertifyRow> certify_gradients(const EncoderParams& params, std::uint64_t seed, int points, int max_coords) {
  std::vector<CertifyRow> rows;
  double prim = 0.0;
  std::string prim_name;
  for (const auto& [name, err] : primitive_gradient_errors(3, seed)) {
    if (err >= prim) {
      prim = err;
      prim_name = name;
    }
  }
  rows.push_back(upper_row("grad_primitives", prim, 1e-4, "worst: " + prim_name));

  std::mt19937_64 rng(derive_seed(seed, 701));
  auto gradient_check = [&](const std::function<Var(Tape&, const Var&)>& f, const Mat& x) {
    std::vector<Eigen::Index> coords;
    for (Eigen::Index i = 0; i < x.size(); ++i) coords.push_back(i);
    if (max_coords > 0 && static_cast<Eigen::Index>(coords.size()) > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    return reldist::gradient_check(f, x, 1e-5, coords);
  };
  const Eigen::Index d = params.config.d;
  const Mat fa = randn(rng, points, d);
  const Mat fb = randn(rng, points, d);
  {
    const Mat w = randn(rng, points, points);
    double err = 0.0;
    err = std::max(err, gradient_check(
                            [&](Tape& t, const Var& x) {
                              const ParamVars pv = to_tape(t, params, false);
                              return ad::sum(ad::mul(kernel_tape(x, t.constant(fb), pv), t.constant(w)));
                            },
                            fa));
    err = std::max(err, gradient_check(
                            [&](Tape& t, const Var& x) {
                              const ParamVars pv = to_tape(t, params, false);
                              return ad::sum(ad::mul(kernel_tape(t.constant(fa), x, pv), t.constant(w)));
                            },
                            fb));
    rows.push_back(upper_row("grad_kernel", err, 1e-4, std::to_string(points) + " x " + std::to_string(points)));
  }
  {
    const Mat wa = randn(rng, points, d);
    const Mat wb = randn(rng, points, d);
    auto f = [&](bool first) {
      return [&, first](Tape& t, const Var& x) {
        const ParamVars pv = to_tape(t, params, false);
        const Var a = first ? x : t.constant(fa);
        const Var b = first ? t.constant(fb) : x;
        auto [ha, hb] = cross_attention_tape(a, b, pv, params.config.heads);
        return ad::add(ad::sum(ad::mul(ha, t.constant(wa))), ad::sum(ad::mul(hb, t.constant(wb))));
      };
    };
    const double err = std::max(gradient_check(f(true), fa), gradient_check(f(false), fb));
    rows.push_back(upper_row("grad_attention", err, 1e-4, ""));
  }
  {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    PointCloud beacons(points, 3);
    for (Eigen::Index i = 0; i < beacons.size(); ++i) beacons.data()[i] = uni(rng);
    Mat radii(points, points);
    for (Eigen::Index i = 0; i < points; ++i) {
      const Vec3 recv(uni(rng), uni(rng), uni(rng));
      for (Eigen::Index j = 0; j < points; ++j) radii(i, j) = (beacons.row(j).transpose() - recv).norm() + 0.05 * std::abs(uni(rng));
    }
    const Mat w = randn(rng, points, 3);
    const Mat bmat = beacons;
    const double err = std::max(
        gradient_check([&](Tape& t, const Var& x) { return ad::sum(ad::mul(mul_tape(x, t.constant(bmat)), t.constant(w))); },
                       radii),
        gradient_check([&](Tape& t, const Var& x) { return ad::sum(ad::mul(mul_tape(t.constant(radii), x), t.constant(w))); },
                       bmat));
    rows.push_back(upper_row("grad_mul_radii", err, 1e-4, "MUL outputs w.r.t. radii and beacons"));
  }
  {
    std::string worst_name;
    const double err = training_loss_gradient_error(params, seed, points, max_coords > 0 ? 1 : 8, &worst_name);
    rows.push_back(upper_row("grad_training_loss", err, 1e-3, "worst group: " + worst_name));
  }
  return rows;
}

CertifyReport certify(const EncoderParams& params, const CertifyOptions& o, const ProSolver& pro) {
  if (o.trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
  CertifyReport report;
  auto add = [&](std::vector<CertifyRow> rows) {
    for (CertifyRow& r : rows) report.rows.push_back(std::move(r));
  };
  add(certify_mul(o.trials, o.seed));
  add(certify_pro(o.trials, o.seed, pro));
  CertifyOptions kernel_opts = o;
  kernel_opts.trials = std::max(1, o.trials / 10);
  add(certify_kernel(params, kernel_opts));
  add(certify_end_to_end(params, o, pro));
  if (o.gradients) add(certify_gradients(params, o.seed, 16, o.gradient_coords));
  return report;
}

}  // namespace reldist
