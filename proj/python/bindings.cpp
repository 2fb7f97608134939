#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "reldist/certify.hpp"
#include "reldist/config.hpp"
#include "reldist/encoder.hpp"
#include "reldist/error.hpp"
#include "reldist/geom3.hpp"
#include "reldist/mlat.hpp"
#include "reldist/pipeline.hpp"
#include "reldist/procrustes.hpp"
#include "reldist/taskgen.hpp"

namespace py = pybind11;
using namespace reldist;

namespace {

PointCloud as_cloud(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.cols() != 3) throw Error(ErrorCode::ShapeMismatch, "point arrays must have 3 columns");
  return m;
}

}  // namespace

PYBIND11_MODULE(_reldist, m) {
  m.doc() = "Equivariant relative placement: geometry, multilateration, alignment and the learned kernel pipeline";

  py::register_exception<Error>(m, "ReldistError");

  py::class_<RigidTransform>(m, "RigidTransform")
      .def(py::init<>())
      .def(py::init([](const Mat3& r, const Vec3& t) {
             RigidTransform x;
             x.rotation = r;
             x.translation = t;
             return x;
           }),
           py::arg("rotation"), py::arg("translation"))
      .def_readwrite("rotation", &RigidTransform::rotation)
      .def_readwrite("translation", &RigidTransform::translation)
      .def("matrix",
           [](const RigidTransform& t) {
             Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
             h.topLeftCorner<3, 3>() = t.rotation;
             h.topRightCorner<3, 1>() = t.translation;
             return h;
           })
      .def("__matmul__", [](const RigidTransform& a, const RigidTransform& b) { return compose(a, b); })
      .def("inverse", [](const RigidTransform& t) { return inverse(t); })
      .def("apply", [](const RigidTransform& t, const Eigen::Ref<const Eigen::MatrixXd>& p) {
        return Eigen::MatrixXd(apply(t, as_cloud(p)));
      });

  m.def("random_transform", &random_transform, py::arg("seed"), py::arg("max_translation") = 1.0);
  m.def("rotation_error", &rotation_error, "Geodesic angle between rotations, degrees");
  m.def("translation_error",
        [](const RigidTransform& a, const RigidTransform& b, const Eigen::Ref<const Eigen::MatrixXd>& p) {
          return translation_error(a, b, as_cloud(p));
        });
  m.def("is_rotation", &is_rotation, py::arg("r"), py::arg("tol") = 1e-9);

  m.def(
      "mul_solve",
      [](const Eigen::VectorXd& radii, const Eigen::Ref<const Eigen::MatrixXd>& beacons) {
        return mul_solve(radii, as_cloud(beacons));
      },
      py::arg("radii"), py::arg("beacons"));
  m.def(
      "mul_batch",
      [](const Eigen::MatrixXd& r, const Eigen::Ref<const Eigen::MatrixXd>& beacons) {
        return Eigen::MatrixXd(mul_batch(Mat(r), as_cloud(beacons)));
      },
      py::arg("radii"), py::arg("beacons"));
  m.def(
      "mul_oracle",
      [](const Eigen::VectorXd& radii, const Eigen::Ref<const Eigen::MatrixXd>& beacons, int restarts,
         std::uint64_t seed) {
        const MulOracleResult r = mul_oracle(radii, as_cloud(beacons), restarts, seed);
        py::dict d;
        d["position"] = r.position;
        d["objective"] = r.objective;
        d["ambiguous"] = r.ambiguous;
        d["alternate"] = r.alternate;
        d["converged_restarts"] = r.converged_restarts;
        return d;
      },
      py::arg("radii"), py::arg("beacons"), py::arg("restarts") = 20, py::arg("seed") = 0);

  m.def(
      "pro_solve",
      [](const Eigen::Ref<const Eigen::MatrixXd>& p, const Eigen::Ref<const Eigen::MatrixXd>& q,
         const Eigen::VectorXd& w) { return pro_solve(as_cloud(p), as_cloud(q), w); },
      py::arg("p"), py::arg("q"), py::arg("weights") = Eigen::VectorXd());

  py::enum_<PoseMode>(m, "PoseMode")
      .value("Random", PoseMode::Random)
      .value("Upright", PoseMode::Upright)
      .value("Fixed", PoseMode::Fixed);

  py::class_<TaskInstance>(m, "TaskInstance")
      .def_property_readonly("pa_init", [](const TaskInstance& t) { return Eigen::MatrixXd(t.pa_init); })
      .def_property_readonly("pb_init", [](const TaskInstance& t) { return Eigen::MatrixXd(t.pb_init); })
      .def_property_readonly("pa_goal", [](const TaskInstance& t) { return Eigen::MatrixXd(t.pa_goal); })
      .def_property_readonly("pb_goal", [](const TaskInstance& t) { return Eigen::MatrixXd(t.pb_goal); })
      .def_readonly("t_alpha", &TaskInstance::t_alpha)
      .def_readonly("t_beta", &TaskInstance::t_beta)
      .def_readonly("t_cross_gt", &TaskInstance::t_cross_gt)
      .def_readonly("family", &TaskInstance::family)
      .def_readonly("seed", &TaskInstance::seed);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("family", &Dataset::family)
      .def_readonly("seed", &Dataset::seed)
      .def_readonly("demos", &Dataset::demos)
      .def_readonly("evals", &Dataset::evals);

  m.def("family_names", &family_names);
  m.def(
      "make_dataset",
      [](const std::string& family, std::uint64_t seed, int demos, int evals, int n_points, double variation,
         double max_translation, PoseMode eval_poses, bool eval_on_demo_geometry) {
        DatasetSpec s;
        s.family = family;
        s.seed = seed;
        s.demos = demos;
        s.evals = evals;
        s.n_points = n_points;
        s.variation = variation;
        s.max_translation = max_translation;
        s.eval_poses = eval_poses;
        s.eval_on_demo_geometry = eval_on_demo_geometry;
        return make_dataset(s);
      },
      py::arg("family") = "ring_on_peg", py::arg("seed") = 0, py::arg("demos") = 10, py::arg("evals") = 100,
      py::arg("n_points") = 256, py::arg("variation") = 0.05, py::arg("max_translation") = 1.0,
      py::arg("eval_poses") = PoseMode::Random, py::arg("eval_on_demo_geometry") = false);
  m.def("dataset_read", &dataset_read);
  m.def("dataset_write", &dataset_write);
  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("stream"), py::arg("index") = 0);

  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init<>())
      .def_readwrite("k_neighbors", &EncoderConfig::k_neighbors)
      .def_readwrite("d", &EncoderConfig::d)
      .def_readwrite("hidden", &EncoderConfig::hidden)
      .def_readwrite("heads", &EncoderConfig::heads)
      .def_readwrite("kernel_hidden1", &EncoderConfig::kernel_hidden1)
      .def_readwrite("kernel_hidden2", &EncoderConfig::kernel_hidden2)
      .def_readwrite("frame_coordinates", &EncoderConfig::frame_coordinates)
      .def_readwrite("share_encoders", &EncoderConfig::share_encoders);

  py::class_<EncoderParams>(m, "EncoderParams")
      .def_static("init", &EncoderParams::init, py::arg("config"), py::arg("seed"))
      .def_readonly("config", &EncoderParams::config)
      .def("parameter_count", &EncoderParams::parameter_count)
      .def("tensor_names",
           [](const EncoderParams& p) {
             std::vector<std::string> names;
             for (const auto& [k, v] : p.tensors) names.push_back(k);
             return names;
           })
      .def("tensor", [](const EncoderParams& p, const std::string& name) { return Eigen::MatrixXd(p.at(name)); });
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);

  m.def(
      "invariant_descriptors",
      [](const Eigen::Ref<const Eigen::MatrixXd>& p, int k) {
        return Eigen::MatrixXd(invariant_descriptors(as_cloud(p), k));
      },
      py::arg("points"), py::arg("k_neighbors") = 8);

  py::class_<CrossPoseResult>(m, "CrossPoseResult")
      .def_readonly("transform", &CrossPoseResult::transform)
      .def_property_readonly("predicted_goals",
                             [](const CrossPoseResult& r) { return Eigen::MatrixXd(r.predicted_goals); })
      .def_readonly("rows", &CrossPoseResult::rows)
      .def_readonly("cols", &CrossPoseResult::cols)
      .def_property_readonly("kernel", [](const CrossPoseResult& r) { return Eigen::MatrixXd(r.kernel); });
  m.def(
      "cross_pose",
      [](const Eigen::Ref<const Eigen::MatrixXd>& pa, const Eigen::Ref<const Eigen::MatrixXd>& pb,
         const EncoderParams& params, int sample_k, std::uint64_t seed) {
        return cross_pose(as_cloud(pa), as_cloud(pb), params, sample_k, seed);
      },
      py::arg("pa"), py::arg("pb"), py::arg("params"), py::arg("sample_k") = 256, py::arg("seed") = 0);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("sample_k", &TrainConfig::sample_k)
      .def_readwrite("monitor_sample_k", &TrainConfig::monitor_sample_k)
      .def_readwrite("final_lr_scale", &TrainConfig::final_lr_scale)
      .def_readwrite("jitter", &TrainConfig::jitter)
      .def_readwrite("lambda_disp", &TrainConfig::lambda_disp)
      .def_readwrite("lambda_corr", &TrainConfig::lambda_corr)
      .def_readwrite("lambda_cons", &TrainConfig::lambda_cons)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("encoder", &TrainConfig::encoder);

  py::class_<EpochLog>(m, "EpochLog")
      .def_readonly("epoch", &EpochLog::epoch)
      .def_readonly("loss_corr", &EpochLog::loss_corr)
      .def_readonly("loss_cons", &EpochLog::loss_cons)
      .def_readonly("loss_disp", &EpochLog::loss_disp)
      .def_readonly("rot_err_deg", &EpochLog::rot_err_deg)
      .def_readonly("trans_err", &EpochLog::trans_err)
      .def_readonly("seconds", &EpochLog::seconds);
  m.def(
      "train",
      [](const std::vector<TaskInstance>& demos, const TrainConfig& cfg,
         const std::function<void(const EpochLog&)>& on_epoch) {
        py::gil_scoped_release release;
        std::function<void(const EpochLog&)> cb;
        if (on_epoch) {
          cb = [&](const EpochLog& e) {
            py::gil_scoped_acquire acquire;
            on_epoch(e);
          };
        }
        return train(demos, cfg, nullptr, cb);
      },
      py::arg("demos"), py::arg("config"), py::arg("on_epoch") = nullptr);

  m.def(
      "evaluate",
      [](const std::vector<TaskInstance>& instances, const EncoderParams& params, int sample_k, std::uint64_t seed) {
        std::vector<std::pair<double, double>> out;
        for (const EvalRow& r : evaluate(instances, params, sample_k, seed)) out.emplace_back(r.rot_err_deg, r.trans_err);
        return out;
      },
      py::arg("instances"), py::arg("params"), py::arg("sample_k") = 256, py::arg("seed") = 0);

  m.def(
      "certify",
      [](const EncoderParams& params, int trials, std::uint64_t seed, bool gradients) {
        CertifyOptions o;
        o.trials = trials;
        o.seed = seed;
        o.gradients = gradients;
        const CertifyReport r = certify(params, o);
        py::list rows;
        for (const CertifyRow& row : r.rows) {
          py::dict d;
          d["name"] = row.name;
          d["pass"] = row.pass;
          d["worst"] = row.worst;
          d["tolerance"] = row.tolerance;
          d["detail"] = row.detail;
          rows.append(d);
        }
        return rows;
      },
      py::arg("params"), py::arg("trials") = 10, py::arg("seed") = 0, py::arg("gradients") = true);
}
