#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "reldist/autodiff.hpp"
#include "reldist/geom3.hpp"

namespace reldist {

enum class Side { A, B };

struct EncoderConfig {
  int k_neighbors = 8;
  int d = 32;
  int hidden = 64;
  int heads = 4;
  int kernel_hidden1 = 300;
  int kernel_hidden2 = 100;
  /// Append pose-normalized coordinates to the distance descriptors.
  bool frame_coordinates = true;
  /// Use one perceptron for both clouds.
  bool share_encoders = false;

  int input_width() const { return k_neighbors + 4 + (frame_coordinates ? 3 : 0); }
  void validate() const;
};

/// Named parameter arrays plus the configuration that shaped them.
struct EncoderParams {
  EncoderConfig config;
  std::map<std::string, Mat> tensors;

  /// He-initialized weights, zero biases, zero final kernel bias.
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);

  const Mat& at(const std::string& name) const;
  Mat& at(const std::string& name);
  /// Names of the perceptron used for the given side, e.g. "encA".
  std::string encoder_prefix(Side side) const;
  std::size_t parameter_count() const;
};

/// Per point: distance to centroid, k sorted nearest-neighbor distances, and
/// the three eigenvalues (descending) of the neighborhood covariance.
Mat invariant_descriptors(const PointCloud& p, int k_neighbors);

/// Coordinates in a frame built from the cloud: origin at the centroid, axes
/// along principal directions, signs fixed by a far-point anchor so the frame
/// is right-handed and moves rigidly with the cloud.
Mat frame_coordinates(const PointCloud& p);

/// Perceptron input for one cloud.
Mat encoder_input(const PointCloud& p, const EncoderConfig& config);

/// Parameters placed on a tape.
using ParamVars = std::map<std::string, Var>;
ParamVars to_tape(Tape& tape, const EncoderParams& params, bool requires_grad);

Var encode_tape(const Var& input, const ParamVars& params, const std::string& prefix);
std::pair<Var, Var> cross_attention_tape(const Var& fa, const Var& fb, const ParamVars& params, int heads);
/// Kernel between every row of fa (M x d) and every row of fb (N x d), M x N.
Var kernel_tape(const Var& fa, const Var& fb, const ParamVars& params);

Mat encode(const PointCloud& p, Side side, const EncoderParams& params);
std::pair<Mat, Mat> cross_attention(const Mat& fa, const Mat& fb, const EncoderParams& params);
double kernel_eval(const Eigen::VectorXd& phi_i, const Eigen::VectorXd& phi_j, const EncoderParams& params);

struct KernelMatrix {
  Mat entries;
  /// Source point indices of each row and column.
  std::vector<int> rows;
  std::vector<int> cols;
};

/// sample_k = 0 evaluates all pairs.
KernelMatrix kernel_matrix(const Mat& fa, const Mat& fb, const EncoderParams& params, int sample_k,
                           std::uint64_t seed);

/// k distinct indices from [0, n), in draw order.
std::vector<int> sample_without_replacement(int n, int k, std::mt19937_64& rng);

/// Samples row then column indices from one generator seeded with seed.
std::pair<std::vector<int>, std::vector<int>> sample_pairs(int na, int nb, int k, std::uint64_t seed);

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace reldist
