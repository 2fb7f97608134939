#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "reldist/encoder.hpp"
#include "reldist/procrustes.hpp"

namespace reldist {

struct CertifyOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  int n_points = 256;
  int sample_k = 64;
  /// Largest translation of the random test transforms, in scene diameters.
  double max_translation = 10.0;
  std::string family = "ring_on_peg";
  /// Run the gradient-check rows.
  bool gradients = true;
  /// Random coordinates per gradient check (0 = all).
  int gradient_coords = 8;
};

struct CertifyRow {
  std::string name;
  bool pass = false;
  double worst = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct CertifyReport {
  std::vector<CertifyRow> rows;
  bool all_pass() const;
  const CertifyRow* find(const std::string& name) const;
  std::string table() const;
};

/// Property suite: MUL equivariance and optimality, PRO two-sided
/// equivariance and det(R) = +1, kernel invariance, symmetry and positivity,
/// end-to-end equivariance of cross_pose, and gradient checks. `pro` replaces
/// pro_solve everywhere it is used (for negative controls).
CertifyReport certify(const EncoderParams& params, const CertifyOptions& options, const ProSolver& pro = {});

/// Individual suites, each returning one or more rows.
std::vector<CertifyRow> certify_mul(int trials, std::uint64_t seed);
std::vector<CertifyRow> certify_pro(int trials, std::uint64_t seed, const ProSolver& pro = {});
std::vector<CertifyRow> certify_kernel(const EncoderParams& params, const CertifyOptions& options);
std::vector<CertifyRow> certify_end_to_end(const EncoderParams& params, const CertifyOptions& options,
                                           const ProSolver& pro = {});
/// max_coords > 0 checks that many random coordinates per input instead of all.
std::vector<CertifyRow> certify_gradients(const EncoderParams& params, std::uint64_t seed, int points = 16,
                                          int max_coords = 0);

/// Gradient check of every autodiff primitive on `inputs` random inputs each;
/// returns the worst relative error per primitive name.
std::vector<std::pair<std::string, double>> primitive_gradient_errors(int inputs, std::uint64_t seed);

}  // namespace reldist
