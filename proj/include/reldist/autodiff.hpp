#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace reldist {

/// Dense row-major matrix. Tensors on the tape are rank 2; vectors are 1 x n
/// or n x 1 and scalars are 1 x 1.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C = A * B computed row by row with k summed in ascending order using fused
/// multiply-add. Each output row depends only on the matching row of A, so
/// computing a subset of rows gives bit-identical values.
void matmul_rows(const Mat& a, const Mat& b, Mat& c);

/// Stops the allocator from serving large blocks with mmap and from trimming
/// the heap (once per process), so the large temporaries of kernel evaluation
/// and training reuse heap memory instead of faulting in fresh pages.
void keep_large_blocks_on_heap();

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  /// Gradient after backward(); a zero matrix when nothing flowed here.
  Mat grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const;
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Receives the gradient of the node and accumulates into its parents.
  using Backprop = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, bool requires_grad = false);
  Var constant(Mat value) { return leaf(std::move(value), false); }

  /// Records an op. The backprop closure is kept only when some parent needs a
  /// gradient; the value is the same either way.
  Var record(Mat value, const std::vector<Var>& parents, Backprop fn);
  /// Id the next recorded node will get, for closures that read their own output.
  int next_id() const { return static_cast<int>(nodes_.size()); }

  void backward(const Var& loss);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  Mat grad(int id) const;
  /// Adds g into the gradient slot of node id (no-op if it needs no gradient).
  void accumulate(int id, const Mat& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
};

namespace ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Sum of all entries, 1 x 1.
Var sum(const Var& a);
Var mean(const Var& a);
/// Reduce over rows: R x C -> 1 x C.
Var sum_rows(const Var& a);
Var mean_rows(const Var& a);
/// Reduce over columns: R x C -> R x 1.
Var sum_cols(const Var& a);
Var mean_cols(const Var& a);
/// 1 x C -> rows x C.
Var broadcast_rows(const Var& a, Eigen::Index rows);
/// R x 1 -> R x cols.
Var broadcast_cols(const Var& a, Eigen::Index cols);
/// x + row vector b added to every row.
Var add_row(const Var& x, const Var& b);
Var softplus(const Var& a);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
/// Row i of the result is row idx[i] of a; repeated indices accumulate in the adjoint.
Var gather_rows(const Var& a, const std::vector<int>& idx);
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var square(const Var& a);
Var sqrt(const Var& a);
/// 3 x 3 inverse; throws SingularMatrix when the condition number is >= 1e12.
Var inverse3(const Var& a);
Var scale(const Var& a, double s);
/// a divided by the 1 x 1 value s.
Var div_scalar(const Var& a, const Var& s);
/// (M x H, N x H) -> (M*N) x H with row i*N + j equal to u_i + v_j.
Var pair_add(const Var& u, const Var& v);
/// relu(pair_add(u, v) + b) for a 1 x H bias b, in one pass.
Var pair_relu(const Var& u, const Var& v, const Var& b);

}  // namespace ad

/// max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// f must build a 1 x 1 result from x on the given tape.
double gradient_check(const std::function<Var(Tape&, const Var&)>& f, const Mat& x, double h = 1e-5);
/// Same, restricted to the listed flat coordinates of x.
double gradient_check(const std::function<Var(Tape&, const Var&)>& f, const Mat& x, double h,
                      const std::vector<Eigen::Index>& coords);

}  // namespace reldist
