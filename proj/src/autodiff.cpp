#include "reldist/autodiff.hpp"

#include <cmath>
#include <mutex>

#if defined(__AVX2__) || defined(__AVX512F__)
#include <immintrin.h>
#endif
#include <string>

#include "reldist/error.hpp"
#include "reldist/linalg3.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace reldist {

void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw Error(ErrorCode::NotOnTape, "operands live on different tapes");
  }
}

Mat& check_finite(Mat& m, const char* op) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFinite, std::string(op) + " produced a non-finite value");
  return m;
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

#if defined(__AVX512F__)

namespace {

using Vd = __m512d;
using Mask = __mmask8;
constexpr int kLanes = 8;
constexpr Mask kFull = 0xFF;
Mask lane_mask(Eigen::Index n) { return static_cast<Mask>((1u << n) - 1u); }
Vd load_full(const double* p) { return _mm512_loadu_pd(p); }
Vd load(const double* p, Mask m) { return _mm512_maskz_loadu_pd(m, p); }
void store(double* p, Vd v, Mask m) {
  if (m == kFull) {
    _mm512_storeu_pd(p, v);
  } else {
    _mm512_mask_storeu_pd(p, m, v);
  }
}
Vd broadcast(double s) { return _mm512_set1_pd(s); }
Vd fmadd(Vd a, Vd b, Vd c) { return _mm512_fmadd_pd(a, b, c); }
Vd zero() { return _mm512_setzero_pd(); }

}  // namespace

#define RELDIST_SIMD_MATMUL 1
#elif defined(__AVX2__) && defined(__FMA__)

namespace {

using Vd = __m256d;
using Mask = __m256i;
constexpr int kLanes = 4;
const Mask kFull = _mm256_set1_epi64x(-1);
Mask lane_mask(Eigen::Index n) { return _mm256_set_epi64x(n > 3 ? -1 : 0, n > 2 ? -1 : 0, n > 1 ? -1 : 0, -1); }
bool full(Mask m) { return _mm256_testc_si256(m, kFull); }
Vd load_full(const double* p) { return _mm256_loadu_pd(p); }
Vd load(const double* p, Mask m) { return _mm256_maskload_pd(p, m); }
void store(double* p, Vd v, Mask m) {
  if (full(m)) {
    _mm256_storeu_pd(p, v);
  } else {
    _mm256_maskstore_pd(p, m, v);
  }
}
Vd broadcast(double s) { return _mm256_set1_pd(s); }
Vd fmadd(Vd a, Vd b, Vd c) { return _mm256_fmadd_pd(a, b, c); }
Vd zero() { return _mm256_setzero_pd(); }

}  // namespace

#define RELDIST_SIMD_MATMUL 1
#endif

#if defined(RELDIST_SIMD_MATMUL)

namespace {

// R rows of C times NV vectors of columns, accumulated in registers; only the
// last vector is masked.
template <int R, int NV>
void matmul_tile(const double* a, Eigen::Index kk, const double* b, Eigen::Index n, double* c, Mask tail) {
  Vd acc[R][NV];
  for (int r = 0; r < R; ++r) {
    for (int v = 0; v < NV; ++v) acc[r][v] = zero();
  }
  for (Eigen::Index k = 0; k < kk; ++k) {
    Vd bv[NV];
    for (int v = 0; v + 1 < NV; ++v) bv[v] = load_full(b + k * n + v * kLanes);
    bv[NV - 1] = load(b + k * n + (NV - 1) * kLanes, tail);
    for (int r = 0; r < R; ++r) {
      const Vd s = broadcast(a[r * kk + k]);
      for (int v = 0; v < NV; ++v) acc[r][v] = fmadd(s, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r) {
    for (int v = 0; v < NV; ++v) store(c + r * n + v * kLanes, acc[r][v], v == NV - 1 ? tail : kFull);
  }
}

template <int R>
void matmul_row_block(const double* a, Eigen::Index kk, const double* b, Eigen::Index n, double* c) {
  Eigen::Index j = 0;
  for (; j + 2 * kLanes <= n; j += 2 * kLanes) matmul_tile<R, 2>(a, kk, b + j, n, c + j, kFull);
  const Eigen::Index rest = n - j;
  if (rest > kLanes) {
    matmul_tile<R, 2>(a, kk, b + j, n, c + j, lane_mask(rest - kLanes));
  } else if (rest > 0) {
    matmul_tile<R, 1>(a, kk, b + j, n, c + j, lane_mask(rest));
  }
}

}  // namespace

void matmul_rows(const Mat& a, const Mat& b, Mat& c) {
  constexpr int kRows = 6;
  const Eigen::Index m = a.rows(), kk = a.cols(), n = b.cols();
  c.resize(m, n);
  if (kk == 0) {
    c.setZero();
    return;
  }
  Eigen::Index i = 0;
  for (; i + kRows <= m; i += kRows) matmul_row_block<kRows>(a.data() + i * kk, kk, b.data(), n, c.data() + i * n);
  for (; i < m; ++i) matmul_row_block<1>(a.data() + i * kk, kk, b.data(), n, c.data() + i * n);
}

#else

void matmul_rows(const Mat& a, const Mat& b, Mat& c) {
  const Eigen::Index m = a.rows();
  const Eigen::Index kk = a.cols();
  const Eigen::Index n = b.cols();
  c.setZero(m, n);
  const double* bp = b.data();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double* ai = a.data() + i * kk;
    double* ci = c.data() + i * n;
    for (Eigen::Index k = 0; k < kk; ++k) {
      const double s = ai[k];
      const double* bk = bp + k * n;
      for (Eigen::Index j = 0; j < n; ++j) ci[j] = std::fma(s, bk[j], ci[j]);
    }
  }
}

#endif

// ---------------------------------------------------------------- Var / Tape

const Mat& Var::value() const {
  if (!tape_) throw Error(ErrorCode::NotOnTape, "empty variable");
  return tape_->value(id_);
}

Mat Var::grad() const {
  if (!tape_) throw Error(ErrorCode::NotOnTape, "empty variable");
  return tape_->grad(id_);
}

double Var::item() const {
  const Mat& v = value();
  if (v.size() != 1) throw Error(ErrorCode::NotScalar, "item() on " + shape_str(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Mat value, bool requires_grad) {
  check_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), Mat(), requires_grad, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Mat value, const std::vector<Var>& parents, Backprop fn) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw Error(ErrorCode::NotOnTape, "operand belongs to another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error(ErrorCode::NotOnTape, "loss was not produced on this tape");
  if (loss.value().size() != 1) throw Error(ErrorCode::NotScalar, "loss is " + shape_str(loss.value()));
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Mat::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.backprop || n.grad.size() == 0) continue;
    const Mat g = n.grad;
    n.backprop(*this, g);
  }
}

// ---------------------------------------------------------------- ops

namespace ad {

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  Mat v = a.value() + b.value();
  check_finite(v, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(v), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  Mat v = a.value() - b.value();
  check_finite(v, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(v), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  Mat v = a.value().cwiseProduct(b.value());
  check_finite(v, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(v), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Mat v;
  matmul_rows(a.value(), b.value(), v);
  check_finite(v, "matmul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(v), {a, b}, [ia, ib](Tape& t, const Mat& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var transpose(const Var& a) {
  Mat v = a.value().transpose();
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Mat& g) { t.accumulate(ia, g.transpose()); });
}

Var sum(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  check_finite(v, "sum");
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(v), {a}, [ia, r, c](Tape& t, const Mat& g) {
    t.accumulate(ia, Mat::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_rows(const Var& a) {
  Mat v = a.value().colwise().sum();
  check_finite(v, "sum_rows");
  const int ia = a.id();
  const Eigen::Index r = a.rows();
  return a.tape()->record(std::move(v), {a}, [ia, r](Tape& t, const Mat& g) {
    t.accumulate(ia, g.replicate(r, 1));
  });
}

Var mean_rows(const Var& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

Var sum_cols(const Var& a) {
  Mat v = a.value().rowwise().sum();
  check_finite(v, "sum_cols");
  const int ia = a.id();
  const Eigen::Index c = a.cols();
  return a.tape()->record(std::move(v), {a}, [ia, c](Tape& t, const Mat& g) {
    t.accumulate(ia, g.replicate(1, c));
  });
}

Var mean_cols(const Var& a) { return scale(sum_cols(a), 1.0 / static_cast<double>(a.cols())); }

Var broadcast_rows(const Var& a, Eigen::Index rows) {
  if (a.rows() != 1) throw Error(ErrorCode::ShapeMismatch, "broadcast_rows expects one row, got " + shape_str(a.value()));
  Mat v = a.value().replicate(rows, 1);
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, g.colwise().sum());
  });
}

Var broadcast_cols(const Var& a, Eigen::Index cols) {
  if (a.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "broadcast_cols expects one column, got " + shape_str(a.value()));
  Mat v = a.value().replicate(1, cols);
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, g.rowwise().sum());
  });
}

Var add_row(const Var& x, const Var& b) {
  require_same_tape(x, b);
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "add_row: " + shape_str(x.value()) + " + " + shape_str(b.value()));
  }
  Mat v = x.value();
  v.rowwise() += b.value().row(0);
  check_finite(v, "add_row");
  const int ix = x.id(), ib = b.id();
  return x.tape()->record(std::move(v), {x, b}, [ix, ib](Tape& t, const Mat& g) {
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Var softplus(const Var& a) {
  Mat v = a.value().unaryExpr([](double x) { return stable_softplus(x); });
  check_finite(v, "softplus");
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr([](double x) { return sigmoid(x); })));
  });
}

Var relu(const Var& a) {
  Mat v = a.value().cwiseMax(0.0);
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Mat& g) {
    const Mat& x = t.value(ia);
    Mat d = g;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!(x.data()[i] > 0.0)) d.data()[i] = 0.0;
    }
    t.accumulate(ia, d);
  });
}

Var softmax_rows(const Var& a) {
  const Mat& x = a.value();
  Mat v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      v(i, j) = std::exp(x(i, j) - m);
      s += v(i, j);
    }
    v.row(i) /= s;
  }
  check_finite(v, "softmax_rows");
  const int ia = a.id();
  const int io = a.tape()->next_id();
  return a.tape()->record(std::move(v), {a}, [ia, io](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    Mat d = g.cwiseProduct(y);
    const Eigen::VectorXd rs = d.rowwise().sum();
    d -= y.cwiseProduct(rs.replicate(1, y.cols()));
    t.accumulate(ia, d);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != r) throw Error(ErrorCode::ShapeMismatch, "concat_cols row mismatch");
    c += p.cols();
  }
  Mat v(r, c);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return parts[0].tape()->record(std::move(v), parts, [ids, widths](Tape& t, const Mat& g) {
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleCols(o, widths[k]));
      o += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    if (p.cols() != c) throw Error(ErrorCode::ShapeMismatch, "concat_rows column mismatch");
    r += p.rows();
  }
  Mat v(r, c);
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  return parts[0].tape()->record(std::move(v), parts, [ids, heights](Tape& t, const Mat& g) {
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleRows(o, heights[k]));
      o += heights[k];
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > a.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_cols out of range on " + shape_str(a.value()));
  }
  Mat v = a.value().middleCols(start, count);
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(v), {a}, [ia, r, c, start, count](Tape& t, const Mat& g) {
    Mat d = Mat::Zero(r, c);
    d.middleCols(start, count) = g;
    t.accumulate(ia, d);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_rows out of range on " + shape_str(a.value()));
  }
  Mat v = a.value().middleRows(start, count);
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(v), {a}, [ia, r, c, start, count](Tape& t, const Mat& g) {
    Mat d = Mat::Zero(r, c);
    d.middleRows(start, count) = g;
    t.accumulate(ia, d);
  });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat v(static_cast<Eigen::Index>(idx.size()), c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= r) throw Error(ErrorCode::ShapeMismatch, "gather_rows index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia, r, c, idx](Tape& t, const Mat& g) {
    Mat d = Mat::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, d);
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw Error(ErrorCode::ShapeMismatch, "reshape changes element count");
  Mat v = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(v), {a}, [ia, r, c](Tape& t, const Mat& g) {
    t.accumulate(ia, Eigen::Map<const Mat>(g.data(), r, c));
  });
}

Var square(const Var& a) {
  Mat v = a.value().cwiseAbs2();
  check_finite(v, "square");
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
  });
}

Var sqrt(const Var& a) {
  if ((a.value().array() < 0.0).any()) throw Error(ErrorCode::NonFinite, "sqrt of a negative value");
  Mat v = a.value().cwiseSqrt();
  const int ia = a.id();
  const int io = a.tape()->next_id();
  return a.tape()->record(std::move(v), {a}, [ia, io](Tape& t, const Mat& g) {
    Mat d = g.cwiseQuotient(2.0 * t.value(io));
    check_finite(d, "sqrt adjoint");
    t.accumulate(ia, d);
  });
}

Var inverse3(const Var& a) {
  if (a.rows() != 3 || a.cols() != 3) throw Error(ErrorCode::ShapeMismatch, "inverse3 of " + shape_str(a.value()));
  const Mat3 m = a.value();
  const double cond = condition3(m);
  if (!(cond < 1e12)) {
    throw Error(ErrorCode::SingularMatrix, "3x3 inverse with condition number " + std::to_string(cond));
  }
  Mat v = reldist::inverse3(m);
  check_finite(v, "inverse3");
  const int ia = a.id();
  const int io = a.tape()->next_id();
  return a.tape()->record(std::move(v), {a}, [ia, io](Tape& t, const Mat& g) {
    const Mat& inv = t.value(io);
    t.accumulate(ia, -(inv.transpose() * g * inv.transpose()));
  });
}

Var scale(const Var& a, double s) {
  Mat v = a.value() * s;
  check_finite(v, "scale");
  const int ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

Var div_scalar(const Var& a, const Var& s) {
  require_same_tape(a, s);
  if (s.value().size() != 1) throw Error(ErrorCode::NotScalar, "div_scalar divisor is " + shape_str(s.value()));
  const double d = s.value()(0, 0);
  Mat v = a.value() / d;
  check_finite(v, "div_scalar");
  const int ia = a.id(), is = s.id();
  return a.tape()->record(std::move(v), {a, s}, [ia, is](Tape& t, const Mat& g) {
    const double dv = t.value(is)(0, 0);
    if (t.requires_grad(ia)) t.accumulate(ia, g / dv);
    if (t.requires_grad(is)) {
      Mat ds(1, 1);
      ds(0, 0) = -g.cwiseProduct(t.value(ia)).sum() / (dv * dv);
      t.accumulate(is, ds);
    }
  });
}

Var pair_add(const Var& u, const Var& v) {
  require_same_tape(u, v);
  if (u.cols() != v.cols()) throw Error(ErrorCode::ShapeMismatch, "pair_add width mismatch");
  const Eigen::Index m = u.rows(), n = v.rows(), h = u.cols();
  Mat out(m * n, h);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out.row(i * n + j) = u.value().row(i) + v.value().row(j);
  }
  check_finite(out, "pair_add");
  const int iu = u.id(), iv = v.id();
  return u.tape()->record(std::move(out), {u, v}, [iu, iv, m, n, h](Tape& t, const Mat& g) {
    if (t.requires_grad(iu)) {
      Mat du(m, h);
      for (Eigen::Index i = 0; i < m; ++i) du.row(i) = g.middleRows(i * n, n).colwise().sum();
      t.accumulate(iu, du);
    }
    if (t.requires_grad(iv)) {
      Mat dv = Mat::Zero(n, h);
      for (Eigen::Index i = 0; i < m; ++i) dv += g.middleRows(i * n, n);
      t.accumulate(iv, dv);
    }
  });
}

Var pair_relu(const Var& u, const Var& v, const Var& b) {
  require_same_tape(u, v);
  require_same_tape(u, b);
  const Eigen::Index m = u.rows(), n = v.rows(), h = u.cols();
  if (v.cols() != h || b.rows() != 1 || b.cols() != h) {
    throw Error(ErrorCode::ShapeMismatch, "pair_relu: " + shape_str(u.value()) + ", " + shape_str(v.value()) + ", " +
                                              shape_str(b.value()));
  }
  const Mat& uv = u.value();
  const Mat& vv = v.value();
  const double* bp = b.value().data();
  Mat out(m * n, h);
  bool finite = true;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double* ui = uv.data() + i * h;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double* vj = vv.data() + j * h;
      double* o = out.data() + (i * n + j) * h;
      for (Eigen::Index k = 0; k < h; ++k) {
        const double x = (ui[k] + vj[k]) + bp[k];
        finite &= std::isfinite(x);
        o[k] = x > 0.0 ? x : 0.0;
      }
    }
  }
  if (!finite) throw Error(ErrorCode::NonFinite, "pair_relu produced a non-finite value");
  const int iu = u.id(), iv = v.id(), ib = b.id();
  const int io = u.tape()->next_id();
  return u.tape()->record(std::move(out), {u, v, b}, [iu, iv, ib, io, m, n, h](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    Mat du = Mat::Zero(m, h), dv = Mat::Zero(n, h);
    for (Eigen::Index i = 0; i < m; ++i) {
      double* dui = du.data() + i * h;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double* gr = g.data() + (i * n + j) * h;
        const double* yr = y.data() + (i * n + j) * h;
        double* dvj = dv.data() + j * h;
        for (Eigen::Index k = 0; k < h; ++k) {
          const double gk = yr[k] > 0.0 ? gr[k] : 0.0;
          dui[k] += gk;
          dvj[k] += gk;
        }
      }
    }
    if (t.requires_grad(ib)) t.accumulate(ib, du.colwise().sum());
    if (t.requires_grad(iu)) t.accumulate(iu, du);
    if (t.requires_grad(iv)) t.accumulate(iv, dv);
  });
}

}  // namespace ad

double gradient_check(const std::function<Var(Tape&, const Var&)>& f, const Mat& x, double h) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return gradient_check(f, x, h, all);
}

double gradient_check(const std::function<Var(Tape&, const Var&)>& f, const Mat& x, double h,
                      const std::vector<Eigen::Index>& coords) {
  Mat analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var y = f(tape, xv);
    tape.backward(y);
    analytic = xv.grad();
  }
  auto eval = [&](const Mat& at) {
    Tape tape;
    Var xv = tape.leaf(at, false);
    return f(tape, xv).item();
  };
  double worst = 0.0;
  Mat probe = x;
  for (const Eigen::Index i : coords) {
    if (i < 0 || i >= x.size()) throw Error(ErrorCode::ShapeMismatch, "gradient_check coordinate out of range");
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double fp = eval(probe);
    probe.data()[i] = orig - h;
    const double fm = eval(probe);
    probe.data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

}  // namespace reldist
