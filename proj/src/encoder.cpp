#include "reldist/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "reldist/error.hpp"

namespace reldist {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void EncoderConfig::validate() const {
  if (k_neighbors < 1) throw Error(ErrorCode::Config, "k_neighbors must be >= 1");
  if (d < 1 || hidden < 1 || kernel_hidden1 < 1 || kernel_hidden2 < 1) {
    throw Error(ErrorCode::Config, "layer widths must be positive");
  }
  if (heads < 1) throw Error(ErrorCode::Config, "heads must be >= 1");
  if (d % heads != 0) {
    throw Error(ErrorCode::WidthNotDivisible,
                "feature width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
}

// ---------------------------------------------------------------- params

namespace {

struct Shape {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  double init_std;  // 0 means zero init
};

std::vector<Shape> parameter_layout(const EncoderConfig& c) {
  std::vector<Shape> out;
  const auto he = [](Eigen::Index fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  const auto mlp = [&](const std::string& pre) {
    out.push_back({pre + ".W0", c.input_width(), c.hidden, he(c.input_width())});
    out.push_back({pre + ".b0", 1, c.hidden, 0.0});
    out.push_back({pre + ".W1", c.hidden, c.hidden, he(c.hidden)});
    out.push_back({pre + ".b1", 1, c.hidden, 0.0});
    out.push_back({pre + ".W2", c.hidden, c.d, he(c.hidden)});
    out.push_back({pre + ".b2", 1, c.d, 0.0});
  };
  mlp("encA");
  if (!c.share_encoders) mlp("encB");
  const double att = 1.0 / std::sqrt(static_cast<double>(c.d));
  for (const char* pre : {"attA", "attB"}) {
    for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) out.push_back({std::string(pre) + "." + w, c.d, c.d, att});
  }
  out.push_back({"ker.W1", 2 * c.d, c.kernel_hidden1, he(2 * c.d)});
  out.push_back({"ker.b1", 1, c.kernel_hidden1, 0.0});
  out.push_back({"ker.W2", c.kernel_hidden1, c.kernel_hidden2, he(c.kernel_hidden1)});
  out.push_back({"ker.b2", 1, c.kernel_hidden2, 0.0});
  out.push_back({"ker.W3", c.kernel_hidden2, 1, he(c.kernel_hidden2)});
  out.push_back({"ker.b3", 1, 1, 0.0});
  return out;
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const Shape& s : parameter_layout(config)) {
    Mat m = Mat::Zero(s.rows, s.cols);
    if (s.init_std > 0.0) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * s.init_std;
    }
    p.tensors.emplace(s.name, std::move(m));
  }
  return p;
}

const Mat& EncoderParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::InvalidArgument, "no parameter named " + name);
  return it->second;
}

Mat& EncoderParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::InvalidArgument, "no parameter named " + name);
  return it->second;
}

std::string EncoderParams::encoder_prefix(Side side) const {
  return (side == Side::A || config.share_encoders) ? "encA" : "encB";
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors) n += static_cast<std::size_t>(m.size());
  return n;
}

// ---------------------------------------------------------------- descriptors

Mat invariant_descriptors(const PointCloud& p, int k) {
  const Eigen::Index n = p.rows();
  if (k < 1 || n < k + 1) {
    throw Error(ErrorCode::TooFewPoints,
                std::to_string(n) + " points cannot supply " + std::to_string(k) + " neighbors");
  }
  const Vec3 c = centroid(p);
  Mat out(n, k + 4);
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 pi = p.row(i).transpose();
    for (Eigen::Index j = 0; j < n; ++j) {
      dist[j] = {(p.row(j).transpose() - pi).norm(), static_cast<int>(j)};
    }
    dist[i].first = -1.0;  // self sorts first
    std::partial_sort(dist.begin(), dist.begin() + k + 1, dist.end());
    out(i, 0) = (pi - c).norm();
    Vec3 mu = Vec3::Zero();
    for (int m = 1; m <= k; ++m) {
      out(i, m) = dist[m].first;
      mu += p.row(dist[m].second).transpose();
    }
    mu /= static_cast<double>(k);
    Mat3 cov = Mat3::Zero();
    for (int m = 1; m <= k; ++m) {
      const Vec3 x = p.row(dist[m].second).transpose() - mu;
      cov += x * x.transpose();
    }
    cov /= static_cast<double>(k);
    const SymEigen3 e = sym_eigen3(cov);
    for (int m = 0; m < 3; ++m) out(i, k + 1 + m) = std::max(e.values[m], 0.0);
  }
  return out;
}

Mat frame_coordinates(const PointCloud& p) {
  const Eigen::Index n = p.rows();
  if (n < 4) throw Error(ErrorCode::TooFewPoints, "frame coordinates need at least 4 points");
  const Vec3 c = centroid(p);
  Mat x(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = p.row(i) - c.transpose();
  const Mat3 cov = (x.transpose() * x) / static_cast<double>(n);
  Mat3 v = sym_eigen3(cov).vectors;

  Eigen::VectorXd d = x.rowwise().norm();
  const double dmax = d.maxCoeff();
  if (!(dmax > 0.0)) throw Error(ErrorCode::DegenerateConfiguration, "all points coincide");
  const double tau = 0.1 * dmax;
  Eigen::VectorXd w = ((d.array() - dmax) / tau).exp().matrix();
  w /= w.sum();
  const Vec3 u = (x.transpose() * w);
  const Vec3 proj = v.transpose() * u;

  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return std::abs(proj[a]) > std::abs(proj[b]); });
  const int a = std::min(order[0], order[1]);
  const int b = std::max(order[0], order[1]);
  const int t = 3 - a - b;
  v.col(a) *= proj[a] < 0.0 ? -1.0 : 1.0;
  v.col(b) *= proj[b] < 0.0 ? -1.0 : 1.0;
  v.col(t) = v.col((t + 1) % 3).cross(v.col((t + 2) % 3));
  Mat out(n, 3);
  matmul_rows(x, Mat(v), out);
  return out;
}

Mat encoder_input(const PointCloud& p, const EncoderConfig& config) {
  const Mat desc = invariant_descriptors(p, config.k_neighbors);
  if (!config.frame_coordinates) return desc;
  const Mat fc = frame_coordinates(p);
  Mat out(desc.rows(), desc.cols() + 3);
  out << desc, fc;
  return out;
}

// ---------------------------------------------------------------- tape model

ParamVars to_tape(Tape& tape, const EncoderParams& params, bool requires_grad) {
  ParamVars out;
  for (const auto& [name, m] : params.tensors) out.emplace(name, tape.leaf(m, requires_grad));
  return out;
}

namespace {

const Var& param(const ParamVars& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error(ErrorCode::InvalidArgument, "no parameter named " + name);
  return it->second;
}

Var dense(const Var& x, const Var& w, const Var& b) { return ad::add_row(ad::matmul(x, w), b); }

Var attend(const Var& q_src, const Var& kv_src, const ParamVars& p, const std::string& pre, int heads) {
  const Eigen::Index d = q_src.cols();
  if (d % heads != 0) {
    throw Error(ErrorCode::WidthNotDivisible,
                "feature width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  const Eigen::Index dh = d / heads;
  const Var q = ad::matmul(q_src, param(p, pre + ".Wq"));
  const Var k = ad::matmul(kv_src, param(p, pre + ".Wk"));
  const Var v = ad::matmul(kv_src, param(p, pre + ".Wv"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (int h = 0; h < heads; ++h) {
    const Var qh = ad::slice_cols(q, h * dh, dh);
    const Var kh = ad::slice_cols(k, h * dh, dh);
    const Var vh = ad::slice_cols(v, h * dh, dh);
    const Var att = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), scale));
    outs.push_back(ad::matmul(att, vh));
  }
  return ad::matmul(ad::concat_cols(outs), param(p, pre + ".Wo"));
}

}  // namespace

Var encode_tape(const Var& input, const ParamVars& p, const std::string& pre) {
  Var h = ad::relu(dense(input, param(p, pre + ".W0"), param(p, pre + ".b0")));
  h = ad::relu(dense(h, param(p, pre + ".W1"), param(p, pre + ".b1")));
  return dense(h, param(p, pre + ".W2"), param(p, pre + ".b2"));
}

std::pair<Var, Var> cross_attention_tape(const Var& fa, const Var& fb, const ParamVars& p, int heads) {
  if (fa.cols() != fb.cols()) throw Error(ErrorCode::ShapeMismatch, "feature widths differ");
  const Var xa = attend(fa, fb, p, "attA", heads);
  const Var xb = attend(fb, fa, p, "attB", heads);
  return {ad::add(fa, xa), ad::add(fb, xb)};
}

Var kernel_tape(const Var& fa, const Var& fb, const ParamVars& p) {
  const Eigen::Index d = fa.cols();
  if (fb.cols() != d) throw Error(ErrorCode::ShapeMismatch, "feature widths differ");
  const Var& w1 = param(p, "ker.W1");
  if (w1.rows() != 2 * d) throw Error(ErrorCode::ShapeMismatch, "kernel input width does not match features");
  const Var top = ad::slice_rows(w1, 0, d);
  const Var bot = ad::slice_rows(w1, d, d);
  const Eigen::Index m = fa.rows(), n = fb.rows();
  // First layer of MLP([x, y]) is x top + y bot; both argument orders share the
  // same four projections.
  const Var& b1 = param(p, "ker.b1");
  const auto head = [&](const Var& h1) {
    const Var h2 = ad::relu(dense(h1, param(p, "ker.W2"), param(p, "ker.b2")));
    return dense(h2, param(p, "ker.W3"), param(p, "ker.b3"));
  };
  const Var forward = head(ad::pair_relu(ad::matmul(fa, top), ad::matmul(fb, bot), b1));
  const Var swapped = head(ad::pair_relu(ad::matmul(fa, bot), ad::matmul(fb, top), b1));
  const Var sym = ad::scale(ad::add(forward, swapped), 0.5);
  return ad::reshape(ad::softplus(sym), m, n);
}

// ---------------------------------------------------------------- plain API

Mat encode(const PointCloud& p, Side side, const EncoderParams& params) {
  const Mat input = encoder_input(p, params.config);
  Tape tape;
  const ParamVars pv = to_tape(tape, params, false);
  return encode_tape(tape.constant(input), pv, params.encoder_prefix(side)).value();
}

std::pair<Mat, Mat> cross_attention(const Mat& fa, const Mat& fb, const EncoderParams& params) {
  Tape tape;
  const ParamVars pv = to_tape(tape, params, false);
  auto [a, b] = cross_attention_tape(tape.constant(fa), tape.constant(fb), pv, params.config.heads);
  return {a.value(), b.value()};
}

double kernel_eval(const Eigen::VectorXd& phi_i, const Eigen::VectorXd& phi_j, const EncoderParams& params) {
  if (phi_i.size() != params.config.d || phi_j.size() != params.config.d) {
    throw Error(ErrorCode::ShapeMismatch, "kernel arguments must have width d");
  }
  Tape tape;
  const ParamVars pv = to_tape(tape, params, false);
  const Var r = kernel_tape(tape.constant(phi_i.transpose()), tape.constant(phi_j.transpose()), pv);
  return r.item();
}

std::vector<int> sample_without_replacement(int n, int k, std::mt19937_64& rng) {
  if (k > n || k < 0) {
    throw Error(ErrorCode::SampleTooLarge, "cannot draw " + std::to_string(k) + " of " + std::to_string(n));
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::pair<std::vector<int>, std::vector<int>> sample_pairs(int na, int nb, int k, std::uint64_t seed) {
  if (k > std::min(na, nb)) {
    throw Error(ErrorCode::SampleTooLarge, "sample_k " + std::to_string(k) + " exceeds cloud sizes " +
                                               std::to_string(na) + "/" + std::to_string(nb));
  }
  std::mt19937_64 rng(seed);
  auto rows = sample_without_replacement(na, k, rng);
  auto cols = sample_without_replacement(nb, k, rng);
  return {std::move(rows), std::move(cols)};
}

KernelMatrix kernel_matrix(const Mat& fa, const Mat& fb, const EncoderParams& params, int sample_k,
                           std::uint64_t seed) {
  keep_large_blocks_on_heap();
  KernelMatrix km;
  if (sample_k < 0) throw Error(ErrorCode::InvalidArgument, "sample_k must be >= 0");
  if (sample_k == 0) {
    km.rows.resize(static_cast<std::size_t>(fa.rows()));
    km.cols.resize(static_cast<std::size_t>(fb.rows()));
    std::iota(km.rows.begin(), km.rows.end(), 0);
    std::iota(km.cols.begin(), km.cols.end(), 0);
  } else {
    std::tie(km.rows, km.cols) = sample_pairs(static_cast<int>(fa.rows()), static_cast<int>(fb.rows()), sample_k, seed);
  }
  const Eigen::Index m = static_cast<Eigen::Index>(km.rows.size());
  const Eigen::Index n = static_cast<Eigen::Index>(km.cols.size());
  Mat sa(m, fa.cols()), sb(n, fb.cols());
  for (Eigen::Index i = 0; i < m; ++i) sa.row(i) = fa.row(km.rows[i]);
  for (Eigen::Index j = 0; j < n; ++j) sb.row(j) = fb.row(km.cols[j]);

  km.entries.resize(m, n);
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 4096 / std::max<Eigen::Index>(n, 1));
  for (Eigen::Index r0 = 0; r0 < m; r0 += chunk) {
    const Eigen::Index rc = std::min(chunk, m - r0);
    Tape tape;
    const ParamVars pv = to_tape(tape, params, false);
    const Var k = kernel_tape(tape.constant(sa.middleRows(r0, rc)), tape.constant(sb), pv);
    km.entries.middleRows(r0, rc) = k.value();
  }
  return km;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'R', 'P', 'K', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

void put_array(std::ostream& os, const std::string& name, const Mat& m, bool vector_shape) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  if (vector_shape) {
    put<std::uint32_t>(os, 1);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.size()));
  } else {
    put<std::uint32_t>(os, 2);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  }
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

std::vector<std::pair<std::string, double>> config_fields(const EncoderConfig& c) {
  return {{"config.k_neighbors", c.k_neighbors},
          {"config.d", c.d},
          {"config.hidden", c.hidden},
          {"config.heads", c.heads},
          {"config.kernel_hidden1", c.kernel_hidden1},
          {"config.kernel_hidden2", c.kernel_hidden2},
          {"config.frame_coordinates", c.frame_coordinates ? 1.0 : 0.0},
          {"config.share_encoders", c.share_encoders ? 1.0 : 0.0}};
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  for (const auto& [name, value] : config_fields(params.config)) {
    put_array(os, name, Mat::Constant(1, 1, value), true);
  }
  for (const auto& [name, m] : params.tensors) put_array(os, name, m, false);
  if (!os) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::VersionMismatch, path.string() + " is not a parameter checkpoint");
  }
  std::uint32_t version = 0;
  if (!get(is, version)) throw Error(ErrorCode::Io, "truncated checkpoint header");
  if (version != kVersion) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                std::to_string(kVersion));
  }
  std::map<std::string, Mat> arrays;
  while (true) {
    std::uint32_t len = 0;
    if (!get(is, len)) break;
    if (len == 0 || len > 4096) throw Error(ErrorCode::Io, "corrupt array name length");
    std::string name(len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), len) || !get(is, rank) || rank < 1 || rank > 2) {
      throw Error(ErrorCode::Io, "corrupt array header");
    }
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) {
      if (!get(is, dims[r])) throw Error(ErrorCode::Io, "truncated array dims");
    }
    if (dims[0] * dims[1] > (1ull << 32)) throw Error(ErrorCode::Io, "array too large");
    Mat m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw Error(ErrorCode::Io, "truncated values for " + name);
    }
    arrays[name] = std::move(m);
  }

  EncoderParams p;
  auto field = [&](const std::string& key) -> double {
    auto it = arrays.find(key);
    if (it == arrays.end() || it->second.size() != 1) {
      throw Error(ErrorCode::VersionMismatch, "checkpoint lacks " + key);
    }
    const double v = it->second(0, 0);
    arrays.erase(it);
    return v;
  };
  p.config.k_neighbors = static_cast<int>(field("config.k_neighbors"));
  p.config.d = static_cast<int>(field("config.d"));
  p.config.hidden = static_cast<int>(field("config.hidden"));
  p.config.heads = static_cast<int>(field("config.heads"));
  p.config.kernel_hidden1 = static_cast<int>(field("config.kernel_hidden1"));
  p.config.kernel_hidden2 = static_cast<int>(field("config.kernel_hidden2"));
  p.config.frame_coordinates = field("config.frame_coordinates") != 0.0;
  p.config.share_encoders = field("config.share_encoders") != 0.0;
  p.config.validate();
  for (const Shape& s : parameter_layout(p.config)) {
    auto it = arrays.find(s.name);
    if (it == arrays.end()) throw Error(ErrorCode::VersionMismatch, "checkpoint lacks " + s.name);
    if (it->second.rows() != s.rows || it->second.cols() != s.cols) {
      throw Error(ErrorCode::VersionMismatch, "shape mismatch for " + s.name);
    }
    p.tensors.emplace(s.name, std::move(it->second));
    arrays.erase(it);
  }
  if (!arrays.empty()) throw Error(ErrorCode::VersionMismatch, "unexpected array " + arrays.begin()->first);
  return p;
}

}  // namespace reldist
