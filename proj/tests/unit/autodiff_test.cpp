#include <array>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "reldist/autodiff.hpp"
#include "reldist/certify.hpp"
#include "reldist/error.hpp"

using namespace reldist;

namespace {

Mat randn(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Io;
}

}  // namespace

TEST(Softplus, ValueAndSlopeAtZero) {
  Tape t;
  Var x = t.leaf(Mat::Zero(1, 1), true);
  Var y = ad::softplus(x);
  EXPECT_NEAR(y.item(), std::log(2.0), 1e-15);
  t.backward(y);
  EXPECT_NEAR(x.grad()(0, 0), 0.5, 1e-15);
  const double err = gradient_check([](Tape&, const Var& v) { return ad::sum(ad::softplus(v)); }, Mat::Zero(1, 1));
  EXPECT_LT(err, 1e-6);
}

TEST(Matmul, GradientMatchesFiniteDifference) {
  const Mat b = randn(3, 2, 2);
  const double err = gradient_check(
      [&](Tape& t, const Var& a) { return ad::sum(ad::square(ad::matmul(a, t.constant(b)))); }, randn(2, 3, 1));
  EXPECT_LT(err, 1e-6);
}

TEST(Matmul, RowKernelMatchesEigen) {
  const Mat a = randn(7, 5, 3), b = randn(5, 4, 4);
  Mat c;
  matmul_rows(a, b, c);
  EXPECT_LE((c - a * b).cwiseAbs().maxCoeff(), 1e-13);
  Mat sub;
  matmul_rows(a.middleRows(2, 3), b, sub);
  EXPECT_TRUE((sub.array() == c.middleRows(2, 3).array()).all());
}

TEST(Matmul, MatchesAscendingFmaChain) {
  for (const auto& [m, k, n] : std::vector<std::array<int, 3>>{{1, 1, 1}, {7, 5, 3}, {13, 17, 9}, {6, 300, 100}, {20, 3, 33}, {5, 0, 4}}) {
    Mat a = randn(m, k, m + k + n), b = randn(k, n, 2 * m + n);
    a = a.cwiseMax(0.0);
    Mat c;
    matmul_rows(a, b, c);
    ASSERT_EQ(c.rows(), m);
    ASSERT_EQ(c.cols(), n);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int q = 0; q < k; ++q) acc = std::fma(a(i, q), b(q, j), acc);
        ASSERT_EQ(c(i, j), acc) << m << "x" << k << "x" << n << " at " << i << "," << j;
      }
    }
  }
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var x = t.leaf(randn(3, 4, 5), true);
  t.backward(ad::sum(x));
  EXPECT_TRUE((x.grad().array() == 1.0).all());
}

TEST(Backward, MseAtMinimumIsZero) {
  Tape t;
  const Mat v = randn(4, 3, 6);
  Var x = t.leaf(v, true);
  t.backward(ad::mean(ad::square(ad::sub(x, t.constant(v)))));
  EXPECT_LE(x.grad().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, FanInAccumulates) {
  Tape t;
  Var x = t.leaf(randn(2, 2, 7), true);
  t.backward(ad::sum(ad::add(x, x)));
  EXPECT_TRUE((x.grad().array() == 2.0).all());
}

TEST(Backward, ThreeLayerPerceptron) {
  const Mat w1 = randn(5, 8, 11), w2 = randn(8, 8, 12), w3 = randn(8, 1, 13);
  const Mat x0 = randn(6, 5, 14);
  auto f = [&](Tape& t, const Var& x) {
    Var h = ad::relu(ad::matmul(x, t.constant(w1)));
    h = ad::softplus(ad::matmul(h, t.constant(w2)));
    return ad::mean(ad::matmul(h, t.constant(w3)));
  };
  EXPECT_LT(gradient_check(f, x0), 1e-4);
}

TEST(Backward, Errors) {
  Tape t, other;
  Var x = t.leaf(randn(2, 2, 1), true);
  EXPECT_EQ(code_of([&] { t.backward(x); }), ErrorCode::NotScalar);
  Var y = other.leaf(Mat::Ones(1, 1), true);
  EXPECT_EQ(code_of([&] { t.backward(y); }), ErrorCode::NotOnTape);
  EXPECT_EQ(code_of([&] { ad::add(x, t.leaf(randn(3, 2, 1))); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { ad::matmul(x, t.leaf(randn(3, 2, 1))); }), ErrorCode::ShapeMismatch);
}

TEST(Inverse3, SingularRaises) {
  Tape t;
  Mat s = Mat::Zero(3, 3);
  s(0, 0) = 1.0;
  s(1, 1) = 1.0;
  EXPECT_EQ(code_of([&] { ad::inverse3(t.leaf(s)); }), ErrorCode::SingularMatrix);
}

TEST(NonFinite, Raises) {
  Tape t;
  Var x = t.leaf(Mat::Constant(1, 1, -1.0));
  EXPECT_EQ(code_of([&] { ad::sqrt(x); }), ErrorCode::NonFinite);
}

TEST(GradientCheck, Quadratic) {
  Mat x(1, 3);
  x << 1, 2, 3;
  EXPECT_LT(gradient_check([](Tape&, const Var& v) { return ad::sum(ad::square(v)); }, x), 1e-9);
}

TEST(GradientCheck, SoftplusChain) {
  auto f = [](Tape&, const Var& v) { return ad::sum(ad::softplus(ad::scale(ad::softplus(v), 2.0))); };
  EXPECT_LT(gradient_check(f, randn(3, 3, 9)), 1e-6);
}

TEST(Primitives, AllPassGradientCheckOnHundredInputs) {
  for (const auto& [name, err] : primitive_gradient_errors(100, 1)) EXPECT_LT(err, 1e-4) << name;
}

TEST(Tape, ValuesIdenticalWithAndWithoutGrad) {
  const Mat a = randn(5, 6, 21), b = randn(6, 5, 22);
  Mat values[2];
  for (int g = 0; g < 2; ++g) {
    Tape t;
    Var x = t.leaf(a, g == 1), y = t.leaf(b, g == 1);
    Var z = ad::softmax_rows(ad::matmul(x, y));
    z = ad::add(ad::sqrt(ad::add(ad::square(z), t.constant(Mat::Ones(5, 5)))), ad::relu(z));
    values[g] = ad::softplus(ad::concat_cols({z, ad::slice_cols(z, 1, 2)})).value();
  }
  EXPECT_TRUE((values[0].array() == values[1].array()).all());
}

TEST(PairAdd, RowLayout) {
  Tape t;
  const Mat u = randn(3, 2, 1), v = randn(4, 2, 2);
  const Mat out = ad::pair_add(t.leaf(u), t.leaf(v)).value();
  ASSERT_EQ(out.rows(), 12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(out.row(i * 4 + j), u.row(i) + v.row(j));
}

TEST(PairRelu, MatchesUnfusedOps) {
  Tape t;
  const Var u = t.leaf(randn(5, 7, 3)), v = t.leaf(randn(6, 7, 4)), b = t.leaf(randn(1, 7, 5));
  const Mat fused = ad::pair_relu(u, v, b).value();
  const Mat plain = ad::relu(ad::add_row(ad::pair_add(u, v), b)).value();
  EXPECT_TRUE((fused.array() == plain.array()).all());
  EXPECT_GT((fused.array() == 0.0).count(), 0);
  EXPECT_GT((fused.array() > 0.0).count(), 0);
}

TEST(PairRelu, Gradient) {
  const Mat v = randn(4, 3, 7), b = randn(1, 3, 8);
  EXPECT_LT(gradient_check([&](Tape& t, const Var& u) {
              return ad::sum(ad::square(ad::pair_relu(u, t.constant(v), t.constant(b))));
            }, randn(3, 3, 6)), 1e-6);
  const Mat u = randn(3, 3, 6);
  EXPECT_LT(gradient_check([&](Tape& t, const Var& x) {
              return ad::sum(ad::square(ad::pair_relu(t.constant(u), x, t.constant(b))));
            }, v), 1e-6);
  EXPECT_LT(gradient_check([&](Tape& t, const Var& x) {
              return ad::sum(ad::square(ad::pair_relu(t.constant(u), t.constant(v), x)));
            }, b), 1e-6);
}

TEST(PairRelu, Errors) {
  Tape t;
  EXPECT_THROW(ad::pair_relu(t.leaf(randn(2, 3, 1)), t.leaf(randn(2, 4, 2)), t.leaf(randn(1, 3, 3))), Error);
  EXPECT_THROW(ad::pair_relu(t.leaf(randn(2, 3, 1)), t.leaf(randn(2, 3, 2)), t.leaf(randn(2, 3, 3))), Error);
  Mat big = randn(2, 3, 1);
  big(0, 0) = std::numeric_limits<double>::max();
  Mat big2 = big;
  try {
    ad::pair_relu(t.leaf(big), t.leaf(big2), t.leaf(Mat::Zero(1, 3)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}
