#include "ndoe/autodiff.hpp"
#include "ndoe/certification.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ndoe;

TEST(Record, ForwardValues) {
  Tape t;
  EXPECT_EQ(tanh(t.variable(Matrix::Zero(1, 1))).scalar(), 0.0);
  Matrix pos(1, 3);
  pos << 0.1, 2.0, 7.5;
  EXPECT_TRUE(exp(log(t.variable(pos))).value().isApprox(pos, 1e-15));
  Matrix m(2, 2);
  m << 0, 0, 1, 1;
  const Matrix l = logsumexp_rows(t.variable(m)).value();
  EXPECT_NEAR(l(0, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(l(1, 0), 1 + std::log(2.0), 1e-15);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  const Var x = t.variable(Matrix::Constant(3, 2, 1.3));
  const Gradients g = t.backward(sum(x));
  EXPECT_EQ(g[x], Matrix::Ones(3, 2));
}

TEST(Backward, SumOfProductGivesColumnSums) {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(4, 3);
  const Matrix x0 = rng.normal_matrix(3, 1);
  Tape t;
  const Var x = t.variable(x0);
  const Gradients g = t.backward(sum(matmul(t.constant(a), x)));
  EXPECT_TRUE(g[x].isApprox(a.colwise().sum().transpose(), 1e-14));

  // and central differences agree
  const double h = 1e-5;
  for (Index i = 0; i < 3; ++i) {
    Matrix xp = x0, xm = x0;
    xp(i, 0) += h;
    xm(i, 0) -= h;
    const double fd = ((a * xp).sum() - (a * xm).sum()) / (2 * h);
    EXPECT_NEAR(g[x](i, 0), fd, 1e-8);
  }
}

TEST(Backward, LogsumexpGradientIsSoftmax) {
  Matrix v(1, 4);
  v << 0.3, -2.0, 5.0, 1.0;
  Tape t;
  const Var x = t.variable(v);
  const Gradients g = t.backward(sum(logsumexp_rows(x)));
  const Matrix softmax = (v.array() - v.maxCoeff()).exp().matrix();
  EXPECT_TRUE(g[x].isApprox(softmax / softmax.sum(), 1e-14));
}

TEST(Backward, LogsumexpStableAtExtremes) {
  Matrix v(1, 2);
  v << 1000.0, 1000.0;
  Tape t;
  const Var x = t.variable(v);
  const Gradients g = t.backward(sum(logsumexp_rows(x)));
  EXPECT_TRUE(g[x].isApprox(Matrix::Constant(1, 2, 0.5)));
}

TEST(Backward, NoLeakageBetweenRoots) {
  Rng rng(2);
  const Matrix a0 = rng.normal_matrix(2, 3), b0 = rng.normal_matrix(3, 2);
  Tape shared;
  const Var a = shared.variable(a0), b = shared.variable(b0);
  const Var r1 = sum(tanh(matmul(a, b)));
  const Var r2 = sum(exp(scale(a, 0.5)));
  const Gradients g1 = shared.backward(r1);
  const Gradients g2 = shared.backward(r2);

  Tape t1;
  const Var a1 = t1.variable(a0), b1 = t1.variable(b0);
  const Gradients f1 = t1.backward(sum(tanh(matmul(a1, b1))));
  Tape t2;
  const Var a2 = t2.variable(a0);
  t2.variable(b0);
  const Gradients f2 = t2.backward(sum(exp(scale(a2, 0.5))));

  EXPECT_EQ(g1[a], f1[a1]);
  EXPECT_EQ(g1[b], f1[b1]);
  EXPECT_EQ(g2[a], f2[a2]);
  EXPECT_TRUE(g2[b].isZero(0.0));
}

TEST(Backward, OffPathNodesGetZero) {
  Tape t;
  const Var x = t.variable(Matrix::Ones(2, 2));
  const Var unused = t.variable(Matrix::Constant(2, 2, 3.0));
  const Var side = exp(unused);
  const Gradients g = t.backward(sum(x));
  EXPECT_TRUE(g[unused].isZero(0.0));
  EXPECT_TRUE(g[side].isZero(0.0));
}

TEST(Backward, FanOutAccumulates) {
  Tape t;
  const Var x = t.variable(Matrix::Constant(1, 1, 2.0));
  const Gradients g = t.backward(sum(add(hadamard(x, x), x)));  // x^2 + x
  EXPECT_DOUBLE_EQ(g[x](0, 0), 5.0);
}

TEST(Ops, ShapeErrors) {
  Tape t;
  const Var a = t.variable(Matrix::Zero(2, 3));
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_THROW(add(a, t.variable(Matrix::Zero(3, 2))), DimensionError);
  EXPECT_THROW(slice(a, 1, 2, 2), DimensionError);
  EXPECT_THROW(reshape(a, 4, 2), DimensionError);
}

TEST(GradCheck, QuadraticIsExact) {
  Rng rng(5);
  const Matrix target = rng.normal_matrix(2, 3);
  const std::vector<Matrix> params{rng.normal_matrix(2, 3)};
  const GradCheckReport r = grad_check(
      [&](Tape& t, std::span<const Var> p) {
        const Var d = p[0] - t.constant(target);
        return sum(hadamard(d, d));
      },
      params, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  const std::vector<Matrix> params{Matrix::Ones(2, 2)};
  const GradCheckReport r =
      grad_check([](Tape& t, std::span<const Var>) { return sum(t.constant(Matrix::Ones(1, 3))); }, params);
  EXPECT_EQ(r.max_rel_error, 0.0);
  const std::vector<Matrix> g =
      gradients([](Tape& t, std::span<const Var>) { return sum(t.constant(Matrix::Ones(1, 3))); }, params);
  EXPECT_TRUE(g[0].isZero(0.0));
}

TEST(Certification, EveryOpWithinTolerance) {
  for (const CertificationItem& c : certify_ops()) {
    EXPECT_TRUE(c.passed()) << c.name << " rel " << c.max_rel_error;
    EXPECT_GT(c.coordinates, 0u) << c.name;
  }
}

TEST(Certification, EveryLossWithinTolerance) {
  const std::vector<CertificationItem> items = certify_losses();
  EXPECT_GE(items.size(), 12u);
  for (const CertificationItem& c : items) EXPECT_TRUE(c.passed()) << c.name << " rel " << c.max_rel_error;
}
