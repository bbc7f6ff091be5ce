#include "ndoe/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace ndoe;

TEST(Adam, ZeroGradientZeroUpdate) {
  std::vector<Matrix> p{Matrix::Constant(2, 3, 0.7)};
  const std::vector<Matrix> g{Matrix::Zero(2, 3)};
  AdamState s(AdamConfig{}, p);
  s.adam_step(p, g);
  EXPECT_EQ(p[0], Matrix::Constant(2, 3, 0.7));
}

TEST(Adam, FirstStepIsLrTimesSign) {
  Matrix g(1, 4);
  g << 3.0, -0.2, 50.0, -1e-2;
  std::vector<Matrix> p{Matrix::Zero(1, 4)};
  AdamState s(AdamConfig{}, p);
  s.adam_step(p, std::vector<Matrix>{g});
  const double lr = 5e-4;
  for (Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(std::abs(p[0](0, i)), lr, 1e-6 * lr);
    EXPECT_EQ(std::signbit(p[0](0, i)), !std::signbit(g(0, i)));
  }
}

TEST(Adam, ConstantGradientSteps) {
  // with constant g the bias-corrected ratio stays at 1 up to eps, so the
  // step size never grows
  std::vector<Matrix> p{Matrix::Zero(1, 1)};
  AdamState s(AdamConfig{}, p);
  const std::vector<Matrix> g{Matrix::Constant(1, 1, 2.0)};
  double prev = 0, last = 1e9;
  for (int i = 0; i < 3; ++i) {
    s.adam_step(p, g);
    const double step = std::abs(p[0](0, 0) - prev);
    EXPECT_LE(step, last * (1 + 1e-12));
    last = step;
    prev = p[0](0, 0);
  }
  EXPECT_EQ(s.step_count(), 3);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  std::vector<Matrix> p{Matrix::Ones(1, 2)};
  AdamState s(AdamConfig{}, p);
  Matrix g(1, 2);
  g << 1.0, std::nan("");
  EXPECT_THROW(s.adam_step(p, std::vector<Matrix>{g}), NumericError);
  EXPECT_EQ(p[0], Matrix::Ones(1, 2));
  EXPECT_EQ(s.step_count(), 0);
}

TEST(Adam, DeterministicGivenStateAndGrads) {
  Rng rng(4);
  const std::vector<Matrix> g{rng.normal_matrix(3, 3)};
  std::vector<Matrix> p1{Matrix::Ones(3, 3)}, p2 = p1;
  AdamState a(AdamConfig{}, p1), b(AdamConfig{}, p2);
  for (int i = 0; i < 5; ++i) {
    a.adam_step(p1, g);
    b.adam_step(p2, g);
  }
  EXPECT_EQ(p1[0], p2[0]);
}

TEST(Adam, QuadraticConvergence) {
  Rng rng(8);
  Matrix target = rng.normal_matrix(1, 5);
  Matrix start = rng.normal_matrix(1, 5);
  start = target + (start - target) / (start - target).norm();  // distance 1
  std::vector<Matrix> w{start};
  AdamState s(AdamConfig{}, w);
  int steps = 0;
  while ((w[0] - target).norm() >= 1e-3 && steps < 20000) {
    s.adam_step(w, std::vector<Matrix>{2.0 * (w[0] - target)});
    ++steps;
  }
  EXPECT_LT((w[0] - target).norm(), 1e-3);
  EXPECT_LE(steps, 20000);
}

TEST(Adamax, FirstStepAndRunningMax) {
  Matrix g(1, 2);
  g << 4.0, -0.5;
  std::vector<Matrix> p{Matrix::Zero(1, 2)};
  AdamConfig cfg;
  cfg.lr = 1e-3;
  AdamState s(cfg, p);
  s.adamax_step(p, std::vector<Matrix>{g});
  EXPECT_NEAR(p[0](0, 0), -1e-3, 1e-9);
  EXPECT_NEAR(p[0](0, 1), 1e-3, 1e-9);
  s.adamax_step(p, std::vector<Matrix>{0.5 * g});
  EXPECT_DOUBLE_EQ(s.second_moment()[0](0, 0), 0.999 * 4.0);
  EXPECT_DOUBLE_EQ(s.second_moment()[0](0, 1), 0.999 * 0.5);
}

TEST(ClipGradNorm, Examples) {
  std::vector<Matrix> g{Matrix::Constant(1, 4, 5.0)};  // norm 10
  const Matrix before = g[0];
  EXPECT_NEAR(clip_grad_norm(g, 1.0), 10.0, 1e-12);
  EXPECT_TRUE(g[0].isApprox(0.1 * before, 1e-14));

  std::vector<Matrix> small{Matrix::Constant(1, 1, 0.5)};
  clip_grad_norm(small, 1.0);
  EXPECT_EQ(small[0](0, 0), 0.5);
}

TEST(ClipGradNorm, PostClipNorm) {
  Rng rng(2);
  for (double scale : {0.01, 0.3, 3.0, 400.0}) {
    std::vector<Matrix> g{scale * rng.normal_matrix(3, 2), scale * rng.normal_matrix(1, 4)};
    const double before = global_norm(g);
    clip_grad_norm(g, 1.0);
    EXPECT_NEAR(global_norm(g), std::min(before, 1.0), 1e-12);
  }
}
