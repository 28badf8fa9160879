#include "shapeseg/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "shapeseg/rng.hpp"

using namespace shapeseg;
using loss::beta_schedule;
using Matrix = nn::RowMatrixX<double>;

namespace {

Matrix random_matrix(Index n, Rng& rng, double lo, double hi) {
  Matrix m(1, n);
  for (Index i = 0; i < n; ++i) m(0, i) = rng.uniform(lo, hi);
  return m;
}

// central finite differences over every input entry
template <typename LossFn>
void check_grad_fd(const Matrix& x, const Matrix& grad, LossFn f, double rel_tol = 1e-4) {
  const double h = 1e-5;
  for (Index i = 0; i < x.size(); ++i) {
    Matrix xp = x;
    xp(0, i) += h;
    const double up = f(xp);
    xp(0, i) -= 2 * h;
    const double dn = f(xp);
    const double fd = (up - dn) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad(0, i)), 1e-6});
    ASSERT_LE(std::abs(grad(0, i) - fd), rel_tol * denom + 1e-10) << "entry " << i;
  }
}

}  // namespace

TEST(DiceLoss, PerfectOverlapIsNearZero) {
  Rng rng(1);
  Matrix y(1, 64);
  for (Index i = 0; i < 64; ++i) y(0, i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
  const double l = loss::dice_loss(y, y);
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-5);
}

TEST(DiceLoss, UniformHalfPrediction) {
  // m = 0.5 everywhere against a half-full mask: 1 - (V/2)/(V) = 1/2;
  // against an all-ones mask: 1 - V/(1.5 V) = 1/3
  const Index v = 64;
  Matrix m = Matrix::Constant(1, v, 0.5);
  Matrix half = Matrix::Zero(1, v);
  for (Index i = 0; i < v / 2; ++i) half(0, i) = 1.0;
  EXPECT_NEAR(loss::dice_loss(m, half), 0.5, 1e-6);
  Matrix ones = Matrix::Ones(1, v);
  EXPECT_NEAR(loss::dice_loss(m, ones), 1.0 / 3.0, 1e-6);
}

TEST(DiceLoss, RangeAndShapeMismatch) {
  Rng rng(2);
  for (int c = 0; c < 20; ++c) {
    const Matrix m = random_matrix(32, rng, 0.0, 1.0);
    Matrix y(1, 32);
    for (Index i = 0; i < 32; ++i) y(0, i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double l = loss::dice_loss(m, y);
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, 1.0);
  }
  Matrix a(1, 8), b(1, 9);
  EXPECT_THROW(loss::dice_loss(a, b), std::invalid_argument);
}

TEST(DiceLoss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (int c = 0; c < 5; ++c) {
    const Matrix m = random_matrix(64, rng, 0.05, 0.95);
    Matrix y(1, 64);
    for (Index i = 0; i < 64; ++i) y(0, i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    Matrix g;
    loss::dice_loss_grad(m, y, g);
    check_grad_fd(m, g, [&](const Matrix& mm) { return loss::dice_loss(mm, y); });
  }
}

TEST(MseLoss, KnownValues) {
  Matrix s = Matrix::Zero(1, 27);
  Matrix z = Matrix::Ones(1, 27);
  EXPECT_DOUBLE_EQ(loss::mse_loss(s, z), 1.0);
  EXPECT_DOUBLE_EQ(loss::mse_loss(z, z), 0.0);
}

TEST(MseLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const Matrix s = random_matrix(64, rng, -1.0, 1.0);
  const Matrix z = random_matrix(64, rng, -1.0, 1.0);
  Matrix g;
  loss::mse_loss_grad(s, z, g);
  // analytic 2(s - z)/V
  for (Index i = 0; i < s.size(); ++i) {
    ASSERT_NEAR(g(0, i), 2.0 * (s(0, i) - z(0, i)) / 64.0, 1e-12);
  }
  check_grad_fd(s, g, [&](const Matrix& ss) { return loss::mse_loss(ss, z); }, 1e-6);
}

TEST(SupervisedLoss, CombinesWithAlpha) {
  Rng rng(5);
  const Matrix m = random_matrix(27, rng, 0.0, 1.0);
  Matrix y(1, 27);
  for (Index i = 0; i < 27; ++i) y(0, i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const Matrix s = random_matrix(27, rng, -1.0, 1.0);
  const Matrix z = random_matrix(27, rng, -1.0, 1.0);
  const double dice = loss::dice_loss(m, y);
  const double mse = loss::mse_loss(s, z);
  EXPECT_NEAR(loss::supervised_loss(m, y, s, z, 0.3), dice + 0.3 * mse, 1e-12);
  EXPECT_NEAR(loss::supervised_loss(m, y, s, z, 0.0), dice, 1e-12);
  // the quoted operating point: alpha 0.3, dice 0.2, mse 0.5 -> 0.35
  EXPECT_DOUBLE_EQ(0.2 + 0.3 * 0.5, 0.35);
}

TEST(AdversarialLosses, ClosedFormValues) {
  const std::vector<double> half{0.5, 0.5};
  EXPECT_NEAR(loss::discriminator_loss(half, half), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(loss::generator_loss(half), std::log(2.0), 1e-12);
  const std::vector<double> strong_lab{1.0 - 1e-7};
  const std::vector<double> weak_unlab{1e-7};
  EXPECT_NEAR(loss::discriminator_loss(strong_lab, weak_unlab), 0.0, 1e-6);
  EXPECT_NEAR(loss::generator_loss(strong_lab), 0.0, 1e-6);
}

TEST(AdversarialLosses, GradientSignsAndMonotonicity) {
  std::vector<double> gl, gu;
  loss::discriminator_loss_grad<double>({0.3, 0.8}, {0.4, 0.6}, gl, gu);
  for (const double g : gl) EXPECT_LT(g, 0.0);  // pushing d_labeled up reduces loss
  for (const double g : gu) EXPECT_GT(g, 0.0);  // pushing d_unlabeled up raises it
  // generator loss strictly decreasing in each probability
  EXPECT_GT(loss::generator_loss<double>({0.4}), loss::generator_loss<double>({0.5}));
  EXPECT_GT(loss::generator_loss<double>({0.5, 0.2}), loss::generator_loss<double>({0.5, 0.3}));
}

TEST(AdversarialLosses, OpposingObjectives) {
  // with d_labeled fixed, the discriminator improves as d_unlabeled drops
  // while the generator worsens
  const std::vector<double> lab{0.8};
  double prev_d = loss::discriminator_loss(lab, std::vector<double>{0.9});
  double prev_g = loss::generator_loss(std::vector<double>{0.9});
  for (const double d : {0.5, 0.2, 0.05}) {
    const double cur_d = loss::discriminator_loss(lab, std::vector<double>{d});
    const double cur_g = loss::generator_loss(std::vector<double>{d});
    EXPECT_LT(cur_d, prev_d);
    EXPECT_GT(cur_g, prev_g);
    prev_d = cur_d;
    prev_g = cur_g;
  }
}

TEST(AdversarialLosses, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  std::vector<double> dl(3), du(4);
  for (auto& d : dl) d = rng.uniform(0.05, 0.95);
  for (auto& d : du) d = rng.uniform(0.05, 0.95);
  std::vector<double> gl, gu, gg;
  loss::discriminator_loss_grad(dl, du, gl, gu);
  loss::generator_loss_grad(du, gg);
  const double h = 1e-6;
  for (std::size_t i = 0; i < dl.size(); ++i) {
    auto d2 = dl;
    d2[i] += h;
    const double up = loss::discriminator_loss(d2, du);
    d2[i] -= 2 * h;
    const double dn = loss::discriminator_loss(d2, du);
    EXPECT_NEAR(gl[i], (up - dn) / (2 * h), 1e-4 * std::max(1.0, std::abs(gl[i])));
  }
  for (std::size_t i = 0; i < du.size(); ++i) {
    auto d2 = du;
    d2[i] += h;
    double up = loss::discriminator_loss(dl, d2);
    double ug = loss::generator_loss(d2);
    d2[i] -= 2 * h;
    double dn = loss::discriminator_loss(dl, d2);
    double dg = loss::generator_loss(d2);
    EXPECT_NEAR(gu[i], (up - dn) / (2 * h), 1e-4 * std::max(1.0, std::abs(gu[i])));
    EXPECT_NEAR(gg[i], (ug - dg) / (2 * h), 1e-4 * std::max(1.0, std::abs(gg[i])));
  }
}

TEST(BetaSchedule, PinnedValues) {
  EXPECT_DOUBLE_EQ(beta_schedule(6000, 6000, 0.001), 0.001);
  EXPECT_NEAR(beta_schedule(0, 6000, 0.001), 0.001 * std::exp(-5.0), 1e-15);
  EXPECT_NEAR(beta_schedule(3000, 6000, 0.001), 0.001 * std::exp(-1.25), 1e-15);
  EXPECT_NEAR(beta_schedule(0, 6000, 0.001), 6.7379469990854670e-06, 1e-12);
  EXPECT_NEAR(beta_schedule(3000, 6000, 0.001), 2.8650479686019009e-04, 1e-12);
  // clamped beyond the horizon
  EXPECT_DOUBLE_EQ(beta_schedule(9000, 6000, 0.001), 0.001);
}

TEST(BetaSchedule, MonotoneNonDecreasing) {
  double prev = -1.0;
  for (int t = 0; t <= 1000; ++t) {
    const double b = beta_schedule(t, 1000, 0.001);
    EXPECT_GE(b, prev);
    prev = b;
  }
  EXPECT_DOUBLE_EQ(prev, 0.001);
}
