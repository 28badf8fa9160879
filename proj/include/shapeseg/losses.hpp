#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "shapeseg/nn/feature_map.hpp"

/* Training losses and the adversarial-weight warm-up schedule. All losses
 * are per-volume means, so the weighting coefficients are independent of
 * batch and volume size. Gradient variants return the loss value and write
 * the analytic gradient with respect to the prediction. */
namespace shapeseg::loss {

using nn::RowMatrixX;

constexpr double kDiceEps = 1e-5;
constexpr double kProbClamp = 1e-7;

struct LossWeights {
  double alpha = 0.3;        // supervised sdm-regression weight
  double beta_max = 0.001;   // adversarial weight ceiling
  std::int64_t t_max = 6000; // warm-up horizon in iterations
};

// soft dice loss: 1 - (2 sum(m*y) + eps) / (sum(m) + sum(y) + eps)
template <typename Scalar>
Scalar dice_loss(const RowMatrixX<Scalar>& m, const RowMatrixX<Scalar>& y) {
  if (m.rows() != y.rows() || m.cols() != y.cols())
    throw std::invalid_argument("dice_loss: shape mismatch");
  const Scalar eps = static_cast<Scalar>(kDiceEps);
  const Scalar inter = (m.array() * y.array()).sum();
  const Scalar denom = m.sum() + y.sum() + eps;
  return Scalar(1) - (Scalar(2) * inter + eps) / denom;
}

template <typename Scalar>
Scalar dice_loss_grad(const RowMatrixX<Scalar>& m, const RowMatrixX<Scalar>& y,
                      RowMatrixX<Scalar>& grad_m) {
  if (m.rows() != y.rows() || m.cols() != y.cols())
    throw std::invalid_argument("dice_loss: shape mismatch");
  const Scalar eps = static_cast<Scalar>(kDiceEps);
  const Scalar inter = (m.array() * y.array()).sum();
  const Scalar num = Scalar(2) * inter + eps;
  const Scalar denom = m.sum() + y.sum() + eps;
  // d/dm_v [1 - num/denom] = -(2 y_v denom - num) / denom^2
  grad_m = ((num - Scalar(2) * denom * y.array()) / (denom * denom)).matrix();
  return Scalar(1) - num / denom;
}

template <typename Scalar>
Scalar mse_loss(const RowMatrixX<Scalar>& s, const RowMatrixX<Scalar>& z) {
  if (s.rows() != z.rows() || s.cols() != z.cols())
    throw std::invalid_argument("mse_loss: shape mismatch");
  return (s - z).array().square().mean();
}

template <typename Scalar>
Scalar mse_loss_grad(const RowMatrixX<Scalar>& s, const RowMatrixX<Scalar>& z,
                     RowMatrixX<Scalar>& grad_s) {
  if (s.rows() != z.rows() || s.cols() != z.cols())
    throw std::invalid_argument("mse_loss: shape mismatch");
  const Scalar n = static_cast<Scalar>(s.size());
  grad_s = Scalar(2) * (s - z) / n;
  return (s - z).array().square().mean();
}

// dice + alpha * mse, the per-volume supervised objective
template <typename Scalar>
Scalar supervised_loss(const RowMatrixX<Scalar>& m, const RowMatrixX<Scalar>& y,
                       const RowMatrixX<Scalar>& s, const RowMatrixX<Scalar>& z, double alpha) {
  return dice_loss(m, y) + static_cast<Scalar>(alpha) * mse_loss(s, z);
}

template <typename Scalar>
Scalar clamp_prob(Scalar d) {
  return std::clamp(d, static_cast<Scalar>(kProbClamp), Scalar(1) - static_cast<Scalar>(kProbClamp));
}

/* Binary cross entropy for the discriminator: labeled pairs are the positive
 * class, unlabeled the negative. Minimizing this maximizes the adversarial
 * objective over the discriminator parameters. */
template <typename Scalar>
Scalar discriminator_loss(const std::vector<Scalar>& d_labeled,
                          const std::vector<Scalar>& d_unlabeled) {
  Scalar pos = Scalar(0), neg = Scalar(0);
  for (const Scalar d : d_labeled) pos += std::log(clamp_prob(d));
  for (const Scalar d : d_unlabeled) neg += std::log(Scalar(1) - clamp_prob(d));
  return -(pos / static_cast<Scalar>(d_labeled.size()) +
           neg / static_cast<Scalar>(d_unlabeled.size()));
}

template <typename Scalar>
Scalar discriminator_loss_grad(const std::vector<Scalar>& d_labeled,
                               const std::vector<Scalar>& d_unlabeled,
                               std::vector<Scalar>& grad_labeled,
                               std::vector<Scalar>& grad_unlabeled) {
  const Scalar n = static_cast<Scalar>(d_labeled.size());
  const Scalar m = static_cast<Scalar>(d_unlabeled.size());
  grad_labeled.resize(d_labeled.size());
  grad_unlabeled.resize(d_unlabeled.size());
  for (std::size_t i = 0; i < d_labeled.size(); ++i) {
    const Scalar c = clamp_prob(d_labeled[i]);
    grad_labeled[i] = d_labeled[i] == c ? -Scalar(1) / (n * c) : Scalar(0);
  }
  for (std::size_t i = 0; i < d_unlabeled.size(); ++i) {
    const Scalar c = clamp_prob(d_unlabeled[i]);
    grad_unlabeled[i] = d_unlabeled[i] == c ? Scalar(1) / (m * (Scalar(1) - c)) : Scalar(0);
  }
  return discriminator_loss(d_labeled, d_unlabeled);
}

/* Non-saturating generator surrogate: -mean log D on the unlabeled
 * predictions only. The labeled term of the adversarial loss is dropped for
 * the generator update; it stays in the discriminator update. */
template <typename Scalar>
Scalar generator_loss(const std::vector<Scalar>& d_unlabeled) {
  Scalar acc = Scalar(0);
  for (const Scalar d : d_unlabeled) acc += std::log(clamp_prob(d));
  return -acc / static_cast<Scalar>(d_unlabeled.size());
}

template <typename Scalar>
Scalar generator_loss_grad(const std::vector<Scalar>& d_unlabeled,
                           std::vector<Scalar>& grad_unlabeled) {
  const Scalar m = static_cast<Scalar>(d_unlabeled.size());
  grad_unlabeled.resize(d_unlabeled.size());
  for (std::size_t i = 0; i < d_unlabeled.size(); ++i) {
    const Scalar c = clamp_prob(d_unlabeled[i]);
    grad_unlabeled[i] = d_unlabeled[i] == c ? -Scalar(1) / (m * c) : Scalar(0);
  }
  return generator_loss(d_unlabeled);
}

// Gaussian warm-up: beta_max * exp(-5 (1 - t/t_max)^2), clamped past t_max.
inline double beta_schedule(std::int64_t t, std::int64_t t_max, double beta_max) {
  if (t_max <= 0) throw std::invalid_argument("beta_schedule: t_max must be positive");
  if (t < 0) throw std::invalid_argument("beta_schedule: t must be non-negative");
  if (t >= t_max) return beta_max;
  const double r = 1.0 - static_cast<double>(t) / static_cast<double>(t_max);
  return beta_max * std::exp(-5.0 * r * r);
}

}  // namespace shapeseg::loss
