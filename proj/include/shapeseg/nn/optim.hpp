#pragma once

#include <cmath>
#include <cstdint>

#include "shapeseg/nn/feature_map.hpp"

namespace shapeseg::nn {

// SGD with classical momentum and decoupled-from-nothing L2 weight decay:
// v = mu*v + (g + wd*p); p -= lr*v
template <typename Scalar>
struct SgdMomentum {
  Scalar momentum = Scalar(0.9);
  Scalar weight_decay = Scalar(1e-4);
  VectorX<Scalar> velocity;

  void step(VectorX<Scalar>& params, const VectorX<Scalar>& grad, Scalar lr) {
    if (velocity.size() != params.size()) velocity = VectorX<Scalar>::Zero(params.size());
    velocity = momentum * velocity + grad + weight_decay * params;
    params -= lr * velocity;
  }
};

template <typename Scalar>
struct Adam {
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  std::int64_t t = 0;
  VectorX<Scalar> m, v;

  void step(VectorX<Scalar>& params, const VectorX<Scalar>& grad, Scalar lr) {
    if (m.size() != params.size()) {
      m = VectorX<Scalar>::Zero(params.size());
      v = VectorX<Scalar>::Zero(params.size());
    }
    ++t;
    m = beta1 * m + (Scalar(1) - beta1) * grad;
    v = beta2 * v + (Scalar(1) - beta2) * grad.cwiseProduct(grad);
    const Scalar bc1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(t));
    const Scalar bc2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(t));
    params.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
};

}  // namespace shapeseg::nn
