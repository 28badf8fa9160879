#pragma once

#include <Eigen/Core>

#include "shapeseg/volume.hpp"

namespace shapeseg::nn {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/* A multi-channel 3D feature map: channels x voxels, voxels flattened
 * depth-major like Grid3. Row-major storage keeps each channel contiguous,
 * which the convolution gather/scatter loops rely on. */
template <typename Scalar>
struct FeatureMap {
  VolumeShape shape;
  RowMatrixX<Scalar> values;  // channels x voxels

  FeatureMap() = default;
  FeatureMap(Index channels, const VolumeShape& s)
      : shape(s), values(RowMatrixX<Scalar>::Zero(channels, s.voxels())) {}

  Index channels() const { return values.rows(); }
  Index voxels() const { return values.cols(); }

  Scalar* channel(Index c) { return values.data() + c * values.cols(); }
  const Scalar* channel(Index c) const { return values.data() + c * values.cols(); }

  void resize(Index channels, const VolumeShape& s) {
    shape = s;
    values.setZero(channels, s.voxels());
  }

  template <typename T>
  static FeatureMap from_grid(const Grid3<T>& g) {
    FeatureMap out;
    out.shape = g.shape();
    out.values.resize(1, g.size());
    for (Index i = 0; i < g.size(); ++i) out.values(0, i) = static_cast<Scalar>(g[i]);
    return out;
  }

  Grid3<Scalar> to_grid(Index channel = 0) const {
    Grid3<Scalar> g(shape);
    for (Index i = 0; i < g.size(); ++i) g[i] = values(channel, i);
    return g;
  }
};

}  // namespace shapeseg::nn
