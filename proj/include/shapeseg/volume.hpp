#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace shapeseg {

using Index = Eigen::Index;

/* Dense volumetric grids are stored depth-major: flat index (d*H + h)*W + w,
 * matching the on-disk "dhw" payload order. Spacing is isotropic, one voxel
 * unit per axis. */
struct VolumeShape {
  Index depth = 0;
  Index height = 0;
  Index width = 0;

  VolumeShape() = default;
  VolumeShape(Index d, Index h, Index w) : depth(d), height(h), width(w) {}

  Index voxels() const { return depth * height * width; }
  bool valid() const { return depth >= 1 && height >= 1 && width >= 1; }
  Index dim(int axis) const { return axis == 0 ? depth : (axis == 1 ? height : width); }

  bool operator==(const VolumeShape& o) const {
    return depth == o.depth && height == o.height && width == o.width;
  }
  bool operator!=(const VolumeShape& o) const { return !(*this == o); }

  std::string str() const {
    return std::to_string(depth) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

inline void require_valid(const VolumeShape& s, const char* who) {
  if (!s.valid()) {
    throw std::invalid_argument(std::string(who) + ": invalid shape " + s.str());
  }
}

template <typename T>
class Grid3 {
 public:
  using ArrayType = Eigen::Array<T, Eigen::Dynamic, 1>;

  Grid3() = default;
  explicit Grid3(const VolumeShape& shape, T fill = T{})
      : shape_(shape), data_(ArrayType::Constant(shape.voxels(), fill)) {
    require_valid(shape, "Grid3");
  }

  const VolumeShape& shape() const { return shape_; }
  Index size() const { return data_.size(); }

  Index flat(Index d, Index h, Index w) const {
    return (d * shape_.height + h) * shape_.width + w;
  }
  bool in_bounds(Index d, Index h, Index w) const {
    return d >= 0 && d < shape_.depth && h >= 0 && h < shape_.height && w >= 0 &&
           w < shape_.width;
  }

  T& operator()(Index d, Index h, Index w) { return data_[flat(d, h, w)]; }
  const T& operator()(Index d, Index h, Index w) const { return data_[flat(d, h, w)]; }
  T& operator[](Index i) { return data_[i]; }
  const T& operator[](Index i) const { return data_[i]; }

  ArrayType& array() { return data_; }
  const ArrayType& array() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  template <typename U>
  Grid3<U> cast() const {
    Grid3<U> out(shape_);
    out.array() = data_.template cast<U>();
    return out;
  }

  bool operator==(const Grid3& o) const {
    return shape_ == o.shape_ && (data_ == o.data_).all();
  }

 private:
  VolumeShape shape_;
  ArrayType data_;
};

using BinaryMask = Grid3<std::uint8_t>;
using Volume = Grid3<float>;
using DistanceField = Grid3<double>;

inline void require_same_shape(const VolumeShape& a, const VolumeShape& b, const char* who) {
  if (a != b) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.str() + " vs " +
                                b.str());
  }
}

inline Index count_foreground(const BinaryMask& mask) {
  Index n = 0;
  for (Index i = 0; i < mask.size(); ++i) n += (mask[i] != 0);
  return n;
}

}  // namespace shapeseg
