#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>
#include <string>

#include "shapeseg/rng.hpp"
#include "shapeseg/volume.hpp"
#include "shapeseg/voxelgeom.hpp"

/* Synthetic volumetric phantoms: rotated ellipsoids with a sinusoidal radial
 * perturbation ("bumps") and additive Gaussian intensity noise. Each sample
 * carries the image, the binary mask and the normalized signed distance map
 * derived from the mask.
 */
namespace shapeseg::synth {

struct ShapeSpec {
  Eigen::Vector3d center;             // (d, h, w) voxel coordinates
  Eigen::Vector3d radii;              // per-axis radii in voxels, each >= 2
  Eigen::Vector3d euler;              // intrinsic rotation angles, radians
  double bump_amplitude = 0.0;        // radial perturbation fraction, <= 0.3
  int bump_frequency = 3;
};

struct Sample {
  std::string id;
  Volume image;                       // intensities min-max scaled to [0, 1]
  BinaryMask mask;
  Grid3<float> sdm;                   // normalized signed distance map
};

namespace detail {

inline Eigen::Matrix3d rotation(const Eigen::Vector3d& euler) {
  return (Eigen::AngleAxisd(euler[0], Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(euler[1], Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(euler[2], Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

}  // namespace detail

inline void check_spec(const ShapeSpec& spec, const VolumeShape& shape) {
  if (spec.radii.minCoeff() < 2.0) {
    throw std::invalid_argument("ShapeSpec: radii must be >= 2 voxels");
  }
  if (spec.bump_amplitude < 0.0 || spec.bump_amplitude > 0.3) {
    throw std::invalid_argument("ShapeSpec: bump_amplitude must be in [0, 0.3]");
  }
  if (spec.bump_frequency < 1) {
    throw std::invalid_argument("ShapeSpec: bump_frequency must be positive");
  }
  // conservative reach: bounding sphere of the bumped ellipsoid, 1 voxel margin
  const double reach = spec.radii.maxCoeff() * (1.0 + spec.bump_amplitude);
  for (int a = 0; a < 3; ++a) {
    const double lo = spec.center[a] - reach;
    const double hi = spec.center[a] + reach;
    if (lo < 1.0 || hi > static_cast<double>(shape.dim(a)) - 2.0) {
      throw std::invalid_argument("ShapeSpec: shape out of bounds on axis " +
                                  std::to_string(a));
    }
  }
}

// Inside test for the bumped ellipsoid in its local frame.
inline bool inside_spec(const ShapeSpec& spec, const Eigen::Matrix3d& rot_t,
                        const Eigen::Vector3d& p) {
  const Eigen::Vector3d q = rot_t * (p - spec.center);
  const Eigen::Vector3d u = q.cwiseQuotient(spec.radii);
  const double rho = u.norm();
  if (rho < 1e-12) return true;
  const Eigen::Vector3d dir = u / rho;
  const double theta = std::acos(std::clamp(dir[0], -1.0, 1.0));
  const double phi = std::atan2(dir[2], dir[1]);
  const double f = static_cast<double>(spec.bump_frequency);
  const double bump = std::sin(f * theta) * std::cos(f * phi);
  return rho <= 1.0 + spec.bump_amplitude * bump;
}

constexpr double kForegroundMean = 0.75;
constexpr double kBackgroundMean = 0.25;

/* Renders the spec into an image/mask/sdm triple. Deterministic in
 * (spec, shape, noise_level, seed); noise is drawn in raster order. */
inline Sample generate_sample(const ShapeSpec& spec, const VolumeShape& shape,
                              double noise_level, std::uint64_t seed,
                              std::string id = "sample") {
  require_valid(shape, "generate_sample");
  check_spec(spec, shape);

  Sample s;
  s.id = std::move(id);
  s.mask = BinaryMask(shape, 0);
  const Eigen::Matrix3d rot_t = detail::rotation(spec.euler).transpose();
  for (Index d = 0; d < shape.depth; ++d)
    for (Index h = 0; h < shape.height; ++h)
      for (Index w = 0; w < shape.width; ++w) {
        const Eigen::Vector3d p(static_cast<double>(d), static_cast<double>(h),
                                static_cast<double>(w));
        if (inside_spec(spec, rot_t, p)) s.mask(d, h, w) = 1;
      }

  Rng rng(seed);
  Grid3<double> img(shape);
  for (Index i = 0; i < img.size(); ++i) {
    const double base = s.mask[i] ? kForegroundMean : kBackgroundMean;
    img[i] = base + (noise_level > 0.0 ? rng.normal(0.0, noise_level) : 0.0);
  }
  const double lo = img.array().minCoeff();
  const double hi = img.array().maxCoeff();
  if (hi > lo) {
    img.array() = (img.array() - lo) / (hi - lo);
  } else {
    img.array().setZero();
  }
  s.image = img.cast<float>();

  const geom::SignedDistanceMap sdm = geom::normalize_sdm(geom::signed_distance_map(s.mask));
  s.sdm = sdm.values.cast<float>();
  return s;
}

/* Randomization ranges for dataset generation. Defaults keep every drawn spec
 * inside a grid of edge >= 24 voxels. */
struct PhantomParams {
  double noise_level = 0.1;
  double radius_frac_min = 0.18;      // fraction of the smallest grid edge
  double radius_frac_max = 0.28;
  double center_jitter_frac = 0.05;   // fraction of each grid edge
  double bump_amplitude_max = 0.3;
  int bump_frequency_min = 2;
  int bump_frequency_max = 5;
};

inline ShapeSpec random_spec(const VolumeShape& shape, const PhantomParams& p, Rng& rng) {
  ShapeSpec spec;
  const double mind = static_cast<double>(std::min({shape.depth, shape.height, shape.width}));
  for (int a = 0; a < 3; ++a) {
    const double dim = static_cast<double>(shape.dim(a));
    spec.center[a] = 0.5 * dim + rng.uniform(-1.0, 1.0) * p.center_jitter_frac * dim;
    spec.radii[a] = std::max(2.0, rng.uniform(p.radius_frac_min, p.radius_frac_max) * mind);
    spec.euler[a] = rng.uniform(0.0, 2.0 * M_PI);
  }
  spec.bump_amplitude = rng.uniform(0.0, p.bump_amplitude_max);
  spec.bump_frequency =
      p.bump_frequency_min +
      static_cast<int>(rng.uniform_int(p.bump_frequency_max - p.bump_frequency_min + 1));
  return spec;
}

}  // namespace shapeseg::synth
