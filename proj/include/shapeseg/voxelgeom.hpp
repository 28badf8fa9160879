#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "shapeseg/volume.hpp"

/* Exact volumetric geometry on binary masks: Euclidean distance transforms,
 * signed distance maps, boundary extraction and connected components.
 *
 * The EDT is the separable squared-distance transform of Felzenszwalb &
 * Huttenlocher ("Distance Transforms of Sampled Functions", ToC 2012): one
 * lower-envelope-of-parabolas pass per axis. Squared distances between voxel
 * centers are integers, so the result is exact in double precision.
 */
namespace shapeseg::geom {

struct Voxel {
  Index d = 0, h = 0, w = 0;
  bool operator==(const Voxel& o) const { return d == o.d && h == o.h && w == o.w; }
};

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

/* One lower-envelope pass over a single line. f holds squared distances
 * (possibly +inf), d receives the updated squared distances. v/z are scratch
 * of size n and n+1. */
inline void envelope_pass(const double* f, double* d, int* v, double* z, Index n) {
  int k = -1;
  for (Index q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = static_cast<int>(q);
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const Index p = v[k];
      s = (f[q] + static_cast<double>(q) * q - f[p] - static_cast<double>(p) * p) /
          (2.0 * static_cast<double>(q - p));
      if (s > z[k]) break;
      if (--k < 0) break;
    }
    ++k;
    v[k] = static_cast<int>(q);
    z[k] = k == 0 ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {  // nothing finite on this line
    std::fill(d, d + n, kInf);
    return;
  }
  k = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Applies the envelope pass along every line of the given axis (0=d,1=h,2=w).
inline void transform_axis(Grid3<double>& sq, int axis) {
  const VolumeShape& s = sq.shape();
  const Index n = s.dim(axis);
  std::vector<double> line(n), out(n), z(n + 1);
  std::vector<int> v(n);

  auto run_line = [&](Index stride, Index base) {
    for (Index i = 0; i < n; ++i) line[i] = sq[base + i * stride];
    envelope_pass(line.data(), out.data(), v.data(), z.data(), n);
    for (Index i = 0; i < n; ++i) sq[base + i * stride] = out[i];
  };

  if (axis == 2) {
    for (Index d = 0; d < s.depth; ++d)
      for (Index h = 0; h < s.height; ++h) run_line(1, sq.flat(d, h, 0));
  } else if (axis == 1) {
    for (Index d = 0; d < s.depth; ++d)
      for (Index w = 0; w < s.width; ++w) run_line(s.width, sq.flat(d, 0, w));
  } else {
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) run_line(s.width * s.height, sq.flat(0, h, w));
  }
}

}  // namespace detail

/* Exact squared Euclidean distance (in voxels^2) to the nearest foreground
 * voxel. Throws if the mask has no foreground. */
inline Grid3<double> exact_edt_squared(const BinaryMask& mask) {
  if (count_foreground(mask) == 0) {
    throw std::invalid_argument("exact_edt: mask has no foreground voxels");
  }
  Grid3<double> sq(mask.shape());
  for (Index i = 0; i < mask.size(); ++i) sq[i] = mask[i] ? 0.0 : detail::kInf;
  detail::transform_axis(sq, 2);
  detail::transform_axis(sq, 1);
  detail::transform_axis(sq, 0);
  return sq;
}

inline DistanceField exact_edt(const BinaryMask& mask) {
  Grid3<double> sq = exact_edt_squared(mask);
  sq.array() = sq.array().sqrt();
  return sq;
}

/* Surface voxels: foreground voxels with at least one background 6-neighbor.
 * Neighbors outside the volume do not count as background, so objects cropped
 * by the volume border contribute no boundary on the cut plane. */
inline std::vector<Voxel> boundary_voxels(const BinaryMask& mask) {
  const VolumeShape& s = mask.shape();
  std::vector<Voxel> out;
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) {
        if (!mask(d, h, w)) continue;
        const bool open = (d > 0 && !mask(d - 1, h, w)) ||
                          (d + 1 < s.depth && !mask(d + 1, h, w)) ||
                          (h > 0 && !mask(d, h - 1, w)) ||
                          (h + 1 < s.height && !mask(d, h + 1, w)) ||
                          (w > 0 && !mask(d, h, w - 1)) ||
                          (w + 1 < s.width && !mask(d, h, w + 1));
        if (open) out.push_back({d, h, w});
      }
  return out;
}

inline BinaryMask boundary_mask(const BinaryMask& mask) {
  BinaryMask out(mask.shape(), 0);
  for (const Voxel& v : boundary_voxels(mask)) out(v.d, v.h, v.w) = 1;
  return out;
}

struct SignedDistanceMap {
  Grid3<double> values;
  bool normalized = false;
  bool degenerate = false;  // mask was empty or full; values are a constant +-1
};

/* Raw signed distance to the nearest surface voxel: negative strictly inside,
 * positive strictly outside, exactly zero on surface voxels. Empty masks give
 * a constant +1 map and full masks a constant -1 map, flagged degenerate. */
inline SignedDistanceMap signed_distance_map(const BinaryMask& mask) {
  const Index fg = count_foreground(mask);
  if (fg == 0 || fg == mask.size()) {
    SignedDistanceMap sdm;
    sdm.values = Grid3<double>(mask.shape(), fg == 0 ? 1.0 : -1.0);
    sdm.degenerate = true;
    return sdm;
  }
  const DistanceField dist = exact_edt(boundary_mask(mask));
  SignedDistanceMap sdm;
  sdm.values = Grid3<double>(mask.shape());
  for (Index i = 0; i < mask.size(); ++i) {
    sdm.values[i] = mask[i] ? -dist[i] : dist[i];
  }
  return sdm;
}

/* Per-sign normalization: positives scaled by the maximum positive value,
 * negatives by the magnitude of the minimum. Both extremes reach exactly +-1
 * whenever present; idempotent. */
inline SignedDistanceMap normalize_sdm(const SignedDistanceMap& raw) {
  SignedDistanceMap out = raw;
  out.normalized = true;
  if (raw.degenerate) return out;
  double maxpos = 0.0, minneg = 0.0;
  for (Index i = 0; i < out.values.size(); ++i) {
    maxpos = std::max(maxpos, out.values[i]);
    minneg = std::min(minneg, out.values[i]);
  }
  for (Index i = 0; i < out.values.size(); ++i) {
    double& v = out.values[i];
    if (v > 0.0 && maxpos > 0.0) v /= maxpos;
    else if (v < 0.0 && minneg < 0.0) v /= -minneg;
  }
  return out;
}

enum class Connectivity : int { six = 6, eighteen = 18, twentysix = 26 };

namespace detail {

inline std::vector<std::array<int, 3>> neighbor_offsets(Connectivity c) {
  std::vector<std::array<int, 3>> offs;
  const int max_nonzero = c == Connectivity::six ? 1 : (c == Connectivity::eighteen ? 2 : 3);
  for (int dd = -1; dd <= 1; ++dd)
    for (int dh = -1; dh <= 1; ++dh)
      for (int dw = -1; dw <= 1; ++dw) {
        const int nz = (dd != 0) + (dh != 0) + (dw != 0);
        if (nz >= 1 && nz <= max_nonzero) offs.push_back({dd, dh, dw});
      }
  return offs;
}

}  // namespace detail

struct Components {
  Grid3<std::int32_t> labels;          // 0 = background, components 1..K
  std::vector<std::int64_t> sizes;     // sizes[k-1] = voxel count of component k
};

/* Flood-fill labeling; component ids are assigned in raster-scan order of
 * first encounter, which makes the lowest id the deterministic tie-break. */
inline Components connected_components(const BinaryMask& mask, Connectivity conn) {
  const VolumeShape& s = mask.shape();
  Components comps;
  comps.labels = Grid3<std::int32_t>(s, 0);
  const auto offs = detail::neighbor_offsets(conn);
  std::vector<Index> stack;
  std::int32_t next = 0;
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) {
        const Index i = mask.flat(d, h, w);
        if (!mask[i] || comps.labels[i] != 0) continue;
        ++next;
        std::int64_t size = 0;
        comps.labels[i] = next;
        stack.assign(1, i);
        while (!stack.empty()) {
          const Index cur = stack.back();
          stack.pop_back();
          ++size;
          const Index cd = cur / (s.height * s.width);
          const Index ch = (cur / s.width) % s.height;
          const Index cw = cur % s.width;
          for (const auto& o : offs) {
            const Index nd = cd + o[0], nh = ch + o[1], nw = cw + o[2];
            if (!mask.in_bounds(nd, nh, nw)) continue;
            const Index ni = mask.flat(nd, nh, nw);
            if (mask[ni] && comps.labels[ni] == 0) {
              comps.labels[ni] = next;
              stack.push_back(ni);
            }
          }
        }
        comps.sizes.push_back(size);
      }
  return comps;
}

// Keeps only the largest 26-connected component (lowest id wins ties).
inline BinaryMask largest_component(const BinaryMask& mask) {
  const Components comps = connected_components(mask, Connectivity::twentysix);
  BinaryMask out(mask.shape(), 0);
  if (comps.sizes.empty()) return out;
  std::int32_t best = 1;
  for (std::size_t k = 1; k < comps.sizes.size(); ++k) {
    if (comps.sizes[k] > comps.sizes[best - 1]) best = static_cast<std::int32_t>(k + 1);
  }
  for (Index i = 0; i < mask.size(); ++i) out[i] = comps.labels[i] == best ? 1 : 0;
  return out;
}

}  // namespace shapeseg::geom
