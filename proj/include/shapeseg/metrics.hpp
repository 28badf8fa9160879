#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "shapeseg/volume.hpp"
#include "shapeseg/voxelgeom.hpp"

/* Segmentation quality metrics: Dice, Jaccard, average symmetric surface
 * distance and the 95th-percentile Hausdorff distance, plus thresholding and
 * largest-component post-processing. Surface distances are exact voxel-unit
 * Euclidean distances between boundary voxel sets, both directions combined
 * into one multiset. */
namespace shapeseg::metrics {

struct MetricsReport {
  std::string id;
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> asd;   // missing when either surface is empty
  std::optional<double> hd95;
  bool nms_applied = false;
};

inline BinaryMask binarize(const Volume& prob, double threshold = 0.5) {
  BinaryMask out(prob.shape(), 0);
  for (Index i = 0; i < prob.size(); ++i)
    out[i] = static_cast<double>(prob[i]) >= threshold ? 1 : 0;
  return out;
}

// dice = 2|A&B| / (|A|+|B|), jaccard = |A&B| / |AuB|; both-empty gives (1, 1)
inline std::pair<double, double> dice_jaccard(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred.shape(), gt.shape(), "dice_jaccard");
  std::int64_t inter = 0, np = 0, ng = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return {1.0, 1.0};
  const double dice = 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
  const double jaccard = static_cast<double>(inter) / static_cast<double>(np + ng - inter);
  return {dice, jaccard};
}

/* Bidirectional boundary distances: for every surface voxel of `a` its
 * distance to the surface of `b`, and vice versa, via one EDT per direction.
 * Throws when either surface is empty (empty or volume-filling mask). */
inline std::vector<double> surface_distances(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a.shape(), b.shape(), "surface_distances");
  const auto ba = geom::boundary_voxels(a);
  const auto bb = geom::boundary_voxels(b);
  if (ba.empty() || bb.empty()) {
    throw std::invalid_argument("surface_distances: undefined for empty surfaces");
  }
  BinaryMask ia(a.shape(), 0), ib(b.shape(), 0);
  for (const auto& v : ba) ia(v.d, v.h, v.w) = 1;
  for (const auto& v : bb) ib(v.d, v.h, v.w) = 1;
  const DistanceField to_b = geom::exact_edt(ib);
  const DistanceField to_a = geom::exact_edt(ia);
  std::vector<double> out;
  out.reserve(ba.size() + bb.size());
  for (const auto& v : ba) out.push_back(to_b(v.d, v.h, v.w));
  for (const auto& v : bb) out.push_back(to_a(v.d, v.h, v.w));
  return out;
}

inline double asd(std::vector<double> distances) {
  if (distances.empty()) throw std::invalid_argument("asd: empty distance multiset");
  // ascending summation keeps the mean exactly symmetric in (pred, gt)
  std::sort(distances.begin(), distances.end());
  double acc = 0.0;
  for (const double d : distances) acc += d;
  return acc / static_cast<double>(distances.size());
}

// percentile by linear interpolation between order statistics
inline double percentile(std::vector<double> distances, double q) {
  if (distances.empty()) throw std::invalid_argument("percentile: empty distance multiset");
  std::sort(distances.begin(), distances.end());
  const double rank = q * static_cast<double>(distances.size() - 1);
  const auto lo = static_cast<std::size_t>(rank);
  if (lo + 1 >= distances.size()) return distances.back();
  const double frac = rank - static_cast<double>(lo);
  return distances[lo] + frac * (distances[lo + 1] - distances[lo]);
}

inline double hd95(const std::vector<double>& distances) { return percentile(distances, 0.95); }

/* Threshold, optionally keep the largest component, then compute all four
 * metrics. Surface metrics are reported missing (not zero) when either the
 * prediction or ground truth has no surface. */
inline MetricsReport evaluate_volume(const Volume& prob, const BinaryMask& gt, bool apply_nms,
                                     std::string id = "", double threshold = 0.5) {
  require_same_shape(prob.shape(), gt.shape(), "evaluate_volume");
  BinaryMask pred = binarize(prob, threshold);
  if (apply_nms) pred = geom::largest_component(pred);
  MetricsReport r;
  r.id = std::move(id);
  r.nms_applied = apply_nms;
  std::tie(r.dice, r.jaccard) = dice_jaccard(pred, gt);
  try {
    const auto dists = surface_distances(pred, gt);
    r.asd = asd(dists);
    r.hd95 = hd95(dists);
  } catch (const std::invalid_argument&) {
    // empty surface on either side: leave the surface metrics missing
  }
  return r;
}

}  // namespace shapeseg::metrics
