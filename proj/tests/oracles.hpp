#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "shapeseg/rng.hpp"
#include "shapeseg/volume.hpp"

/* Brute-force reference implementations used to check the library. These are
 * deliberately independent of the code under test: plain all-pairs scans and
 * union-find, no shared helpers beyond the grid container.
 */
namespace oracles {

using shapeseg::BinaryMask;
using shapeseg::Grid3;
using shapeseg::Index;
using shapeseg::Rng;
using shapeseg::VolumeShape;

// O(n^2) nearest-foreground distance.
inline Grid3<double> edt_bruteforce(const BinaryMask& mask) {
  const VolumeShape& s = mask.shape();
  std::vector<std::array<Index, 3>> fg;
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w)
        if (mask(d, h, w)) fg.push_back({d, h, w});
  Grid3<double> out(s, std::numeric_limits<double>::infinity());
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& f : fg) {
          const double dd = static_cast<double>(d - f[0]);
          const double dh = static_cast<double>(h - f[1]);
          const double dw = static_cast<double>(w - f[2]);
          best = std::min(best, dd * dd + dh * dh + dw * dw);
        }
        out(d, h, w) = std::sqrt(best);
      }
  return out;
}

// Foreground voxels with a background face-neighbor (border faces excluded).
inline std::vector<std::array<Index, 3>> boundary_bruteforce(const BinaryMask& mask) {
  const VolumeShape& s = mask.shape();
  std::vector<std::array<Index, 3>> out;
  const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) {
        if (!mask(d, h, w)) continue;
        for (const auto& o : off) {
          const Index nd = d + o[0], nh = h + o[1], nw = w + o[2];
          if (nd < 0 || nd >= s.depth || nh < 0 || nh >= s.height || nw < 0 || nw >= s.width)
            continue;
          if (!mask(nd, nh, nw)) {
            out.push_back({d, h, w});
            break;
          }
        }
      }
  return out;
}

// Signed distance to the boundary set; sign from mask membership.
inline Grid3<double> sdm_bruteforce(const BinaryMask& mask) {
  const VolumeShape& s = mask.shape();
  const auto boundary = boundary_bruteforce(mask);
  Grid3<double> out(s);
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : boundary) {
          const double dd = static_cast<double>(d - b[0]);
          const double dh = static_cast<double>(h - b[1]);
          const double dw = static_cast<double>(w - b[2]);
          best = std::min(best, std::sqrt(dd * dd + dh * dh + dw * dw));
        }
        out(d, h, w) = mask(d, h, w) ? -best : best;
      }
  return out;
}

// Union-find connected components; returns per-voxel root id (-1 background).
struct UnionFind {
  std::vector<Index> parent;
  explicit UnionFind(Index n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  Index find(Index x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(Index a, Index b) { parent[find(a)] = find(b); }
};

inline std::vector<Index> components_bruteforce(const BinaryMask& mask, int connectivity) {
  const VolumeShape& s = mask.shape();
  UnionFind uf(mask.size());
  const int maxnz = connectivity == 6 ? 1 : (connectivity == 18 ? 2 : 3);
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) {
        if (!mask(d, h, w)) continue;
        for (int dd = -1; dd <= 1; ++dd)
          for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) {
              const int nz = (dd != 0) + (dh != 0) + (dw != 0);
              if (nz < 1 || nz > maxnz) continue;
              const Index nd = d + dd, nh = h + dh, nw = w + dw;
              if (nd < 0 || nd >= s.depth || nh < 0 || nh >= s.height || nw < 0 ||
                  nw >= s.width)
                continue;
              if (mask(nd, nh, nw)) uf.unite(mask.flat(d, h, w), mask.flat(nd, nh, nw));
            }
      }
  std::vector<Index> roots(mask.size(), -1);
  for (Index i = 0; i < mask.size(); ++i)
    if (mask[i]) roots[i] = uf.find(i);
  return roots;
}

// --- random inputs ---------------------------------------------------------

inline BinaryMask random_mask(const VolumeShape& shape, double fg_prob, Rng& rng) {
  BinaryMask m(shape, 0);
  for (Index i = 0; i < m.size(); ++i) m[i] = rng.uniform() < fg_prob ? 1 : 0;
  return m;
}

// Random blobby mask: a few axis-aligned boxes, more structured than iid noise.
inline BinaryMask random_blob_mask(const VolumeShape& shape, int n_blobs, Rng& rng) {
  BinaryMask m(shape, 0);
  for (int b = 0; b < n_blobs; ++b) {
    Index lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      const Index dim = shape.dim(a);
      const Index x0 = rng.uniform_int(dim);
      const Index x1 = rng.uniform_int(dim);
      lo[a] = std::min(x0, x1);
      hi[a] = std::max(x0, x1);
    }
    for (Index d = lo[0]; d <= hi[0]; ++d)
      for (Index h = lo[1]; h <= hi[1]; ++h)
        for (Index w = lo[2]; w <= hi[2]; ++w) m(d, h, w) = 1;
  }
  return m;
}

inline VolumeShape random_shape(Index max_dim, Rng& rng) {
  return VolumeShape(1 + rng.uniform_int(max_dim), 1 + rng.uniform_int(max_dim),
                     1 + rng.uniform_int(max_dim));
}

}  // namespace oracles
