#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapeseg/phantom.hpp"
#include "shapeseg/rng.hpp"
#include "shapeseg/volume_io.hpp"

/* Dataset assembly: labeled/unlabeled/validation splits, the on-disk split
 * manifest, and the crop/flip augmentations used at train time.
 */
namespace shapeseg::synth {

struct DatasetSplit {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
  std::vector<std::string> val;
};

struct SplitManifest {
  VolumeShape shape;
  DatasetSplit split;
};

inline void save_manifest(const SplitManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["shape"] = {m.shape.depth, m.shape.height, m.shape.width};
  j["labeled"] = m.split.labeled;
  j["unlabeled"] = m.split.unlabeled;
  j["val"] = m.split.val;
  const std::string text = j.dump(2) + "\n";
  detail::atomic_write(path, text.data(), text.size());
}

inline SplitManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
  SplitManifest m;
  const auto sh = j.at("shape");
  m.shape = VolumeShape(sh[0].get<Index>(), sh[1].get<Index>(), sh[2].get<Index>());
  m.split.labeled = j.at("labeled").get<std::vector<std::string>>();
  m.split.unlabeled = j.at("unlabeled").get<std::vector<std::string>>();
  m.split.val = j.at("val").get<std::vector<std::string>>();
  return m;
}

inline std::filesystem::path grid_path(const std::filesystem::path& dir, const std::string& id,
                                       GridKind kind) {
  return dir / (id + "." + kind_name(kind) + ".vhdr");
}

inline void save_sample(const Sample& s, const std::filesystem::path& dir) {
  save_grid(s.image, GridKind::image, s.id, grid_path(dir, s.id, GridKind::image));
  save_grid(s.mask, GridKind::mask, s.id, grid_path(dir, s.id, GridKind::mask));
  save_grid(s.sdm, GridKind::sdm, s.id, grid_path(dir, s.id, GridKind::sdm));
}

inline Sample load_sample(const std::filesystem::path& dir, const std::string& id) {
  Sample s;
  s.id = id;
  s.image = load_grid<float>(grid_path(dir, id, GridKind::image));
  s.mask = load_grid<std::uint8_t>(grid_path(dir, id, GridKind::mask));
  s.sdm = load_grid<float>(grid_path(dir, id, GridKind::sdm));
  require_same_shape(s.image.shape(), s.mask.shape(), "load_sample");
  require_same_shape(s.image.shape(), s.sdm.shape(), "load_sample");
  return s;
}

/* Generates `count` samples, writes image/mask/sdm triples plus the split
 * manifest into out_dir and returns the split. Sample geometry and noise are
 * derived per-sample from the master seed; the split assignment is a seeded
 * shuffle, so the whole dataset is a pure function of its arguments. */
inline SplitManifest make_dataset(int count, const VolumeShape& shape, int n_labeled,
                                  int n_unlabeled, int n_val, const PhantomParams& params,
                                  std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n_labeled < 1) throw std::invalid_argument("make_dataset: need at least 1 labeled sample");
  if (n_labeled + n_unlabeled + n_val != count) {
    throw std::invalid_argument("make_dataset: split sizes must sum to count");
  }
  std::filesystem::create_directories(out_dir);

  std::vector<std::string> ids(count);
  for (int i = 0; i < count; ++i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "sample_%03d", i);
    ids[i] = buf;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const ShapeSpec spec = random_spec(shape, params, rng);
    const Sample s = generate_sample(spec, shape, params.noise_level, rng.next_u64(), ids[i]);
    save_sample(s, out_dir);
  }

  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x517f7ULL));
  for (int i = count - 1; i > 0; --i) {
    std::swap(order[i], order[rng.uniform_int(i + 1)]);
  }

  SplitManifest m;
  m.shape = shape;
  for (int i = 0; i < count; ++i) {
    const std::string& id = ids[order[i]];
    if (i < n_labeled) m.split.labeled.push_back(id);
    else if (i < n_labeled + n_unlabeled) m.split.unlabeled.push_back(id);
    else m.split.val.push_back(id);
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

// --- augmentation ---------------------------------------------------------

template <typename T>
Grid3<T> crop_grid(const Grid3<T>& g, const VolumeShape& crop, Index d0, Index h0, Index w0) {
  Grid3<T> out(crop);
  for (Index d = 0; d < crop.depth; ++d)
    for (Index h = 0; h < crop.height; ++h)
      for (Index w = 0; w < crop.width; ++w) out(d, h, w) = g(d0 + d, h0 + h, w0 + w);
  return out;
}

template <typename T>
Grid3<T> flip_grid(const Grid3<T>& g, int axis) {
  const VolumeShape& s = g.shape();
  Grid3<T> out(s);
  for (Index d = 0; d < s.depth; ++d)
    for (Index h = 0; h < s.height; ++h)
      for (Index w = 0; w < s.width; ++w) {
        const Index sd = axis == 0 ? s.depth - 1 - d : d;
        const Index sh = axis == 1 ? s.height - 1 - h : h;
        const Index sw = axis == 2 ? s.width - 1 - w : w;
        out(d, h, w) = g(sd, sh, sw);
      }
  return out;
}

/* Crops all three grids with identical geometry. The SDM is recomputed from
 * the cropped mask: distances near the cut planes change when the object is
 * truncated, so cropping the stored SDM would be wrong. */
inline Sample random_crop(const Sample& s, const VolumeShape& crop, Rng& rng,
                          bool recompute_sdm = true) {
  const VolumeShape& full = s.image.shape();
  if (crop.depth > full.depth || crop.height > full.height || crop.width > full.width) {
    throw std::invalid_argument("random_crop: crop " + crop.str() + " exceeds volume " +
                                full.str());
  }
  const Index d0 = rng.uniform_int(full.depth - crop.depth + 1);
  const Index h0 = rng.uniform_int(full.height - crop.height + 1);
  const Index w0 = rng.uniform_int(full.width - crop.width + 1);
  Sample out;
  out.id = s.id;
  out.image = crop_grid(s.image, crop, d0, h0, w0);
  out.mask = crop_grid(s.mask, crop, d0, h0, w0);
  if (recompute_sdm) {
    out.sdm = geom::normalize_sdm(geom::signed_distance_map(out.mask)).values.cast<float>();
  } else {
    out.sdm = Grid3<float>(crop, 0.0f);
  }
  return out;
}

// Flips every grid on `axis` with probability 1/2. Flipping is an isometry,
// so the stored SDM stays valid under the same flip.
inline Sample random_flip(const Sample& s, int axis, Rng& rng) {
  if (!rng.bernoulli(0.5)) return s;
  Sample out;
  out.id = s.id;
  out.image = flip_grid(s.image, axis);
  out.mask = flip_grid(s.mask, axis);
  out.sdm = flip_grid(s.sdm, axis);
  return out;
}

}  // namespace shapeseg::synth
