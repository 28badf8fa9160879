#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "shapeseg/nn/discriminator.hpp"
#include "shapeseg/nn/segmenter.hpp"
#include "shapeseg/volume.hpp"

/* JSON (de)serialization for configuration structs. Missing keys keep their
 * defaults; unknown keys are rejected so typos in config files fail loudly. */
namespace shapeseg::train {

enum class Mode { supervised, supervised_sdm, full };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::supervised: return "supervised";
    case Mode::supervised_sdm: return "supervised+sdm";
    default: return "full";
  }
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "supervised") return Mode::supervised;
  if (s == "supervised+sdm") return Mode::supervised_sdm;
  if (s == "full") return Mode::full;
  throw std::invalid_argument("unknown mode '" + s + "' (expected supervised, supervised+sdm or full)");
}

struct TrainConfig {
  // data & bookkeeping
  std::string data_manifest;
  std::string out_dir;
  Mode mode = Mode::full;
  std::uint64_t seed = 1;
  int checkpoint_every = 1000;
  int validate_every = 200;
  // optimization
  int total_iters = 6000;
  double seg_lr = 0.01;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 2500;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double disc_lr = 1e-4;
  int batch_size = 4;
  int labeled_per_batch = 2;
  // loss weights
  double alpha = 0.3;
  double beta_max = 0.001;
  std::int64_t t_max = 0;  // 0 -> total_iters
  // geometry & augmentation
  VolumeShape crop{32, 32, 32};
  bool augment_flip = true;
  // networks
  nn::SegmenterConfig segmenter;
  nn::DiscriminatorConfig discriminator;

  std::int64_t effective_t_max() const { return t_max > 0 ? t_max : total_iters; }
  int labeled_in_batch() const { return mode == Mode::full ? labeled_per_batch : batch_size; }

  void validate() const {
    if (total_iters < 1) throw std::invalid_argument("config: total_iters must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (mode == Mode::full &&
        (labeled_per_batch < 1 || labeled_per_batch >= batch_size)) {
      throw std::invalid_argument(
          "config: labeled_per_batch must be in [1, batch_size) for full mode");
    }
    if (alpha < 0) throw std::invalid_argument("config: alpha must be >= 0");
    if (beta_max < 0) throw std::invalid_argument("config: beta_max must be >= 0");
    if (seg_lr <= 0) throw std::invalid_argument("config: seg_lr must be > 0");
    if (disc_lr <= 0) throw std::invalid_argument("config: disc_lr must be > 0");
    if (lr_decay_every < 1) throw std::invalid_argument("config: lr_decay_every must be >= 1");
    if (checkpoint_every < 1) throw std::invalid_argument("config: checkpoint_every must be >= 1");
    if (validate_every < 1) throw std::invalid_argument("config: validate_every must be >= 1");
    if (!crop.valid()) throw std::invalid_argument("config: crop shape is invalid");
    segmenter.validate();
    const int div = segmenter.spatial_divisor();
    if (crop.depth % div || crop.height % div || crop.width % div) {
      throw std::invalid_argument("config: crop " + crop.str() +
                                  " not divisible by the segmenter's factor " +
                                  std::to_string(div));
    }
  }
};

// --- json helpers ----------------------------------------------------------

namespace detail {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                       const char* where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw std::invalid_argument(std::string(where) + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const VolumeShape& s) {
  return nlohmann::json::array({s.depth, s.height, s.width});
}
inline VolumeShape shape_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("shape: expected [depth, height, width]");
  return VolumeShape(j[0].get<Index>(), j[1].get<Index>(), j[2].get<Index>());
}

inline nlohmann::json to_json(const nn::SegmenterConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_channels", c.base_channels},
          {"levels", c.levels},
          {"norm", c.norm == nn::NormKind::instance ? "instance" : "none"},
          {"activation", c.activation == nn::Act::leaky_relu ? "leaky_relu" : "relu"}};
}

inline nn::SegmenterConfig segmenter_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"in_channels", "base_channels", "levels", "norm", "activation"},
                     "segmenter");
  nn::SegmenterConfig c;
  detail::get_if(j, "in_channels", c.in_channels);
  detail::get_if(j, "base_channels", c.base_channels);
  detail::get_if(j, "levels", c.levels);
  if (j.contains("norm")) {
    const auto s = j.at("norm").get<std::string>();
    if (s == "instance") c.norm = nn::NormKind::instance;
    else if (s == "none") c.norm = nn::NormKind::none;
    else throw std::invalid_argument("segmenter.norm: unknown kind '" + s + "'");
  }
  if (j.contains("activation")) {
    const auto s = j.at("activation").get<std::string>();
    if (s == "relu") c.activation = nn::Act::relu;
    else if (s == "leaky_relu") c.activation = nn::Act::leaky_relu;
    else throw std::invalid_argument("segmenter.activation: unknown kind '" + s + "'");
  }
  return c;
}

inline nlohmann::json to_json(const nn::DiscriminatorConfig& c) {
  return {{"conv_channels", c.conv_channels},
          {"kernel", c.kernel},
          {"stride", c.stride},
          {"mlp_hidden", c.mlp_hidden},
          {"leaky_slope", c.leaky_slope}};
}

inline nn::DiscriminatorConfig discriminator_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"conv_channels", "kernel", "stride", "mlp_hidden", "leaky_slope"},
                     "discriminator");
  nn::DiscriminatorConfig c;
  detail::get_if(j, "conv_channels", c.conv_channels);
  detail::get_if(j, "kernel", c.kernel);
  detail::get_if(j, "stride", c.stride);
  detail::get_if(j, "mlp_hidden", c.mlp_hidden);
  detail::get_if(j, "leaky_slope", c.leaky_slope);
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"data_manifest", c.data_manifest},
          {"out_dir", c.out_dir},
          {"mode", mode_name(c.mode)},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"validate_every", c.validate_every},
          {"total_iters", c.total_iters},
          {"seg_lr", c.seg_lr},
          {"lr_decay_factor", c.lr_decay_factor},
          {"lr_decay_every", c.lr_decay_every},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"disc_lr", c.disc_lr},
          {"batch_size", c.batch_size},
          {"labeled_per_batch", c.labeled_per_batch},
          {"alpha", c.alpha},
          {"beta_max", c.beta_max},
          {"t_max", c.t_max},
          {"crop", to_json(c.crop)},
          {"augment_flip", c.augment_flip},
          {"segmenter", to_json(c.segmenter)},
          {"discriminator", to_json(c.discriminator)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::check_keys(
      j, {"data_manifest", "out_dir",       "mode",           "seed",
          "checkpoint_every", "validate_every", "total_iters", "seg_lr",
          "lr_decay_factor",  "lr_decay_every", "momentum",    "weight_decay",
          "disc_lr",          "batch_size",     "labeled_per_batch", "alpha",
          "beta_max",         "t_max",          "crop",        "augment_flip",
          "segmenter",        "discriminator"},
      "config");
  TrainConfig c;
  detail::get_if(j, "data_manifest", c.data_manifest);
  detail::get_if(j, "out_dir", c.out_dir);
  if (j.contains("mode")) c.mode = mode_from_name(j.at("mode").get<std::string>());
  detail::get_if(j, "seed", c.seed);
  detail::get_if(j, "checkpoint_every", c.checkpoint_every);
  detail::get_if(j, "validate_every", c.validate_every);
  detail::get_if(j, "total_iters", c.total_iters);
  detail::get_if(j, "seg_lr", c.seg_lr);
  detail::get_if(j, "lr_decay_factor", c.lr_decay_factor);
  detail::get_if(j, "lr_decay_every", c.lr_decay_every);
  detail::get_if(j, "momentum", c.momentum);
  detail::get_if(j, "weight_decay", c.weight_decay);
  detail::get_if(j, "disc_lr", c.disc_lr);
  detail::get_if(j, "batch_size", c.batch_size);
  detail::get_if(j, "labeled_per_batch", c.labeled_per_batch);
  detail::get_if(j, "alpha", c.alpha);
  detail::get_if(j, "beta_max", c.beta_max);
  detail::get_if(j, "t_max", c.t_max);
  if (j.contains("crop")) c.crop = shape_from_json(j.at("crop"));
  detail::get_if(j, "augment_flip", c.augment_flip);
  if (j.contains("segmenter")) c.segmenter = segmenter_from_json(j.at("segmenter"));
  if (j.contains("discriminator"))
    c.discriminator = discriminator_from_json(j.at("discriminator"));
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed config " + path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path.string());
  os << j.dump(2) << "\n";
}

}  // namespace shapeseg::train
