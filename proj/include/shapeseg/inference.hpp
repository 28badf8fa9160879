#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shapeseg/config_io.hpp"
#include "shapeseg/dataset.hpp"
#include "shapeseg/metrics.hpp"
#include "shapeseg/nn/checkpoint.hpp"
#include "shapeseg/nn/segmenter.hpp"

/* Inference on trained checkpoints: single-volume prediction and whole
 * validation-split evaluation. */
namespace shapeseg::train {

using Real = float;  // training/inference scalar; tests instantiate double directly

struct Prediction {
  Volume prob;        // sigmoid probability map
  Grid3<float> sdm;   // tanh signed-distance prediction
};

inline Prediction predict_volume(const nn::Segmenter<Real>& net,
                                 const nn::VectorX<Real>& params, const Volume& volume) {
  typename nn::Segmenter<Real>::Workspace ws;
  nn::FeatureMap<Real> x = nn::FeatureMap<Real>::from_grid(volume);
  nn::FeatureMap<Real> m, s;
  net.forward(params, x, m, s, ws);
  return {m.to_grid(), s.to_grid()};
}

struct LoadedSegmenter {
  nn::SegmenterConfig config;
  std::unique_ptr<nn::Segmenter<Real>> net;
  nn::VectorX<Real> params;
};

inline LoadedSegmenter segmenter_from_checkpoint(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  LoadedSegmenter out;
  out.config = segmenter_from_json(ckpt.config.at("segmenter"));
  out.net = std::make_unique<nn::Segmenter<Real>>(out.config);
  out.params = ckpt.at("seg/params");
  if (out.params.size() != out.net->param_count()) {
    throw std::runtime_error("checkpoint: segmenter parameter size mismatch");
  }
  return out;
}

struct DatasetEvaluation {
  std::vector<metrics::MetricsReport> rows;
  double mean_dice = 0.0;
  double mean_jaccard = 0.0;
  std::optional<double> mean_asd;   // over volumes with defined surfaces
  std::optional<double> mean_hd95;
  int missing_surface_count = 0;
  std::vector<std::string> failures;  // per-id load/shape errors
};

/* Evaluates every id in the manifest's validation split. Per-volume failures
 * (missing files, shape mismatches) are collected rather than thrown so one
 * bad volume does not hide the rest. */
inline DatasetEvaluation evaluate_dataset(const std::filesystem::path& manifest_path,
                                          const std::filesystem::path& checkpoint_path,
                                          bool apply_nms) {
  const synth::SplitManifest manifest = synth::load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  LoadedSegmenter model = segmenter_from_checkpoint(checkpoint_path);
  DatasetEvaluation out;
  double asd_acc = 0.0, hd_acc = 0.0;
  int surf_n = 0;
  for (const std::string& id : manifest.split.val) {
    try {
      const Volume image = synth::load_grid<float>(synth::grid_path(dir, id, synth::GridKind::image));
      const BinaryMask gt =
          synth::load_grid<std::uint8_t>(synth::grid_path(dir, id, synth::GridKind::mask));
      const Prediction pred = predict_volume(*model.net, model.params, image);
      out.rows.push_back(metrics::evaluate_volume(pred.prob, gt, apply_nms, id));
    } catch (const std::exception& e) {
      out.failures.push_back(id + ": " + e.what());
      continue;
    }
    const auto& r = out.rows.back();
    out.mean_dice += r.dice;
    out.mean_jaccard += r.jaccard;
    if (r.asd && r.hd95) {
      asd_acc += *r.asd;
      hd_acc += *r.hd95;
      ++surf_n;
    } else {
      ++out.missing_surface_count;
    }
  }
  if (!out.rows.empty()) {
    out.mean_dice /= static_cast<double>(out.rows.size());
    out.mean_jaccard /= static_cast<double>(out.rows.size());
  }
  if (surf_n > 0) {
    out.mean_asd = asd_acc / surf_n;
    out.mean_hd95 = hd_acc / surf_n;
  }
  return out;
}

}  // namespace shapeseg::train
