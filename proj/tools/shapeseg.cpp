// Command-line front end for the shape-aware semi-supervised segmentation
// pipeline: synthetic data generation, signed-distance-map computation,
// training, prediction, evaluation and the three-arm ablation preset.
//
// Exit codes: 0 success, 1 validation error (bad flags/config), 2 runtime
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "shapeseg/ablation.hpp"
#include "shapeseg/dataset.hpp"
#include "shapeseg/inference.hpp"
#include "shapeseg/metrics.hpp"
#include "shapeseg/trainer.hpp"
#include "shapeseg/voxelgeom.hpp"

namespace fs = std::filesystem;
using namespace shapeseg;

namespace {

VolumeShape parse_shape(const std::string& text) {
  Index v[3];
  if (std::sscanf(text.c_str(), "%ld,%ld,%ld", &v[0], &v[1], &v[2]) == 3) {
    return VolumeShape(v[0], v[1], v[2]);
  }
  if (std::sscanf(text.c_str(), "%ld", &v[0]) == 1) {
    return VolumeShape(v[0], v[0], v[0]);
  }
  throw CLI::ValidationError("--shape", "expected D,H,W or a single cube edge");
}

void write_run_echo(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write run echo: " + path.string());
  os << j.dump(2) << "\n";
}

int cmd_gen_data(int count, const std::string& shape_text, int labeled, int unlabeled, int val,
                 std::uint64_t seed, double noise, const std::string& out) {
  const VolumeShape shape = parse_shape(shape_text);
  if (count == 0) count = labeled + unlabeled + val;
  synth::PhantomParams params;
  params.noise_level = noise;
  const auto manifest =
      synth::make_dataset(count, shape, labeled, unlabeled, val, params, seed, out);
  write_run_echo(fs::path(out) / "gen_config.json",
                 {{"command", "gen-data"},
                  {"count", count},
                  {"shape", {shape.depth, shape.height, shape.width}},
                  {"labeled", labeled},
                  {"unlabeled", unlabeled},
                  {"val", val},
                  {"seed", seed},
                  {"noise", noise}});
  std::cout << "wrote " << count << " samples (" << manifest.split.labeled.size()
            << " labeled / " << manifest.split.unlabeled.size() << " unlabeled / "
            << manifest.split.val.size() << " val) to " << out << "\n";
  return 0;
}

int cmd_compute_sdm(const std::string& mask_path, const std::string& out_path) {
  synth::VolumeHeader hdr;
  const BinaryMask mask = synth::load_grid<std::uint8_t>(mask_path, &hdr);
  const auto sdm = geom::normalize_sdm(geom::signed_distance_map(mask));
  synth::save_grid(sdm.values.cast<float>(), synth::GridKind::sdm, hdr.id, out_path);
  write_run_echo(fs::path(out_path).string() + ".run.json",
                 {{"command", "compute-sdm"}, {"mask", mask_path}, {"out", out_path},
                  {"degenerate", sdm.degenerate}});
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& mode_override,
              const std::string& resume) {
  train::TrainConfig cfg = train::load_train_config(config_path);
  if (!mode_override.empty()) cfg.mode = train::mode_from_name(mode_override);
  cfg.validate();
  const train::TrainResult result = train::run_training(
      cfg, resume.empty() ? std::nullopt : std::optional<std::string>(resume));
  std::cout << "finished " << cfg.total_iters << " iterations; final val dice "
            << result.final_val_dice << "\ncheckpoint: " << result.final_checkpoint.string()
            << "\n";
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& volume_path,
                const std::string& out_mask, const std::string& out_sdm, bool nms,
                double threshold) {
  auto model = train::segmenter_from_checkpoint(ckpt);
  synth::VolumeHeader hdr;
  const Volume volume = synth::load_grid<float>(volume_path, &hdr);
  const train::Prediction pred = train::predict_volume(*model.net, model.params, volume);
  BinaryMask mask = metrics::binarize(pred.prob, threshold);
  if (nms) mask = geom::largest_component(mask);
  synth::save_grid(mask, synth::GridKind::mask, hdr.id, out_mask);
  synth::save_grid(pred.sdm, synth::GridKind::sdm, hdr.id, out_sdm);
  write_run_echo(fs::path(out_mask).string() + ".run.json",
                 {{"command", "predict"},
                  {"checkpoint", ckpt},
                  {"volume", volume_path},
                  {"out_mask", out_mask},
                  {"out_sdm", out_sdm},
                  {"nms", nms},
                  {"threshold", threshold}});
  return 0;
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "n/a";
  char b[32];
  std::snprintf(b, sizeof(b), "%.3f", *v);
  return b;
}

int cmd_evaluate(const std::string& ckpt, const std::string& manifest, const std::string& nms,
                 const std::string& out) {
  if (nms != "on" && nms != "off") {
    throw CLI::ValidationError("--nms", "expected 'on' or 'off'");
  }
  const bool apply_nms = nms == "on";
  const auto eval = train::evaluate_dataset(manifest, ckpt, apply_nms);
  fs::create_directories(out);

  // text table in the usual reporting format: overlap in percent, distances
  // in voxels
  std::string table;
  char line[200];
  std::snprintf(line, sizeof(line), "%-14s %-9s %-11s %-11s %-11s %s\n", "id", "Dice[%]",
                "Jaccard[%]", "ASD[voxel]", "95HD[voxel]", "NMS");
  table += line;
  for (const auto& r : eval.rows) {
    std::snprintf(line, sizeof(line), "%-14s %-9.2f %-11.2f %-11s %-11s %s\n", r.id.c_str(),
                  100.0 * r.dice, 100.0 * r.jaccard, format_metric(r.asd).c_str(),
                  format_metric(r.hd95).c_str(), r.nms_applied ? "on" : "off");
    table += line;
  }
  std::snprintf(line, sizeof(line), "%-14s %-9.2f %-11.2f %-11s %-11s %s\n", "mean",
                100.0 * eval.mean_dice, 100.0 * eval.mean_jaccard,
                format_metric(eval.mean_asd).c_str(), format_metric(eval.mean_hd95).c_str(),
                apply_nms ? "on" : "off");
  table += line;
  {
    std::ofstream os(fs::path(out) / (apply_nms ? "metrics_nms.txt" : "metrics.txt"));
    os << table;
  }
  std::cout << table;

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : eval.rows) {
    rows.push_back({{"id", r.id},
                    {"dice_percent", 100.0 * r.dice},
                    {"jaccard_percent", 100.0 * r.jaccard},
                    {"asd_voxel", r.asd ? nlohmann::json(*r.asd) : nlohmann::json()},
                    {"hd95_voxel", r.hd95 ? nlohmann::json(*r.hd95) : nlohmann::json()},
                    {"nms", r.nms_applied}});
  }
  write_run_echo(fs::path(out) / (apply_nms ? "metrics_nms.json" : "metrics.json"),
                 {{"command", "evaluate"},
                  {"checkpoint", ckpt},
                  {"data", manifest},
                  {"nms", apply_nms},
                  {"rows", rows},
                  {"mean",
                   {{"dice_percent", 100.0 * eval.mean_dice},
                    {"jaccard_percent", 100.0 * eval.mean_jaccard},
                    {"asd_voxel", eval.mean_asd ? nlohmann::json(*eval.mean_asd) : nlohmann::json()},
                    {"hd95_voxel",
                     eval.mean_hd95 ? nlohmann::json(*eval.mean_hd95) : nlohmann::json()},
                    {"missing_surface_count", eval.missing_surface_count}}},
                  {"failures", eval.failures}});
  if (!eval.failures.empty()) {
    for (const auto& f : eval.failures) std::cerr << "failed: " << f << "\n";
    return 2;
  }
  return 0;
}

int cmd_ablation(const train::AblationConfig& cfg) {
  const auto result = train::run_ablation(cfg);
  const std::string table = train::ablation_table(result);
  {
    std::ofstream os(cfg.out_dir / "ablation_table.txt");
    os << table;
  }
  write_run_echo(cfg.out_dir / "ablation.json", train::ablation_json(cfg, result));
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shape-aware semi-supervised 3D segmentation pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset with splits");
  int count = 0, labeled = 8, unlabeled = 72, val = 20;
  std::string shape_text = "48";
  std::uint64_t seed = 1;
  double noise = 0.1;
  std::string out_dir;
  gen->add_option("--count", count, "total sample count (default labeled+unlabeled+val)");
  gen->add_option("--shape", shape_text, "volume shape D,H,W or cube edge")->capture_default_str();
  gen->add_option("--labeled", labeled, "labeled sample count")->capture_default_str();
  gen->add_option("--unlabeled", unlabeled, "unlabeled sample count")->capture_default_str();
  gen->add_option("--val", val, "validation sample count")->capture_default_str();
  gen->add_option("--seed", seed, "master seed")->capture_default_str();
  gen->add_option("--noise", noise, "intensity noise level")->capture_default_str();
  gen->add_option("--out", out_dir, "output directory")->required();

  // compute-sdm
  auto* csdm = app.add_subcommand("compute-sdm", "normalized signed distance map from a mask");
  std::string mask_path, sdm_out;
  csdm->add_option("--mask", mask_path, "input mask volume header (.vhdr)")->required();
  csdm->add_option("--out", sdm_out, "output sdm volume header (.vhdr)")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model from a JSON config");
  std::string config_path, mode_override, resume;
  tr->add_option("--config", config_path, "training config JSON")->required();
  tr->add_option("--mode", mode_override, "override mode: supervised|supervised+sdm|full");
  tr->add_option("--resume", resume, "checkpoint to resume from");

  // predict
  auto* pr = app.add_subcommand("predict", "run a checkpoint on one volume");
  std::string ckpt, volume_path, out_mask, out_sdm;
  bool pred_nms = false;
  double threshold = 0.5;
  pr->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  pr->add_option("--volume", volume_path, "input image volume header")->required();
  pr->add_option("--out-mask", out_mask, "output mask header path")->required();
  pr->add_option("--out-sdm", out_sdm, "output sdm header path")->required();
  pr->add_flag("--nms", pred_nms, "keep only the largest component");
  pr->add_option("--threshold", threshold, "binarization threshold")->capture_default_str();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the validation split");
  std::string ev_ckpt, ev_manifest, ev_nms = "off", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_manifest, "dataset manifest JSON")->required();
  ev->add_option("--nms", ev_nms, "largest-component post-processing: on|off")
      ->capture_default_str();
  ev->add_option("--out", ev_out, "output directory for metric tables")->required();

  // ablation
  auto* ab = app.add_subcommand("ablation", "three-arm ablation at a starved label budget");
  train::AblationConfig acfg;
  std::string ab_out, ab_shape = "32", ab_crop = "16";
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--seeds", acfg.seeds, "number of seeds")->capture_default_str();
  ab->add_option("--base-seed", acfg.base_seed, "first seed")->capture_default_str();
  ab->add_option("--iters", acfg.iters, "training iterations per arm")->capture_default_str();
  ab->add_option("--labeled", acfg.labeled, "labeled samples")->capture_default_str();
  ab->add_option("--unlabeled", acfg.unlabeled, "unlabeled samples")->capture_default_str();
  ab->add_option("--val", acfg.val, "validation samples")->capture_default_str();
  ab->add_option("--shape", ab_shape, "volume shape")->capture_default_str();
  ab->add_option("--crop", ab_crop, "training crop shape")->capture_default_str();
  ab->add_option("--noise", acfg.noise, "intensity noise level")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(count, shape_text, labeled, unlabeled, val, seed, noise, out_dir);
    if (csdm->parsed()) return cmd_compute_sdm(mask_path, sdm_out);
    if (tr->parsed()) return cmd_train(config_path, mode_override, resume);
    if (pr->parsed())
      return cmd_predict(ckpt, volume_path, out_mask, out_sdm, pred_nms, threshold);
    if (ev->parsed()) return cmd_evaluate(ev_ckpt, ev_manifest, ev_nms, ev_out);
    if (ab->parsed()) {
      acfg.out_dir = ab_out;
      acfg.shape = parse_shape(ab_shape);
      acfg.crop = parse_shape(ab_crop);
      return cmd_ablation(acfg);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
