#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "shapeseg/config_io.hpp"
#include "shapeseg/dataset.hpp"
#include "shapeseg/inference.hpp"
#include "shapeseg/losses.hpp"
#include "shapeseg/metrics.hpp"
#include "shapeseg/nn/discriminator.hpp"
#include "shapeseg/nn/optim.hpp"
#include "shapeseg/nn/segmenter.hpp"

/* Alternating adversarial training.
 *
 * Each iteration draws a batch of labeled and unlabeled crops and performs
 * two updates:
 *   1. segmenter step: one SGD-with-momentum step on
 *        dice + alpha * sdm-mse  (labeled crops)
 *        + beta(t) * [-mean log D(x, f_sdm(x))]  (unlabeled crops)
 *      with the discriminator frozen. The adversarial gradient reaches the
 *      segmenter only through the unlabeled SDM predictions; labeled
 *      discriminator outputs never contribute to this step.
 *   2. discriminator step: one Adam step on binary cross entropy separating
 *      (volume, predicted SDM) pairs of labeled crops from unlabeled ones,
 *      using the predictions from step 1 as fixed inputs.
 *
 * The adversarial weight follows a Gaussian warm-up; the segmenter learning
 * rate decays stepwise. Supervised ablation modes drop the unlabeled half of
 * the batch (and the SDM loss for plain supervised mode).
 */
namespace shapeseg::train {

inline double lr_schedule(std::int64_t t, const TrainConfig& cfg) {
  if (t < 0) throw std::invalid_argument("lr_schedule: t must be >= 0");
  const auto decays = t / cfg.lr_decay_every;
  return cfg.seg_lr * std::pow(cfg.lr_decay_factor, static_cast<double>(decays));
}

struct IterationRecord {
  std::int64_t t = 0;
  double dice = 0.0;      // mean dice loss over labeled crops
  double sdm_mse = 0.0;   // mean sdm regression loss over labeled crops
  double gen = 0.0;       // unweighted generator loss
  double disc = 0.0;      // discriminator bce
  double beta = 0.0;
  double lr = 0.0;
};

struct ValidationRecord {
  std::int64_t t = 0;
  double mean_dice = 0.0;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  double final_val_dice = 0.0;
  std::vector<IterationRecord> iterations;
  std::vector<ValidationRecord> validations;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg), seg_(cfg.segmenter), disc_(cfg.discriminator), rng_(cfg.seed) {
    cfg_.validate();
    if (cfg_.data_manifest.empty())
      throw std::invalid_argument("config: data_manifest is required");
    if (cfg_.out_dir.empty()) throw std::invalid_argument("config: out_dir is required");
    manifest_ = synth::load_manifest(cfg_.data_manifest);
    if (manifest_.split.labeled.empty())
      throw std::invalid_argument("config: dataset has no labeled samples");
    if (cfg_.mode == Mode::full && manifest_.split.unlabeled.empty()) {
      throw std::invalid_argument(
          "config: full mode requires unlabeled samples (data manifest lists none)");
    }
    const auto dir = std::filesystem::path(cfg_.data_manifest).parent_path();
    for (const auto& id : manifest_.split.labeled)
      labeled_.push_back(synth::load_sample(dir, id));
    for (const auto& id : manifest_.split.unlabeled)
      unlabeled_.push_back(synth::load_sample(dir, id));
    for (const auto& id : manifest_.split.val) val_.push_back(synth::load_sample(dir, id));

    theta_ = seg_.init_params(mix_seed(cfg_.seed, 1));
    zeta_ = disc_.init_params(mix_seed(cfg_.seed, 2));
    seg_opt_.momentum = static_cast<Real>(cfg_.momentum);
    seg_opt_.weight_decay = static_cast<Real>(cfg_.weight_decay);
    start_iter_ = 1;
  }

  void resume_from(const std::filesystem::path& checkpoint_path) {
    const nn::Checkpoint ckpt = nn::load_checkpoint(checkpoint_path);
    if (ckpt.at("seg/params").size() != seg_.param_count())
      throw std::runtime_error("resume: segmenter parameter size mismatch");
    if (ckpt.at("disc/params").size() != disc_.param_count())
      throw std::runtime_error("resume: discriminator parameter size mismatch");
    theta_ = ckpt.at("seg/params");
    zeta_ = ckpt.at("disc/params");
    seg_opt_.velocity = ckpt.at("opt_seg/velocity");
    disc_opt_.m = ckpt.at("opt_disc/m");
    disc_opt_.v = ckpt.at("opt_disc/v");
    disc_opt_.t = ckpt.config.at("adam_t").get<std::int64_t>();
    rng_.restore(ckpt.rng_state);
    start_iter_ = ckpt.iteration + 1;
  }

  TrainResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);
    write_json_file(to_json(cfg_), fs::path(cfg_.out_dir) / "config_echo.json");
    std::ofstream log(fs::path(cfg_.out_dir) / "train_log.jsonl",
                      start_iter_ > 1 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open training log in " + cfg_.out_dir);

    TrainResult result;
    const auto run_start = std::chrono::steady_clock::now();
    for (std::int64_t t = start_iter_; t <= cfg_.total_iters; ++t) {
      IterationRecord rec = iterate(t);
      result.iterations.push_back(rec);
      log << iteration_json(rec).dump() << "\n";
      if (!std::isfinite(rec.dice) || !std::isfinite(rec.sdm_mse) ||
          !std::isfinite(rec.gen) || !std::isfinite(rec.disc)) {
        save(t, fs::path(cfg_.out_dir) / "checkpoint_abort.ckpt");
        log.flush();
        throw std::runtime_error("non-finite loss at iteration " + std::to_string(t) +
                                 "; state saved to checkpoint_abort.ckpt");
      }
      if (t % cfg_.validate_every == 0 || t == cfg_.total_iters) {
        ValidationRecord val{t, validate()};
        result.validations.push_back(val);
        log << nlohmann::json{{"event", "val"}, {"t", val.t}, {"mean_dice", val.mean_dice}}
                   .dump()
            << "\n";
      }
      if (t % cfg_.checkpoint_every == 0 && t != cfg_.total_iters) {
        char name[40];
        std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt",
                      static_cast<long long>(t));
        save(t, fs::path(cfg_.out_dir) / name);
      }
    }
    result.final_checkpoint = fs::path(cfg_.out_dir) / "checkpoint_final.ckpt";
    save(cfg_.total_iters, result.final_checkpoint);
    result.final_val_dice =
        result.validations.empty() ? 0.0 : result.validations.back().mean_dice;
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    log << nlohmann::json{{"event", "summary"},
                          {"iterations", cfg_.total_iters},
                          {"wall_seconds", wall_s},
                          {"final_val_dice", result.final_val_dice}}
               .dump()
        << "\n";
    return result;
  }

  // mean validation dice at the current parameters (threshold 0.5, no NMS)
  double validate() {
    if (val_.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& sample : val_) {
      const Prediction pred = predict_volume(seg_, theta_, sample.image);
      const auto [dice, jaccard] =
          metrics::dice_jaccard(metrics::binarize(pred.prob, 0.5), sample.mask);
      acc += dice;
      (void)jaccard;
    }
    return acc / static_cast<double>(val_.size());
  }

  const nn::VectorX<Real>& segmenter_params() const { return theta_; }
  const nn::VectorX<Real>& discriminator_params() const { return zeta_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  struct BatchItem {
    nn::FeatureMap<Real> x;
    nn::RowMatrixX<Real> y;  // 1 x voxels, labeled only
    nn::RowMatrixX<Real> z;  // 1 x voxels, labeled only
    bool labeled = false;
  };

  BatchItem make_item(const synth::Sample& source, bool labeled) {
    synth::Sample s = synth::random_crop(source, cfg_.crop, rng_, /*recompute_sdm=*/labeled);
    if (cfg_.augment_flip) {
      for (int axis = 0; axis < 3; ++axis) s = synth::random_flip(s, axis, rng_);
    }
    BatchItem item;
    item.labeled = labeled;
    item.x = nn::FeatureMap<Real>::from_grid(s.image);
    if (labeled) {
      item.y.resize(1, s.mask.size());
      item.z.resize(1, s.sdm.size());
      for (Index i = 0; i < s.mask.size(); ++i) {
        item.y(0, i) = static_cast<Real>(s.mask[i]);
        item.z(0, i) = s.sdm[i];
      }
    }
    return item;
  }

  std::vector<BatchItem> sample_batch() {
    std::vector<BatchItem> batch;
    const int n_lab = cfg_.labeled_in_batch();
    for (int i = 0; i < n_lab; ++i) {
      const auto& s = labeled_[rng_.uniform_int(static_cast<std::int64_t>(labeled_.size()))];
      batch.push_back(make_item(s, true));
    }
    for (int i = n_lab; i < cfg_.batch_size; ++i) {
      const auto& s =
          unlabeled_[rng_.uniform_int(static_cast<std::int64_t>(unlabeled_.size()))];
      batch.push_back(make_item(s, false));
    }
    return batch;
  }

  IterationRecord iterate(std::int64_t t) {
    IterationRecord rec;
    rec.t = t;
    rec.lr = lr_schedule(t, cfg_);
    rec.beta = loss::beta_schedule(t, cfg_.effective_t_max(), cfg_.beta_max);
    const bool with_sdm = cfg_.mode != Mode::supervised;
    const bool adversarial = cfg_.mode == Mode::full;

    std::vector<BatchItem> batch = sample_batch();
    const int n_lab = cfg_.labeled_in_batch();
    const int n_unl = cfg_.batch_size - n_lab;

    nn::VectorX<Real> gseg = nn::VectorX<Real>::Zero(seg_.param_count());
    std::vector<nn::FeatureMap<Real>> sdm_preds(batch.size());

    // labeled crops: supervised loss, gradients scaled to batch means
    for (int i = 0; i < n_lab; ++i) {
      nn::FeatureMap<Real> m, s;
      seg_.forward(theta_, batch[i].x, m, s, seg_ws_, with_sdm);
      nn::FeatureMap<Real> gm(1, m.shape), gs;
      nn::RowMatrixX<Real> grad;
      rec.dice += loss::dice_loss_grad(m.values, batch[i].y, grad) / n_lab;
      gm.values = grad / static_cast<Real>(n_lab);
      if (with_sdm) {
        rec.sdm_mse += loss::mse_loss_grad(s.values, batch[i].z, grad) / n_lab;
        gs.shape = s.shape;
        gs.values = grad * static_cast<Real>(cfg_.alpha / n_lab);
        sdm_preds[i] = s;
      }
      seg_.backward(theta_, batch[i].x, &gm, with_sdm ? &gs : nullptr, seg_ws_, gseg);
    }

    // unlabeled crops: non-saturating adversarial gradient through the sdm
    // head only; discriminator parameters stay frozen here
    if (adversarial) {
      std::vector<Real> d_unl(n_unl);
      nn::VectorX<Real> gdisc_discard = nn::VectorX<Real>::Zero(disc_.param_count());
      for (int i = 0; i < n_unl; ++i) {
        BatchItem& item = batch[n_lab + i];
        nn::FeatureMap<Real> m, s;
        seg_.forward(theta_, item.x, m, s, seg_ws_, true);
        sdm_preds[n_lab + i] = s;
        const Real d = disc_.forward(zeta_, item.x, s, disc_ws_);
        d_unl[i] = d;
        const Real c = loss::clamp_prob(d);
        rec.gen += -std::log(c) / n_unl;
        const Real gd = static_cast<Real>(rec.beta) * (d == c ? -Real(1) / (n_unl * c) : Real(0));
        nn::FeatureMap<Real> gs;
        disc_.backward(zeta_, gd, disc_ws_, gdisc_discard, &gs);
        seg_.backward(theta_, item.x, nullptr, &gs, seg_ws_, gseg);
      }
    }

    seg_opt_.step(theta_, gseg, static_cast<Real>(rec.lr));

    // discriminator step on the pre-update predictions, which are fixed
    // inputs here: no gradient flows back into the segmenter. The bce is
    // separable per item, so each pair gets one forward/backward.
    if (adversarial) {
      nn::VectorX<Real> gdisc = nn::VectorX<Real>::Zero(disc_.param_count());
      for (int i = 0; i < cfg_.batch_size; ++i) {
        const Real d = disc_.forward(zeta_, batch[i].x, sdm_preds[i], disc_ws_);
        const Real c = loss::clamp_prob(d);
        Real gd;
        if (batch[i].labeled) {
          rec.disc += -std::log(c) / n_lab;
          gd = d == c ? -Real(1) / (n_lab * c) : Real(0);
        } else {
          rec.disc += -std::log(Real(1) - c) / n_unl;
          gd = d == c ? Real(1) / (n_unl * (Real(1) - c)) : Real(0);
        }
        disc_.backward(zeta_, gd, disc_ws_, gdisc, nullptr);
      }
      disc_opt_.step(zeta_, gdisc, static_cast<Real>(cfg_.disc_lr));
    }
    return rec;
  }

  nlohmann::json iteration_json(const IterationRecord& r) const {
    return {{"event", "iter"}, {"t", r.t},       {"dice", r.dice}, {"sdm_mse", r.sdm_mse},
            {"gen", r.gen},    {"disc", r.disc}, {"beta", r.beta}, {"lr", r.lr}};
  }

  void save(std::int64_t t, const std::filesystem::path& path) const {
    nn::Checkpoint ckpt;
    ckpt.iteration = t;
    ckpt.rng_state = rng_.state();
    ckpt.config = to_json(cfg_);
    ckpt.config["adam_t"] = disc_opt_.t;
    ckpt.tensors["seg/params"] = theta_;
    ckpt.tensors["disc/params"] = zeta_;
    ckpt.tensors["opt_seg/velocity"] =
        seg_opt_.velocity.size() ? seg_opt_.velocity
                                 : nn::VectorX<Real>::Zero(seg_.param_count());
    ckpt.tensors["opt_disc/m"] =
        disc_opt_.m.size() ? disc_opt_.m : nn::VectorX<Real>::Zero(disc_.param_count());
    ckpt.tensors["opt_disc/v"] =
        disc_opt_.v.size() ? disc_opt_.v : nn::VectorX<Real>::Zero(disc_.param_count());
    nn::save_checkpoint(ckpt, path);
  }

  TrainConfig cfg_;
  nn::Segmenter<Real> seg_;
  nn::Discriminator<Real> disc_;
  nn::VectorX<Real> theta_, zeta_;
  nn::SgdMomentum<Real> seg_opt_;
  nn::Adam<Real> disc_opt_;
  Rng rng_;
  synth::SplitManifest manifest_;
  std::vector<synth::Sample> labeled_, unlabeled_, val_;
  typename nn::Segmenter<Real>::Workspace seg_ws_;
  typename nn::Discriminator<Real>::Workspace disc_ws_;
  std::int64_t start_iter_ = 1;
};

inline TrainResult run_training(const TrainConfig& cfg,
                                const std::optional<std::string>& resume = std::nullopt) {
  Trainer trainer(cfg);
  if (resume) trainer.resume_from(*resume);
  return trainer.run();
}

}  // namespace shapeseg::train
