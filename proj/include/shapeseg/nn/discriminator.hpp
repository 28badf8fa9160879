#pragma once

#include <array>
#include <string>
#include <vector>

#include "shapeseg/nn/layers.hpp"

/* Discriminator for (volume, signed-distance-map) pairs. The two inputs are
 * fused by channel concatenation, passed through five 4^3 stride-2
 * convolutions with leaky ReLUs (DCGAN-style, no normalization), then global
 * average pooling and a two-layer MLP ending in a sigmoid. Global pooling
 * makes the network independent of the patch size. */
namespace shapeseg::nn {

struct DiscriminatorConfig {
  std::array<int, 5> conv_channels = {16, 32, 64, 128, 256};
  int kernel = 4;
  int stride = 2;
  int mlp_hidden = 64;
  double leaky_slope = 0.2;
};

template <typename Scalar>
class Discriminator {
 public:
  explicit Discriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    int in_ch = 2;  // volume + sdm
    for (int i = 0; i < 5; ++i) {
      convs_[i].conv = {in_ch, cfg.conv_channels[i], cfg.kernel, cfg.stride};
      convs_[i].use_norm = false;
      convs_[i].act = Act::leaky_relu;
      convs_[i].leaky_slope = static_cast<Scalar>(cfg.leaky_slope);
      convs_[i].reserve(layout_, "conv" + std::to_string(i));
      in_ch = cfg.conv_channels[i];
    }
    fc1_ = {cfg.conv_channels[4], cfg.mlp_hidden};
    fc1_.reserve(layout_, "fc1");
    fc2_ = {cfg.mlp_hidden, 1};
    fc2_.reserve(layout_, "fc2");
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  Index param_count() const { return layout_.size(); }

  VectorX<Scalar> init_params(std::uint64_t seed) const {
    return init_he_normal<Scalar>(layout_, seed);
  }

  struct Workspace {
    FeatureMap<Scalar> input;  // fused 2-channel input
    std::array<typename ConvBlock<Scalar>::Trace, 5> conv;
    VectorX<Scalar> pooled;
    VectorX<Scalar> h1;        // post-activation hidden
    Scalar prob = Scalar(0);
    Workbuf<Scalar> buf;
  };

  // Returns the probability that the pair comes from the labeled pool.
  Scalar forward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& volume,
                 const FeatureMap<Scalar>& sdm, Workspace& ws) const {
    if (volume.shape != sdm.shape) {
      throw std::invalid_argument("Discriminator: volume " + volume.shape.str() +
                                  " and sdm " + sdm.shape.str() + " shapes differ");
    }
    ws.input.shape = volume.shape;
    ws.input.values.resize(2, volume.voxels());
    ws.input.values.row(0) = volume.values.row(0);
    ws.input.values.row(1) = sdm.values.row(0);
    const FeatureMap<Scalar>* cur = &ws.input;
    for (int i = 0; i < 5; ++i) {
      convs_[i].forward(p, *cur, ws.conv[i], ws.buf);
      cur = &ws.conv[i].out;
    }
    ws.pooled = cur->values.rowwise().mean();
    fc1_.forward(p, ws.pooled, ws.h1);
    ws.h1 = (ws.h1.array() >= Scalar(0)).select(ws.h1, ws.h1 * static_cast<Scalar>(cfg_.leaky_slope));
    VectorX<Scalar> logit;
    fc2_.forward(p, ws.h1, logit);
    ws.prob = Scalar(1) / (Scalar(1) + std::exp(-logit[0]));
    return ws.prob;
  }

  /* Backpropagates d(loss)/d(prob). Parameter gradients accumulate into gp;
   * when grad_sdm is non-null it receives d(loss)/d(sdm input), the path the
   * segmenter trains through. */
  void backward(const VectorX<Scalar>& p, Scalar gprob, Workspace& ws, VectorX<Scalar>& gp,
                FeatureMap<Scalar>* grad_sdm = nullptr) const {
    VectorX<Scalar> glogit(1);
    glogit[0] = gprob * ws.prob * (Scalar(1) - ws.prob);
    VectorX<Scalar> gh1;
    fc2_.backward(p, ws.h1, glogit, &gh1, gp);
    gh1 = (ws.h1.array() > Scalar(0))
              .select(gh1, gh1 * static_cast<Scalar>(cfg_.leaky_slope));
    VectorX<Scalar> gpooled;
    fc1_.backward(p, ws.pooled, gh1, &gpooled, gp);
    const FeatureMap<Scalar>& last = ws.conv[4].out;
    FeatureMap<Scalar> g(last.channels(), last.shape);
    g.values.colwise() = gpooled / static_cast<Scalar>(last.voxels());
    for (int i = 4; i >= 1; --i) {
      FeatureMap<Scalar> gin;
      convs_[i].backward(p, ws.conv[i - 1].out, ws.conv[i], g, &gin, gp, ws.buf);
      g = std::move(gin);
    }
    FeatureMap<Scalar> gin;
    convs_[0].backward(p, ws.input, ws.conv[0], g, grad_sdm ? &gin : nullptr, gp, ws.buf);
    if (grad_sdm) {
      grad_sdm->shape = ws.input.shape;
      grad_sdm->values.resize(1, gin.voxels());
      grad_sdm->values.row(0) = gin.values.row(1);
    }
  }

 private:
  DiscriminatorConfig cfg_;
  ParamLayout layout_;
  std::array<ConvBlock<Scalar>, 5> convs_;
  Dense<Scalar> fc1_, fc2_;
};

}  // namespace shapeseg::nn
