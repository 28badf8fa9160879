#pragma once

#include <string>
#include <vector>

#include "shapeseg/nn/layers.hpp"

/* Dual-head V-Net style segmentation network. An encoder/decoder with
 * stride-2 down convolutions, transposed-convolution upsampling and additive
 * skip connections; the shared decoder feeds two output branches:
 *
 *   probability head: 1x1x1 conv + sigmoid  -> per-voxel foreground score
 *   distance head:    3^3 conv block + 1x1x1 conv + tanh -> signed distance
 *
 * Channel width doubles per level; conv count per level is min(level+1, 3)
 * on both paths, mirroring the usual V-Net block depths.
 */
namespace shapeseg::nn {

enum class NormKind { none, instance };

struct SegmenterConfig {
  int in_channels = 1;
  int base_channels = 8;
  int levels = 3;
  NormKind norm = NormKind::instance;
  Act activation = Act::relu;

  int channels_at(int level) const { return base_channels << level; }
  int spatial_divisor() const { return 1 << (levels - 1); }

  void validate() const {
    if (levels < 2) throw std::invalid_argument("SegmenterConfig: levels must be >= 2");
    if (base_channels < 4)
      throw std::invalid_argument("SegmenterConfig: base_channels must be >= 4");
    if (in_channels != 1)
      throw std::invalid_argument("SegmenterConfig: only single-channel input supported");
  }
};

template <typename Scalar>
class Segmenter {
 public:
  explicit Segmenter(const SegmenterConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int L = cfg.levels;
    enc_.resize(L);
    down_.resize(L);
    up_.resize(L - 1);
    up_norm_.resize(L - 1);
    dec_.resize(L - 1);
    for (int l = 0; l < L; ++l) {
      const int ch = cfg.channels_at(l);
      if (l > 0) {
        down_[l].conv = {cfg.channels_at(l - 1), ch, 2, 2};
        setup_block(down_[l]);
        down_[l].reserve(layout_, "down" + std::to_string(l));
      }
      const int n = n_convs(l);
      enc_[l].resize(n);
      for (int i = 0; i < n; ++i) {
        const int in_ch = (l == 0 && i == 0) ? cfg.in_channels : ch;
        enc_[l][i].conv = {in_ch, ch, 3, 1};
        setup_block(enc_[l][i]);
        enc_[l][i].reserve(layout_, "enc" + std::to_string(l) + "." + std::to_string(i));
      }
    }
    for (int l = L - 2; l >= 0; --l) {
      up_[l] = {cfg.channels_at(l + 1), cfg.channels_at(l)};
      up_[l].reserve(layout_, "up" + std::to_string(l));
      up_norm_[l].channels = cfg.channels_at(l);
      if (cfg.norm == NormKind::instance)
        up_norm_[l].reserve(layout_, "up" + std::to_string(l) + ".norm");
      const int n = n_convs(l);
      dec_[l].resize(n);
      for (int i = 0; i < n; ++i) {
        dec_[l][i].conv = {cfg.channels_at(l), cfg.channels_at(l), 3, 1};
        setup_block(dec_[l][i]);
        dec_[l][i].reserve(layout_, "dec" + std::to_string(l) + "." + std::to_string(i));
      }
    }
    seg_head_ = {cfg.base_channels, 1, 1, 1};
    seg_head_.reserve(layout_, "seg_head");
    sdm_block_.conv = {cfg.base_channels, cfg.base_channels, 3, 1};
    setup_block(sdm_block_);
    sdm_block_.reserve(layout_, "sdm_block");
    sdm_head_ = {cfg.base_channels, 1, 1, 1};
    sdm_head_.reserve(layout_, "sdm_head");
  }

  const SegmenterConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  Index param_count() const { return layout_.size(); }

  VectorX<Scalar> init_params(std::uint64_t seed) const {
    return init_he_normal<Scalar>(layout_, seed);
  }

  struct Workspace {
    std::vector<std::vector<typename ConvBlock<Scalar>::Trace>> enc;
    std::vector<typename ConvBlock<Scalar>::Trace> down;
    std::vector<FeatureMap<Scalar>> up_pre;   // transposed conv output (pre-norm)
    std::vector<typename InstanceNorm<Scalar>::Cache> up_norm;
    std::vector<FeatureMap<Scalar>> up_out;   // after norm + activation
    std::vector<FeatureMap<Scalar>> fused;    // up_out + encoder skip
    std::vector<std::vector<typename ConvBlock<Scalar>::Trace>> dec;
    typename ConvBlock<Scalar>::Trace sdm_block;
    FeatureMap<Scalar> seg_logit, sdm_logit;  // post-activation head outputs
    Workbuf<Scalar> buf;
  };

  void check_input(const FeatureMap<Scalar>& x) const {
    const int div = cfg_.spatial_divisor();
    if (x.shape.depth % div || x.shape.height % div || x.shape.width % div) {
      throw std::invalid_argument("Segmenter: input " + x.shape.str() +
                                  " not divisible by " + std::to_string(div));
    }
    if (x.channels() != cfg_.in_channels)
      throw std::invalid_argument("Segmenter: wrong input channel count");
  }

  /* Runs the shared trunk and both heads. `m` receives the sigmoid
   * probability map, `s` the tanh signed-distance prediction; both match the
   * input's spatial shape. with_sdm=false skips the distance branch. */
  void forward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x, FeatureMap<Scalar>& m,
               FeatureMap<Scalar>& s, Workspace& ws, bool with_sdm = true) const {
    check_input(x);
    const int L = cfg_.levels;
    ws.enc.resize(L);
    ws.down.resize(L);
    ws.up_pre.resize(L - 1);
    ws.up_norm.resize(L - 1);
    ws.up_out.resize(L - 1);
    ws.fused.resize(L - 1);
    ws.dec.resize(L - 1);
    for (int l = 0; l < L; ++l) {
      ws.enc[l].resize(enc_[l].size());
      const FeatureMap<Scalar>* cur = &x;
      if (l > 0) {
        down_[l].forward(p, *enc_input(l, ws, x), ws.down[l], ws.buf);
        cur = &ws.down[l].out;
      }
      for (std::size_t i = 0; i < enc_[l].size(); ++i) {
        enc_[l][i].forward(p, *cur, ws.enc[l][i], ws.buf);
        cur = &ws.enc[l][i].out;
      }
    }
    const FeatureMap<Scalar>* cur = &ws.enc[L - 1].back().out;
    for (int l = L - 2; l >= 0; --l) {
      up_[l].forward(p, *cur, ws.up_pre[l], ws.buf);
      if (cfg_.norm == NormKind::instance) {
        up_norm_[l].forward(p, ws.up_pre[l], ws.up_out[l], ws.up_norm[l]);
      } else {
        ws.up_out[l] = ws.up_pre[l];
      }
      act_forward(cfg_.activation, ws.up_out[l].values);
      ws.fused[l].shape = ws.up_out[l].shape;
      ws.fused[l].values = ws.up_out[l].values + ws.enc[l].back().out.values;
      ws.dec[l].resize(dec_[l].size());
      const FeatureMap<Scalar>* dcur = &ws.fused[l];
      for (std::size_t i = 0; i < dec_[l].size(); ++i) {
        dec_[l][i].forward(p, *dcur, ws.dec[l][i], ws.buf);
        dcur = &ws.dec[l][i].out;
      }
      cur = &ws.dec[l].back().out;
    }
    const FeatureMap<Scalar>& trunk = *cur;
    seg_head_.forward(p, trunk, ws.seg_logit, ws.buf);
    act_forward(Act::sigmoid, ws.seg_logit.values);
    m = ws.seg_logit;
    if (with_sdm) {
      sdm_block_.forward(p, trunk, ws.sdm_block, ws.buf);
      sdm_head_.forward(p, ws.sdm_block.out, ws.sdm_logit, ws.buf);
      act_forward(Act::tanh, ws.sdm_logit.values);
      s = ws.sdm_logit;
    }
  }

  /* Accumulates d(loss)/d(params) into gp given head-output gradients.
   * Either head gradient may be null. The workspace must hold the traces of
   * the matching forward call. */
  void backward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x,
                const FeatureMap<Scalar>* gm, const FeatureMap<Scalar>* gs, Workspace& ws,
                VectorX<Scalar>& gp) const {
    const int L = cfg_.levels;
    const FeatureMap<Scalar>& trunk = ws.dec[0].back().out;
    FeatureMap<Scalar> gtrunk(trunk.channels(), trunk.shape);
    if (gm) {
      FeatureMap<Scalar> g = *gm;
      act_backward(Act::sigmoid, ws.seg_logit.values, g.values);
      FeatureMap<Scalar> gt;
      seg_head_.backward(p, trunk, g, &gt, gp, ws.buf);
      gtrunk.values += gt.values;
    }
    if (gs) {
      FeatureMap<Scalar> g = *gs;
      act_backward(Act::tanh, ws.sdm_logit.values, g.values);
      FeatureMap<Scalar> gblock;
      sdm_head_.backward(p, ws.sdm_block.out, g, &gblock, gp, ws.buf);
      FeatureMap<Scalar> gt;
      sdm_block_.backward(p, trunk, ws.sdm_block, gblock, &gt, gp, ws.buf);
      gtrunk.values += gt.values;
    }

    // decoder, bottom-up from level 0 to L-2; skip gradients flow into the
    // encoder tails
    std::vector<FeatureMap<Scalar>> genc_out(L);  // grad at enc[l].back().out
    FeatureMap<Scalar> gcur = std::move(gtrunk);
    for (int l = 0; l <= L - 2; ++l) {
      for (int i = static_cast<int>(dec_[l].size()) - 1; i >= 0; --i) {
        const FeatureMap<Scalar>& input = i == 0 ? ws.fused[l] : ws.dec[l][i - 1].out;
        FeatureMap<Scalar> gin;
        dec_[l][i].backward(p, input, ws.dec[l][i], gcur, &gin, gp, ws.buf);
        gcur = std::move(gin);
      }
      // fused = up_out + skip: gradient copies to both branches
      genc_out[l] = gcur;
      act_backward(cfg_.activation, ws.up_out[l].values, gcur.values);
      if (cfg_.norm == NormKind::instance) {
        FeatureMap<Scalar> gpre;
        up_norm_[l].backward(p, gcur, ws.up_norm[l], gpre, gp);
        gcur = std::move(gpre);
      }
      const FeatureMap<Scalar>& up_in =
          l == L - 2 ? ws.enc[L - 1].back().out : ws.dec[l + 1].back().out;
      FeatureMap<Scalar> gin;
      up_[l].backward(p, up_in, gcur, &gin, gp, ws.buf);
      gcur = std::move(gin);
    }
    genc_out[L - 1] = std::move(gcur);

    // encoder, deepest level first; each level passes its input gradient to
    // the previous level through the down convolution
    for (int l = L - 1; l >= 0; --l) {
      FeatureMap<Scalar> g = std::move(genc_out[l]);
      for (int i = static_cast<int>(enc_[l].size()) - 1; i >= 0; --i) {
        const FeatureMap<Scalar>* input;
        if (i > 0) input = &ws.enc[l][i - 1].out;
        else if (l > 0) input = &ws.down[l].out;
        else input = &x;
        FeatureMap<Scalar> gin;
        const bool need_gin = !(l == 0 && i == 0);
        enc_[l][i].backward(p, *input, ws.enc[l][i], g, need_gin ? &gin : nullptr, gp, ws.buf);
        g = std::move(gin);
      }
      if (l > 0) {
        FeatureMap<Scalar> gin;
        down_[l].backward(p, *enc_input(l, ws, x), ws.down[l], g, &gin, gp, ws.buf);
        genc_out[l - 1].values += gin.values;
      }
    }
  }

 private:
  static int n_convs(int level) { return std::min(level + 1, 3); }

  void setup_block(ConvBlock<Scalar>& b) const {
    b.use_norm = cfg_.norm == NormKind::instance;
    b.norm.channels = b.conv.out_ch;
    b.act = cfg_.activation;
  }

  // input of the down conv at level l (= previous level's encoder tail)
  const FeatureMap<Scalar>* enc_input(int l, Workspace& ws, const FeatureMap<Scalar>& x) const {
    if (l == 0) return &x;
    return &ws.enc[l - 1].back().out;
  }

  SegmenterConfig cfg_;
  ParamLayout layout_;
  std::vector<std::vector<ConvBlock<Scalar>>> enc_;
  std::vector<ConvBlock<Scalar>> down_;               // down_[0] unused
  std::vector<TransposedConv3d<Scalar>> up_;          // per level 0..L-2
  std::vector<InstanceNorm<Scalar>> up_norm_;
  std::vector<std::vector<ConvBlock<Scalar>>> dec_;
  Conv3d<Scalar> seg_head_;
  ConvBlock<Scalar> sdm_block_;
  Conv3d<Scalar> sdm_head_;
};

}  // namespace shapeseg::nn
