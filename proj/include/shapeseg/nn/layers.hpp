#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "shapeseg/nn/feature_map.hpp"
#include "shapeseg/rng.hpp"

/* Building blocks for the 3D networks. Parameters of a whole network live in
 * one flat vector; each layer holds offsets into it, assigned through a
 * ParamLayout at construction. Gradients accumulate into an equally shaped
 * flat vector, which keeps optimizers, checkpoints and finite-difference
 * probes trivial.
 *
 * Convolutions lower onto GEMM via im2col with SAME padding:
 * out = ceil(n / stride) per axis, zero padding split low/high. For the odd
 * kernels at stride 1 this is the usual symmetric padding; for the 4^3
 * stride-2 discriminator kernels it degrades gracefully on small inputs.
 */
namespace shapeseg::nn {

struct ParamEntry {
  std::string name;
  Index rows = 0, cols = 0;
  Index offset = 0;
};

class ParamLayout {
 public:
  Index add(const std::string& name, Index rows, Index cols) {
    const Index off = size_;
    entries_.push_back({name, rows, cols, off});
    size_ += rows * cols;
    return off;
  }
  Index size() const { return size_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry& find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw std::invalid_argument("ParamLayout: no parameter named '" + name + "'");
  }

 private:
  std::vector<ParamEntry> entries_;
  Index size_ = 0;
};

// scratch buffers shared by the conv layers of one network pass
template <typename Scalar>
struct Workbuf {
  RowMatrixX<Scalar> cols;   // im2col matrix
  RowMatrixX<Scalar> dcols;  // col2im gradient staging
};

namespace detail {

inline Index same_out(Index n, int stride) { return (n + stride - 1) / stride; }

inline void same_pad(Index n, int kernel, int stride, Index& lo, Index& hi) {
  const Index out = same_out(n, stride);
  const Index total = std::max<Index>((out - 1) * stride + kernel - n, 0);
  lo = total / 2;
  hi = total - lo;
}

}  // namespace detail

template <typename Scalar>
struct Conv3d {
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 1;
  Index w_off = -1, b_off = -1;

  void reserve(ParamLayout& layout, const std::string& name) {
    const Index k3 = static_cast<Index>(kernel) * kernel * kernel;
    w_off = layout.add(name + ".w", out_ch, in_ch * k3);
    b_off = layout.add(name + ".b", out_ch, 1);
  }

  VolumeShape out_shape(const VolumeShape& in) const {
    return VolumeShape(detail::same_out(in.depth, stride), detail::same_out(in.height, stride),
                       detail::same_out(in.width, stride));
  }

  void im2col(const FeatureMap<Scalar>& x, RowMatrixX<Scalar>& cols) const {
    const VolumeShape& in = x.shape;
    const VolumeShape out = out_shape(in);
    const Index k3 = static_cast<Index>(kernel) * kernel * kernel;
    cols.resize(in_ch * k3, out.voxels());
    Index pd, pdh, ph, phh, pw, pwh;
    detail::same_pad(in.depth, kernel, stride, pd, pdh);
    detail::same_pad(in.height, kernel, stride, ph, phh);
    detail::same_pad(in.width, kernel, stride, pw, pwh);
    for (int c = 0; c < in_ch; ++c) {
      const Scalar* xc = x.channel(c);
      for (int kd = 0; kd < kernel; ++kd)
        for (int kh = 0; kh < kernel; ++kh)
          for (int kw = 0; kw < kernel; ++kw) {
            const Index row = ((static_cast<Index>(c) * kernel + kd) * kernel + kh) * kernel + kw;
            Scalar* dst = cols.data() + row * cols.cols();
            for (Index od = 0; od < out.depth; ++od) {
              const Index id = od * stride - pd + kd;
              const bool d_ok = id >= 0 && id < in.depth;
              for (Index oh = 0; oh < out.height; ++oh) {
                const Index ih = oh * stride - ph + kh;
                const bool h_ok = ih >= 0 && ih < in.height;
                Scalar* seg = dst + (od * out.height + oh) * out.width;
                if (!d_ok || !h_ok) {
                  std::fill(seg, seg + out.width, Scalar(0));
                  continue;
                }
                const Scalar* xrow = xc + (id * in.height + ih) * in.width;
                if (stride == 1) {
                  // source is contiguous along w up to the pad fringes
                  const Index iw0 = -pw + kw;
                  const Index ow_begin = std::max<Index>(0, -iw0);
                  const Index ow_end = std::min<Index>(out.width, in.width - iw0);
                  std::fill(seg, seg + std::min(ow_begin, out.width), Scalar(0));
                  if (ow_end > ow_begin)
                    std::copy(xrow + iw0 + ow_begin, xrow + iw0 + ow_end, seg + ow_begin);
                  if (ow_end < out.width)
                    std::fill(seg + std::max(ow_end, ow_begin), seg + out.width, Scalar(0));
                } else {
                  for (Index ow = 0; ow < out.width; ++ow) {
                    const Index iw = ow * stride - pw + kw;
                    seg[ow] = (iw >= 0 && iw < in.width) ? xrow[iw] : Scalar(0);
                  }
                }
              }
            }
          }
    }
  }

  void col2im_add(const RowMatrixX<Scalar>& dcols, FeatureMap<Scalar>& gx) const {
    const VolumeShape& in = gx.shape;
    const VolumeShape out = out_shape(in);
    Index pd, pdh, ph, phh, pw, pwh;
    detail::same_pad(in.depth, kernel, stride, pd, pdh);
    detail::same_pad(in.height, kernel, stride, ph, phh);
    detail::same_pad(in.width, kernel, stride, pw, pwh);
    for (int c = 0; c < in_ch; ++c) {
      Scalar* gc = gx.channel(c);
      for (int kd = 0; kd < kernel; ++kd)
        for (int kh = 0; kh < kernel; ++kh)
          for (int kw = 0; kw < kernel; ++kw) {
            const Index row = ((static_cast<Index>(c) * kernel + kd) * kernel + kh) * kernel + kw;
            const Scalar* src = dcols.data() + row * dcols.cols();
            for (Index od = 0; od < out.depth; ++od) {
              const Index id = od * stride - pd + kd;
              if (id < 0 || id >= in.depth) continue;
              for (Index oh = 0; oh < out.height; ++oh) {
                const Index ih = oh * stride - ph + kh;
                if (ih < 0 || ih >= in.height) continue;
                const Scalar* seg = src + (od * out.height + oh) * out.width;
                Scalar* grow = gc + (id * in.height + ih) * in.width;
                if (stride == 1) {
                  const Index iw0 = -pw + kw;
                  const Index ow_begin = std::max<Index>(0, -iw0);
                  const Index ow_end = std::min<Index>(out.width, in.width - iw0);
                  for (Index ow = ow_begin; ow < ow_end; ++ow) grow[iw0 + ow] += seg[ow];
                } else {
                  for (Index ow = 0; ow < out.width; ++ow) {
                    const Index iw = ow * stride - pw + kw;
                    if (iw >= 0 && iw < in.width) grow[iw] += seg[ow];
                  }
                }
              }
            }
          }
    }
  }

  void forward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x, FeatureMap<Scalar>& y,
               Workbuf<Scalar>& buf) const {
    const Index k3 = static_cast<Index>(kernel) * kernel * kernel;
    im2col(x, buf.cols);
    y.shape = out_shape(x.shape);
    Eigen::Map<const MatrixX<Scalar>> W(p.data() + w_off, out_ch, in_ch * k3);
    Eigen::Map<const VectorX<Scalar>> b(p.data() + b_off, out_ch);
    y.values.noalias() = W * buf.cols;
    y.values.colwise() += b;
  }

  void backward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x,
                const FeatureMap<Scalar>& gy, FeatureMap<Scalar>* gx, VectorX<Scalar>& gp,
                Workbuf<Scalar>& buf) const {
    const Index k3 = static_cast<Index>(kernel) * kernel * kernel;
    im2col(x, buf.cols);
    Eigen::Map<MatrixX<Scalar>> gW(gp.data() + w_off, out_ch, in_ch * k3);
    Eigen::Map<VectorX<Scalar>> gb(gp.data() + b_off, out_ch);
    gW.noalias() += gy.values * buf.cols.transpose();
    gb.noalias() += gy.values.rowwise().sum();
    if (gx) {
      Eigen::Map<const MatrixX<Scalar>> W(p.data() + w_off, out_ch, in_ch * k3);
      buf.dcols.resize(in_ch * k3, gy.voxels());
      buf.dcols.noalias() = W.transpose() * gy.values;
      gx->resize(in_ch, x.shape);
      col2im_add(buf.dcols, *gx);
    }
  }
};

/* 2x upsampling transposed convolution, kernel 2 stride 2: every input voxel
 * scatters into a disjoint 2^3 output block, so forward is GEMM + scatter and
 * backward a gather + two GEMMs. */
template <typename Scalar>
struct TransposedConv3d {
  int in_ch = 0, out_ch = 0;
  Index w_off = -1, b_off = -1;

  void reserve(ParamLayout& layout, const std::string& name) {
    w_off = layout.add(name + ".w", out_ch * 8, in_ch);
    b_off = layout.add(name + ".b", out_ch, 1);
  }

  static VolumeShape out_shape(const VolumeShape& in) {
    return VolumeShape(in.depth * 2, in.height * 2, in.width * 2);
  }

  void forward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x, FeatureMap<Scalar>& y,
               Workbuf<Scalar>& buf) const {
    const VolumeShape& in = x.shape;
    const VolumeShape out = out_shape(in);
    Eigen::Map<const MatrixX<Scalar>> W(p.data() + w_off, out_ch * 8, in_ch);
    Eigen::Map<const VectorX<Scalar>> b(p.data() + b_off, out_ch);
    buf.cols.resize(out_ch * 8, in.voxels());
    buf.cols.noalias() = W * x.values;
    y.shape = out;
    y.values.resize(out_ch, out.voxels());
    for (int oc = 0; oc < out_ch; ++oc) {
      Scalar* yc = y.channel(oc);
      const Scalar bias = b(oc);
      for (int kd = 0; kd < 2; ++kd)
        for (int kh = 0; kh < 2; ++kh)
          for (int kw = 0; kw < 2; ++kw) {
            const Scalar* src =
                buf.cols.data() +
                ((((static_cast<Index>(kd) * 2 + kh) * 2 + kw) * out_ch) + oc) * in.voxels();
            for (Index d = 0; d < in.depth; ++d)
              for (Index h = 0; h < in.height; ++h) {
                const Scalar* srow = src + (d * in.height + h) * in.width;
                Scalar* yrow =
                    yc + ((2 * d + kd) * out.height + 2 * h + kh) * out.width + kw;
                for (Index w = 0; w < in.width; ++w) yrow[2 * w] = srow[w] + bias;
              }
          }
    }
  }

  void backward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x,
                const FeatureMap<Scalar>& gy, FeatureMap<Scalar>* gx, VectorX<Scalar>& gp,
                Workbuf<Scalar>& buf) const {
    const VolumeShape& in = x.shape;
    const VolumeShape out = gy.shape;
    buf.dcols.resize(out_ch * 8, in.voxels());
    for (int oc = 0; oc < out_ch; ++oc) {
      const Scalar* gc = gy.channel(oc);
      for (int kd = 0; kd < 2; ++kd)
        for (int kh = 0; kh < 2; ++kh)
          for (int kw = 0; kw < 2; ++kw) {
            Scalar* dst =
                buf.dcols.data() +
                ((((static_cast<Index>(kd) * 2 + kh) * 2 + kw) * out_ch) + oc) * in.voxels();
            for (Index d = 0; d < in.depth; ++d)
              for (Index h = 0; h < in.height; ++h) {
                Scalar* drow = dst + (d * in.height + h) * in.width;
                const Scalar* grow =
                    gc + ((2 * d + kd) * out.height + 2 * h + kh) * out.width + kw;
                for (Index w = 0; w < in.width; ++w) drow[w] = grow[2 * w];
              }
          }
    }
    Eigen::Map<MatrixX<Scalar>> gW(gp.data() + w_off, out_ch * 8, in_ch);
    Eigen::Map<VectorX<Scalar>> gb(gp.data() + b_off, out_ch);
    gW.noalias() += buf.dcols * x.values.transpose();
    gb.noalias() += gy.values.rowwise().sum();
    if (gx) {
      Eigen::Map<const MatrixX<Scalar>> W(p.data() + w_off, out_ch * 8, in_ch);
      gx->resize(in_ch, in);
      gx->values.noalias() = W.transpose() * buf.dcols;
    }
  }
};

// Per-channel, per-sample normalization with affine scale/shift.
template <typename Scalar>
struct InstanceNorm {
  int channels = 0;
  Index g_off = -1, b_off = -1;
  static constexpr Scalar kEps = Scalar(1e-5);

  struct Cache {
    RowMatrixX<Scalar> xhat;
    VectorX<Scalar> invstd;
  };

  void reserve(ParamLayout& layout, const std::string& name) {
    g_off = layout.add(name + ".gamma", channels, 1);
    b_off = layout.add(name + ".beta", channels, 1);
  }

  void forward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x, FeatureMap<Scalar>& y,
               Cache& cache) const {
    const Index v = x.voxels();
    Eigen::Map<const VectorX<Scalar>> gamma(p.data() + g_off, channels);
    Eigen::Map<const VectorX<Scalar>> beta(p.data() + b_off, channels);
    const VectorX<Scalar> mean = x.values.rowwise().mean();
    cache.xhat = x.values.colwise() - mean;
    const VectorX<Scalar> var = cache.xhat.array().square().rowwise().mean().matrix();
    cache.invstd = (var.array() + kEps).rsqrt().matrix();
    cache.xhat.array().colwise() *= cache.invstd.array();
    y.shape = x.shape;
    y.values = (cache.xhat.array().colwise() * gamma.array()).matrix();
    y.values.colwise() += beta;
    (void)v;
  }

  void backward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& gy, const Cache& cache,
                FeatureMap<Scalar>& gx, VectorX<Scalar>& gp) const {
    Eigen::Map<const VectorX<Scalar>> gamma(p.data() + g_off, channels);
    Eigen::Map<VectorX<Scalar>> ggamma(gp.data() + g_off, channels);
    Eigen::Map<VectorX<Scalar>> gbeta(gp.data() + b_off, channels);
    ggamma.noalias() += (gy.values.array() * cache.xhat.array()).rowwise().sum().matrix();
    gbeta.noalias() += gy.values.rowwise().sum();
    // dxhat = gy * gamma; dx = invstd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
    RowMatrixX<Scalar> dxhat = (gy.values.array().colwise() * gamma.array()).matrix();
    const VectorX<Scalar> m1 = dxhat.rowwise().mean();
    const VectorX<Scalar> m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean().matrix();
    gx.shape = gy.shape;
    gx.values = dxhat.colwise() - m1;
    gx.values.array() -= cache.xhat.array().colwise() * m2.array();
    gx.values.array().colwise() *= cache.invstd.array();
  }
};

enum class Act { none, relu, leaky_relu, sigmoid, tanh };

template <typename Scalar>
void act_forward(Act act, RowMatrixX<Scalar>& v, Scalar leaky_slope = Scalar(0.01)) {
  switch (act) {
    case Act::none:
      return;
    case Act::relu:
      v = v.array().max(Scalar(0)).matrix();
      return;
    case Act::leaky_relu:
      v = (v.array() >= Scalar(0)).select(v, v * leaky_slope);
      return;
    case Act::sigmoid:
      v = ((Scalar(1) + (-v.array()).exp()).inverse()).matrix();
      return;
    case Act::tanh:
      v = v.array().tanh().matrix();
      return;
  }
}

/* In-place gradient through an activation given its output. Monotone
 * piecewise-linear activations recover the input sign from the output,
 * saturating ones use the standard output-form derivatives. */
template <typename Scalar>
void act_backward(Act act, const RowMatrixX<Scalar>& y, RowMatrixX<Scalar>& g,
                  Scalar leaky_slope = Scalar(0.01)) {
  switch (act) {
    case Act::none:
      return;
    case Act::relu:
      g = (y.array() > Scalar(0)).select(g, RowMatrixX<Scalar>::Zero(g.rows(), g.cols()));
      return;
    case Act::leaky_relu:
      g = (y.array() > Scalar(0)).select(g, g * leaky_slope);
      return;
    case Act::sigmoid:
      g.array() *= y.array() * (Scalar(1) - y.array());
      return;
    case Act::tanh:
      g.array() *= Scalar(1) - y.array().square();
      return;
  }
}

template <typename Scalar>
struct Dense {
  int in = 0, out = 0;
  Index w_off = -1, b_off = -1;

  void reserve(ParamLayout& layout, const std::string& name) {
    w_off = layout.add(name + ".w", out, in);
    b_off = layout.add(name + ".b", out, 1);
  }

  void forward(const VectorX<Scalar>& p, const VectorX<Scalar>& x, VectorX<Scalar>& y) const {
    Eigen::Map<const MatrixX<Scalar>> W(p.data() + w_off, out, in);
    Eigen::Map<const VectorX<Scalar>> b(p.data() + b_off, out);
    y.noalias() = W * x;
    y += b;
  }

  void backward(const VectorX<Scalar>& p, const VectorX<Scalar>& x, const VectorX<Scalar>& gy,
                VectorX<Scalar>* gx, VectorX<Scalar>& gp) const {
    Eigen::Map<MatrixX<Scalar>> gW(gp.data() + w_off, out, in);
    Eigen::Map<VectorX<Scalar>> gb(gp.data() + b_off, out);
    gW.noalias() += gy * x.transpose();
    gb.noalias() += gy;
    if (gx) {
      Eigen::Map<const MatrixX<Scalar>> W(p.data() + w_off, out, in);
      gx->noalias() = W.transpose() * gy;
    }
  }
};

/* Conv + optional instance norm + activation, the repeating unit of both
 * networks. The workspace stores the block output and the norm cache; the
 * caller keeps the block input alive for the backward pass. */
template <typename Scalar>
struct ConvBlock {
  Conv3d<Scalar> conv;
  InstanceNorm<Scalar> norm;
  bool use_norm = true;
  Act act = Act::relu;
  Scalar leaky_slope = Scalar(0.01);

  struct Trace {
    FeatureMap<Scalar> pre;  // conv output (before norm), only kept when use_norm
    typename InstanceNorm<Scalar>::Cache norm_cache;
    FeatureMap<Scalar> out;
  };

  void reserve(ParamLayout& layout, const std::string& name) {
    conv.reserve(layout, name + ".conv");
    if (use_norm) norm.reserve(layout, name + ".norm");
  }

  void forward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x, Trace& t,
               Workbuf<Scalar>& buf) const {
    if (use_norm) {
      conv.forward(p, x, t.pre, buf);
      norm.forward(p, t.pre, t.out, t.norm_cache);
    } else {
      conv.forward(p, x, t.out, buf);
    }
    act_forward(act, t.out.values, leaky_slope);
  }

  // consumes t.out's gradient `gy` (modified in place by the activation)
  void backward(const VectorX<Scalar>& p, const FeatureMap<Scalar>& x, const Trace& t,
                FeatureMap<Scalar>& gy, FeatureMap<Scalar>* gx, VectorX<Scalar>& gp,
                Workbuf<Scalar>& buf) const {
    act_backward(act, t.out.values, gy.values, leaky_slope);
    if (use_norm) {
      FeatureMap<Scalar> gpre;
      norm.backward(p, gy, t.norm_cache, gpre, gp);
      conv.backward(p, x, gpre, gx, gp, buf);
    } else {
      conv.backward(p, x, gy, gx, gp, buf);
    }
  }
};

// He-style fan-in initialization over a whole layout; norm scales start at 1.
template <typename Scalar>
VectorX<Scalar> init_he_normal(const ParamLayout& layout, std::uint64_t seed) {
  VectorX<Scalar> p = VectorX<Scalar>::Zero(layout.size());
  Rng rng(seed);
  for (const auto& e : layout.entries()) {
    const bool is_weight = e.name.size() >= 2 && e.name.rfind(".w") == e.name.size() - 2;
    const bool is_gamma = e.name.size() >= 6 && e.name.rfind(".gamma") == e.name.size() - 6;
    if (is_weight) {
      const double std = std::sqrt(2.0 / static_cast<double>(e.cols));
      for (Index i = 0; i < e.rows * e.cols; ++i)
        p[e.offset + i] = static_cast<Scalar>(rng.normal(0.0, std));
    } else if (is_gamma) {
      for (Index i = 0; i < e.rows * e.cols; ++i) p[e.offset + i] = Scalar(1);
    }
    // biases and beta stay zero
  }
  return p;
}

}  // namespace shapeseg::nn
