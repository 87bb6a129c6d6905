#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "disam/datamodel.hpp"
#include "disam/errors.hpp"
#include "disam/rng.hpp"
#include "disam/tensor.hpp"

namespace disam {
namespace net {

// Per-domain translation networks. Encoders halve the spatial size twice,
// so the latent shape is (latent_channels, image_size/4, image_size/4).
struct NetworkConfig {
  int image_size = 64;        // 256 at paper scale
  int base_channels = 16;     // 64 at paper scale
  int latent_channels = 64;   // 256 at paper scale
  int n_res_blocks_total = 4; // split evenly between encoder and decoder
  int n_domains = 2;
  int disc_layers = 3;
  uint64_t seed = 0;

  void validate() const;
  int latent_hw() const { return image_size / 4; }
  bool operator==(const NetworkConfig&) const = default;
};

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

template <typename T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

// Saved activations for one forward call. A network used several times in
// one step gets one Ctx per call site, so shared weights backprop cleanly.
template <typename T>
struct Ctx {
  std::vector<Tensor<T>> saved;
  std::vector<Ctx<T>> children;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  // ctx == nullptr runs in inference mode (nothing saved).
  virtual Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {}
};

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Unrolls (C,H,W) into a (C*k*k, OH*OW) patch matrix for stride/pad conv.
template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, int oh, int ow, Tensor<T>& col) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  col = Tensor<T>({c * k * k, oh * ow});
  const T* src = x.data();
  T* dst = col.data();
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = dst + (static_cast<int64_t>((ci * k + ky) * k + kx)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = T(0);
            continue;
          }
          const T* src_row = src + (static_cast<int64_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * ow + ox] = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
          }
        }
      }
}

// Scatter-add inverse of im2col onto a (C,H,W) canvas.
template <typename T>
void col2im(const Tensor<T>& col, int k, int stride, int pad, int oh, int ow, Tensor<T>& x) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  x.fill(T(0));
  const T* src = col.data();
  T* dst = x.data();
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = src + (static_cast<int64_t>((ci * k + ky) * k + kx)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst_row = dst + (static_cast<int64_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst_row[ix] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
    w_.value = Tensor<T>({out_ch, in_ch * kernel * kernel});
    b_.value = Tensor<T>({out_ch});
  }

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const override {
    if (x.ndim() != 3 || x.dim(0) != in_)
      throw ShapeMismatch("conv input " + x.shape_str() + ", expected channels " +
                          std::to_string(in_));
    const int oh = out_size(x.dim(1)), ow = out_size(x.dim(2));
    Tensor<T> col;
    detail::im2col(x, k_, stride_, pad_, oh, ow, col);
    Tensor<T> y({out_, oh, ow});
    detail::MatMap<T> ym(y.data(), out_, oh * ow);
    detail::ConstMatMap<T> wm(w_.value.data(), out_, in_ * k_ * k_);
    detail::ConstMatMap<T> cm(col.data(), in_ * k_ * k_, oh * ow);
    ym.noalias() = wm * cm;
    for (int o = 0; o < out_; ++o) ym.row(o).array() += b_.value[o];
    if (ctx) ctx->saved = {x};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) override {
    const Tensor<T>& x = ctx.saved[0];
    const int oh = gy.dim(1), ow = gy.dim(2);
    detail::ConstMatMap<T> gym(gy.data(), out_, oh * ow);
    for (int o = 0; o < out_; ++o) b_.grad[o] += gym.row(o).sum();

    Tensor<T> col;
    detail::im2col(x, k_, stride_, pad_, oh, ow, col);
    detail::ConstMatMap<T> cm(col.data(), in_ * k_ * k_, oh * ow);
    detail::MatMap<T> gwm(w_.grad.data(), out_, in_ * k_ * k_);
    gwm.noalias() += gym * cm.transpose();

    Tensor<T> gcol({in_ * k_ * k_, oh * ow});
    detail::MatMap<T> gcm(gcol.data(), in_ * k_ * k_, oh * ow);
    detail::ConstMatMap<T> wm(w_.value.data(), out_, in_ * k_ * k_);
    gcm.noalias() = wm.transpose() * gym;
    Tensor<T> gx(x.shape());
    detail::col2im(gcol, k_, stride_, pad_, oh, ow, gx);
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".w", &w_});
    out.push_back({prefix + ".b", &b_});
  }

 private:
  int in_, out_, k_, stride_, pad_;
  Param<T> w_, b_;
};

// Fractionally-strided convolution; doubles the spatial size with the
// default (k=3, stride=2, pad=1, output_pad=1) geometry.
template <typename T>
class ConvTranspose2d : public Layer<T> {
 public:
  ConvTranspose2d(int in_ch, int out_ch, int kernel = 3, int stride = 2, int pad = 1,
                  int output_pad = 1)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad), opad_(output_pad) {
    w_.value = Tensor<T>({in_ch, out_ch * kernel * kernel});
    b_.value = Tensor<T>({out_ch});
  }

  int out_size(int in) const { return (in - 1) * stride_ - 2 * pad_ + k_ + opad_; }

  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const override {
    if (x.ndim() != 3 || x.dim(0) != in_)
      throw ShapeMismatch("tconv input " + x.shape_str() + ", expected channels " +
                          std::to_string(in_));
    const int ih = x.dim(1), iw = x.dim(2);
    const int oh = out_size(ih), ow = out_size(iw);
    Tensor<T> col({out_ * k_ * k_, ih * iw});
    detail::MatMap<T> cm(col.data(), out_ * k_ * k_, ih * iw);
    detail::ConstMatMap<T> wm(w_.value.data(), in_, out_ * k_ * k_);
    detail::ConstMatMap<T> xm(x.data(), in_, ih * iw);
    cm.noalias() = wm.transpose() * xm;
    Tensor<T> y({out_, oh, ow});
    detail::col2im(col, k_, stride_, pad_, ih, iw, y);
    detail::MatMap<T> ym(y.data(), out_, oh * ow);
    for (int o = 0; o < out_; ++o) ym.row(o).array() += b_.value[o];
    if (ctx) ctx->saved = {x};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) override {
    const Tensor<T>& x = ctx.saved[0];
    const int ih = x.dim(1), iw = x.dim(2);
    const int oh = gy.dim(1), ow = gy.dim(2);
    detail::ConstMatMap<T> gym(gy.data(), out_, oh * ow);
    for (int o = 0; o < out_; ++o) b_.grad[o] += gym.row(o).sum();

    Tensor<T> col;
    detail::im2col(gy, k_, stride_, pad_, ih, iw, col);
    detail::ConstMatMap<T> cm(col.data(), out_ * k_ * k_, ih * iw);

    detail::ConstMatMap<T> xm(x.data(), in_, ih * iw);
    detail::MatMap<T> gwm(w_.grad.data(), in_, out_ * k_ * k_);
    gwm.noalias() += xm * cm.transpose();

    Tensor<T> gx({in_, ih, iw});
    detail::MatMap<T> gxm(gx.data(), in_, ih * iw);
    detail::ConstMatMap<T> wm(w_.value.data(), in_, out_ * k_ * k_);
    gxm.noalias() = wm * cm;
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".w", &w_});
    out.push_back({prefix + ".b", &b_});
  }

 private:
  int in_, out_, k_, stride_, pad_, opad_;
  Param<T> w_, b_;
};

// Per-sample, per-channel normalization without affine parameters.
template <typename T>
class InstanceNorm : public Layer<T> {
 public:
  explicit InstanceNorm(double eps = 1e-5) : eps_(eps) {}

  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const override {
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor<T> y(x.shape());
    Tensor<T> invstd({c});
    for (int ci = 0; ci < c; ++ci) {
      const T* xp = x.data() + static_cast<int64_t>(ci) * hw;
      T* yp = y.data() + static_cast<int64_t>(ci) * hw;
      double mean = 0;
      for (int i = 0; i < hw; ++i) mean += xp[i];
      mean /= hw;
      double var = 0;
      for (int i = 0; i < hw; ++i) {
        const double d = xp[i] - mean;
        var += d * d;
      }
      var /= hw;
      const double is = 1.0 / std::sqrt(var + eps_);
      invstd[ci] = static_cast<T>(is);
      for (int i = 0; i < hw; ++i) yp[i] = static_cast<T>((xp[i] - mean) * is);
    }
    if (ctx) ctx->saved = {y, invstd};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) override {
    const Tensor<T>& y = ctx.saved[0];
    const Tensor<T>& invstd = ctx.saved[1];
    const int c = gy.dim(0), hw = gy.dim(1) * gy.dim(2);
    Tensor<T> gx(gy.shape());
    for (int ci = 0; ci < c; ++ci) {
      const T* gp = gy.data() + static_cast<int64_t>(ci) * hw;
      const T* yp = y.data() + static_cast<int64_t>(ci) * hw;
      T* op = gx.data() + static_cast<int64_t>(ci) * hw;
      double mg = 0, mgy = 0;
      for (int i = 0; i < hw; ++i) {
        mg += gp[i];
        mgy += static_cast<double>(gp[i]) * yp[i];
      }
      mg /= hw;
      mgy /= hw;
      const double is = invstd[ci];
      for (int i = 0; i < hw; ++i)
        op[i] = static_cast<T>(is * (gp[i] - mg - yp[i] * mgy));
    }
    return gx;
  }

 private:
  double eps_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const override {
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (ctx) ctx->saved = {x};
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) override {
    const Tensor<T>& x = ctx.saved[0];
    Tensor<T> gx(gy.shape());
    for (int64_t i = 0; i < gy.numel(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
    return gx;
  }
};

template <typename T>
class LeakyReLU : public Layer<T> {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(static_cast<T>(slope)) {}
  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const override {
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
    if (ctx) ctx->saved = {x};
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) override {
    const Tensor<T>& x = ctx.saved[0];
    Tensor<T> gx(gy.shape());
    for (int64_t i = 0; i < gy.numel(); ++i) gx[i] = x[i] > T(0) ? gy[i] : slope_ * gy[i];
    return gx;
  }

 private:
  T slope_;
};

template <typename T>
class Tanh : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const override {
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
    if (ctx) ctx->saved = {y};
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) override {
    const Tensor<T>& y = ctx.saved[0];
    Tensor<T> gx(gy.shape());
    for (int64_t i = 0; i < gy.numel(); ++i) gx[i] = gy[i] * (T(1) - y[i] * y[i]);
    return gx;
  }
};

// conv-norm-relu-conv-norm with an identity skip.
template <typename T>
class ResBlock : public Layer<T> {
 public:
  explicit ResBlock(int channels)
      : c1_(channels, channels, 3, 1, 1), c2_(channels, channels, 3, 1, 1) {}

  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const override {
    if (ctx) ctx->children.resize(5);
    auto sub = [&](int i) { return ctx ? &ctx->children[static_cast<size_t>(i)] : nullptr; };
    Tensor<T> h = c1_.forward(x, sub(0));
    h = n1_.forward(h, sub(1));
    h = relu_.forward(h, sub(2));
    h = c2_.forward(h, sub(3));
    h = n2_.forward(h, sub(4));
    for (int64_t i = 0; i < h.numel(); ++i) h[i] += x[i];
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) override {
    Tensor<T> g = n2_.backward(gy, ctx.children[4]);
    g = c2_.backward(g, ctx.children[3]);
    g = relu_.backward(g, ctx.children[2]);
    g = n1_.backward(g, ctx.children[1]);
    g = c1_.backward(g, ctx.children[0]);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gy[i];
    return g;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    c1_.collect_params(prefix + ".c1", out);
    c2_.collect_params(prefix + ".c2", out);
  }

 private:
  Conv2d<T> c1_, c2_;
  InstanceNorm<T> n1_, n2_;
  ReLU<T> relu_;
};

template <typename T>
class Net {
 public:
  Net() = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, Ctx<T>* ctx) const {
    if (ctx) ctx->children.resize(layers_.size());
    Tensor<T> h = x;
    for (size_t i = 0; i < layers_.size(); ++i)
      h = layers_[i]->forward(h, ctx ? &ctx->children[i] : nullptr);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx<T>& ctx) {
    Tensor<T> g = gy;
    for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, ctx.children[i]);
    return g;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_params(prefix + "." + std::to_string(i), out);
  }

  std::vector<NamedParam<T>> params(const std::string& prefix) {
    std::vector<NamedParam<T>> out;
    collect_params(prefix, out);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <typename T>
Net<T> make_encoder(const NetworkConfig& cfg) {
  Net<T> n;
  const int mid = cfg.latent_channels / 2;
  n.add(std::make_unique<Conv2d<T>>(3, cfg.base_channels, 7, 1, 3));
  n.add(std::make_unique<InstanceNorm<T>>());
  n.add(std::make_unique<ReLU<T>>());
  n.add(std::make_unique<Conv2d<T>>(cfg.base_channels, mid, 3, 2, 1));
  n.add(std::make_unique<InstanceNorm<T>>());
  n.add(std::make_unique<ReLU<T>>());
  n.add(std::make_unique<Conv2d<T>>(mid, cfg.latent_channels, 3, 2, 1));
  n.add(std::make_unique<InstanceNorm<T>>());
  n.add(std::make_unique<ReLU<T>>());
  for (int i = 0; i < cfg.n_res_blocks_total / 2; ++i)
    n.add(std::make_unique<ResBlock<T>>(cfg.latent_channels));
  return n;
}

template <typename T>
Net<T> make_decoder(const NetworkConfig& cfg) {
  Net<T> n;
  const int mid = cfg.latent_channels / 2;
  for (int i = 0; i < cfg.n_res_blocks_total / 2; ++i)
    n.add(std::make_unique<ResBlock<T>>(cfg.latent_channels));
  n.add(std::make_unique<ConvTranspose2d<T>>(cfg.latent_channels, mid));
  n.add(std::make_unique<InstanceNorm<T>>());
  n.add(std::make_unique<ReLU<T>>());
  n.add(std::make_unique<ConvTranspose2d<T>>(mid, cfg.base_channels));
  n.add(std::make_unique<InstanceNorm<T>>());
  n.add(std::make_unique<ReLU<T>>());
  n.add(std::make_unique<Conv2d<T>>(cfg.base_channels, 3, 7, 1, 3));
  n.add(std::make_unique<Tanh<T>>());
  return n;
}

// PatchGAN-style stack: disc_layers stride-2 convolutions, then a stride-1
// scoring convolution; no sigmoid (least-squares objective).
template <typename T>
Net<T> make_discriminator(const NetworkConfig& cfg) {
  Net<T> n;
  int ch = cfg.base_channels;
  n.add(std::make_unique<Conv2d<T>>(3, ch, 4, 2, 1));
  n.add(std::make_unique<LeakyReLU<T>>(0.2));
  for (int l = 1; l < cfg.disc_layers; ++l) {
    const int next = std::min(ch * 2, cfg.base_channels * 8);
    n.add(std::make_unique<Conv2d<T>>(ch, next, 4, 2, 1));
    n.add(std::make_unique<InstanceNorm<T>>());
    n.add(std::make_unique<LeakyReLU<T>>(0.2));
    ch = next;
  }
  n.add(std::make_unique<Conv2d<T>>(ch, 1, 3, 1, 1));
  return n;
}

// Gaussian(0, 0.02) weights, zero biases, drawn in declaration order.
template <typename T>
void init_params(std::vector<NamedParam<T>>& params, Rng& rng) {
  for (auto& np : params) {
    np.param->zero_grad();
    auto& v = np.param->value;
    if (np.name.size() >= 2 && np.name.compare(np.name.size() - 2, 2, ".b") == 0) {
      v.fill(T(0));
    } else {
      for (int64_t i = 0; i < v.numel(); ++i) v[i] = static_cast<T>(rng.normal(0.0, 0.02));
    }
  }
}

// Per-domain encoder/decoder/discriminator parameters plus training state.
struct ModelBundle {
  NetworkConfig config;
  std::vector<Net<float>> encoders;
  std::vector<Net<float>> decoders;
  std::vector<Net<float>> discriminators;
  int epoch = 0;
  Stage stage = Stage::coarse;
  std::string fingerprint;  // checksum over the named parameter table

  std::vector<NamedParam<float>> named_params();
  std::vector<NamedParam<float>> generator_params();      // encoders + decoders
  std::vector<NamedParam<float>> discriminator_params();  // all domains
  void refresh_fingerprint();
};

ModelBundle init_bundle(const NetworkConfig& cfg);

FeatureMap encode(const ModelBundle& bundle, DomainId domain, const ImageSample& img);
FeatureMap encode_pixels(const ModelBundle& bundle, DomainId domain, const TensorF& pixels);
TensorF decode(const ModelBundle& bundle, DomainId domain, const FeatureMap& z);
TensorF discriminate(const ModelBundle& bundle, DomainId domain, const TensorF& raster);

}  // namespace net
}  // namespace disam
