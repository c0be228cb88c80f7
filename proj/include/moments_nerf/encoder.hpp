#pragma once

// The Moments encoder: Gabor layer -> stacked Zernike convolution layers ->
// small strided convolutional trunk whose per-block taps are upsampled back to
// the input resolution, concatenated, and projected to the feature width.
// Also: bilinear feature sampling and the MFV1 feature-volume file format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "binary_io.hpp"
#include "errors.hpp"
#include "gabor.hpp"
#include "ops.hpp"
#include "tensor.hpp"
#include "zernike.hpp"

namespace moments_nerf::encoder {

template <class T>
using Var = typename Tape<T>::Var;

// ---------------------------------------------------------------------------
// Zernike convolution.

/// Depthwise kernels of a Zernike layer: [window^2 x 15], column k holds
/// cell_weight * V_k so that a correlation yields the window's moment alpha_k.
inline RowMat<double> moment_kernels(const zernike::ZernikeBasis& basis) {
  const int taps = basis.size() * basis.size();
  RowMat<double> k(taps, basis.count());
  for (int t = 0; t < taps; ++t)
    for (int b = 0; b < basis.count(); ++b) k(t, b) = basis.grid.cell_weight[t] * basis.values[b][t];
  return k;
}

struct ZernikeConvLayer {
  int window_radius = 3;
  zernike::ZernikeBasis basis;
  RowMat<double> mix;  // C_out x (C_in * 15), column c * 15 + k
  std::vector<double> bias;

  static ZernikeConvLayer make(int window_radius, int c_in, int c_out) {
    require(window_radius >= 2, "ZernikeConvLayer: window radius must be >= 2 (grid >= 5)");
    ZernikeConvLayer l;
    l.window_radius = window_radius;
    l.basis = zernike::build_basis(zernike::kOrderCap, 2 * window_radius + 1);
    l.mix = RowMat<double>::Zero(c_out, c_in * zernike::kNumBasis);
    l.bias.assign(static_cast<std::size_t>(c_out), 0.0);
    return l;
  }

  int c_in() const { return static_cast<int>(mix.cols()) / zernike::kNumBasis; }
  int c_out() const { return static_cast<int>(mix.rows()); }
};

namespace detail {

/// Gather table for reflect-padded windows: [H*W x k*k] flat source pixel indices.
inline std::vector<int> window_table(int h, int w, int ksize, int stride, int& out_h, int& out_w) {
  const int half = ksize / 2;
  out_h = (h + stride - 1) / stride;
  out_w = (w + stride - 1) / stride;
  std::vector<int> table(static_cast<std::size_t>(out_h) * out_w * ksize * ksize);
  std::size_t q = 0;
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      for (int a = 0; a < ksize; ++a) {
        const int ii = reflect_index(i * stride + a - half, h);
        for (int b = 0; b < ksize; ++b) table[q++] = ii * w + reflect_index(j * stride + b - half, w);
      }
  return table;
}

/// window_table() memoized per thread; tables depend only on the geometry.
inline std::shared_ptr<const std::vector<int>> cached_window_table(int h, int w, int ksize, int stride, int& out_h,
                                                                   int& out_w) {
  struct Entry {
    std::shared_ptr<const std::vector<int>> table;
    int oh, ow;
  };
  thread_local std::map<std::array<int, 4>, Entry> cache;
  const std::array<int, 4> key{h, w, ksize, stride};
  auto it = cache.find(key);
  if (it == cache.end()) {
    Entry e;
    e.table = std::make_shared<const std::vector<int>>(window_table(h, w, ksize, stride, e.oh, e.ow));
    it = cache.emplace(key, std::move(e)).first;
  }
  out_h = it->second.oh;
  out_w = it->second.ow;
  return it->second.table;
}

/// im2col: [P x C*k*k] with column c * k*k + tap.
template <class T>
RowMat<T> gather_patches(const Tensor<T>& x, const std::vector<int>& table, int taps) {
  const int c = x.dim(2);
  const int rows = static_cast<int>(table.size() / taps);
  RowMat<T> patches(rows, c * taps);
  for (int p = 0; p < rows; ++p) {
    const int* src = &table[static_cast<std::size_t>(p) * taps];
    T* dst = patches.row(p).data();
    for (int ch = 0; ch < c; ++ch)
      for (int t = 0; t < taps; ++t) dst[ch * taps + t] = x.data[static_cast<std::size_t>(src[t]) * c + ch];
  }
  return patches;
}

template <class T>
void scatter_patches(const RowMat<T>& dpatches, const std::vector<int>& table, int taps, Tensor<T>& dx) {
  const int c = dx.dim(2);
  for (int p = 0; p < dpatches.rows(); ++p) {
    const int* src = &table[static_cast<std::size_t>(p) * taps];
    const T* g = dpatches.row(p).data();
    for (int ch = 0; ch < c; ++ch)
      for (int t = 0; t < taps; ++t) dx.data[static_cast<std::size_t>(src[t]) * c + ch] += g[ch * taps + t];
  }
}

}  // namespace detail

/// Plain evaluation: per pixel and channel, the 15 moments of the reflect-padded
/// window, then the learnable mix as a linear map.
inline Tensor<double> zernike_conv(const Tensor<double>& input, const ZernikeConvLayer& layer) {
  require(input.rank() == 3, "zernike_conv: expected H x W x C input");
  require(input.dim(2) == layer.c_in(), "zernike_conv: input has " + std::to_string(input.dim(2)) +
                                            " channels, layer expects " + std::to_string(layer.c_in()));
  const int ksize = layer.basis.size();
  const int taps = ksize * ksize;
  int oh = 0, ow = 0;
  const auto table = detail::window_table(input.dim(0), input.dim(1), ksize, 1, oh, ow);
  const RowMat<double> kern = moment_kernels(layer.basis);
  const RowMat<double> patches = detail::gather_patches(input, table, taps);
  const int c_in = input.dim(2);
  RowMat<double> moments(patches.rows(), c_in * zernike::kNumBasis);
  for (int c = 0; c < c_in; ++c)
    moments.middleCols(c * zernike::kNumBasis, zernike::kNumBasis).noalias() = patches.middleCols(c * taps, taps) * kern;
  Tensor<double> out({oh, ow, layer.c_out()});
  auto om = as_matrix(out);
  om.noalias() = moments * layer.mix.transpose();
  for (int p = 0; p < om.rows(); ++p)
    for (int o = 0; o < om.cols(); ++o) om(p, o) += layer.bias[o];
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions on a tape.

/// Reflect-padded k x k convolution with stride. weight [C_out x C_in*k*k], bias [C_out].
template <class T>
Var<T> conv2d_op(Tape<T>& tape, Var<T> x, Var<T> weight, Var<T> bias, int ksize, int stride) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  require(xv.rank() == 3, "conv2d: expected H x W x C input");
  const int c_in = xv.dim(2);
  const int taps = ksize * ksize;
  require(wv.rank() == 2 && wv.dim(1) == c_in * taps, "conv2d: weight shape " + shape_str(wv.shape) + " mismatch");
  int oh = 0, ow = 0;
  auto table = detail::cached_window_table(xv.dim(0), xv.dim(1), ksize, stride, oh, ow);
  auto patches = std::make_shared<const RowMat<T>>(detail::gather_patches(xv, *table, taps));
  const int c_out = wv.dim(0);
  Tensor<T> out({oh, ow, c_out});
  auto om = as_matrix(out);
  om.noalias() = (*patches) * as_matrix(wv).transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(tape.value(bias).data.data(), c_out);
  return tape.op(std::move(out), {x, weight, bias}, [x, weight, bias, table, patches, taps](Tape<T>& t, int self) {
    const auto g = as_matrix(t.grad_of(self));
    if (t.needs_grad(weight.id)) as_matrix(t.grad_buffer(weight.id)).noalias() += g.transpose() * (*patches);
    if (t.needs_grad(bias.id)) {
      auto& gb = t.grad_buffer(bias.id);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> b(gb.data.data(), gb.size());
      for (Eigen::Index r = 0; r < g.rows(); ++r) b += g.row(r);
    }
    if (t.needs_grad(x.id)) {
      const RowMat<T> dpatch = g * as_matrix(t.value_of(weight.id));
      detail::scatter_patches(dpatch, *table, taps, t.grad_buffer(x.id));
    }
  });
}

/// Fixed basis folded into the learnable mix: [C_out x C_in*k*k] with
/// weight[o, c*k*k + t] = sum_n mix[o, c*15 + n] * kern[t, n].
template <class T>
Var<T> moment_weight_op(Tape<T>& tape, Var<T> mix, std::shared_ptr<const RowMat<T>> kern) {
  const auto& mv = tape.value(mix);
  const int nb = static_cast<int>(kern->cols());
  const int taps = static_cast<int>(kern->rows());
  const int c_out = mv.dim(0);
  const int c_in = mv.dim(1) / nb;
  Tensor<T> w({c_out, c_in * taps});
  auto wm = as_matrix(w);
  const auto mm = as_matrix(mv);
  for (int c = 0; c < c_in; ++c) wm.middleCols(c * taps, taps).noalias() = mm.middleCols(c * nb, nb) * kern->transpose();
  return tape.op(std::move(w), {mix}, [mix, kern, nb, taps, c_in](Tape<T>& t, int self) {
    const auto g = as_matrix(t.grad_of(self));
    auto gm = as_matrix(t.grad_buffer(mix.id));
    for (int c = 0; c < c_in; ++c) gm.middleCols(c * nb, nb).noalias() += g.middleCols(c * taps, taps) * (*kern);
  });
}

/// Tape version: x [H x W x C_in], mix [C_out x C_in*15], bias [C_out]. Runs as
/// a plain k x k convolution with the folded weight, which is the same linear map.
template <class T>
Var<T> zernike_conv_op(Tape<T>& tape, Var<T> x, Var<T> mix, Var<T> bias, std::shared_ptr<const RowMat<T>> kern,
                       int ksize) {
  const auto& xv = tape.value(x);
  const auto& mv = tape.value(mix);
  require(xv.rank() == 3, "zernike_conv: expected H x W x C input");
  const int c_in = xv.dim(2);
  const int nb = static_cast<int>(kern->cols());
  require(kern->rows() == ksize * ksize, "zernike_conv: kernel table does not match window size");
  require(mv.rank() == 2 && mv.dim(1) == c_in * nb, "zernike_conv: mix shape " + shape_str(mv.shape) +
                                                       " does not match " + std::to_string(c_in) + " input channels");
  require(tape.value(bias).size() == static_cast<std::size_t>(mv.dim(0)), "zernike_conv: bias width mismatch");
  return conv2d_op(tape, x, moment_weight_op(tape, mix, kern), bias, ksize, 1);
}

namespace detail {
struct Lerp {
  int i0, i1;
  double w1;  // weight of i1
};
inline std::vector<Lerp> resize_weights(int in, int out) {
  std::vector<Lerp> ws(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    ws[o] = {i0, i1, src - i0};
  }
  return ws;
}
}  // namespace detail

/// Bilinear resize of an H x W x C map (half-pixel centers, edge clamped).
template <class T>
Var<T> upsample_op(Tape<T>& tape, Var<T> x, int out_h, int out_w) {
  const auto& xv = tape.value(x);
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  const auto wy = detail::resize_weights(h, out_h);
  const auto wx = detail::resize_weights(w, out_w);
  Tensor<T> out({out_h, out_w, c});
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      const auto [y0, y1, fy] = wy[i];
      const auto [x0, x1, fx] = wx[j];
      const T w00 = T((1 - fy) * (1 - fx)), w01 = T((1 - fy) * fx), w10 = T(fy * (1 - fx)), w11 = T(fy * fx);
      for (int ch = 0; ch < c; ++ch)
        out.at(i, j, ch) = w00 * xv.at(y0, x0, ch) + w01 * xv.at(y0, x1, ch) + w10 * xv.at(y1, x0, ch) +
                           w11 * xv.at(y1, x1, ch);
    }
  return tape.op(std::move(out), {x}, [x, wy, wx, c](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < wy.size(); ++i)
      for (std::size_t j = 0; j < wx.size(); ++j) {
        const auto [y0, y1, fy] = wy[i];
        const auto [x0, x1, fx] = wx[j];
        const T w00 = T((1 - fy) * (1 - fx)), w01 = T((1 - fy) * fx), w10 = T(fy * (1 - fx)), w11 = T(fy * fx);
        for (int ch = 0; ch < c; ++ch) {
          const T gv = g.at(static_cast<int>(i), static_cast<int>(j), ch);
          gx.at(y0, x0, ch) += w00 * gv;
          gx.at(y0, x1, ch) += w01 * gv;
          gx.at(y1, x0, ch) += w10 * gv;
          gx.at(y1, x1, ch) += w11 * gv;
        }
      }
  });
}

/// Same data, new shape (element count must match).
template <class T>
Var<T> reshape_op(Tape<T>& tape, Var<T> x, Shape shape) {
  Tensor<T> out = tape.value(x);
  require(shape_numel(shape) == out.size(), "reshape: element count mismatch");
  out.shape = std::move(shape);
  return tape.op(std::move(out), {x}, [x](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
  });
}

// ---------------------------------------------------------------------------
// Feature volumes and bilinear sampling.

/// Per-pixel feature map, H x W x D.
template <class T>
struct FeatureVolume {
  Tensor<T> data;

  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }
  int depth() const { return data.dim(2); }
};

struct BilinearTap {
  int idx[4];   // flat pixel indices
  double w[4];  // convex weights
};

/// Clamp (u, v) to [0, W-1] x [0, H-1] and return the 4 corner taps.
inline BilinearTap bilinear_tap(int height, int width, double u, double v) {
  u = std::clamp(u, 0.0, static_cast<double>(width - 1));
  v = std::clamp(v, 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(std::floor(u)), width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(v)), height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  return {{y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1},
          {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx}};
}

template <class T>
std::vector<T> sample_bilinear(const FeatureVolume<T>& vol, double u, double v) {
  require(std::isfinite(u) && std::isfinite(v), "sample_bilinear: non-finite coordinates");
  const int d = vol.depth();
  const auto tap = bilinear_tap(vol.height(), vol.width(), u, v);
  std::vector<T> out(static_cast<std::size_t>(d), T(0));
  for (int k = 0; k < 4; ++k)
    for (int c = 0; c < d; ++c) out[c] += T(tap.w[k]) * vol.data.data[static_cast<std::size_t>(tap.idx[k]) * d + c];
  return out;
}

/// Tape version: vol [H x W x D], uv [N x 2] constant pixel coordinates -> [N x D].
template <class T>
Var<T> sample_bilinear_op(Tape<T>& tape, Var<T> vol, const std::vector<BilinearTap>& taps) {
  const auto& vv = tape.value(vol);
  const int d = vv.dim(2);
  const int n = static_cast<int>(taps.size());
  Tensor<T> out({n, d});
  for (int r = 0; r < n; ++r) {
    const auto& tp = taps[r];
    T* dst = &out.data[static_cast<std::size_t>(r) * d];
    for (int k = 0; k < 4; ++k) {
      const T wk = T(tp.w[k]);
      const T* src = &vv.data[static_cast<std::size_t>(tp.idx[k]) * d];
      for (int c = 0; c < d; ++c) dst[c] += wk * src[c];
    }
  }
  return tape.op(std::move(out), {vol}, [vol, taps, d](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    auto& gv = t.grad_buffer(vol.id);
    for (std::size_t r = 0; r < taps.size(); ++r) {
      const T* src = &g.data[r * d];
      for (int k = 0; k < 4; ++k) {
        const T wk = T(taps[r].w[k]);
        T* dst = &gv.data[static_cast<std::size_t>(taps[r].idx[k]) * d];
        for (int c = 0; c < d; ++c) dst[c] += wk * src[c];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Encoder configuration and parameters.

enum class Activation { SuperGaussian, Identity };

struct EncoderConfig {
  bool use_gabor = true;
  int gabor_orientations = 4;
  std::vector<double> gabor_wavelengths{3.0, 6.0};
  int gabor_kernel = 9;

  bool use_zernike = true;
  int zernike_layers = 15;
  int zernike_radius = 3;
  int zernike_channels = 8;

  std::vector<int> trunk_widths{16, 32, 64, 64};
  int feature_dim = 64;

  Activation activation = Activation::SuperGaussian;
  double spread = 1.0;  // initial Super-Gaussian spread
  int power = 4;
  double init_gain = 1.0;

  int gabor_filters() const { return gabor_orientations * static_cast<int>(gabor_wavelengths.size()); }
  int zernike_in() const { return use_gabor ? gabor_filters() : 3; }
  int trunk_in() const { return use_zernike ? zernike_channels : zernike_in(); }
  int concat_width() const {
    int s = 0;
    for (int w : trunk_widths) s += w;
    return s;
  }
};

/// Register encoder parameters under "encoder.*" in params.
template <class T>
void init_encoder(ParamSet<T>& params, const EncoderConfig& cfg, std::mt19937_64& rng) {
  require(cfg.feature_dim >= 1, "encoder: feature_dim must be positive");
  require(!cfg.trunk_widths.empty(), "encoder: trunk needs at least one block");
  const int nb = zernike::kNumBasis;
  if (cfg.use_gabor) {
    const auto bank = gabor::default_bank(cfg.gabor_orientations, cfg.gabor_wavelengths);
    Tensor<T> g({static_cast<int>(bank.size()), gabor::kParamsPerFilter});
    for (std::size_t f = 0; f < bank.size(); ++f) {
      const auto& [p, k] = bank[f];
      const double flat[] = {p.lambda, p.theta, p.psi, p.sigma, p.gamma, k.k1, k.k2, k.k3, k.k4, k.k5};
      for (int q = 0; q < gabor::kParamsPerFilter; ++q) g.at(static_cast<int>(f), q) = static_cast<T>(flat[q]);
    }
    params.add("encoder.gabor", "gabor", std::move(g));
  }
  if (cfg.use_zernike) {
    int c_in = cfg.zernike_in();
    for (int l = 0; l < cfg.zernike_layers; ++l) {
      const std::string base = "encoder.zernike." + std::to_string(l);
      const int fan_in = c_in * nb;
      params.add(base + ".mix", "zernike",
                 random_normal<T>(rng, cfg.zernike_channels, fan_in, cfg.init_gain / std::sqrt(fan_in)));
      params.add(base + ".bias", "zernike", Tensor<T>({cfg.zernike_channels}));
      params.add(base + ".spread", "zernike", Tensor<T>({1}, static_cast<T>(cfg.spread)));
      c_in = cfg.zernike_channels;
    }
  }
  int c_in = cfg.trunk_in();
  for (std::size_t b = 0; b < cfg.trunk_widths.size(); ++b) {
    const std::string base = "encoder.trunk." + std::to_string(b);
    const int fan_in = c_in * 9;
    params.add(base + ".weight", "trunk",
               random_normal<T>(rng, cfg.trunk_widths[b], fan_in, cfg.init_gain / std::sqrt(fan_in)));
    params.add(base + ".bias", "trunk", Tensor<T>({cfg.trunk_widths[b]}));
    params.add(base + ".spread", "trunk", Tensor<T>({1}, static_cast<T>(cfg.spread)));
    c_in = cfg.trunk_widths[b];
  }
  const int cat = cfg.concat_width();
  params.add("encoder.out.weight", "trunk",
             random_normal<T>(rng, cfg.feature_dim, cat, cfg.init_gain / std::sqrt(cat)));
  params.add("encoder.out.bias", "trunk", Tensor<T>({cfg.feature_dim}));
}

template <class T>
struct MomentKernelCache {
  std::shared_ptr<const RowMat<T>> kernels;
  int ksize = 0;

  static MomentKernelCache make(int radius) {
    const auto basis = zernike::build_basis(zernike::kOrderCap, 2 * radius + 1);
    const RowMat<double> k = moment_kernels(basis);
    return {std::make_shared<const RowMat<T>>(k.cast<T>()), basis.size()};
  }
};

template <class T>
Var<T> activate(Tape<T>& tape, Var<T> x, Var<T> spread, const EncoderConfig& cfg) {
  if (cfg.activation == Activation::Identity) return x;
  return ops::super_gaussian(tape, x, spread, cfg.power);
}

/// Record the encoder on a tape. image is an H x W x 3 var; returns H x W x D.
template <class T>
Var<T> encode_op(Tape<T>& tape, Var<T> image, ParamSet<T>& params, const EncoderConfig& cfg,
                 const MomentKernelCache<T>& kernels) {
  const auto& iv = tape.value(image);
  require(iv.rank() == 3 && iv.dim(2) == 3, "moments_encode: expected H x W x 3 image, got " + shape_str(iv.shape));
  const int h = iv.dim(0);
  const int w = iv.dim(1);
  Var<T> x = image;
  if (cfg.use_gabor) x = gabor::gabor_layer_op(tape, x, tape.param(params["encoder.gabor"]), cfg.gabor_kernel);
  if (cfg.use_zernike) {
    for (int l = 0; l < cfg.zernike_layers; ++l) {
      const std::string base = "encoder.zernike." + std::to_string(l);
      Var<T> z = zernike_conv_op(tape, x, tape.param(params[base + ".mix"]), tape.param(params[base + ".bias"]),
                                 kernels.kernels, kernels.ksize);
      z = activate(tape, z, tape.param(params[base + ".spread"]), cfg);
      // Residual path once the channel count is stable.
      x = (l > 0) ? ops::add(tape, x, z) : z;
    }
  }
  std::vector<Var<T>> taps;
  for (std::size_t b = 0; b < cfg.trunk_widths.size(); ++b) {
    const std::string base = "encoder.trunk." + std::to_string(b);
    x = conv2d_op(tape, x, tape.param(params[base + ".weight"]), tape.param(params[base + ".bias"]), 3, b == 0 ? 1 : 2);
    x = activate(tape, x, tape.param(params[base + ".spread"]), cfg);
    const auto& xv = tape.value(x);
    taps.push_back((xv.dim(0) == h && xv.dim(1) == w) ? x : upsample_op(tape, x, h, w));
  }
  Var<T> cat = ops::concat_last(tape, taps);
  Var<T> flat = reshape_op(tape, cat, {h * w, cfg.concat_width()});
  Var<T> feat = ops::linear(tape, flat, tape.param(params["encoder.out.weight"]), tape.param(params["encoder.out.bias"]));
  return reshape_op(tape, feat, {h, w, cfg.feature_dim});
}

/// Encode without recording gradients. Image values must lie in [0, 1].
template <class T>
FeatureVolume<T> moments_encode(const Tensor<T>& image, ParamSet<T>& params, const EncoderConfig& cfg) {
  for (const auto& p : params)
    if (p.name.rfind("encoder.", 0) == 0 && !p.value.all_finite())
      throw NumericError("moments_encode: non-finite parameter " + p.name);
  Tape<T> tape(false);
  const auto kernels = MomentKernelCache<T>::make(cfg.zernike_radius);
  auto out = encode_op(tape, tape.constant(image), params, cfg, kernels);
  return FeatureVolume<T>{tape.value(out)};
}

// ---------------------------------------------------------------------------
// MFV1: "MFV1", u32 H, u32 W, u32 D, then H*W*D little-endian f32, row-major.


template <class T>
void write_feature_volume(const std::string& path, const FeatureVolume<T>& vol) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("MFV1", 4);
  binary::put_u32(os, static_cast<std::uint32_t>(vol.height()));
  binary::put_u32(os, static_cast<std::uint32_t>(vol.width()));
  binary::put_u32(os, static_cast<std::uint32_t>(vol.depth()));
  for (T v : vol.data.data) binary::put_f32(os, static_cast<float>(v));
}

inline FeatureVolume<float> read_feature_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open feature volume " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "MFV1") throw LoadError("feature volume: bad magic in " + path);
  const int h = static_cast<int>(binary::get_u32(is));
  const int w = static_cast<int>(binary::get_u32(is));
  const int d = static_cast<int>(binary::get_u32(is));
  FeatureVolume<float> vol{Tensor<float>({h, w, d})};
  for (auto& v : vol.data.data) v = binary::get_f32(is);
  return vol;
}

}  // namespace moments_nerf::encoder
