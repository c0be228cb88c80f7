#pragma once

// Gabor functions (real part and the learnable-shape variant), kernel
// rasterization, reflect-padded 2-D correlation, and the RGB-summed layer.

#include <cmath>
#include <numbers>
#include <ostream>
#include <vector>

#include "autodiff.hpp"
#include "dual.hpp"
#include "errors.hpp"
#include "tensor.hpp"

namespace moments_nerf::gabor {

struct GaborParams {
  double lambda = 4.0;  // wavelength, pixels
  double theta = 0.0;   // orientation, radians
  double psi = 0.0;     // phase, radians
  double sigma = 2.24;  // envelope std, pixels
  double gamma = 0.5;   // aspect ratio

  void validate() const {
    require(lambda > 0 && sigma > 0 && gamma > 0, "GaborParams: lambda, sigma and gamma must be positive");
  }
};

struct GaborShapeK {
  double k1 = 1.0, k2 = 1.0, k3 = 2.0, k4 = 0.0, k5 = 1.0;

  void validate() const {
    require(std::isfinite(k1) && std::isfinite(k2) && std::isfinite(k3) && std::isfinite(k4) && std::isfinite(k5),
            "GaborShapeK: non-finite shape parameter");
    require(k5 != 0.0, "GaborShapeK: k5 must be non-zero");
  }
};

/// Flat parameter layout used by the trainable layer: lambda, theta, psi, sigma, gamma, k1..k5.
inline constexpr int kParamsPerFilter = 10;

namespace detail {

// Sign-preserving power sign(b)|b|^e. At b = 0 the value is 0; the b-derivative
// is 1 for e == 1 and 0 otherwise, and the e-derivative is 0.
template <class S>
S signed_pow(const S& b, const S& e) {
  using std::abs;
  using std::log;
  using std::pow;
  const auto bv = value_of(b);
  const auto ev = value_of(e);
  using R = decltype(bv + ev);
  if (bv == R(0)) {
    if constexpr (std::is_arithmetic_v<S>) {
      return S(0);
    } else {
      return S::apply2(b, e, R(0), ev == R(1) ? R(1) : R(0), R(0));
    }
  }
  const R mag = pow(abs(bv), ev);
  const R sgn = bv < R(0) ? R(-1) : R(1);
  if constexpr (std::is_arithmetic_v<S>) {
    return sgn * mag;
  } else {
    return S::apply2(b, e, sgn * mag, ev * mag / abs(bv), sgn * mag * log(abs(bv)));
  }
}

// Even power |b|^e, used for the y' term so the default shape stays even in y'.
template <class S>
S even_pow(const S& b, const S& e) {
  using std::abs;
  using std::log;
  using std::pow;
  const auto bv = value_of(b);
  const auto ev = value_of(e);
  using R = decltype(bv + ev);
  if (bv == R(0)) {
    if constexpr (std::is_arithmetic_v<S>) {
      return S(0);
    } else {
      return S::apply2(b, e, R(0), R(0), R(0));
    }
  }
  const R mag = pow(abs(bv), ev);
  const R sgn = bv < R(0) ? R(-1) : R(1);
  if constexpr (std::is_arithmetic_v<S>) {
    return mag;
  } else {
    return S::apply2(b, e, mag, sgn * ev * mag / abs(bv), mag * log(abs(bv)));
  }
}

// Parameters in the flat layout, generic over double or Dual.
template <class S>
struct FlatParams {
  S lambda, theta, psi, sigma, gamma, k1, k2, k3, k4, k5;
};

template <class S>
S envelope(const S& xr, const S& yr, const FlatParams<S>& p) {
  using std::exp;
  return exp(-(xr * xr + p.gamma * p.gamma * yr * yr) / (S(2.0) * p.sigma * p.sigma));
}

template <class S>
S comp(double x, double y, const FlatParams<S>& p) {
  using std::cos;
  using std::sin;
  const S c = cos(p.theta);
  const S s = sin(p.theta);
  const S xr = S(x) * c + S(y) * s;
  const S yr = S(-x) * s + S(y) * c;
  const S inner = p.k1 * signed_pow(xr, p.k2) + even_pow(yr, p.k3) + p.k4;
  const S phase = S(2.0 * std::numbers::pi) * signed_pow(inner, p.k5) / p.lambda + p.psi;
  return envelope(xr, yr, p) * cos(phase);
}

inline FlatParams<double> flat(const GaborParams& g, const GaborShapeK& k) {
  return {g.lambda, g.theta, g.psi, g.sigma, g.gamma, k.k1, k.k2, k.k3, k.k4, k.k5};
}

}  // namespace detail

/// Rotated coordinates x' = x cos(theta) + y sin(theta), y' = -x sin(theta) + y cos(theta).
inline void rotate(double x, double y, double theta, double& xr, double& yr) {
  xr = x * std::cos(theta) + y * std::sin(theta);
  yr = -x * std::sin(theta) + y * std::cos(theta);
}

/// exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2)) cos(2 pi x' / lambda + psi).
inline double gabor_real(double x, double y, const GaborParams& p) {
  double xr, yr;
  rotate(x, y, p.theta, xr, yr);
  return std::exp(-(xr * xr + p.gamma * p.gamma * yr * yr) / (2.0 * p.sigma * p.sigma)) *
         std::cos(2.0 * std::numbers::pi * xr / p.lambda + p.psi);
}

/// Learnable-shape Gabor: phase argument 2 pi (k1 x'^k2 + y'^k3 + k4)^k5 / lambda + psi.
/// x'^k2 and (.)^k5 use the sign-preserving power; y'^k3 uses |y'|^k3.
inline double gabor_comp(double x, double y, const GaborParams& p, const GaborShapeK& k) {
  const double v = detail::comp(x, y, detail::flat(p, k));
  if (!std::isfinite(v)) throw NumericError("gabor_comp: non-finite value (extreme shape parameters?)");
  return v;
}

/// Value and gradient with respect to the flat parameter vector.
inline Dual<double, kParamsPerFilter> gabor_comp_dual(double x, double y, std::span<const double> flat) {
  using D = Dual<double, kParamsPerFilter>;
  detail::FlatParams<D> p{D::variable(flat[0], 0), D::variable(flat[1], 1), D::variable(flat[2], 2),
                          D::variable(flat[3], 3), D::variable(flat[4], 4), D::variable(flat[5], 5),
                          D::variable(flat[6], 6), D::variable(flat[7], 7), D::variable(flat[8], 8),
                          D::variable(flat[9], 9)};
  return detail::comp(x, y, p);
}

struct GaborKernel {
  GaborParams params;
  GaborShapeK shape;
  int size = 0;
  std::vector<double> taps;  // size x size, row-major; row index is y, column is x

  double tap(int i, int j) const { return taps[static_cast<std::size_t>(i) * size + j]; }
};

/// taps[i][j] = gabor_comp(j - size/2, i - size/2).
inline GaborKernel make_kernel(int size, const GaborParams& params, const GaborShapeK& shape) {
  require(size >= 3 && size % 2 == 1, "make_kernel: size must be odd and >= 3, got " + std::to_string(size));
  params.validate();
  shape.validate();
  GaborKernel k{params, shape, size, std::vector<double>(static_cast<std::size_t>(size) * size)};
  const int half = size / 2;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) k.taps[static_cast<std::size_t>(i) * size + j] = gabor_comp(j - half, i - half, params, shape);
  return k;
}

/// A single-channel image plane, H x W row-major.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}
  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * width + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * width + j]; }
};

/// Same-size correlation with reflect-101 padding.
inline Plane conv2d(const Plane& image, std::span<const double> taps, int ksize) {
  require(image.height >= ksize && image.width >= ksize,
          "conv2d: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
              " smaller than kernel " + std::to_string(ksize));
  const int half = ksize / 2;
  Plane out(image.height, image.width);
  for (int i = 0; i < image.height; ++i)
    for (int j = 0; j < image.width; ++j) {
      double acc = 0.0;
      for (int a = 0; a < ksize; ++a) {
        const int ii = reflect_index(i + a - half, image.height);
        for (int b = 0; b < ksize; ++b)
          acc += taps[static_cast<std::size_t>(a) * ksize + b] * image(ii, reflect_index(j + b - half, image.width));
      }
      out(i, j) = acc;
    }
  return out;
}

inline Plane conv2d(const Plane& image, const GaborKernel& kernel) { return conv2d(image, kernel.taps, kernel.size); }

/// Per filter: conv(R) + conv(G) + conv(B). rgb is H x W x 3; output H x W x F.
inline Tensor<double> gabor_layer(const Tensor<double>& rgb, const std::vector<GaborKernel>& filters) {
  require(!filters.empty(), "gabor_layer: empty filter list");
  require(rgb.rank() == 3 && rgb.dim(2) == 3, "gabor_layer: expected H x W x 3 input, got " + shape_str(rgb.shape));
  const int h = rgb.dim(0);
  const int w = rgb.dim(1);
  const int nf = static_cast<int>(filters.size());
  Tensor<double> out({h, w, nf});
  for (int c = 0; c < 3; ++c) {
    Plane ch(h, w);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) ch(i, j) = rgb.at(i, j, c);
    for (int f = 0; f < nf; ++f) {
      const Plane r = conv2d(ch, filters[f]);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) out.at(i, j, f) += r(i, j);
    }
  }
  return out;
}

/// Bank of orientations x wavelengths with sigma = 0.56 lambda, gamma = 0.5, psi = 0, K = (1,1,2,0,1).
inline std::vector<std::pair<GaborParams, GaborShapeK>> default_bank(int orientations = 4,
                                                                     std::vector<double> wavelengths = {3.0, 6.0}) {
  std::vector<std::pair<GaborParams, GaborShapeK>> bank;
  for (double lambda : wavelengths)
    for (int o = 0; o < orientations; ++o) {
      GaborParams p;
      p.lambda = lambda;
      p.theta = std::numbers::pi * o / orientations;
      p.sigma = 0.56 * lambda;
      p.gamma = 0.5;
      p.psi = 0.0;
      bank.emplace_back(p, GaborShapeK{});
    }
  return bank;
}

inline void write_kernel_csv(std::ostream& os, const GaborKernel& k) {
  os.precision(17);
  for (int i = 0; i < k.size; ++i) {
    for (int j = 0; j < k.size; ++j) os << (j ? "," : "") << k.tap(i, j);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Trainable layer on a Tape. params is [F x 10] in the flat layout.

namespace detail {

template <class T>
void kernel_taps(std::span<const T> flat, int ksize, std::vector<double>& taps,
                 std::vector<std::array<double, kParamsPerFilter>>* jac) {
  const int half = ksize / 2;
  std::array<double, kParamsPerFilter> fp{};
  for (int q = 0; q < kParamsPerFilter; ++q) fp[q] = static_cast<double>(flat[q]);
  taps.resize(static_cast<std::size_t>(ksize) * ksize);
  if (jac) jac->resize(taps.size());
  for (int i = 0; i < ksize; ++i)
    for (int j = 0; j < ksize; ++j) {
      const std::size_t t = static_cast<std::size_t>(i) * ksize + j;
      if (jac) {
        const auto d = gabor_comp_dual(j - half, i - half, fp);
        taps[t] = d.v;
        (*jac)[t] = d.d;
      } else {
        taps[t] = comp(j - half, i - half, FlatParams<double>{fp[0], fp[1], fp[2], fp[3], fp[4], fp[5], fp[6],
                                                              fp[7], fp[8], fp[9]});
      }
      if (!std::isfinite(taps[t])) throw NumericError("gabor layer: non-finite kernel tap");
    }
}

}  // namespace detail

template <class T>
typename Tape<T>::Var gabor_layer_op(Tape<T>& tape, typename Tape<T>::Var rgb, typename Tape<T>::Var params,
                                     int ksize) {
  const auto& img = tape.value(rgb);
  const auto& pv = tape.value(params);
  require(img.rank() == 3 && img.dim(2) == 3, "gabor_layer: expected H x W x 3 input");
  require(pv.rank() == 2 && pv.dim(1) == kParamsPerFilter && pv.dim(0) >= 1, "gabor_layer: params must be [F x 10]");
  require(ksize >= 3 && ksize % 2 == 1, "gabor_layer: kernel size must be odd and >= 3");
  const int h = img.dim(0);
  const int w = img.dim(1);
  const int nf = pv.dim(0);
  require(h >= ksize && w >= ksize, "gabor_layer: image smaller than kernel");
  const int half = ksize / 2;

  // The layer is linear in the image, so the channel sum commutes with the correlation.
  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (std::size_t p = 0; p < gray.size(); ++p)
    gray[p] = static_cast<double>(img.data[3 * p]) + img.data[3 * p + 1] + img.data[3 * p + 2];

  Tensor<T> out({h, w, nf});
  std::vector<double> taps;
  for (int f = 0; f < nf; ++f) {
    detail::kernel_taps<T>(std::span<const T>(pv.data).subspan(static_cast<std::size_t>(f) * kParamsPerFilter,
                                                                kParamsPerFilter),
                           ksize, taps, nullptr);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int a = 0; a < ksize; ++a) {
          const int ii = reflect_index(i + a - half, h);
          for (int b = 0; b < ksize; ++b)
            acc += taps[static_cast<std::size_t>(a) * ksize + b] * gray[static_cast<std::size_t>(ii) * w + reflect_index(j + b - half, w)];
        }
        out.at(i, j, f) = static_cast<T>(acc);
      }
  }

  return tape.op(std::move(out), {rgb, params}, [rgb, params, ksize, gray](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    const auto& pv = t.value_of(params.id);
    const int h = g.dim(0);
    const int w = g.dim(1);
    const int nf = g.dim(2);
    const int half = ksize / 2;
    std::vector<double> taps;
    std::vector<std::array<double, kParamsPerFilter>> jac;
    std::vector<double> gtaps(static_cast<std::size_t>(ksize) * ksize);
    std::vector<double> ggray(t.needs_grad(rgb.id) ? gray.size() : 0, 0.0);
    for (int f = 0; f < nf; ++f) {
      detail::kernel_taps<T>(std::span<const T>(pv.data).subspan(static_cast<std::size_t>(f) * kParamsPerFilter,
                                                                  kParamsPerFilter),
                             ksize, taps, &jac);
      std::fill(gtaps.begin(), gtaps.end(), 0.0);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double go = g.at(i, j, f);
          if (go == 0.0) continue;
          for (int a = 0; a < ksize; ++a) {
            const int ii = reflect_index(i + a - half, h);
            for (int b = 0; b < ksize; ++b) {
              const std::size_t src = static_cast<std::size_t>(ii) * w + reflect_index(j + b - half, w);
              const std::size_t tp = static_cast<std::size_t>(a) * ksize + b;
              gtaps[tp] += go * gray[src];
              if (!ggray.empty()) ggray[src] += go * taps[tp];
            }
          }
        }
      if (t.needs_grad(params.id)) {
        auto& gp = t.grad_buffer(params.id);
        for (std::size_t tp = 0; tp < gtaps.size(); ++tp)
          for (int q = 0; q < kParamsPerFilter; ++q)
            gp.data[static_cast<std::size_t>(f) * kParamsPerFilter + q] += static_cast<T>(gtaps[tp] * jac[tp][q]);
      }
    }
    if (!ggray.empty()) {
      auto& gi = t.grad_buffer(rgb.id);
      for (std::size_t p = 0; p < ggray.size(); ++p)
        for (int c = 0; c < 3; ++c) gi.data[3 * p + c] += static_cast<T>(ggray[p]);
    }
  });
}

}  // namespace moments_nerf::gabor
