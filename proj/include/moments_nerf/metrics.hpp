#pragma once

// Image quality metrics on [0, 1] images.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace moments_nerf::metrics {

constexpr double kPsnrCap = 99.0;

inline void require_same_shape(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (a.shape != b.shape)
    throw ArgumentError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  require(!a.empty(), std::string(what) + ": empty image");
}

inline double psnr(const Tensor<double>& a, const Tensor<double>& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    s += w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  for (auto& v : w) v /= s;
  return w;
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5) and channels.
inline double ssim(const Tensor<double>& a, const Tensor<double>& b) {
  require_same_shape(a, b, "ssim");
  constexpr int kWin = 11;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const int h = a.dim(0);
  const int w = a.rank() >= 2 ? a.dim(1) : 1;
  const int ch = a.rank() == 3 ? a.dim(2) : 1;
  if (a.rank() < 2 || h < kWin || w < kWin)
    throw ArgumentError("ssim: image " + shape_str(a.shape) + " is smaller than the 11x11 window");
  const auto g = gaussian_window(kWin, 1.5);
  const int oh = h - kWin + 1;
  const int ow = w - kWin + 1;

  // Separable filtering of the five moment images, valid region only.
  auto filter = [&](auto pixel) {
    std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < ow; ++j) {
        double s = 0.0;
        for (int k = 0; k < kWin; ++k) s += g[k] * pixel(i, j + k);
        rows[static_cast<std::size_t>(i) * ow + j] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double s = 0.0;
        for (int k = 0; k < kWin; ++k) s += g[k] * rows[static_cast<std::size_t>(i + k) * ow + j];
        out[static_cast<std::size_t>(i) * ow + j] = s;
      }
    return out;
  };

  double total = 0.0;
  for (int c = 0; c < ch; ++c) {
    auto A = [&](int i, int j) { return a.data[(static_cast<std::size_t>(i) * w + j) * ch + c]; };
    auto B = [&](int i, int j) { return b.data[(static_cast<std::size_t>(i) * w + j) * ch + c]; };
    const auto mu_a = filter(A);
    const auto mu_b = filter(B);
    const auto aa = filter([&](int i, int j) { return A(i, j) * A(i, j); });
    const auto bb = filter([&](int i, int j) { return B(i, j) * B(i, j); });
    const auto ab = filter([&](int i, int j) { return A(i, j) * B(i, j); });
    for (std::size_t k = 0; k < mu_a.size(); ++k) {
      const double va = aa[k] - mu_a[k] * mu_a[k];
      const double vb = bb[k] - mu_b[k] * mu_b[k];
      const double cov = ab[k] - mu_a[k] * mu_b[k];
      total += ((2 * mu_a[k] * mu_b[k] + kC1) * (2 * cov + kC2)) /
               ((mu_a[k] * mu_a[k] + mu_b[k] * mu_b[k] + kC1) * (va + vb + kC2));
    }
  }
  return total / (static_cast<double>(oh) * ow * ch);
}

struct ImageMetrics {
  std::string scene;
  std::string view_id;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Per-image rows plus aggregates: mean over images within a scene, then over scenes.
struct MetricReport {
  std::vector<ImageMetrics> images;

  void add(std::string scene, std::string view_id, const Tensor<double>& pred, const Tensor<double>& gt) {
    images.push_back({std::move(scene), std::move(view_id), psnr(pred, gt), ssim(pred, gt)});
  }

  ImageMetrics aggregate() const {
    require(!images.empty(), "metric report is empty");
    std::vector<std::string> scenes;
    for (const auto& m : images)
      if (std::find(scenes.begin(), scenes.end(), m.scene) == scenes.end()) scenes.push_back(m.scene);
    ImageMetrics agg{"all", "mean", 0.0, 0.0};
    for (const auto& s : scenes) {
      double p = 0.0, q = 0.0;
      int n = 0;
      for (const auto& m : images)
        if (m.scene == s) {
          p += m.psnr;
          q += m.ssim;
          ++n;
        }
      agg.psnr += p / n;
      agg.ssim += q / n;
    }
    agg.psnr /= static_cast<double>(scenes.size());
    agg.ssim /= static_cast<double>(scenes.size());
    return agg;
  }

  /// scene,view_id,psnr,ssim with a final aggregate row. LPIPS/DISTS are not computed.
  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_csv(os);
  }
  void write_csv(std::ostream& os) const {
    os << "scene,view_id,psnr,ssim\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const auto& m : images) os << m.scene << ',' << m.view_id << ',' << m.psnr << ',' << m.ssim << '\n';
    const auto a = aggregate();
    os << a.scene << ',' << a.view_id << ',' << a.psnr << ',' << a.ssim << '\n';
  }
};

}  // namespace moments_nerf::metrics
