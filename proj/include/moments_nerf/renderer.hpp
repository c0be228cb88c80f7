#pragma once

// Rays through pixel centers, stratified samples along them, and the
// emission-absorption compositor (over a black background).

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "camera.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace moments_nerf::render {

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Eigen::Vector3d at(double t) const { return origin + t * dir; }
};

struct SampleSet {
  std::vector<double> t;
  std::vector<double> delta;  // t[i+1] - t[i]; the last gap runs to t_far
};

struct CompositeOut {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  std::vector<double> weights;
  std::vector<double> transmittance;  // T_1 .. T_l
  double final_transmittance = 1.0;   // T_{l+1}
};

/// Ray from the camera center through continuous pixel coordinates (u, v).
inline Ray generate_ray(const Camera& cam, double u, double v, double t_near, double t_far) {
  require(u >= -0.5 && u <= cam.width - 0.5 && v >= -0.5 && v <= cam.height - 0.5,
          "generate_ray: pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") outside the image");
  require(t_near >= 0.0 && t_near < t_far, "generate_ray: need 0 <= near < far");
  const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  Ray r;
  r.origin = cam.center();
  r.dir = (cam.rotation.transpose() * d_cam).normalized();
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

/// One sample per equal-width bin: uniformly jittered with rng, or the bin
/// midpoint when rng is null.
inline SampleSet stratified_samples(const Ray& ray, int count, std::mt19937_64* rng) {
  require(count >= 2, "stratified_samples: need at least 2 samples, got " + std::to_string(count));
  SampleSet s;
  s.t.resize(count);
  s.delta.resize(count);
  const double width = (ray.t_far - ray.t_near) / count;
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const double u = rng ? jitter(*rng) : 0.5;
    s.t[i] = ray.t_near + (i + u) * width;
  }
  for (int i = 0; i + 1 < count; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
  s.delta[count - 1] = ray.t_far - s.t[count - 1];
  return s;
}

/// T_i = exp(-sum_{j<i} sigma_j delta_j), w_i = T_i (1 - exp(-sigma_i delta_i)), C = sum w_i c_i.
inline CompositeOut composite(std::span<const Eigen::Vector3d> colors, std::span<const double> sigma,
                              std::span<const double> delta) {
  require(colors.size() == sigma.size() && sigma.size() == delta.size(), "composite: length mismatch");
  CompositeOut out;
  out.weights.resize(sigma.size());
  out.transmittance.resize(sigma.size());
  double optical = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] >= 0.0)) throw ArgumentError("composite: negative density at sample " + std::to_string(i));
    if (!(delta[i] >= 0.0)) throw ArgumentError("composite: negative gap at sample " + std::to_string(i));
    const double tau = sigma[i] * delta[i];
    out.transmittance[i] = std::exp(-optical);
    out.weights[i] = out.transmittance[i] * -std::expm1(-tau);
    out.color += out.weights[i] * colors[i];
    optical += tau;
  }
  out.final_transmittance = std::exp(-optical);
  return out;
}

struct RenderConfig {
  int samples = 128;
  bool deterministic = true;
  std::uint64_t seed = 0;
  int chunk_rays = 256;
};

/// Per-sample radiance for a batch of rays: colors and densities laid out ray-major.
struct BatchRadiance {
  std::vector<Eigen::Vector3d> colors;
  std::vector<double> sigma;
};

using RadianceFn = std::function<BatchRadiance(const std::vector<Ray>&, const std::vector<SampleSet>&)>;

struct RenderedImage {
  Tensor<double> rgb;      // H x W x 3
  Tensor<double> opacity;  // H x W, sum of weights
};

/// Per-pixel RNG stream so results do not depend on chunking or threading.
inline std::mt19937_64 pixel_rng(std::uint64_t seed, std::uint64_t pixel) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (pixel + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return std::mt19937_64(z ^ (z >> 31));
}

/// Composites one ray given its samples and per-sample radiance.
inline CompositeOut render_ray(const SampleSet& s, std::span<const Eigen::Vector3d> colors,
                               std::span<const double> sigma) {
  return composite(colors, sigma, s.delta);
}

/// generate_ray -> stratified_samples -> radiance -> composite for every pixel.
/// Chunks run through parallel_for; radiance must be safe to call concurrently.
inline RenderedImage render_image(const Camera& cam, double t_near, double t_far, const RenderConfig& cfg,
                                  const RadianceFn& radiance) {
  const int npx = cam.width * cam.height;
  RenderedImage img{Tensor<double>({cam.height, cam.width, 3}), Tensor<double>({cam.height, cam.width})};
  const int chunk = std::max(1, cfg.chunk_rays);
  const int chunks = (npx + chunk - 1) / chunk;
  parallel_for(chunks, [&](int c) {
    const int begin = c * chunk;
    const int end = std::min(npx, begin + chunk);
    std::vector<Ray> rays;
    std::vector<SampleSet> sets;
    for (int p = begin; p < end; ++p) {
      rays.push_back(generate_ray(cam, p % cam.width, p / cam.width, t_near, t_far));
      auto rng = pixel_rng(cfg.seed, static_cast<std::uint64_t>(p));
      sets.push_back(stratified_samples(rays.back(), cfg.samples, cfg.deterministic ? nullptr : &rng));
    }
    const BatchRadiance rad = radiance(rays, sets);
    std::size_t off = 0;
    for (int p = begin; p < end; ++p) {
      const auto& s = sets[p - begin];
      const std::size_t n = s.t.size();
      const auto out = render_ray(s, std::span(rad.colors).subspan(off, n), std::span(rad.sigma).subspan(off, n));
      off += n;
      const int i = p / cam.width, j = p % cam.width;
      for (int k = 0; k < 3; ++k) img.rgb.at(i, j, k) = out.color[k];
      img.opacity.at(i, j) = 1.0 - out.final_transmittance;
    }
  });
  return img;
}

}  // namespace moments_nerf::render
