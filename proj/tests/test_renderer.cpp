#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "moments_nerf/camera.hpp"
#include "moments_nerf/renderer.hpp"

using namespace moments_nerf;
using namespace moments_nerf::render;

namespace {

Camera test_camera() {
  return Camera::look_at({2.0, -3.0, 1.0}, {0.1, 0.2, -0.1}, Eigen::Vector3d::UnitZ(), 30.0, 24, 18);
}

double homogeneous_error(int l, double sigma, double near, double far, double c) {
  Ray ray;
  ray.t_near = near;
  ray.t_far = far;
  const auto s = stratified_samples(ray, l, nullptr);
  std::vector<Eigen::Vector3d> colors(l, Eigen::Vector3d::Constant(c));
  std::vector<double> sig(l, sigma);
  const auto out = composite(colors, sig, s.delta);
  return std::abs(out.color[0] - c * (1.0 - std::exp(-sigma * (far - near))));
}

}  // namespace

TEST(GenerateRay, PrincipalPointIsOpticalAxis) {
  Camera cam;
  cam.fx = cam.fy = 20;
  cam.cx = 4;
  cam.cy = 3;
  cam.width = 9;
  cam.height = 7;
  cam.rotation = Eigen::AngleAxisd(0.4, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  cam.translation = {0.3, -0.1, 2.0};
  const auto r = generate_ray(cam, cam.cx, cam.cy, 0.5, 4.0);
  EXPECT_LT((r.dir - cam.rotation.row(2).transpose()).norm(), 1e-12);
  EXPECT_LT((r.origin - cam.center()).norm(), 1e-12);
}

TEST(GenerateRay, UnitDirectionAndProjectionRoundTrip) {
  const auto cam = test_camera();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> t(0.1, 5.0);
  for (int i = 0; i < cam.height; ++i)
    for (int j = 0; j < cam.width; ++j) {
      const auto r = generate_ray(cam, j, i, 0.5, 6.0);
      EXPECT_NEAR(r.dir.norm(), 1.0, 1e-12);
      for (double tt : {2.0, t(rng)}) {
        const auto p = project(r.at(tt), cam);
        ASSERT_TRUE(p.in_front);
        EXPECT_NEAR(p.u, j, 1e-6);
        EXPECT_NEAR(p.v, i, 1e-6);
      }
    }
}

TEST(GenerateRay, Errors) {
  const auto cam = test_camera();
  EXPECT_THROW(generate_ray(cam, -1.0, 0.0, 0.5, 6.0), ArgumentError);
  EXPECT_THROW(generate_ray(cam, 0.0, cam.height + 1.0, 0.5, 6.0), ArgumentError);
  EXPECT_THROW(generate_ray(cam, 0.0, 0.0, 2.0, 1.0), ArgumentError);
}

TEST(Stratified, DeterministicMidpoints) {
  Ray ray;
  ray.t_near = 0.0;
  ray.t_far = 1.0;
  const auto s = stratified_samples(ray, 4, nullptr);
  const std::vector<double> want{0.125, 0.375, 0.625, 0.875};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s.t[i], want[i]);
  EXPECT_DOUBLE_EQ(s.delta[0], 0.25);
  EXPECT_DOUBLE_EQ(s.delta[3], 0.125);
  EXPECT_THROW(stratified_samples(ray, 1, nullptr), ArgumentError);
}

TEST(Stratified, OneSamplePerBin) {
  Ray ray;
  ray.t_near = 1.5;
  ray.t_far = 4.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int l = 2 + static_cast<int>(seed % 30);
    const auto s = stratified_samples(ray, l, &rng);
    const double w = (ray.t_far - ray.t_near) / l;
    for (int i = 0; i < l; ++i) {
      EXPECT_GE(s.t[i], ray.t_near + i * w);
      EXPECT_LE(s.t[i], ray.t_near + (i + 1) * w);
      EXPECT_GT(s.delta[i], 0.0);
      if (i > 0) {
        EXPECT_GT(s.t[i], s.t[i - 1]);
      }
    }
    EXPECT_NEAR(s.t.back() + s.delta.back(), ray.t_far, 1e-12);
  }
}

TEST(Composite, ZeroDensityIsBlack) {
  std::vector<Eigen::Vector3d> c(5, Eigen::Vector3d(0.3, 0.6, 0.9));
  const auto out = composite(c, std::vector<double>(5, 0.0), std::vector<double>(5, 0.2));
  EXPECT_EQ(out.color, Eigen::Vector3d::Zero());
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(out.transmittance[i], 1.0);
    EXPECT_EQ(out.weights[i], 0.0);
  }
}

TEST(Composite, SingleOpaqueSample) {
  const Eigen::Vector3d c(1.0, 0.5, 0.25);
  const auto out = composite(std::vector<Eigen::Vector3d>{c}, std::vector<double>{25.0}, std::vector<double>{2.0});
  EXPECT_LT((out.color - c * (1.0 - std::exp(-50.0))).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((out.color - c).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Composite, HomogeneousMediumClosedForm) {
  EXPECT_LT(homogeneous_error(1024, 1.0, 0.0, 1.0, 1.0), 1e-3);
  EXPECT_LT(homogeneous_error(1024, 3.0, 2.0, 3.5, 0.7), 1e-3);
}

TEST(Composite, FirstOrderConvergence) {
  std::vector<double> errs;
  for (int l : {64, 128, 256, 512}) errs.push_back(homogeneous_error(l, 2.0, 0.0, 1.5, 0.8));
  for (std::size_t k = 1; k < errs.size(); ++k) EXPECT_GE(std::log2(errs[k - 1] / errs[k]), 0.9);
}

TEST(Composite, EnergyIdentityAndMonotoneTransmittance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> sig(0.0, 5.0), del(0.01, 0.3), col(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int l = 2 + trial;
    std::vector<Eigen::Vector3d> c(l);
    std::vector<double> s(l), d(l);
    for (int i = 0; i < l; ++i) {
      c[i] = {col(rng), col(rng), col(rng)};
      s[i] = sig(rng);
      d[i] = del(rng);
    }
    const auto out = composite(c, s, d);
    EXPECT_EQ(out.transmittance[0], 1.0);
    double wsum = 0.0;
    Eigen::Vector3d csum = Eigen::Vector3d::Zero();
    for (int i = 0; i < l; ++i) {
      EXPECT_GE(out.weights[i], 0.0);
      if (i > 0) {
        EXPECT_LE(out.transmittance[i], out.transmittance[i - 1]);
      }
      wsum += out.weights[i];
      csum += out.weights[i] * c[i];
    }
    EXPECT_NEAR(wsum, 1.0 - out.final_transmittance, 1e-12);
    EXPECT_LE(wsum, 1.0 + 1e-15);
    EXPECT_LT((csum - out.color).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Composite, SplittingASampleIsInvariant) {
  const Eigen::Vector3d a(0.2, 0.4, 0.6), b(0.9, 0.1, 0.5);
  const auto whole = composite(std::vector<Eigen::Vector3d>{a, b}, std::vector<double>{2.0, 3.0},
                               std::vector<double>{0.4, 0.5});
  const auto split = composite(std::vector<Eigen::Vector3d>{a, b, b}, std::vector<double>{2.0, 3.0, 3.0},
                               std::vector<double>{0.4, 0.2, 0.3});
  EXPECT_LT((whole.color - split.color).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Composite, Errors) {
  std::vector<Eigen::Vector3d> c(2, Eigen::Vector3d::Ones());
  EXPECT_THROW(composite(c, std::vector<double>{1.0, -1.0}, std::vector<double>{0.1, 0.1}), ArgumentError);
  EXPECT_THROW(composite(c, std::vector<double>{1.0, 1.0}, std::vector<double>{0.1, -0.1}), ArgumentError);
  EXPECT_THROW(composite(c, std::vector<double>{1.0}, std::vector<double>{0.1}), ArgumentError);
}

TEST(RenderImage, ZeroDensityStubIsBlack) {
  const auto cam = test_camera();
  RenderConfig cfg;
  cfg.samples = 8;
  const auto img = render_image(cam, 0.5, 6.0, cfg, [](const std::vector<Ray>& rays, const std::vector<SampleSet>& sets) {
    BatchRadiance out;
    for (std::size_t r = 0; r < rays.size(); ++r)
      for (std::size_t s = 0; s < sets[r].t.size(); ++s) {
        out.colors.emplace_back(1.0, 1.0, 1.0);
        out.sigma.push_back(0.0);
      }
    return out;
  });
  EXPECT_EQ(img.rgb.shape, (Shape{cam.height, cam.width, 3}));
  for (double v : img.rgb.data) EXPECT_EQ(v, 0.0);
}

TEST(RenderImage, SeededJitterIsReproducible) {
  const auto cam = test_camera();
  RenderConfig cfg;
  cfg.samples = 16;
  cfg.deterministic = false;
  cfg.seed = 42;
  cfg.chunk_rays = 37;
  // A ball of density around the look-at target.
  auto radiance = [](const std::vector<Ray>& rays, const std::vector<SampleSet>& sets) {
    BatchRadiance out;
    for (std::size_t r = 0; r < rays.size(); ++r)
      for (double t : sets[r].t) {
        const Eigen::Vector3d x = rays[r].at(t);
        out.colors.emplace_back(0.5 + 0.5 * std::tanh(x.x()), 0.3, 0.8);
        out.sigma.push_back(x.norm() < 0.8 ? 4.0 : 0.0);
      }
    return out;
  };
  const auto a = render_image(cam, 0.5, 6.0, cfg, radiance);
  cfg.chunk_rays = 5;
  const auto b = render_image(cam, 0.5, 6.0, cfg, radiance);
  EXPECT_EQ(a.rgb.data, b.rgb.data);
  double total = 0.0;
  for (double v : a.opacity.data) total += v;
  EXPECT_GT(total, 0.0);
  cfg.seed = 43;
  const auto c = render_image(cam, 0.5, 6.0, cfg, radiance);
  EXPECT_NE(a.rgb.data, c.rgb.data);
}
