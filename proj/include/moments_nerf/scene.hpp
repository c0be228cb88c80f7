#pragma once

// Posed image sets: scene.json loading/saving and the analytic sphere scene.
//
// scene.json:
//   {"near": f, "far": f, "world_scale": f,
//    "frames": [{"file": str, "fx", "fy", "cx", "cy": f, "world_to_cam": [12 floats, row-major 3x4]}]}

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "camera.hpp"
#include "errors.hpp"
#include "image_io.hpp"
#include "parallel.hpp"
#include "renderer.hpp"
#include "tensor.hpp"

namespace moments_nerf {

struct Scene {
  std::vector<Camera> cameras;
  std::vector<Tensor<double>> images;  // H x W x 3 in [0, 1]
  std::vector<std::string> files;      // image file names relative to the scene directory
  double near = 0.0;
  double far = 1.0;
  double world_scale = 1.0;  // maps the sampled region into [-1.5, 1.5]^3

  std::size_t size() const { return cameras.size(); }

  void validate() const {
    require(cameras.size() == images.size(), "scene: camera and image counts differ");
    require(std::isfinite(near) && std::isfinite(far) && near >= 0.0 && near < far, "scene: need 0 <= near < far");
    require(world_scale > 0.0 && std::isfinite(world_scale), "scene: world_scale must be positive");
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      cameras[i].validate();
      require(images[i].rank() == 3 && images[i].dim(0) == cameras[i].height && images[i].dim(1) == cameras[i].width,
              "scene: image " + std::to_string(i) + " does not match its camera size");
    }
  }

  /// Subset of views, in the given order.
  Scene select(const std::vector<int>& views) const {
    Scene s;
    s.near = near;
    s.far = far;
    s.world_scale = world_scale;
    for (int v : views) {
      require(v >= 0 && v < static_cast<int>(size()), "view index " + std::to_string(v) + " out of range");
      s.cameras.push_back(cameras[v]);
      s.images.push_back(images[v]);
      if (static_cast<std::size_t>(v) < files.size()) s.files.push_back(files[v]);
    }
    return s;
  }
};

/// Largest |x| over all [near, far] ray segments through pixel centers. |x(t)|^2 is
/// convex in t, so the segment endpoints suffice.
inline double max_sample_radius(const std::vector<Camera>& cams, double near, double far) {
  double r = 0.0;
  for (const auto& cam : cams)
    for (int i = 0; i < cam.height; ++i)
      for (int j = 0; j < cam.width; ++j) {
        const auto ray = render::generate_ray(cam, j, i, near, far);
        r = std::max({r, ray.at(near).norm(), ray.at(far).norm()});
      }
  return r;
}

/// world_scale such that every sampled point lands inside the radius-1.5 ball.
inline double fit_world_scale(const std::vector<Camera>& cams, double near, double far) {
  const double r = max_sample_radius(cams, near, far);
  return r > 0.0 ? 1.5 / r : 1.0;
}

namespace detail {

inline double json_number(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw LoadError(where + ": missing field \"" + key + "\"");
  if (!obj[key].is_number()) throw LoadError(where + ": field \"" + key + "\" must be a number");
  return obj[key].get<double>();
}

}  // namespace detail

inline Scene load_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const fs::path json_path = root / "scene.json";
  std::ifstream is(json_path);
  if (!is) throw LoadError("cannot open " + json_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed scene.json: " + std::string(e.what()));
  }
  if (!j.is_object()) throw LoadError("scene.json: top level must be an object");
  Scene s;
  s.near = detail::json_number(j, "near", "scene.json");
  s.far = detail::json_number(j, "far", "scene.json");
  s.world_scale = detail::json_number(j, "world_scale", "scene.json");
  if (!(s.near >= 0.0 && s.near < s.far)) throw LoadError("scene.json: \"near\"/\"far\" must satisfy 0 <= near < far");
  if (!(s.world_scale > 0.0)) throw LoadError("scene.json: \"world_scale\" must be positive");
  if (!j.contains("frames") || !j["frames"].is_array()) throw LoadError("scene.json: missing array \"frames\"");
  int idx = 0;
  for (const auto& f : j["frames"]) {
    const std::string where = "scene.json frames[" + std::to_string(idx++) + "]";
    if (!f.contains("file") || !f["file"].is_string()) throw LoadError(where + ": missing string \"file\"");
    Camera cam;
    cam.fx = detail::json_number(f, "fx", where);
    cam.fy = detail::json_number(f, "fy", where);
    cam.cx = detail::json_number(f, "cx", where);
    cam.cy = detail::json_number(f, "cy", where);
    if (!(cam.fx > 0.0)) throw LoadError(where + ": \"fx\" must be positive");
    if (!(cam.fy > 0.0)) throw LoadError(where + ": \"fy\" must be positive");
    if (!f.contains("world_to_cam") || !f["world_to_cam"].is_array() || f["world_to_cam"].size() != 12)
      throw LoadError(where + ": \"world_to_cam\" must hold 12 numbers");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = f["world_to_cam"][4 * r + c].get<double>();
      cam.translation[r] = f["world_to_cam"][4 * r + 3].get<double>();
    }
    const double ortho = (cam.rotation * cam.rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-6) throw LoadError(where + ": \"world_to_cam\" rotation is not orthonormal");
    const std::string file = f["file"].get<std::string>();
    Tensor<double> img = read_png((root / file).string());
    cam.width = img.dim(1);
    cam.height = img.dim(0);
    if (!(cam.cx >= -0.5 && cam.cx <= cam.width - 0.5))
      throw LoadError(where + ": \"cx\" lies outside the " + std::to_string(cam.width) + " px wide image");
    if (!(cam.cy >= -0.5 && cam.cy <= cam.height - 0.5))
      throw LoadError(where + ": \"cy\" lies outside the " + std::to_string(cam.height) + " px tall image");
    s.cameras.push_back(cam);
    s.images.push_back(std::move(img));
    s.files.push_back(file);
  }
  if (s.cameras.empty()) throw LoadError("scene.json: \"frames\" is empty");
  return s;
}

/// Writes scene.json plus one PNG per view. Images are quantized to 8 bits on disk.
inline void save_scene(const std::string& dir, const Scene& s) {
  namespace fs = std::filesystem;
  s.validate();
  fs::create_directories(dir);
  nlohmann::json j;
  j["near"] = s.near;
  j["far"] = s.far;
  j["world_scale"] = s.world_scale;
  j["frames"] = nlohmann::json::array();
  for (std::size_t v = 0; v < s.size(); ++v) {
    std::string file = v < s.files.size() ? s.files[v] : "";
    if (file.empty()) {
      std::ostringstream name;
      name << "view_" << std::setw(3) << std::setfill('0') << v << ".png";
      file = name.str();
    }
    write_png((fs::path(dir) / file).string(), s.images[v]);
    const Camera& c = s.cameras[v];
    std::vector<double> m;
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) m.push_back(c.rotation(r, k));
      m.push_back(c.translation[r]);
    }
    j["frames"].push_back({{"file", file}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"world_to_cam", m}});
  }
  std::ofstream os(fs::path(dir) / "scene.json");
  if (!os) throw std::runtime_error("cannot write " + (fs::path(dir) / "scene.json").string());
  os << std::setprecision(17) << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Analytic scene: a homogeneous emissive sphere in empty space.

struct AnalyticSphere {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.5;
  Eigen::Vector3d albedo{0.9, 0.6, 0.3};
  double sigma = 50.0;

  double density(const Eigen::Vector3d& x) const { return (x - center).norm() <= radius ? sigma : 0.0; }

  /// Parameter interval [t0, t1] where the ray is inside the sphere; empty when t0 >= t1.
  std::pair<double, double> hit(const render::Ray& ray) const {
    const Eigen::Vector3d oc = ray.origin - center;
    const double b = oc.dot(ray.dir);
    const double c = oc.squaredNorm() - radius * radius;
    const double disc = b * b - c;
    if (disc <= 0.0) return {0.0, 0.0};
    const double s = std::sqrt(disc);
    return {-b - s, -b + s};
  }

  /// Length of the ray segment [a, b] inside the sphere.
  double inside_length(const render::Ray& ray, double a, double b) const {
    const auto [t0, t1] = hit(ray);
    return std::max(0.0, std::min(b, t1) - std::max(a, t0));
  }
};

struct SynthSpec {
  AnalyticSphere sphere;
  int n_views = 3;
  int size = 32;
  std::uint64_t seed = 0;
  double distance = 4.0;
  double elevation_deg = 20.0;
  double focal_scale = 2.0;  // focal length in units of image size
  int samples = 1024;

  void validate() const {
    require(sphere.radius > 0.0, "synth: radius must be positive");
    require(sphere.sigma >= 0.0, "synth: sigma must be non-negative");
    require(n_views >= 1, "synth: need at least one view");
    require(size >= 1, "synth: image size must be positive");
    require(distance > sphere.radius + (sphere.center.norm()), "synth: cameras must sit outside the sphere");
    require(samples >= 2, "synth: need at least 2 samples");
  }
};

struct SynthScene {
  Scene scene;
  AnalyticSphere field;
};

/// Cameras on a ring around the sphere center; the ring phase depends on the seed.
inline std::vector<Camera> ring_cameras(const SynthSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI / spec.n_views)(rng);
  const double el = spec.elevation_deg * M_PI / 180.0;
  std::vector<Camera> cams;
  for (int v = 0; v < spec.n_views; ++v) {
    const double az = phase + 2.0 * M_PI * v / spec.n_views;
    const Eigen::Vector3d eye = spec.sphere.center + spec.distance * Eigen::Vector3d(std::cos(el) * std::cos(az),
                                                                                     std::cos(el) * std::sin(az),
                                                                                     std::sin(el));
    cams.push_back(Camera::look_at(eye, spec.sphere.center, Eigen::Vector3d::UnitZ(), spec.focal_scale * spec.size,
                                   spec.size, spec.size));
  }
  return cams;
}

/// Composites the sphere along one ray with `samples` equal segments. Each
/// segment's optical depth is the exact density integral over it, so the
/// result equals albedo * (1 - exp(-sigma * chord)) up to rounding.
inline Eigen::Vector3d composite_sphere(const AnalyticSphere& sph, const render::Ray& ray, int samples) {
  const double w = (ray.t_far - ray.t_near) / samples;
  std::vector<Eigen::Vector3d> colors(samples, sph.albedo);
  std::vector<double> sigma(samples), delta(samples, w);
  for (int i = 0; i < samples; ++i) {
    const double a = ray.t_near + i * w;
    sigma[i] = sph.sigma * sph.inside_length(ray, a, a + w) / w;
  }
  return render::composite(colors, sigma, delta).color;
}

inline SynthScene synth_scene(const SynthSpec& spec) {
  spec.validate();
  SynthScene out;
  out.field = spec.sphere;
  Scene& s = out.scene;
  const double d = spec.distance;
  s.near = d - 2.0 * spec.sphere.radius;
  s.far = d + 2.0 * spec.sphere.radius;
  require(s.near > 0.0, "synth: degenerate near bound");
  s.cameras = ring_cameras(spec);
  s.world_scale = fit_world_scale(s.cameras, s.near, s.far);
  for (int v = 0; v < spec.n_views; ++v) {
    const Camera& cam = s.cameras[v];
    Tensor<double> img({spec.size, spec.size, 3});
    parallel_for(spec.size, [&](int i) {
      for (int j = 0; j < spec.size; ++j) {
        const auto ray = render::generate_ray(cam, j, i, s.near, s.far);
        const Eigen::Vector3d c = composite_sphere(spec.sphere, ray, spec.samples);
        for (int k = 0; k < 3; ++k) img.at(i, j, k) = c[k];
      }
    });
    s.images.push_back(std::move(img));
    std::ostringstream name;
    name << "view_" << std::setw(3) << std::setfill('0') << v << ".png";
    s.files.push_back(name.str());
  }
  return out;
}

}  // namespace moments_nerf
