#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "errors.hpp"

namespace moments_nerf {

/// Pinhole camera. Pixel (row i, column j) has its center at (u, v) = (j, i).
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();   // world -> camera, meters
  int width = 1;
  int height = 1;

  void validate() const {
    require(fx > 0, "fx must be positive");
    require(fy > 0, "fy must be positive");
    require(width > 0 && height > 0, "camera width/height must be positive");
    const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    require(ortho < 1e-6, "world_to_cam rotation is not orthonormal");
  }

  /// Camera center in world coordinates.
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& x_world) const { return rotation * x_world + translation; }

  /// Camera that sits at `eye` and looks at `target`; camera y points down in the image.
  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                        double focal, int width, int height) {
    const Eigen::Vector3d z = (target - eye).normalized();
    const Eigen::Vector3d x = z.cross(up).normalized();
    const Eigen::Vector3d y = z.cross(x);
    Camera cam;
    cam.rotation.row(0) = x.transpose();
    cam.rotation.row(1) = y.transpose();
    cam.rotation.row(2) = z.transpose();
    cam.translation = -cam.rotation * eye;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    return cam;
  }
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;    // camera-frame z, meters
  bool in_front = false;  // false when depth <= 0; the caller decides masking
};

inline Projection project(const Eigen::Vector3d& x_world, const Camera& cam) {
  const Eigen::Vector3d p = cam.to_camera(x_world);
  Projection out;
  out.depth = p.z();
  out.in_front = p.z() > 0.0;
  if (out.in_front) {
    out.u = cam.fx * p.x() / p.z() + cam.cx;
    out.v = cam.fy * p.y() / p.z() + cam.cy;
  }
  return out;
}

}  // namespace moments_nerf
