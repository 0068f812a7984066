#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

#include "ucnerf/mathutil.hpp"

namespace ucnerf {

// Pinhole camera. R maps world to camera coordinates; together with t the
// world point X lands at x_cam = R * X + t. Camera looks down +z.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 R = Mat3::identity();
  Vec3 t;

  void validate() const {
    if (fx <= 0 || fy <= 0) throw std::invalid_argument("camera: focal <= 0");
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("camera: nonpositive size");
    const Mat3 should_be_I = R * R.transpose();
    if (should_be_I.max_abs_diff(Mat3::identity()) > 1e-9)
      throw std::invalid_argument("camera: R not orthonormal");
  }

  Vec3 center() const { return -(R.transpose() * t); }

  // World point -> pixel coordinates + depth (z in camera frame).
  struct Projection {
    double u, v, depth;
  };
  Projection project(const Vec3& X) const {
    const Vec3 xc = R * X + t;
    return {fx * xc.x / xc.z + cx, fy * xc.y / xc.z + cy, xc.z};
  }

  // Pixel (u, v) at camera-frame depth d -> world point.
  Vec3 unproject(double u, double v, double d) const {
    const Vec3 xc{(u - cx) / fx * d, (v - cy) / fy * d, d};
    return R.transpose() * (xc - t);
  }

  // World-space ray through pixel center (u, v): origin + unit direction.
  struct Ray {
    Vec3 origin, dir;
  };
  Ray ray_through(double u, double v) const {
    const Vec3 dir_cam{(u - cx) / fx, (v - cy) / fy, 1.0};
    const Vec3 dir_world = R.transpose() * dir_cam;
    return {center(), dir_world.normalized()};
  }

  bool in_bounds(double u, double v, double margin = 0.0) const {
    return u >= -margin && u <= width - 1 + margin && v >= -margin &&
           v <= height - 1 + margin;
  }
};

// Look-at constructor: camera at eye, +z toward target, up vector resolved
// to be orthogonal.
inline Camera make_lookat_camera(const Vec3& eye, const Vec3& target,
                                 const Vec3& up_hint, double fx, double fy,
                                 double cx, double cy, int width, int height) {
  const Vec3 fwd = (target - eye).normalized();
  Vec3 right = fwd.cross(up_hint).normalized();
  const Vec3 dn = fwd.cross(right).normalized();
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  cam.R = Mat3::from_rows(right, dn, fwd);
  cam.t = -(cam.R * eye);
  cam.validate();
  return cam;
}

}  // namespace ucnerf
