#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ucnerf/camera.hpp"
#include "ucnerf/io.hpp"
#include "ucnerf/mathutil.hpp"

// Synthetic scenes with analytic density/color fields: smooth blobs carrying
// a trigonometric albedo texture, plus a view-dependent specular lobe that is
// exactly zero outside a designated region. Ground truth is rendered by dense
// quadrature; depths are camera-frame z throughout.

namespace ucnerf {

struct SceneSpec {
  uint64_t seed = 1;
  Vec3 bounds_min{-1.0, -1.0, -0.6};
  Vec3 bounds_max{1.0, 1.0, 0.9};
  int n_blobs = 6;
  double specular_strength = 0.6;
  Vec3 spec_region_min{-0.1, -1.0, -0.6};
  Vec3 spec_region_max{1.0, 0.5, 0.9};
  double texture_freq = 3.0;
  // dataset generation
  int n_views = 20;
  double arc_degrees = 70.0;
  int width = 64, height = 48;
  int n_quadrature = 2048;
  int sparse_points = 96;
  double sparse_noise = 0.01;
  double prior_a = 1.1, prior_b = 0.15, prior_noise = 0.01;
};

SceneSpec parse_scene_spec(const std::string& json_text);
std::string scene_spec_to_json(const SceneSpec& spec);

struct Blob {
  Vec3 center;
  double inv2r2 = 0;
  double amp = 0;
};

struct GroundTruthField {
  std::vector<Blob> blobs;
  double texture_freq = 3.0;
  double phase[3] = {0, 0, 0};
  double spec_strength = 0;
  Vec3 region_min, region_max;
  Vec3 light{0.3, -0.5, 0.81};  // unit direction toward the light

  double sigma(const Vec3& x) const;
  Vec3 grad_sigma(const Vec3& x) const;
  double specular_weight(const Vec3& x, const Vec3& d) const;
  void color(const Vec3& x, const Vec3& d, double* rgb) const;
};

GroundTruthField make_scene(const SceneSpec& spec);

// Cameras on a circular arc around the bounds center, all looking at it.
// Ordering follows the arc parameter.
std::vector<Camera> sample_camera_arc(const SceneSpec& spec);

// z range that covers the bounds box from this camera.
struct DepthRange {
  double near = 0, far = 0;
};
DepthRange bounds_depth_range(const SceneSpec& spec, const Camera& cam);

// RGB + z-depth via dense quadrature at every pixel center.
void render_ground_truth(const GroundTruthField& field, const Camera& cam,
                         const DepthRange& range, int n_quadrature,
                         Image& rgb_out, Image& depth_out);

std::vector<SparsePoint> make_sparse_depth(const Image& rgb, const Image& depth,
                                           double far, int n_points,
                                           double noise_sigma, Rng& rng);

Image make_prior_depth(const Image& depth, double a, double b,
                       double noise_sigma, Rng& rng);

// Full pipeline: scene -> cameras -> renders -> sparse/prior -> directory.
Dataset generate_dataset(const SceneSpec& spec);
void generate_scene_to_dir(const SceneSpec& spec, const std::string& out_dir);

}  // namespace ucnerf
