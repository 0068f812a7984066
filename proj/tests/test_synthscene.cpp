#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "testutil.hpp"
#include "ucnerf/oracle.hpp"
#include "ucnerf/synthscene.hpp"

using namespace ucnerf;

namespace {

SceneSpec tiny_spec() {
  SceneSpec s;
  s.seed = 5;
  s.n_views = 4;
  s.width = 16;
  s.height = 12;
  s.n_quadrature = 256;
  s.sparse_points = 12;
  s.n_blobs = 4;
  return s;
}

}  // namespace

TEST_CASE("scene spec json round trip and validation") {
  const SceneSpec s = tiny_spec();
  const SceneSpec back = parse_scene_spec(scene_spec_to_json(s));
  CHECK(back.seed == s.seed);
  CHECK(back.n_views == 4);
  CHECK(back.width == 16);
  CHECK(back.texture_freq == s.texture_freq);
  CHECK(back.spec_region_min.x == s.spec_region_min.x);

  CHECK_THROWS_WITH_AS(parse_scene_spec("{\"n_blobs\": 0}"),
                       doctest::Contains("n_blobs"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_scene_spec("{\"specular_strength\": 1.5}"),
                       doctest::Contains("specular_strength"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_scene_spec(
          "{\"specular_region\": {\"min\": [-5,0,0], \"max\": [0,0.5,0.5]}}"),
      doctest::Contains("specular_region"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_scene_spec("{\"prior\": {\"a\": -1, \"b\": 0, "
                                        "\"noise\": 0}}"),
                       doctest::Contains("prior.a"), std::invalid_argument);
  CHECK_THROWS_AS(parse_scene_spec("not json"), std::invalid_argument);
}

TEST_CASE("make_scene is deterministic and fields behave") {
  const SceneSpec spec = tiny_spec();
  const auto f1 = make_scene(spec);
  const auto f2 = make_scene(spec);
  REQUIRE(f1.blobs.size() == 4);
  for (size_t i = 0; i < f1.blobs.size(); ++i) {
    CHECK(f1.blobs[i].center.x == f2.blobs[i].center.x);
    CHECK(f1.blobs[i].amp == f2.blobs[i].amp);
  }
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                 rng.uniform(-1.0, 1.5)};
    CHECK(f1.sigma(x) >= 0.0);
    double rgb[3];
    f1.color(x, {0, 0, 1}, rgb);
    for (double c : rgb) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }
  // analytic gradient of sigma matches finite differences
  for (int i = 0; i < 20; ++i) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 1)};
    const Vec3 g = f1.grad_sigma(x);
    auto fd = oracle::finite_diff_grad(
        [&](const std::vector<double>& p) {
          return f1.sigma({p[0], p[1], p[2]});
        },
        {x.x, x.y, x.z});
    CHECK(std::abs(g.x - fd[0]) < 1e-6);
    CHECK(std::abs(g.y - fd[1]) < 1e-6);
    CHECK(std::abs(g.z - fd[2]) < 1e-6);
  }
}

TEST_CASE("specular term vanishes outside the region, acts inside") {
  SceneSpec spec = tiny_spec();
  spec.specular_strength = 0.8;
  const auto f = make_scene(spec);
  Rng rng(2);
  // outside: color is view independent
  for (int i = 0; i < 100; ++i) {
    Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.6, 0.9)};
    const bool inside = x.x > f.region_min.x && x.x < f.region_max.x &&
                        x.y > f.region_min.y && x.y < f.region_max.y &&
                        x.z > f.region_min.z && x.z < f.region_max.z;
    if (inside) continue;
    CHECK(f.specular_weight(x, Vec3{0.3, 0.4, 0.8}.normalized()) == 0.0);
    double a[3], b[3];
    f.color(x, Vec3{0, 0, 1}, a);
    f.color(x, Vec3{0.6, -0.5, 0.62}.normalized(), b);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
    CHECK(a[2] == b[2]);
  }
  // inside: some direction sees a positive lobe
  const Vec3 mid = (f.region_min + f.region_max) * 0.5;
  double best = 0;
  for (int i = 0; i < 500; ++i) {
    Vec3 d{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (d.norm() < 1e-6) continue;
    best = std::max(best, f.specular_weight(mid, d.normalized()));
  }
  CHECK(best > 0.0);
}

TEST_CASE("camera arc geometry") {
  SceneSpec spec = tiny_spec();
  spec.n_views = 2;
  spec.arc_degrees = 10.0;
  const auto cams = sample_camera_arc(spec);
  REQUIRE(cams.size() == 2);
  const double cosang = cams[0].R.row(2).dot(cams[1].R.row(2));
  CHECK(std::abs(std::acos(cosang) - deg2rad(10.0)) < 1e-6);

  spec.n_views = 7;
  spec.arc_degrees = 70.0;
  const auto arc = sample_camera_arc(spec);
  const Vec3 center = (spec.bounds_min + spec.bounds_max) * 0.5;
  for (size_t i = 0; i < arc.size(); ++i) {
    const auto p = arc[i].project(center);
    CHECK(std::abs(p.u - arc[i].cx) < 1e-9);
    CHECK(std::abs(p.v - arc[i].cy) < 1e-9);
    CHECK(p.depth > 0);
    if (i > 0) {
      const double step =
          std::acos(arc[i - 1].R.row(2).dot(arc[i].R.row(2)));
      CHECK(std::abs(step - deg2rad(70.0 / 6.0)) < 1e-9);
    }
  }
}

TEST_CASE("ground truth render: background, depth range, convergence") {
  SceneSpec spec = tiny_spec();
  const auto f = make_scene(spec);
  const auto cams = sample_camera_arc(spec);
  const auto range = bounds_depth_range(spec, cams[0]);
  CHECK(range.near > 0);
  CHECK(range.far > range.near);

  Image rgb, depth;
  render_ground_truth(f, cams[0], range, 512, rgb, depth);
  int background = 0, surface = 0;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const float d = depth.at(y, x, 0);
      CHECK(d >= static_cast<float>(range.near));
      CHECK(d <= static_cast<float>(range.far) * 1.0001f);
      if (d > 0.999f * static_cast<float>(range.far))
        ++background;
      else
        ++surface;
    }
  CHECK(surface > 20);   // the blobs are visible
  CHECK(background > 0); // and do not fill the frame

  // doubling quadrature changes colors by < 1e-3
  Image rgb2, depth2, rgb4, depth4;
  render_ground_truth(f, cams[0], range, 2048, rgb2, depth2);
  render_ground_truth(f, cams[0], range, 4096, rgb4, depth4);
  float worst = 0;
  for (size_t i = 0; i < rgb2.data.size(); ++i)
    worst = std::max(worst, std::abs(rgb2.data[i] - rgb4.data[i]));
  CHECK(worst < 1e-3f);
}

TEST_CASE("sparse depth: textured picks, noise scaling, weights") {
  SceneSpec spec = tiny_spec();
  spec.width = 32;
  spec.height = 24;
  const auto f = make_scene(spec);
  const auto cams = sample_camera_arc(spec);
  const auto range = bounds_depth_range(spec, cams[1]);
  Image rgb, depth;
  render_ground_truth(f, cams[1], range, 512, rgb, depth);

  Rng rng0(9);
  const auto clean = make_sparse_depth(rgb, depth, range.far, 40, 0.0, rng0);
  REQUIRE(clean.size() == 40);
  for (const auto& p : clean) {
    CHECK(p.omega == 0.0);
    const int px = static_cast<int>(p.u), py = static_cast<int>(p.v);
    CHECK(p.u == px + 0.5);
    CHECK(p.depth == depth.at(py, px, 0));
    CHECK(p.depth < 0.999 * range.far);
  }

  Rng rng1(9);
  const auto noisy = make_sparse_depth(rgb, depth, range.far, 40, 0.05, rng1);
  double wbar = 0;
  for (const auto& p : noisy) wbar += p.omega;
  wbar /= noisy.size();
  CHECK(wbar > 0.0);
  // weight exp(-(omega/mean)^2) is monotone decreasing in omega
  std::vector<double> omegas;
  for (const auto& p : noisy) omegas.push_back(p.omega);
  std::sort(omegas.begin(), omegas.end());
  const double top = omegas.back(), med = omegas[omegas.size() / 2];
  CHECK(std::exp(-(top / wbar) * (top / wbar)) <
        std::exp(-(med / wbar) * (med / wbar)));
}

TEST_CASE("prior depth is an affine transform plus noise") {
  SceneSpec spec = tiny_spec();
  const auto f = make_scene(spec);
  const auto cams = sample_camera_arc(spec);
  const auto range = bounds_depth_range(spec, cams[2]);
  Image rgb, depth;
  render_ground_truth(f, cams[2], range, 512, rgb, depth);

  Rng rng(4);
  const Image prior = make_prior_depth(depth, 1.3, 0.4, 0.01, rng);
  // least squares recovery of (a, b)
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(depth.data.size());
  for (size_t i = 0; i < depth.data.size(); ++i) {
    sx += depth.data[i];
    sy += prior.data[i];
    sxx += double(depth.data[i]) * depth.data[i];
    sxy += double(depth.data[i]) * prior.data[i];
  }
  const double a = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double b = (sy - a * sx) / n;
  CHECK(std::abs(a - 1.3) < 0.05);
  CHECK(std::abs(b - 0.4) < 0.05);

  CHECK_THROWS_AS(make_prior_depth(depth, -1.0, 0.0, 0.0, rng),
                  std::invalid_argument);
}

TEST_CASE("generate_dataset export round trip") {
  SceneSpec spec = tiny_spec();
  namespace fs = std::filesystem;
  const auto dir = (fs::temp_directory_path() / "ucnerf_scene_test").string();
  fs::remove_all(dir);
  generate_scene_to_dir(spec, dir);
  const Dataset ds = load_dataset(dir);
  CHECK(ds.views.size() == 4);
  CHECK(ds.train_idx.size() == 2);
  CHECK(ds.test_idx.size() == 2);
  for (const auto& v : ds.views) {
    CHECK(v.image.width == 16);
    CHECK(v.sparse.size() == 12);
    CHECK(v.prior.width == 16);
  }
  const SceneSpec back = parse_scene_spec(read_text_file(dir + "/scene_spec.json"));
  CHECK(back.seed == spec.seed);
}
