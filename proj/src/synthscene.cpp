#include "ucnerf/synthscene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ucnerf/oracle.hpp"
#include "ucnerf/raycore.hpp"

using nlohmann::json;

namespace ucnerf {

namespace {

Vec3 vec3_from(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("scene spec: " + field +
                                " must be an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_to(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

double smoothstep01(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// C1 bump: 1 deep inside the box, exactly 0 on and outside its boundary.
double region_weight(const Vec3& x, const Vec3& lo, const Vec3& hi) {
  const double margin = 0.15;
  double w = 1.0;
  const double xs[3] = {x.x, x.y, x.z};
  const double ls[3] = {lo.x, lo.y, lo.z};
  const double hs[3] = {hi.x, hi.y, hi.z};
  for (int a = 0; a < 3; ++a) {
    if (xs[a] <= ls[a] || xs[a] >= hs[a]) return 0.0;
    const double m = std::min(margin, 0.5 * (hs[a] - ls[a]));
    w *= smoothstep01((xs[a] - ls[a]) / m) * smoothstep01((hs[a] - xs[a]) / m);
  }
  return w;
}

}  // namespace

SceneSpec parse_scene_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("scene spec: invalid json: ") +
                                e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("scene spec: not an object");
  SceneSpec s;
  if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
  if (j.contains("bounds")) {
    s.bounds_min = vec3_from(j["bounds"].at("min"), "bounds.min");
    s.bounds_max = vec3_from(j["bounds"].at("max"), "bounds.max");
  }
  if (j.contains("n_blobs")) s.n_blobs = j["n_blobs"].get<int>();
  if (j.contains("specular_strength"))
    s.specular_strength = j["specular_strength"].get<double>();
  if (j.contains("specular_region")) {
    s.spec_region_min =
        vec3_from(j["specular_region"].at("min"), "specular_region.min");
    s.spec_region_max =
        vec3_from(j["specular_region"].at("max"), "specular_region.max");
  }
  if (j.contains("texture_freq")) s.texture_freq = j["texture_freq"].get<double>();
  if (j.contains("n_views")) s.n_views = j["n_views"].get<int>();
  if (j.contains("arc_degrees")) s.arc_degrees = j["arc_degrees"].get<double>();
  if (j.contains("image")) {
    s.width = j["image"].at("width").get<int>();
    s.height = j["image"].at("height").get<int>();
  }
  if (j.contains("n_quadrature")) s.n_quadrature = j["n_quadrature"].get<int>();
  if (j.contains("sparse")) {
    s.sparse_points = j["sparse"].at("points").get<int>();
    s.sparse_noise = j["sparse"].at("noise").get<double>();
  }
  if (j.contains("prior")) {
    s.prior_a = j["prior"].at("a").get<double>();
    s.prior_b = j["prior"].at("b").get<double>();
    s.prior_noise = j["prior"].at("noise").get<double>();
  }

  const auto require = [](bool ok, const char* field, const char* what) {
    if (!ok)
      throw std::invalid_argument(std::string("scene spec: ") + field + " " +
                                  what);
  };
  require(s.n_blobs > 0, "n_blobs", "must be positive");
  require(s.n_views >= 2, "n_views", "must be at least 2");
  require(s.width > 0 && s.height > 0, "image", "must have positive size");
  require(s.n_quadrature > 0, "n_quadrature", "must be positive");
  require(s.sparse_points > 0, "sparse.points", "must be positive");
  require(s.sparse_noise >= 0, "sparse.noise", "must be non-negative");
  require(s.prior_noise >= 0, "prior.noise", "must be non-negative");
  require(s.prior_a > 0, "prior.a", "must be positive");
  require(s.arc_degrees > 0 && s.arc_degrees < 360, "arc_degrees",
          "must be in (0, 360)");
  require(s.texture_freq > 0, "texture_freq", "must be positive");
  require(s.specular_strength >= 0 && s.specular_strength <= 1,
          "specular_strength", "must be in [0, 1]");
  const auto inside = [](double a, double b, double lo, double hi) {
    return a >= lo && b <= hi && a < b;
  };
  require(inside(s.bounds_min.x, s.bounds_max.x, -1e9, 1e9) &&
              inside(s.bounds_min.y, s.bounds_max.y, -1e9, 1e9) &&
              inside(s.bounds_min.z, s.bounds_max.z, -1e9, 1e9),
          "bounds", "must satisfy min < max");
  require(inside(s.spec_region_min.x, s.spec_region_max.x, s.bounds_min.x,
                 s.bounds_max.x) &&
              inside(s.spec_region_min.y, s.spec_region_max.y, s.bounds_min.y,
                     s.bounds_max.y) &&
              inside(s.spec_region_min.z, s.spec_region_max.z, s.bounds_min.z,
                     s.bounds_max.z),
          "specular_region", "must sit inside bounds with min < max");
  return s;
}

std::string scene_spec_to_json(const SceneSpec& s) {
  json j;
  j["seed"] = s.seed;
  j["bounds"] = {{"min", vec3_to(s.bounds_min)}, {"max", vec3_to(s.bounds_max)}};
  j["n_blobs"] = s.n_blobs;
  j["specular_strength"] = s.specular_strength;
  j["specular_region"] = {{"min", vec3_to(s.spec_region_min)},
                          {"max", vec3_to(s.spec_region_max)}};
  j["texture_freq"] = s.texture_freq;
  j["n_views"] = s.n_views;
  j["arc_degrees"] = s.arc_degrees;
  j["image"] = {{"width", s.width}, {"height", s.height}};
  j["n_quadrature"] = s.n_quadrature;
  j["sparse"] = {{"points", s.sparse_points}, {"noise", s.sparse_noise}};
  j["prior"] = {{"a", s.prior_a}, {"b", s.prior_b}, {"noise", s.prior_noise}};
  return j.dump(2) + "\n";
}

double GroundTruthField::sigma(const Vec3& x) const {
  double s = 0;
  for (const auto& b : blobs) {
    const Vec3 d = x - b.center;
    s += b.amp * std::exp(-d.dot(d) * b.inv2r2);
  }
  return s;
}

Vec3 GroundTruthField::grad_sigma(const Vec3& x) const {
  Vec3 g{0, 0, 0};
  for (const auto& b : blobs) {
    const Vec3 d = x - b.center;
    const double e = b.amp * std::exp(-d.dot(d) * b.inv2r2);
    g = g + d * (-2.0 * b.inv2r2 * e);
  }
  return g;
}

double GroundTruthField::specular_weight(const Vec3& x, const Vec3& d) const {
  if (spec_strength <= 0) return 0;
  const double rw = region_weight(x, region_min, region_max);
  if (rw == 0) return 0;
  const Vec3 g = grad_sigma(x);
  const double gn = g.norm();
  const Vec3 n = gn > 1e-9 ? g * (-1.0 / gn) : Vec3{0, 0, 1};
  // mirror of the light direction about the local normal
  const Vec3 m = n * (2.0 * n.dot(light)) - light;
  const double towards = std::max(0.0, (d * -1.0).dot(m));
  const double lobe = towards * towards * towards * towards;
  return spec_strength * rw * lobe;
}

void GroundTruthField::color(const Vec3& x, const Vec3& d, double* rgb) const {
  const double f = texture_freq;
  const double base[3] = {
      0.5 + 0.35 * std::sin(f * x.x + phase[0] + 1.3 * std::sin(0.7 * f * x.y)),
      0.5 + 0.35 * std::sin(f * x.y + phase[1] + 1.1 * std::sin(0.6 * f * x.z)),
      0.5 + 0.35 * std::sin(f * x.z + phase[2] + 0.9 * std::sin(0.8 * f * x.x))};
  const double w = specular_weight(x, d);
  for (int c = 0; c < 3; ++c) rgb[c] = base[c] * (1.0 - w) + w;
}

GroundTruthField make_scene(const SceneSpec& spec) {
  GroundTruthField f;
  f.texture_freq = spec.texture_freq;
  f.spec_strength = spec.specular_strength;
  f.region_min = spec.spec_region_min;
  f.region_max = spec.spec_region_max;
  f.light = f.light.normalized();
  Rng rng(Rng::mix(spec.seed, 0xb10b5));
  const Vec3 lo = spec.bounds_min, hi = spec.bounds_max;
  const Vec3 span = hi - lo;
  const double scale = std::min({span.x, span.y, span.z});
  for (int i = 0; i < spec.n_blobs; ++i) {
    Blob b;
    // centers kept inside the inner 70% of the bounds
    b.center = {lo.x + span.x * rng.uniform(0.15, 0.85),
                lo.y + span.y * rng.uniform(0.15, 0.85),
                lo.z + span.z * rng.uniform(0.15, 0.85)};
    const double r = scale * rng.uniform(0.12, 0.28);
    b.inv2r2 = 1.0 / (2.0 * r * r);
    b.amp = rng.uniform(6.0, 14.0);
    f.blobs.push_back(b);
  }
  for (int c = 0; c < 3; ++c) f.phase[c] = rng.uniform(0.0, 2.0 * kPi);
  return f;
}

std::vector<Camera> sample_camera_arc(const SceneSpec& spec) {
  const Vec3 center = (spec.bounds_min + spec.bounds_max) * 0.5;
  const Vec3 span = spec.bounds_max - spec.bounds_min;
  const double diag = span.norm();
  const double radius = 1.6 * diag;
  // arc plane through the center, gently tilted off the horizontal
  const Vec3 normal = Vec3{0.25, 0.1, 1.0}.normalized();
  const Vec3 e1 = Vec3{0, 0, 1}.cross(normal).normalized();
  const Vec3 e2 = normal.cross(e1).normalized();
  const double fx = 1.1 * spec.width;

  std::vector<Camera> cams;
  const double arc = deg2rad(spec.arc_degrees);
  for (int i = 0; i < spec.n_views; ++i) {
    const double theta =
        spec.n_views == 1
            ? 0.0
            : -0.5 * arc + arc * static_cast<double>(i) / (spec.n_views - 1);
    const Vec3 eye =
        center + (e1 * std::cos(theta) + e2 * std::sin(theta)) * radius;
    cams.push_back(make_lookat_camera(eye, center, {0, 0, 1}, fx, fx,
                                      0.5 * spec.width, 0.5 * spec.height,
                                      spec.width, spec.height));
  }
  return cams;
}

DepthRange bounds_depth_range(const SceneSpec& spec, const Camera& cam) {
  double zmin = 1e30, zmax = -1e30;
  for (int i = 0; i < 8; ++i) {
    const Vec3 corner{i & 1 ? spec.bounds_max.x : spec.bounds_min.x,
                      i & 2 ? spec.bounds_max.y : spec.bounds_min.y,
                      i & 4 ? spec.bounds_max.z : spec.bounds_min.z};
    const double z = (cam.R * corner + cam.t).z;
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  }
  DepthRange r;
  r.near = std::max(0.05, 0.95 * zmin);
  r.far = 1.05 * zmax;
  return r;
}

void render_ground_truth(const GroundTruthField& field, const Camera& cam,
                         const DepthRange& range, int n_quadrature,
                         Image& rgb_out, Image& depth_out) {
  rgb_out = Image(cam.width, cam.height, 3);
  depth_out = Image(cam.width, cam.height, 1);
  const Vec3 axis = cam.R.row(2);
  auto sigma_fn = [&](const Vec3& x) { return field.sigma(x); };
  auto color_fn = [&](const Vec3& x, const Vec3& d, double* rgb) {
    field.color(x, d, rgb);
  };
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const auto ray = cam.ray_through(x + 0.5, y + 0.5);
      const double zcos = ray.dir.dot(axis);
      const auto res = oracle::dense_quadrature_render(
          sigma_fn, color_fn, ray.origin, ray.dir, range.near / zcos,
          range.far / zcos, n_quadrature);
      for (int c = 0; c < 3; ++c) rgb_out.at(y, x, c) = static_cast<float>(res.rgb[c]);
      depth_out.at(y, x, 0) = static_cast<float>(res.surface_depth * zcos);
    }
}

std::vector<SparsePoint> make_sparse_depth(const Image& rgb, const Image& depth,
                                           double far, int n_points,
                                           double noise_sigma, Rng& rng) {
  const int W = rgb.width, H = rgb.height;
  const auto Y = luma(rgb);
  const auto grad_mag = [&](int x, int y) {
    const int xm = std::max(x - 1, 0), xp = std::min(x + 1, W - 1);
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
    const double gx = Y[y * W + xp] - Y[y * W + xm];
    const double gy = Y[yp * W + x] - Y[ym * W + x];
    return std::sqrt(gx * gx + gy * gy);
  };
  // keypoints live on textured surface pixels
  std::vector<std::pair<double, int>> cand;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (depth.at(y, x, 0) < 0.999 * far)
        cand.emplace_back(grad_mag(x, y), y * W + x);
  if (static_cast<int>(cand.size()) < n_points)
    throw std::runtime_error("make_sparse_depth: not enough surface pixels");
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  const int pool = std::max(n_points, static_cast<int>(cand.size() * 3) / 10);
  auto pick = rng.sample_without_replacement(pool, n_points);
  std::sort(pick.begin(), pick.end());

  std::vector<SparsePoint> pts;
  for (int k : pick) {
    const int px = cand[k].second % W, py = cand[k].second / W;
    const double gt = depth.at(py, px, 0);
    const double noise = gt * noise_sigma * rng.normal();
    SparsePoint p;
    p.u = px + 0.5;
    p.v = py + 0.5;
    p.depth = gt + noise;
    p.omega = std::abs(noise);
    pts.push_back(p);
  }
  return pts;
}

Image make_prior_depth(const Image& depth, double a, double b,
                       double noise_sigma, Rng& rng) {
  if (a <= 0) throw std::invalid_argument("make_prior_depth: a must be > 0");
  Image prior(depth.width, depth.height, 1);
  for (size_t i = 0; i < depth.data.size(); ++i)
    prior.data[i] = static_cast<float>(a * depth.data[i] + b +
                                       noise_sigma * rng.normal());
  return prior;
}

Dataset generate_dataset(const SceneSpec& spec) {
  const GroundTruthField field = make_scene(spec);
  const auto cams = sample_camera_arc(spec);
  Dataset ds;
  Rng rng(Rng::mix(spec.seed, 0xda7a5e7));
  for (size_t i = 0; i < cams.size(); ++i) {
    ViewData v;
    v.cam = cams[i];
    const DepthRange range = bounds_depth_range(spec, cams[i]);
    render_ground_truth(field, cams[i], range, spec.n_quadrature, v.image,
                        v.depth);
    v.sparse = make_sparse_depth(v.image, v.depth, range.far, spec.sparse_points,
                                 spec.sparse_noise, rng);
    v.prior = make_prior_depth(v.depth, spec.prior_a, spec.prior_b,
                               spec.prior_noise, rng);
    ds.views.push_back(std::move(v));
    // alternate along the arc so both splits cover the full baseline
    if (i % 2 == 0)
      ds.train_idx.push_back(static_cast<int>(i));
    else
      ds.test_idx.push_back(static_cast<int>(i));
  }
  return ds;
}

void generate_scene_to_dir(const SceneSpec& spec, const std::string& out_dir) {
  const Dataset ds = generate_dataset(spec);
  export_dataset(out_dir, ds);
  write_text_file(out_dir + "/scene_spec.json", scene_spec_to_json(spec));
}

}  // namespace ucnerf
