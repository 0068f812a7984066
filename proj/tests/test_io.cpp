#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"
#include "ucnerf/io.hpp"

using namespace ucnerf;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir() {
  auto d = fs::temp_directory_path() / "ucnerf_io_test";
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

std::string file_bytes(const std::string& path) {
  return read_text_file(path);
}

Image noise_image(Rng& rng, int w, int h, int c, float lo = 0.0f,
                  float hi = 1.0f) {
  Image img(w, h, c);
  for (auto& v : img.data)
    v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

}  // namespace

TEST_CASE("png round trip is byte-stable after one quantization") {
  const auto dir = tmp_dir();
  Rng rng(1);
  const Image img = noise_image(rng, 33, 17, 3);
  const auto p1 = dir + "/a.png", p2 = dir + "/b.png";
  write_png(p1, img);
  const Image back = read_png(p1);
  CHECK(back.width == 33);
  CHECK(back.height == 17);
  // already-quantized data reproduces identical bytes
  write_png(p2, back);
  CHECK(file_bytes(p1) == file_bytes(p2));
  // quantization error bounded by half a step
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(img.data[i] - back.data[i]) <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("pfm round trip is bitwise") {
  const auto dir = tmp_dir();
  Rng rng(2);
  Image depth = noise_image(rng, 21, 13, 1, 0.1f, 9.0f);
  depth.at(0, 0, 0) = 1e-30f;
  depth.at(12, 20, 0) = 4.25e12f;
  const auto p = dir + "/d.pfm";
  write_pfm(p, depth);
  const Image back = read_pfm(p);
  CHECK(back.width == 21);
  CHECK(back.height == 13);
  for (size_t i = 0; i < depth.data.size(); ++i)
    CHECK(depth.data[i] == back.data[i]);

  const auto p2 = dir + "/d2.pfm";
  write_pfm(p2, back);
  CHECK(file_bytes(p) == file_bytes(p2));
}

TEST_CASE("camera json round trip") {
  const auto dir = tmp_dir();
  const Camera cam = make_lookat_camera({1.7, -2.3, 0.9}, {0.1, 0.2, 0.3},
                                        {0, 0, 1}, 77.7, 78.9, 31.5, 23.5,
                                        64, 48);
  const auto p = dir + "/cam.json";
  camera_to_json_file(p, cam);
  const Camera back = camera_from_json_file(p);
  CHECK(std::abs(back.fx - cam.fx) < 1e-7);
  CHECK(std::abs(back.cx - cam.cx) < 1e-7);
  CHECK(back.width == cam.width);
  CHECK(back.R.max_abs_diff(cam.R) < 1e-7);
  CHECK(std::abs(back.t.x - cam.t.x) < 1e-7);
  // second write is byte-identical (serialization is exact)
  const auto p2 = dir + "/cam2.json";
  camera_to_json_file(p2, back);
  CHECK(file_bytes(p) == file_bytes(p2));
}

TEST_CASE("sparse txt round trip") {
  const auto dir = tmp_dir();
  std::vector<SparsePoint> pts = {{3.5, 7.5, 2.25, 0.013},
                                  {0.5, 40.5, 4.75, 0.0},
                                  {63.5, 0.5, 1.125, 1.5e-7}};
  const auto p = dir + "/s.txt";
  write_sparse(p, pts);
  const auto back = read_sparse(p);
  REQUIRE(back.size() == pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    CHECK(back[i].u == pts[i].u);
    CHECK(back[i].v == pts[i].v);
    CHECK(back[i].depth == pts[i].depth);
    CHECK(back[i].omega == pts[i].omega);
  }
}

TEST_CASE("dataset export/load round trip") {
  const auto dir = tmp_dir() + "/ds";
  Rng rng(3);
  Dataset ds;
  for (int i = 0; i < 4; ++i) {
    ViewData v;
    v.cam = make_lookat_camera({2.0 + 0.1 * i, -3.0, 1.0}, {0, 0, 0.5},
                               {0, 0, 1}, 70.0, 70.0, 32.0, 24.0, 64, 48);
    v.image = noise_image(rng, 64, 48, 3);
    v.depth = noise_image(rng, 64, 48, 1, 1.0f, 5.0f);
    v.prior = noise_image(rng, 64, 48, 1, 1.0f, 5.0f);
    v.sparse = {{10.5, 20.5, 2.5, 0.01 * i}, {30.5, 5.5, 3.25, 0.002}};
    ds.views.push_back(std::move(v));
  }
  ds.train_idx = {0, 1, 2};
  ds.test_idx = {3};
  export_dataset(dir, ds);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.views.size() == 4);
  CHECK(back.train_idx == ds.train_idx);
  CHECK(back.test_idx == ds.test_idx);
  for (int i = 0; i < 4; ++i) {
    CHECK(back.views[i].cam.R.max_abs_diff(ds.views[i].cam.R) < 1e-7);
    CHECK(back.views[i].sparse.size() == 2);
    CHECK(back.views[i].sparse[0].depth == 2.5);
    for (size_t j = 0; j < ds.views[i].depth.data.size(); ++j)
      CHECK(back.views[i].depth.data[j] == ds.views[i].depth.data[j]);
  }
}

TEST_CASE("loss csv header and round trip") {
  const auto dir = tmp_dir();
  std::vector<LossRow> rows = {{100, 1.5, 0.1, 0.2, 0.3, 0.4, 0.5},
                               {200, 0.75, 0.05, 0.1, 0.15, 0.2, 0.25}};
  const auto p = dir + "/loss.csv";
  write_loss_csv(p, rows);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iter, total, rgb, con, scale, grad, reg");
  const auto back = read_loss_csv(p);
  REQUIRE(back.size() == 2);
  CHECK(back[1].iter == 200);
  CHECK(back[1].total == doctest::Approx(0.75));
  CHECK(back[0].reg == doctest::Approx(0.5));
}

TEST_CASE("named blob container round trips bitwise") {
  const auto dir = tmp_dir();
  Rng rng(4);
  NamedBlobs b;
  b.meta_json = R"({"config_hash":"abc123","step":777})";
  b.add("w1", testutil::rand_vec_f(rng, 257, -3.0f, 3.0f));
  b.add("w2", testutil::rand_vec_f(rng, 64, -1.0f, 1.0f));
  b.add("adam_m/w1", testutil::rand_vec_f(rng, 257, -0.1f, 0.1f));
  CHECK_THROWS_AS(b.add("w1", {}), std::invalid_argument);

  const auto p1 = dir + "/c1.bin", p2 = dir + "/c2.bin";
  write_blobs(p1, b);
  const NamedBlobs back = read_blobs(p1);
  REQUIRE(back.arrays.size() == 3);
  CHECK(back.has("adam_m/w1"));
  CHECK_FALSE(back.has("nope"));
  CHECK_THROWS_AS(back.get("nope"), std::out_of_range);
  for (size_t i = 0; i < b.arrays.size(); ++i) {
    CHECK(back.arrays[i].first == b.arrays[i].first);
    const auto& x = b.arrays[i].second;
    const auto& y = back.arrays[i].second;
    REQUIRE(x.size() == y.size());
    for (size_t j = 0; j < x.size(); ++j) CHECK(x[j] == y[j]);
  }
  write_blobs(p2, back);
  CHECK(file_bytes(p1) == file_bytes(p2));
}
