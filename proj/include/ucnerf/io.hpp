#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ucnerf/camera.hpp"
#include "ucnerf/image.hpp"

namespace ucnerf {

struct SparsePoint {
  double u = 0, v = 0, depth = 0, omega = 0;
};

struct ViewData {
  Camera cam;
  Image image;                     // H x W x 3
  Image depth;                     // H x W x 1, ground truth
  Image prior;                     // H x W x 1, monocular-style prior
  std::vector<SparsePoint> sparse; // SfM-style keypoints
};

struct Dataset {
  std::vector<ViewData> views;
  std::vector<int> train_idx;
  std::vector<int> test_idx;
};

// Directory layout: cameras.json, split.json, images/NNNN.png,
// depth/NNNN.pfm, sparse/NNNN.txt, prior/NNNN.pfm.
void export_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

Camera camera_from_json_file(const std::string& path);
void camera_to_json_file(const std::string& path, const Camera& cam);

std::vector<SparsePoint> read_sparse(const std::string& path);
void write_sparse(const std::string& path, const std::vector<SparsePoint>& pts);

// Append-style loss log: "iter, total, rgb, con, scale, grad, reg".
struct LossRow {
  int64_t iter = 0;
  double total = 0, rgb = 0, con = 0, scale = 0, grad = 0, reg = 0;
};
void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows);
std::vector<LossRow> read_loss_csv(const std::string& path);

// Self-describing container of named float arrays plus a JSON metadata
// block; byte-stable across write/read/write round trips.
struct NamedBlobs {
  std::string meta_json = "{}";
  std::vector<std::pair<std::string, std::vector<float>>> arrays;

  void add(const std::string& name, std::vector<float> data);
  const std::vector<float>& get(const std::string& name) const;
  bool has(const std::string& name) const;
};
void write_blobs(const std::string& path, const NamedBlobs& blobs);
NamedBlobs read_blobs(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace ucnerf
