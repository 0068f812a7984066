#include "ucnerf/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ucnerf {

namespace {

std::string view_name(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d%s", index, ext);
  return buf;
}

json camera_to_json(const Camera& c) {
  json j;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  j["R"] = std::vector<double>(c.R.m.begin(), c.R.m.end());
  j["t"] = {c.t.x, c.t.y, c.t.z};
  return j;
}

Camera camera_from_json(const json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  const auto R = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (R.size() != 9 || t.size() != 3)
    throw std::runtime_error("camera json: R must have 9 entries, t 3");
  std::copy(R.begin(), R.end(), c.R.m.begin());
  c.t = {t[0], t[1], t[2]};
  c.validate();
  return c;
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << content;
  if (!out) throw std::runtime_error("short write to " + path);
}

Camera camera_from_json_file(const std::string& path) {
  return camera_from_json(json::parse(read_text_file(path)));
}

void camera_to_json_file(const std::string& path, const Camera& cam) {
  write_text_file(path, camera_to_json(cam).dump(2) + "\n");
}

std::vector<SparsePoint> read_sparse(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<SparsePoint> pts;
  SparsePoint p;
  while (in >> p.u >> p.v >> p.depth >> p.omega) pts.push_back(p);
  return pts;
}

void write_sparse(const std::string& path, const std::vector<SparsePoint>& pts) {
  std::ostringstream ss;
  char buf[160];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g\n", p.u, p.v,
                  p.depth, p.omega);
    ss << buf;
  }
  write_text_file(path, ss.str());
}

void export_dataset(const std::string& dir, const Dataset& ds) {
  for (const char* sub : {"", "images", "depth", "sparse", "prior"})
    fs::create_directories(fs::path(dir) / sub);

  json cams = json::array();
  for (const auto& v : ds.views) cams.push_back(camera_to_json(v.cam));
  write_text_file((fs::path(dir) / "cameras.json").string(), cams.dump(2) + "\n");

  json split = json::object();
  for (int i : ds.train_idx) split[std::to_string(i)] = "train";
  for (int i : ds.test_idx) split[std::to_string(i)] = "test";
  write_text_file((fs::path(dir) / "split.json").string(), split.dump(2) + "\n");

  for (size_t i = 0; i < ds.views.size(); ++i) {
    const auto& v = ds.views[i];
    const int idx = static_cast<int>(i);
    write_png((fs::path(dir) / "images" / view_name(idx, ".png")).string(),
              v.image);
    write_pfm((fs::path(dir) / "depth" / view_name(idx, ".pfm")).string(),
              v.depth);
    write_pfm((fs::path(dir) / "prior" / view_name(idx, ".pfm")).string(),
              v.prior);
    write_sparse((fs::path(dir) / "sparse" / view_name(idx, ".txt")).string(),
                 v.sparse);
  }
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  const json cams =
      json::parse(read_text_file((fs::path(dir) / "cameras.json").string()));
  if (!cams.is_array() || cams.empty())
    throw std::runtime_error("cameras.json: expected a non-empty array");
  const json split =
      json::parse(read_text_file((fs::path(dir) / "split.json").string()));

  ds.views.resize(cams.size());
  for (size_t i = 0; i < cams.size(); ++i) {
    auto& v = ds.views[i];
    const int idx = static_cast<int>(i);
    v.cam = camera_from_json(cams[i]);
    v.image = read_png((fs::path(dir) / "images" / view_name(idx, ".png")).string());
    v.depth = read_pfm((fs::path(dir) / "depth" / view_name(idx, ".pfm")).string());
    v.prior = read_pfm((fs::path(dir) / "prior" / view_name(idx, ".pfm")).string());
    v.sparse =
        read_sparse((fs::path(dir) / "sparse" / view_name(idx, ".txt")).string());
    if (v.image.width != v.cam.width || v.image.height != v.cam.height)
      throw std::runtime_error("dataset: image size disagrees with camera");
    if (v.depth.width != v.cam.width || v.prior.width != v.cam.width)
      throw std::runtime_error("dataset: map size disagrees with camera");

    const std::string key = std::to_string(i);
    if (!split.contains(key))
      throw std::runtime_error("split.json: missing entry for view " + key);
    const std::string role = split[key].get<std::string>();
    if (role == "train")
      ds.train_idx.push_back(idx);
    else if (role == "test")
      ds.test_idx.push_back(idx);
    else
      throw std::runtime_error("split.json: bad role '" + role + "'");
  }
  return ds;
}

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
  std::ostringstream ss;
  ss << "iter, total, rgb, con, scale, grad, reg\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "%" PRId64 ", %.9g, %.9g, %.9g, %.9g, %.9g, %.9g\n", r.iter,
                  r.total, r.rgb, r.con, r.scale, r.grad, r.reg);
    ss << buf;
  }
  write_text_file(path, ss.str());
}

std::vector<LossRow> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv " + path);
  std::vector<LossRow> rows;
  while (std::getline(in, line)) {
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream ls(line);
    LossRow r;
    if (ls >> r.iter >> r.total >> r.rgb >> r.con >> r.scale >> r.grad >> r.reg)
      rows.push_back(r);
  }
  return rows;
}

void NamedBlobs::add(const std::string& name, std::vector<float> data) {
  for (const auto& [n, _] : arrays)
    if (n == name) throw std::invalid_argument("blobs: duplicate name " + name);
  arrays.emplace_back(name, std::move(data));
}

const std::vector<float>& NamedBlobs::get(const std::string& name) const {
  for (const auto& [n, d] : arrays)
    if (n == name) return d;
  throw std::out_of_range("blobs: missing array " + name);
}

bool NamedBlobs::has(const std::string& name) const {
  for (const auto& [n, _] : arrays)
    if (n == name) return true;
  return false;
}

void write_blobs(const std::string& path, const NamedBlobs& blobs) {
  json header;
  header["meta"] = json::parse(blobs.meta_json);
  json arr = json::array();
  for (const auto& [name, data] : blobs.arrays)
    arr.push_back({{"name", name}, {"count", data.size()}});
  header["arrays"] = arr;
  const std::string h = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  const char magic[4] = {'U', 'C', 'N', 'F'};
  const uint32_t version = 1;
  const uint64_t hlen = h.size();
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(h.data(), h.size());
  for (const auto& [name, data] : blobs.arrays)
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path);
}

NamedBlobs read_blobs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  uint32_t version = 0;
  uint64_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || std::memcmp(magic, "UCNF", 4) != 0 || version != 1)
    throw std::runtime_error("blobs: bad header in " + path);
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  const json header = json::parse(h);

  NamedBlobs blobs;
  blobs.meta_json = header.at("meta").dump();
  for (const auto& a : header.at("arrays")) {
    std::vector<float> data(a.at("count").get<size_t>());
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    blobs.arrays.emplace_back(a.at("name").get<std::string>(), std::move(data));
  }
  if (!in) throw std::runtime_error("blobs: truncated data in " + path);
  return blobs;
}

}  // namespace ucnerf
