#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ucnerf/field.hpp"
#include "ucnerf/io.hpp"
#include "ucnerf/metrics.hpp"
#include "ucnerf/params.hpp"
#include "ucnerf/sweep.hpp"

namespace ucnerf {

// Training configuration; keys map 1:1 onto the JSON file. Defaults are the
// stock full-scale settings, runs at other scales override via JSON.
struct TrainConfig {
  int64_t iters = 2000;
  double lr = 6e-4;
  int ray_batch = 1024;
  int patch_batch = 50;
  int patch_side = 6;
  int samples_per_ray = 90;
  int n_source_views = 7;
  std::array<int, 3> stage_planes{48, 32, 8};
  int feat_channels = 8;
  int trunk_width = 32;
  int trunk_depth = 2;
  int branch_width = 16;
  int l_pos = 4;
  int l_dir = 2;
  double lambda_rgb = 10.0;
  double lambda_con = 0.5;
  double lambda_scale = 0.5;
  double lambda_grad = 0.5;
  double lambda_reg = 0.05;
  uint64_t seed = 1;
  int64_t log_every = 100;
  int64_t checkpoint_every = 1000;
  int chunk_rays = 256;
  bool use_uncertainty = true;
  bool use_adaptive_branch = true;
  bool use_distillation = true;
  std::string density_fusion = "paper";
  bool cascade_only = false;

  bool operator==(const TrainConfig&) const = default;
};

// Strict parse: unknown keys throw. load_train_config also applies the
// UCNERF_SEED environment override when set.
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path);
uint64_t config_hash(const TrainConfig& cfg);

// Cosine decay from lr to 0.1*lr across the run.
double lr_at(const TrainConfig& cfg, int64_t iter);

// n source views nearest to the target by camera-center distance; ties break
// by viewing-direction angle, then lower index. The target is excluded.
std::vector<int> select_source_views(const std::vector<Camera>& cams,
                                     const std::vector<int>& pool,
                                     const Camera& target, int n);
std::vector<int> select_source_views(const std::vector<Camera>& cams,
                                     const std::vector<int>& pool, int target,
                                     int n);

struct DepthBounds {
  double near = 0, far = 0;
};

// [0.9 * min, 1.1 * max] over the sparse depths of the given views.
DepthBounds sparse_depth_bounds(const Dataset& ds,
                                const std::vector<int>& views);

// Bit-exact double <-> float-pair packing for checkpoint blobs.
std::vector<float> pack_doubles(const std::vector<double>& v);
std::vector<double> unpack_doubles(const std::vector<float>& f);

struct TrainStats {
  int64_t iter = 0;
  double lr = 0;
  double total = 0, rgb = 0, con = 0, scale = 0, grad = 0, reg = 0;
  int skipped_patches = 0;
  int64_t underfilled = 0;
};

struct RenderOut {
  Image rgb;    // H x W x 3
  Image depth;  // H x W x 1, opacity-normalized surface depth
  Image unc;    // H x W x 1
};

struct EvalRow {
  int view = 0;
  double psnr = 0, ssim = 0, scale = 0;
  DepthMetrics depth;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0, std_psnr = 0;
  double mean_ssim = 0, std_ssim = 0;
  double mean_rmse = 0, std_rmse = 0;
  double mean_abs_rel = 0, mean_delta1 = 0;
  std::string to_json() const;
};

class Trainer {
 public:
  Trainer(const Dataset& ds, const TrainConfig& cfg, std::string run_dir);

  void init();
  TrainStats step(int64_t iter);
  void train();

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  EvalReport evaluate(bool write_outputs = true);
  RenderOut render_view(const Camera& tgt, const std::vector<int>& sources);

  // Cascade depth and uncertainty without the radiance field.
  struct CascadeView {
    std::vector<double> depth;  // full resolution
    std::vector<double> unc;
  };
  CascadeView cascade_view(const Camera& tgt, const std::vector<int>& sources);

  ParamStore<double>& params() { return store_; }
  const ParamStore<double>& params() const { return store_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t iter() const { return iter_; }
  DepthBounds bounds() const { return bounds_; }
  const Dataset& dataset() const { return ds_; }

 private:
  struct ChunkWork;
  struct ChunkGrads;

  void build_modules();
  std::vector<const Image*> view_images(const std::vector<int>& idx) const;
  std::vector<Camera> view_cams(const std::vector<int>& idx) const;

  Dataset ds_;
  TrainConfig cfg_;
  std::string run_dir_;
  ParamStore<double> store_;
  std::optional<SweepModule<double>> sweep_;
  std::optional<FieldModule<double>> field_;
  DepthBounds bounds_;
  int64_t iter_ = 0;
  std::vector<std::vector<int>> src_cache_;           // per train view
  std::vector<std::vector<WarpGrid<double>>> grids_;  // stage-0, per view
  std::vector<LossRow> log_;
};

struct AblationRow {
  std::string name;
  double psnr = 0, ssim = 0, rmse = 0, abs_rel = 0, delta1 = 0;
};

// axis: "components", "source_views", "train_size", or "fusion". Each row
// trains into out_dir/<name> and evaluates; rows land in out_dir/ablation.csv.
std::vector<AblationRow> run_ablation(const Dataset& ds,
                                      const TrainConfig& base,
                                      const std::string& axis,
                                      const std::string& out_dir);

}  // namespace ucnerf
