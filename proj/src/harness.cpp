#include "ucnerf/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include "ucnerf/distill.hpp"
#include "ucnerf/raycore.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace ucnerf {

namespace {

// splitmix-style stream derivation: every iteration gets its own generator,
// so resuming from a checkpoint replays the exact sampling sequence.
uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double angle_between(const Mat3& a, const Mat3& b) {
  // Geodesic angle of a * b^T.
  const Mat3 r = a * b.transpose();
  const double tr = r.m[0] + r.m[4] + r.m[8];
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

}  // namespace

// ---------------------------------------------------------------------------
// config

std::string train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["iters"] = c.iters;
  j["lr"] = c.lr;
  j["ray_batch"] = c.ray_batch;
  j["patch_batch"] = c.patch_batch;
  j["patch_side"] = c.patch_side;
  j["samples_per_ray"] = c.samples_per_ray;
  j["n_source_views"] = c.n_source_views;
  j["stage_planes"] = c.stage_planes;
  j["feat_channels"] = c.feat_channels;
  j["trunk_width"] = c.trunk_width;
  j["trunk_depth"] = c.trunk_depth;
  j["branch_width"] = c.branch_width;
  j["l_pos"] = c.l_pos;
  j["l_dir"] = c.l_dir;
  j["lambda_rgb"] = c.lambda_rgb;
  j["lambda_con"] = c.lambda_con;
  j["lambda_scale"] = c.lambda_scale;
  j["lambda_grad"] = c.lambda_grad;
  j["lambda_reg"] = c.lambda_reg;
  j["seed"] = c.seed;
  j["log_every"] = c.log_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["chunk_rays"] = c.chunk_rays;
  j["use_uncertainty"] = c.use_uncertainty;
  j["use_adaptive_branch"] = c.use_adaptive_branch;
  j["use_distillation"] = c.use_distillation;
  j["density_fusion"] = c.density_fusion;
  j["cascade_only"] = c.cascade_only;
  return j.dump(2);
}

TrainConfig parse_train_config(const std::string& json_text) {
  const auto j = ordered_json::parse(json_text);
  if (!j.is_object()) throw std::invalid_argument("config: not an object");
  TrainConfig c;
  for (const auto& [key, val] : j.items()) {
    if (key == "iters") c.iters = val.get<int64_t>();
    else if (key == "lr") c.lr = val.get<double>();
    else if (key == "ray_batch") c.ray_batch = val.get<int>();
    else if (key == "patch_batch") c.patch_batch = val.get<int>();
    else if (key == "patch_side") c.patch_side = val.get<int>();
    else if (key == "samples_per_ray") c.samples_per_ray = val.get<int>();
    else if (key == "n_source_views") c.n_source_views = val.get<int>();
    else if (key == "stage_planes") {
      const auto v = val.get<std::vector<int>>();
      if (v.size() != 3) throw std::invalid_argument("config: stage_planes");
      std::copy(v.begin(), v.end(), c.stage_planes.begin());
    } else if (key == "feat_channels") c.feat_channels = val.get<int>();
    else if (key == "trunk_width") c.trunk_width = val.get<int>();
    else if (key == "trunk_depth") c.trunk_depth = val.get<int>();
    else if (key == "branch_width") c.branch_width = val.get<int>();
    else if (key == "l_pos") c.l_pos = val.get<int>();
    else if (key == "l_dir") c.l_dir = val.get<int>();
    else if (key == "lambda_rgb") c.lambda_rgb = val.get<double>();
    else if (key == "lambda_con") c.lambda_con = val.get<double>();
    else if (key == "lambda_scale") c.lambda_scale = val.get<double>();
    else if (key == "lambda_grad") c.lambda_grad = val.get<double>();
    else if (key == "lambda_reg") c.lambda_reg = val.get<double>();
    else if (key == "seed") c.seed = val.get<uint64_t>();
    else if (key == "log_every") c.log_every = val.get<int64_t>();
    else if (key == "checkpoint_every") c.checkpoint_every = val.get<int64_t>();
    else if (key == "chunk_rays") c.chunk_rays = val.get<int>();
    else if (key == "use_uncertainty") c.use_uncertainty = val.get<bool>();
    else if (key == "use_adaptive_branch") c.use_adaptive_branch = val.get<bool>();
    else if (key == "use_distillation") c.use_distillation = val.get<bool>();
    else if (key == "density_fusion") c.density_fusion = val.get<std::string>();
    else if (key == "cascade_only") c.cascade_only = val.get<bool>();
    else throw std::invalid_argument("config: unknown key " + key);
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig c = parse_train_config(read_text_file(path));
  if (const char* env = std::getenv("UCNERF_SEED")) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw std::invalid_argument("UCNERF_SEED: not an integer");
    c.seed = s;
  }
  return c;
}

uint64_t config_hash(const TrainConfig& cfg) {
  return fnv1a(train_config_to_json(cfg));
}

double lr_at(const TrainConfig& cfg, int64_t iter) {
  const double floor = 0.1 * cfg.lr;
  if (cfg.iters <= 1) return cfg.lr;
  const double t = static_cast<double>(iter) / static_cast<double>(cfg.iters - 1);
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(kPi * t));
}

// ---------------------------------------------------------------------------
// view selection / bounds / packing

std::vector<int> select_source_views(const std::vector<Camera>& cams,
                                     const std::vector<int>& pool,
                                     const Camera& target, int n) {
  struct Cand {
    double dist, ang;
    int idx;
  };
  const Vec3 tc = target.center();
  std::vector<Cand> cands;
  for (int i : pool) {
    const Vec3 d = cams[i].center() - tc;
    cands.push_back({d.norm(), angle_between(cams[i].R, target.R), i});
  }
  if (static_cast<int>(cands.size()) < n)
    throw std::invalid_argument("select_source_views: pool too small");
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.ang != b.ang) return a.ang < b.ang;
    return a.idx < b.idx;
  });
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(cands[i].idx);
  return out;
}

std::vector<int> select_source_views(const std::vector<Camera>& cams,
                                     const std::vector<int>& pool, int target,
                                     int n) {
  std::vector<int> rest;
  for (int i : pool)
    if (i != target) rest.push_back(i);
  return select_source_views(cams, rest, cams[target], n);
}

DepthBounds sparse_depth_bounds(const Dataset& ds,
                                const std::vector<int>& views) {
  double lo = 0, hi = 0;
  bool any = false;
  for (int v : views)
    for (const auto& p : ds.views[v].sparse) {
      if (!any) {
        lo = hi = p.depth;
        any = true;
      }
      lo = std::min(lo, p.depth);
      hi = std::max(hi, p.depth);
    }
  if (!any) throw std::invalid_argument("depth bounds: no sparse points");
  return {0.9 * lo, 1.1 * hi};
}

std::vector<float> pack_doubles(const std::vector<double>& v) {
  std::vector<float> f(v.size() * 2);
  if (!v.empty()) std::memcpy(f.data(), v.data(), v.size() * sizeof(double));
  return f;
}

std::vector<double> unpack_doubles(const std::vector<float>& f) {
  if (f.size() % 2 != 0)
    throw std::invalid_argument("unpack_doubles: odd float count");
  std::vector<double> v(f.size() / 2);
  if (!v.empty()) std::memcpy(v.data(), f.data(), v.size() * sizeof(double));
  return v;
}

// ---------------------------------------------------------------------------
// trainer

struct Trainer::ChunkWork {
  enum Kind { kRgb, kSparse, kPatchGrad, kPatchSmooth };
  Kind kind = kRgb;
  std::vector<double> u, v;      // per ray
  std::vector<int> px, py;       // pixel for uncertainty / ground truth
  std::vector<double> gt_depth;  // sparse
  std::vector<double> weight;    // sparse
  int patches = 0;
};

struct Trainer::ChunkGrads {
  std::array<std::vector<double>, 3> dS;
  std::vector<std::vector<double>> df2;
};

Trainer::Trainer(const Dataset& ds, const TrainConfig& cfg,
                 std::string run_dir)
    : ds_(ds), cfg_(cfg), run_dir_(std::move(run_dir)) {}

void Trainer::build_modules() {
  SweepConfig sc;
  sc.stage_planes = cfg_.stage_planes;
  sc.feat_channels = cfg_.feat_channels;
  sweep_.emplace(sc);
  FieldConfig fc;
  fc.trunk_width = cfg_.trunk_width;
  fc.trunk_depth = cfg_.trunk_depth;
  fc.branch_width = cfg_.branch_width;
  fc.l_pos = cfg_.l_pos;
  fc.l_dir = cfg_.l_dir;
  fc.use_adaptive = cfg_.use_adaptive_branch;
  fc.use_uncertainty = cfg_.use_uncertainty;
  fc.density_fusion = cfg_.density_fusion;
  field_.emplace(fc, cfg_.n_source_views, cfg_.feat_channels);
}

void Trainer::init() {
  if (ds_.train_idx.empty() || ds_.views.empty())
    throw std::invalid_argument("trainer: empty dataset");
  if (cfg_.n_source_views < 2 ||
      cfg_.n_source_views > static_cast<int>(ds_.train_idx.size()) - 1)
    throw std::invalid_argument("trainer: n_source_views out of range");
  if (cfg_.patch_side < 2 || cfg_.chunk_rays < cfg_.patch_side * cfg_.patch_side)
    throw std::invalid_argument("trainer: chunk smaller than one patch");
  build_modules();
  bounds_ = sparse_depth_bounds(ds_, ds_.train_idx);
  Rng rng(cfg_.seed);
  std::vector<Camera> cams;
  for (const auto& v : ds_.views) cams.push_back(v.cam);
  sweep_->register_params(store_, rng);
  field_->register_params(store_, rng);
  src_cache_.assign(ds_.views.size(), {});
  grids_.assign(ds_.views.size(), {});
  for (int t : ds_.train_idx)
    src_cache_[t] =
        select_source_views(cams, ds_.train_idx, t, cfg_.n_source_views);
  if (!run_dir_.empty()) {
    fs::create_directories(run_dir_);
    write_text_file(run_dir_ + "/config.json", train_config_to_json(cfg_));
  }
  iter_ = 0;
  log_.clear();
}

std::vector<const Image*> Trainer::view_images(
    const std::vector<int>& idx) const {
  std::vector<const Image*> out;
  for (int i : idx) out.push_back(&ds_.views[i].image);
  return out;
}

std::vector<Camera> Trainer::view_cams(const std::vector<int>& idx) const {
  std::vector<Camera> out;
  for (int i : idx) out.push_back(ds_.views[i].cam);
  return out;
}

namespace {

// Shared per-chunk field construction: sample depths along each ray, copy the
// conditioning volumes into fresh leaves, and composite. Chunk graphs stay
// small; their leaf gradients flow back into the cascade graph afterwards.
struct ChunkBuild {
  Graph<double>::Id comp = -1;
  std::array<Graph<double>::Id, 3> sleaf{-1, -1, -1};
  std::vector<Graph<double>::Id> f2leaf;
  int R = 0, S = 0;
};

ChunkBuild build_composite(
    Graph<double>& g2, ParamBinder<double>& pb2, const Graph<double>& gc,
    const SweepModule<double>::CascadeOut& cas, const FieldModule<double>& fm,
    const Camera& tgt, const std::vector<Camera>& src_cams,
    const std::vector<const Image*>& src_images, const DepthBounds& bounds,
    const std::vector<double>& u, const std::vector<double>& v,
    const std::vector<int>& px, const std::vector<int>& py, int S, Rng* rng,
    bool leaf_grads) {
  const int R = static_cast<int>(u.size());
  SamplePoints pts;
  pts.R = R;
  pts.S = S;
  pts.u = u;
  pts.v = v;
  pts.dir.resize(R);
  pts.z.resize(static_cast<size_t>(R) * S);
  auto td = std::make_shared<std::vector<double>>(2 * static_cast<size_t>(R) * S);
  const double w = (bounds.far - bounds.near) / S;
  for (int r = 0; r < R; ++r) {
    auto [o, d] = tgt.ray_through(u[r], v[r]);
    (void)o;
    pts.dir[r] = d;
    const double zcos = (tgt.R * d).z;
    for (int s = 0; s < S; ++s) {
      const double frac = rng ? rng->uniform() : 0.5;
      pts.z[static_cast<size_t>(r) * S + s] = bounds.near + (s + frac) * w;
    }
    for (int s = 0; s < S; ++s) {
      const size_t i = static_cast<size_t>(r) * S + s;
      const double z = pts.z[i];
      const double znext =
          s + 1 < S ? pts.z[i + 1] : bounds.far;
      (*td)[2 * i] = z;
      (*td)[2 * i + 1] = (znext - z) / zcos;
    }
  }
  const auto& U = cas.U;
  const int W = tgt.width;
  std::vector<double> usamp(static_cast<size_t>(R) * S);
  for (int r = 0; r < R; ++r) {
    const double uval = U[static_cast<size_t>(py[r]) * W + px[r]];
    for (int s = 0; s < S; ++s) usamp[static_cast<size_t>(r) * S + s] = uval;
  }

  ChunkBuild out;
  out.R = R;
  out.S = S;
  typename FieldModule<double>::VolumeIds vol;
  for (int k = 0; k < 3; ++k) {
    const auto sid = cas.stage[k].S;
    out.sleaf[k] = g2.value(gc.rows(sid), gc.cols(sid), gc.val(sid), leaf_grads);
    vol.S[k] = out.sleaf[k];
  }
  for (const auto fid : cas.f2) {
    out.f2leaf.push_back(
        g2.value(gc.rows(fid), gc.cols(fid), gc.val(fid), leaf_grads));
    vol.f2.push_back(out.f2leaf.back());
  }
  const auto ci = fm.gather_condition(tgt, src_cams, src_images, cas, pts);
  const auto field = fm.build(g2, pb2, vol, ci, usamp);
  out.comp = g2.composite(field.sigma, field.rgb, td, R, S);
  return out;
}

void accumulate(std::vector<double>& acc, const std::vector<double>& g) {
  if (g.empty()) return;
  if (acc.empty()) acc.assign(g.size(), 0.0);
  for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

}  // namespace

TrainStats Trainer::step(int64_t iter) {
  if (!sweep_) throw std::logic_error("trainer: init() not called");
  TrainStats st;
  st.iter = iter;
  st.lr = lr_at(cfg_, iter);
  Rng rng(mix_seed(cfg_.seed, static_cast<uint64_t>(iter)));

  const int tv = ds_.train_idx[iter % ds_.train_idx.size()];
  const ViewData& view = ds_.views[tv];
  const auto& sources = src_cache_[tv];
  const auto src_cams = view_cams(sources);
  const auto src_imgs = view_images(sources);

  Graph<double> gc;
  ParamBinder<double> pbc(gc, store_, true);
  const auto* cached = grids_[tv].empty() ? nullptr : &grids_[tv];
  auto cas = sweep_->run_cascade(gc, pbc, src_imgs, src_cams, view.cam,
                                 bounds_.near, bounds_.far, cached);
  if (!cached) {
    // Stage-0 hypotheses are global, so these warp grids never change.
    grids_[tv].clear();
    for (const Camera& sc : src_cams)
      grids_[tv].push_back(plane_warp<double>(
          view.cam, sc, view.cam.width / 4, view.cam.height / 4, 4,
          cas.stage[0].hyp, cas.stage[0].Y));
  }
  st.underfilled = cas.underfilled;

  const auto lcon = consistency_loss(gc, cas, view.sparse);
  st.con = gc.val(lcon)[0];
  if (!std::isfinite(st.con))
    throw std::runtime_error("train: consistency loss not finite");

  std::vector<Graph<double>::Seed> seeds;
  if (!cfg_.cascade_only) {
    const int W = view.cam.width, H = view.cam.height;
    const int side = cfg_.patch_side, npx = side * side;

    std::vector<ChunkWork> works;
    // Photometric rays.
    {
      ChunkWork cur;
      cur.kind = ChunkWork::kRgb;
      for (int i = 0; i < cfg_.ray_batch; ++i) {
        const int x = static_cast<int>(rng.uniform_int(W));
        const int y = static_cast<int>(rng.uniform_int(H));
        cur.u.push_back(x + 0.5);
        cur.v.push_back(y + 0.5);
        cur.px.push_back(x);
        cur.py.push_back(y);
        if (static_cast<int>(cur.u.size()) == cfg_.chunk_rays) {
          works.push_back(std::move(cur));
          cur = ChunkWork{};
          cur.kind = ChunkWork::kRgb;
        }
      }
      if (!cur.u.empty()) works.push_back(std::move(cur));
    }
    // Sparse-depth rays.
    if (cfg_.use_distillation && !view.sparse.empty()) {
      const auto wts = sparse_weights<double>(view.sparse);
      ChunkWork cur;
      cur.kind = ChunkWork::kSparse;
      for (size_t i = 0; i < view.sparse.size(); ++i) {
        const auto& p = view.sparse[i];
        cur.u.push_back(p.u);
        cur.v.push_back(p.v);
        cur.px.push_back(std::clamp(static_cast<int>(p.u), 0, W - 1));
        cur.py.push_back(std::clamp(static_cast<int>(p.v), 0, H - 1));
        cur.gt_depth.push_back(p.depth);
        cur.weight.push_back(wts[i]);
        if (static_cast<int>(cur.u.size()) == cfg_.chunk_rays) {
          works.push_back(std::move(cur));
          cur = ChunkWork{};
          cur.kind = ChunkWork::kSparse;
        }
      }
      if (!cur.u.empty()) works.push_back(std::move(cur));
    }
    // Uncertainty-routed patches.
    int n_high = 0, n_low = 0;
    if (cfg_.use_distillation && cfg_.patch_batch > 0) {
      std::vector<std::pair<int, int>> corners;
      for (int i = 0; i < cfg_.patch_batch; ++i)
        corners.emplace_back(
            static_cast<int>(rng.uniform_int(W - side + 1)),
            static_cast<int>(rng.uniform_int(H - side + 1)));
      const auto high = partition_patches(cas.U, W, H, corners, side);
      const int per_chunk = std::max(1, cfg_.chunk_rays / npx);
      for (int pass = 0; pass < 2; ++pass) {
        ChunkWork cur;
        cur.kind = pass == 0 ? ChunkWork::kPatchGrad : ChunkWork::kPatchSmooth;
        for (size_t i = 0; i < corners.size(); ++i) {
          if ((high[i] != 0) != (pass == 0)) continue;
          (pass == 0 ? n_high : n_low)++;
          for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
              cur.u.push_back(corners[i].first + x + 0.5);
              cur.v.push_back(corners[i].second + y + 0.5);
              cur.px.push_back(corners[i].first + x);
              cur.py.push_back(corners[i].second + y);
            }
          if (++cur.patches == per_chunk) {
            works.push_back(std::move(cur));
            cur = ChunkWork{};
            cur.kind =
                pass == 0 ? ChunkWork::kPatchGrad : ChunkWork::kPatchSmooth;
          }
        }
        if (cur.patches > 0) works.push_back(std::move(cur));
      }
    }

    ChunkGrads acc;
    acc.df2.resize(cas.f2.size());
    const int64_t n_rgb = cfg_.ray_batch;
    const int64_t n_sp = static_cast<int64_t>(view.sparse.size());
    for (const auto& work : works) {
      Graph<double> g2;
      ParamBinder<double> pb2(g2, store_, true);
      const auto cb = build_composite(g2, pb2, gc, cas, *field_, view.cam,
                                      src_cams, src_imgs, bounds_, work.u,
                                      work.v, work.px, work.py,
                                      cfg_.samples_per_ray, &rng, true);
      const auto rgb = g2.slice_cols(cb.comp, 0, 3);
      const auto dep = g2.slice_cols(cb.comp, 3, 4);
      Graph<double>::Id loss = -1;
      double lw = 0, frac = 0;
      switch (work.kind) {
        case ChunkWork::kRgb: {
          std::vector<double> gt;
          for (size_t r = 0; r < work.u.size(); ++r)
            for (int c = 0; c < 3; ++c)
              gt.push_back(view.image.at(work.py[r], work.px[r], c));
          loss = rgb_loss(g2, rgb, gt);
          frac = static_cast<double>(work.u.size()) / n_rgb;
          lw = cfg_.lambda_rgb;
          st.rgb += g2.val(loss)[0] * frac;
          break;
        }
        case ChunkWork::kSparse: {
          loss = scale_loss(g2, dep, work.gt_depth, work.weight);
          frac = static_cast<double>(work.u.size()) / n_sp;
          lw = cfg_.lambda_scale;
          st.scale += g2.val(loss)[0] * frac;
          break;
        }
        case ChunkWork::kPatchGrad: {
          std::vector<double> prior;
          for (size_t r = 0; r < work.u.size(); ++r)
            prior.push_back(view.prior.at(work.py[r], work.px[r], 0));
          int sk = 0;
          loss = grad_loss(g2, dep, prior, work.patches, side, &sk);
          st.skipped_patches += sk;
          frac = static_cast<double>(work.patches) / n_high;
          lw = cfg_.lambda_grad;
          st.grad += g2.val(loss)[0] * frac;
          break;
        }
        case ChunkWork::kPatchSmooth: {
          std::vector<double> prior;
          for (size_t r = 0; r < work.u.size(); ++r)
            prior.push_back(view.prior.at(work.py[r], work.px[r], 0));
          loss = smooth_loss(g2, dep, prior, work.patches, side, bounds_.far);
          frac = static_cast<double>(work.patches) / n_low;
          lw = cfg_.lambda_reg;
          st.reg += g2.val(loss)[0] * frac;
          break;
        }
      }
      g2.backward_multi({{loss, {lw * frac}}});
      pb2.harvest();
      for (int k = 0; k < 3; ++k) accumulate(acc.dS[k], g2.grad(cb.sleaf[k]));
      for (size_t vv = 0; vv < cb.f2leaf.size(); ++vv)
        accumulate(acc.df2[vv], g2.grad(cb.f2leaf[vv]));
    }
    for (int k = 0; k < 3; ++k)
      if (!acc.dS[k].empty())
        seeds.push_back({cas.stage[k].S, std::move(acc.dS[k])});
    for (size_t vv = 0; vv < acc.df2.size(); ++vv)
      if (!acc.df2[vv].empty())
        seeds.push_back({cas.f2[vv], std::move(acc.df2[vv])});
  }
  seeds.push_back({lcon, {cfg_.lambda_con}});
  gc.backward_multi(seeds);
  pbc.harvest();
  store_.adam_step(st.lr);
  store_.zero_grad();

  st.total = cfg_.lambda_rgb * st.rgb + cfg_.lambda_con * st.con +
             cfg_.lambda_scale * st.scale + cfg_.lambda_grad * st.grad +
             cfg_.lambda_reg * st.reg;
  if (!std::isfinite(st.total))
    throw std::runtime_error("train: total loss not finite");
  iter_ = iter + 1;
  return st;
}

void Trainer::train() {
  const auto flush = [&] {
    if (!run_dir_.empty()) write_loss_csv(run_dir_ + "/loss.csv", log_);
  };
  for (int64_t i = iter_; i < cfg_.iters; ++i) {
    const TrainStats st = step(i);
    if (i % cfg_.log_every == 0 || i + 1 == cfg_.iters)
      log_.push_back({st.iter, st.total, st.rgb, st.con, st.scale, st.grad,
                      st.reg});
    if (!run_dir_.empty() && cfg_.checkpoint_every > 0 &&
        (i + 1) % cfg_.checkpoint_every == 0 && i + 1 < cfg_.iters) {
      save_checkpoint(run_dir_ + "/ckpt_" + std::to_string(i + 1) + ".blob");
      flush();
    }
  }
  if (!run_dir_.empty()) {
    save_checkpoint(run_dir_ + "/ckpt_final.blob");
    flush();
  }
}

void Trainer::save_checkpoint(const std::string& path) const {
  NamedBlobs nb;
  ordered_json meta;
  meta["iter"] = iter_;
  meta["adam_steps"] = store_.step_count;
  meta["config_hash"] = hex64(config_hash(cfg_));
  nb.meta_json = meta.dump();
  for (const auto& e : store_.entries) {
    nb.add(e.name + ".v", pack_doubles(e.v));
    nb.add(e.name + ".m", pack_doubles(e.m));
    nb.add(e.name + ".vv", pack_doubles(e.vv));
  }
  write_blobs(path, nb);
}

void Trainer::load_checkpoint(const std::string& path) {
  if (!sweep_) throw std::logic_error("trainer: init() not called");
  const NamedBlobs nb = read_blobs(path);
  const auto meta = ordered_json::parse(nb.meta_json);
  if (meta.at("config_hash").get<std::string>() != hex64(config_hash(cfg_)))
    throw std::runtime_error("checkpoint: config mismatch");
  for (auto& e : store_.entries) {
    auto restore = [&](const std::string& suffix, std::vector<double>& dst) {
      const auto v = unpack_doubles(nb.get(e.name + suffix));
      if (v.size() != dst.size())
        throw std::runtime_error("checkpoint: size mismatch for " + e.name);
      dst = v;
    };
    restore(".v", e.v);
    restore(".m", e.m);
    restore(".vv", e.vv);
  }
  iter_ = meta.at("iter").get<int64_t>();
  store_.step_count = meta.at("adam_steps").get<int64_t>();
}

RenderOut Trainer::render_view(const Camera& tgt,
                               const std::vector<int>& sources) {
  if (!sweep_) throw std::logic_error("trainer: init() not called");
  const auto src_cams = view_cams(sources);
  const auto src_imgs = view_images(sources);
  Graph<double> gc;
  ParamBinder<double> pbc(gc, store_, false);
  const auto cas = sweep_->run_cascade(gc, pbc, src_imgs, src_cams, tgt,
                                       bounds_.near, bounds_.far);
  const int W = tgt.width, H = tgt.height;
  RenderOut out;
  out.rgb = Image(W, H, 3);
  out.depth = Image(W, H, 1);
  out.unc = Image(W, H, 1);
  for (int i = 0; i < W * H; ++i)
    out.unc.data[i] = static_cast<float>(cas.U[i]);

  std::vector<double> u, v;
  std::vector<int> px, py;
  int done = 0;
  while (done < W * H) {
    const int n = std::min(cfg_.chunk_rays, W * H - done);
    u.clear();
    v.clear();
    px.clear();
    py.clear();
    for (int i = done; i < done + n; ++i) {
      px.push_back(i % W);
      py.push_back(i / W);
      u.push_back(i % W + 0.5);
      v.push_back(i / W + 0.5);
    }
    Graph<double> g2;
    ParamBinder<double> pb2(g2, store_, false);
    const auto cb = build_composite(g2, pb2, gc, cas, *field_, tgt, src_cams,
                                    src_imgs, bounds_, u, v, px, py,
                                    cfg_.samples_per_ray, nullptr, false);
    const auto& cv = g2.val(cb.comp);
    for (int r = 0; r < n; ++r) {
      const double* row = cv.data() + static_cast<size_t>(r) * 5;
      const int i = done + r;
      for (int c = 0; c < 3; ++c)
        out.rgb.data[static_cast<size_t>(i) * 3 + c] =
            static_cast<float>(std::clamp(row[c], 0.0, 1.0));
      const double opacity = 1.0 - row[4];
      out.depth.data[i] = static_cast<float>(
          opacity < kEmptyOpacity ? bounds_.far : row[3] / opacity);
    }
    done += n;
  }
  return out;
}

Trainer::CascadeView Trainer::cascade_view(const Camera& tgt,
                                           const std::vector<int>& sources) {
  if (!sweep_) throw std::logic_error("trainer: init() not called");
  Graph<double> gc;
  ParamBinder<double> pbc(gc, store_, false);
  const auto cas = sweep_->run_cascade(gc, pbc, view_images(sources),
                                       view_cams(sources), tgt, bounds_.near,
                                       bounds_.far);
  CascadeView out;
  out.depth = gc.val(cas.stage[2].depth);
  out.unc = cas.U;
  return out;
}

std::string EvalReport::to_json() const {
  ordered_json j;
  j["views"] = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json v;
    v["view"] = r.view;
    v["psnr"] = r.psnr;
    v["ssim"] = r.ssim;
    v["depth_scale"] = r.scale;
    v["abs_rel"] = r.depth.abs_rel;
    v["sq_rel"] = r.depth.sq_rel;
    v["rmse"] = r.depth.rmse;
    v["rmse_log"] = r.depth.rmse_log;
    v["delta1"] = r.depth.delta1;
    j["views"].push_back(v);
  }
  j["mean_psnr"] = mean_psnr;
  j["std_psnr"] = std_psnr;
  j["mean_ssim"] = mean_ssim;
  j["std_ssim"] = std_ssim;
  j["mean_rmse"] = mean_rmse;
  j["std_rmse"] = std_rmse;
  j["mean_abs_rel"] = mean_abs_rel;
  j["mean_delta1"] = mean_delta1;
  return j.dump(2);
}

EvalReport Trainer::evaluate(bool write_outputs) {
  if (!sweep_) throw std::logic_error("trainer: init() not called");
  if (ds_.test_idx.empty())
    throw std::invalid_argument("evaluate: no test views");
  std::vector<Camera> cams;
  for (const auto& v : ds_.views) cams.push_back(v.cam);
  EvalReport rep;
  const std::string eval_dir = run_dir_ + "/eval";
  if (write_outputs && !run_dir_.empty()) fs::create_directories(eval_dir);

  for (int tv : ds_.test_idx) {
    const ViewData& view = ds_.views[tv];
    const auto sources =
        select_source_views(cams, ds_.train_idx, tv, cfg_.n_source_views);
    const RenderOut out = render_view(view.cam, sources);

    EvalRow row;
    row.view = tv;
    row.psnr = psnr(out.rgb, view.image);
    row.ssim = ssim(out.rgb, view.image);
    std::vector<double> gt(view.depth.data.begin(), view.depth.data.end());
    std::vector<double> pred(out.depth.data.begin(), out.depth.data.end());
    row.scale = median_scale(gt, pred);
    for (double& p : pred) p *= row.scale;
    row.depth = depth_metrics(gt, pred);
    rep.rows.push_back(row);

    if (write_outputs && !run_dir_.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "/view_%04d", tv);
      write_png(eval_dir + name + "_rgb.png", out.rgb);
      write_pfm(eval_dir + name + "_depth.pfm", out.depth);
      write_pfm(eval_dir + name + "_unc.pfm", out.unc);
    }
  }

  auto stat = [&](auto get, double& mean, double* sd) {
    double m = 0;
    for (const auto& r : rep.rows) m += get(r);
    m /= rep.rows.size();
    mean = m;
    if (sd) {
      double s = 0;
      for (const auto& r : rep.rows) s += (get(r) - m) * (get(r) - m);
      *sd = std::sqrt(s / rep.rows.size());
    }
  };
  stat([](const EvalRow& r) { return r.psnr; }, rep.mean_psnr, &rep.std_psnr);
  stat([](const EvalRow& r) { return r.ssim; }, rep.mean_ssim, &rep.std_ssim);
  stat([](const EvalRow& r) { return r.depth.rmse; }, rep.mean_rmse,
       &rep.std_rmse);
  stat([](const EvalRow& r) { return r.depth.abs_rel; }, rep.mean_abs_rel,
       nullptr);
  stat([](const EvalRow& r) { return r.depth.delta1; }, rep.mean_delta1,
       nullptr);
  if (write_outputs && !run_dir_.empty())
    write_text_file(run_dir_ + "/eval.json", rep.to_json());
  return rep;
}

// ---------------------------------------------------------------------------
// ablation

std::vector<AblationRow> run_ablation(const Dataset& ds,
                                      const TrainConfig& base,
                                      const std::string& axis,
                                      const std::string& out_dir) {
  struct Variant {
    std::string name;
    TrainConfig cfg;
    int train_size = -1;
  };
  std::vector<Variant> vars;
  if (axis == "components") {
    TrainConfig c = base;
    c.use_adaptive_branch = false;
    c.use_uncertainty = false;
    c.use_distillation = false;
    vars.push_back({"base", c});
    c.use_adaptive_branch = true;
    vars.push_back({"adaptive", c});
    c.use_uncertainty = true;
    vars.push_back({"uncertainty", c});
    c.use_distillation = true;
    vars.push_back({"full", c});
  } else if (axis == "source_views") {
    for (int n : {3, 5, 7, 9}) {
      if (n > static_cast<int>(ds.train_idx.size()) - 1) continue;
      TrainConfig c = base;
      c.n_source_views = n;
      vars.push_back({"v" + std::to_string(n), c});
    }
  } else if (axis == "train_size") {
    for (int n : {static_cast<int>(ds.train_idx.size()),
                  static_cast<int>(ds.train_idx.size()) * 2 / 3,
                  static_cast<int>(ds.train_idx.size()) / 3}) {
      if (n <= base.n_source_views) continue;
      Variant v{"n" + std::to_string(n), base, n};
      vars.push_back(v);
    }
  } else if (axis == "fusion") {
    for (const std::string f : {"paper", "swapped"}) {
      TrainConfig c = base;
      c.density_fusion = f;
      vars.push_back({f, c});
    }
  } else {
    throw std::invalid_argument("ablation: unknown axis " + axis);
  }

  fs::create_directories(out_dir);
  std::vector<AblationRow> rows;
  std::string csv = "name,psnr,ssim,rmse,abs_rel,delta1\n";
  for (const auto& var : vars) {
    Dataset sub = ds;
    if (var.train_size > 0)
      sub.train_idx.resize(var.train_size);
    Trainer t(sub, var.cfg, out_dir + "/" + var.name);
    t.init();
    t.train();
    const EvalReport rep = t.evaluate();
    AblationRow row{var.name, rep.mean_psnr, rep.mean_ssim, rep.mean_rmse,
                    rep.mean_abs_rel, rep.mean_delta1};
    rows.push_back(row);
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  row.name.c_str(), row.psnr, row.ssim, row.rmse, row.abs_rel,
                  row.delta1);
    csv += line;
    write_text_file(out_dir + "/ablation.csv", csv);
  }
  return rows;
}

}  // namespace ucnerf
