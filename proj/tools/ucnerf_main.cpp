#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ucnerf/harness.hpp"
#include "ucnerf/io.hpp"
#include "ucnerf/oracle.hpp"
#include "ucnerf/raycore.hpp"
#include "ucnerf/synthscene.hpp"

using namespace ucnerf;

namespace {

int cmd_generate(const std::string& spec_path, const std::string& out,
                 int64_t seed) {
  SceneSpec spec;
  if (!spec_path.empty()) spec = parse_scene_spec(read_text_file(spec_path));
  if (seed >= 0) spec.seed = static_cast<uint64_t>(seed);
  generate_scene_to_dir(spec, out);
  std::printf("wrote %d views to %s\n", spec.n_views, out.c_str());
  return 0;
}

int cmd_train(const std::string& data, const std::string& config,
              const std::string& out) {
  const Dataset ds = load_dataset(data);
  const TrainConfig cfg = load_train_config(config);
  Trainer t(ds, cfg, out);
  t.init();
  t.train();
  const auto ckpt = out + "/ckpt_final.blob";
  std::printf("trained %lld iters -> %s\n",
              static_cast<long long>(t.iter()), ckpt.c_str());
  return 0;
}

int cmd_evaluate(const std::string& data, const std::string& run,
                 const std::string& ckpt_arg) {
  const Dataset ds = load_dataset(data);
  const TrainConfig cfg = load_train_config(run + "/config.json");
  Trainer t(ds, cfg, run);
  t.init();
  t.load_checkpoint(ckpt_arg.empty() ? run + "/ckpt_final.blob" : ckpt_arg);
  const EvalReport rep = t.evaluate();
  for (const auto& r : rep.rows)
    std::printf("view %4d  psnr %6.2f  ssim %.4f  rmse %.4f  delta1 %.3f\n",
                r.view, r.psnr, r.ssim, r.depth.rmse, r.depth.delta1);
  std::printf("mean  psnr %.2f +- %.2f  ssim %.4f +- %.4f  rmse %.4f\n",
              rep.mean_psnr, rep.std_psnr, rep.mean_ssim, rep.std_ssim,
              rep.mean_rmse);
  return 0;
}

int cmd_ablate(const std::string& data, const std::string& config,
               const std::string& axis, const std::string& out) {
  const Dataset ds = load_dataset(data);
  const TrainConfig cfg = load_train_config(config);
  const auto rows = run_ablation(ds, cfg, axis, out);
  for (const auto& r : rows)
    std::printf("%-12s psnr %6.2f  ssim %.4f  rmse %.4f\n", r.name.c_str(),
                r.psnr, r.ssim, r.rmse);
  return 0;
}

int cmd_render(const std::string& data, const std::string& run,
               const std::string& camera, const std::string& out) {
  const Dataset ds = load_dataset(data);
  const TrainConfig cfg = load_train_config(run + "/config.json");
  Trainer t(ds, cfg, run);
  t.init();
  t.load_checkpoint(run + "/ckpt_final.blob");
  const Camera cam = camera_from_json_file(camera);
  std::vector<Camera> cams;
  for (const auto& v : ds.views) cams.push_back(v.cam);
  const auto sources =
      select_source_views(cams, ds.train_idx, cam, cfg.n_source_views);
  const RenderOut r = t.render_view(cam, sources);
  write_png(out + "_rgb.png", r.rgb);
  write_pfm(out + "_depth.pfm", r.depth);
  write_pfm(out + "_unc.pfm", r.unc);
  std::printf("rendered %dx%d -> %s_{rgb.png,depth.pfm,unc.pfm}\n", cam.width,
              cam.height, out.c_str());
  return 0;
}

// Internal consistency of the reference renderer: quadrature convergence,
// discrete compositing agreement, and the weight-mass identity.
int cmd_oracle_check() {
  SceneSpec spec;
  spec.n_views = 2;
  spec.width = 16;
  spec.height = 12;
  const GroundTruthField field = make_scene(spec);
  const auto cams = sample_camera_arc(spec);
  const auto range = bounds_depth_range(spec, cams[0]);
  auto sigma_fn = [&](const Vec3& x) { return field.sigma(x); };
  auto color_fn = [&](const Vec3& x, const Vec3& d, double* c) {
    field.color(x, d, c);
  };
  int failures = 0;
  auto report = [&](const char* name, bool ok, double err) {
    std::printf("%-34s %s (err %.3g)\n", name, ok ? "ok" : "FAIL", err);
    failures += ok ? 0 : 1;
  };

  auto [o, d] = cams[0].ray_through(spec.width / 2.0, spec.height / 2.0);
  const auto fine = oracle::dense_quadrature_render(sigma_fn, color_fn, o, d,
                                            range.near, range.far, 8192);
  const auto coarse = oracle::dense_quadrature_render(sigma_fn, color_fn, o, d,
                                              range.near, range.far, 1024);
  double cerr = 0;
  for (int i = 0; i < 3; ++i)
    cerr = std::max(cerr, std::abs(fine.rgb[i] - coarse.rgb[i]));
  report("quadrature self-convergence", cerr < 1e-3, cerr);

  const int S = 2048;
  std::vector<double> sig(S), col(3 * S), ts(S), del(S);
  const double h = (range.far - range.near) / S;
  for (int i = 0; i < S; ++i) {
    const double t = range.near + (i + 0.5) * h;
    const Vec3 x{o.x + t * d.x, o.y + t * d.y, o.z + t * d.z};
    sig[i] = sigma_fn(x);
    color_fn(x, d, col.data() + 3 * i);
    ts[i] = t;
    del[i] = h;
  }
  const auto comp =
      composite_ray(sig.data(), col.data(), ts.data(), del.data(), S,
                    range.far);
  double derr = 0;
  for (int i = 0; i < 3; ++i)
    derr = std::max(derr, std::abs(comp.rgb[i] - fine.rgb[i]));
  report("discrete compositing agreement", derr < 1e-2, derr);

  const auto T = transmittance_host(
      std::vector<double>(sig.begin(), sig.end()), del);
  double mass = 1.0 - comp.tail;
  double wsum = 0;
  for (int i = 0; i < S; ++i)
    wsum += T[i] * -std::expm1(-sig[i] * del[i]);
  const double merr = std::abs(wsum - mass);
  report("weight-mass identity", merr < 1e-12, merr);

  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional neural field reconstruction toolkit"};
  app.require_subcommand(1);

  std::string spec_path, data, config, out, run, axis = "components";
  std::string camera, ckpt;
  int64_t seed = -1;
  int rc = 0;

  auto* gen = app.add_subcommand("generate-scene",
                                 "render a synthetic dataset to a directory");
  gen->add_option("--spec", spec_path, "scene spec json (defaults if omitted)");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "override the scene seed");
  gen->callback([&] { rc = cmd_generate(spec_path, out, seed); });

  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--config", config, "training config json")->required();
  tr->add_option("--out", out, "run directory")->required();
  tr->callback([&] { rc = cmd_train(data, config, out); });

  auto* ev = app.add_subcommand("evaluate", "evaluate a run on the test split");
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--run", run, "run directory")->required();
  ev->add_option("--checkpoint", ckpt, "checkpoint path (default final)");
  ev->callback([&] { rc = cmd_evaluate(data, run, ckpt); });

  auto* ab = app.add_subcommand("ablate", "train and evaluate an ablation axis");
  ab->add_option("--data", data, "dataset directory")->required();
  ab->add_option("--config", config, "base training config json")->required();
  ab->add_option("--axis", axis,
                 "components | source_views | train_size | fusion");
  ab->add_option("--out", out, "output directory")->required();
  ab->callback([&] { rc = cmd_ablate(data, config, axis, out); });

  auto* rd = app.add_subcommand("render", "render a novel camera from a run");
  rd->add_option("--data", data, "dataset directory")->required();
  rd->add_option("--run", run, "run directory")->required();
  rd->add_option("--camera", camera, "camera json")->required();
  rd->add_option("--out", out, "output path prefix")->required();
  rd->callback([&] { rc = cmd_render(data, run, camera, out); });

  auto* oc = app.add_subcommand("oracle-check",
                                "self-check the reference renderer");
  oc->callback([&] { rc = cmd_oracle_check(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
