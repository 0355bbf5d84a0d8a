#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "nlos/carve.hpp"
#include "nlos/core.hpp"
#include "nlos/extract.hpp"
#include "nlos/image_io.hpp"
#include "nlos/model.hpp"
#include "nlos/render.hpp"
#include "nlos/sim.hpp"
#include "nlos/trainer.hpp"

namespace fs = std::filesystem;
using namespace nlos;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int map_error(const NlosError& e) {
  switch (e.code()) {
    case ErrorCode::UsageError:
      return kExitUsage;
    case ErrorCode::NumericError:
    case ErrorCode::NumericDivergence:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

void write_manifest(const std::string& path, const std::string& command,
                    const core::Config& cfg, const nlohmann::json& inputs,
                    const nlohmann::json& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["config_hash"] = core::config_hash(cfg);
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["config"] = core::serialize_config(cfg);
  std::ofstream out(path);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

core::Config load_config_opt(const std::string& path) {
  return path.empty() ? core::Config{} : core::load_config(path);
}

// Detection + carving shared by the `carve` subcommand.
carve::CarveGrid run_carving(const core::TransientVolume& vol, const core::Config& cfg) {
  carve::FirstPhotonParams params;
  params.gaussian_sigma_bins = cfg.carve_sigma_bins;
  params.floor_fraction = cfg.carve_floor_fraction;
  params.eta = cfg.carve_eta_fraction * static_cast<double>(vol.data.maxCoeff());
  params.literal_only = cfg.first_photon_literal;

  std::vector<carve::Detection> detections;
  for (int m = 0; m < vol.positions(); ++m) {
    Eigen::VectorXd row = vol.data.row(m).transpose().cast<double>();
    auto bin = carve::detect_first_photon(row, params);
    if (!bin) continue;
    double radius = core::bin_to_radius(*bin + vol.bin_offset, vol.bin_width_s());
    detections.push_back({vol.wall.positions[static_cast<size_t>(m)], radius});
  }
  carve::CarveGrid grid(cfg.bounds, cfg.carve_dims);
  carve::carve(detections, grid);
  carve::lower_bound_field(grid);
  std::cout << "[carve] detections: " << detections.size() << "/" << vol.positions()
            << ", object voxels: " << grid.count_object() << ", free voxels: "
            << grid.count_free() << "\n";
  return grid;
}

// Rebuild the model skeleton from the config and overwrite its parameters
// with a checkpoint (precision chosen by the config).
template <class Real>
train::Model<Real> model_from_checkpoint(const core::Config& cfg, const std::string& path) {
  train::Model<Real> model = train::Model<Real>::build(cfg);
  train::Checkpoint<Real> ck = train::load_checkpoint<Real>(path);
  if (static_cast<std::int64_t>(ck.params.size()) != model.params.size()) {
    throw NlosError(ErrorCode::ShapeMismatch, "checkpoint does not match config networks");
  }
  if (ck.config_hash != core::config_hash(cfg)) {
    std::cerr << "[warn] checkpoint config hash differs from the supplied config\n";
  }
  model.params.raw() = ck.params;
  return model;
}

struct FieldCallbacks {
  render::SdfBatchFn sdf;
  render::RhoBatchFn rho;
  std::function<Mat3X(const Mat3X&)> sdf_grad;
  std::function<double(const Vec3&)> sdf_point;
  double alpha = 0.0;
};

template <class Real>
FieldCallbacks make_callbacks(const train::Model<Real>& model, const core::Config& cfg) {
  FieldCallbacks cb;
  cb.sdf = render::make_sdf_fn(model.sdf, model.params);
  cb.rho = render::make_rho_fn(model.refl, model.params);
  cb.sdf_grad = [&model, &cfg](const Mat3X& pts) {
    return model.sdf.grad_fd_batch(model.params, pts, cfg.fd_epsilon);
  };
  cb.sdf_point = [&model](const Vec3& p) { return model.sdf.eval_point(model.params, p); };
  cb.alpha = model.alpha();
  return cb;
}

int cmd_simulate(const std::string& scene_path, const std::string& out_path,
                 const std::string& config_path, std::uint64_t seed_override,
                 bool seed_given) {
  core::Config cfg = load_config_opt(config_path);
  if (seed_given) cfg.seed = seed_override;
  sim::SceneSpec scene = sim::load_scene(scene_path);
  cfg.bounds = scene.bounds;

  sim::SimulationResult result = sim::simulate_transients(scene);
  if (result.clipped_bins > 0) {
    std::cerr << "[simulate] warning: " << result.clipped_bins
              << " directional returns fell beyond the recorded bins\n";
  }
  core::TransientVolume vol = result.total;
  if (scene.noise_level > 0.0) {
    vol = sim::add_noise(vol, cfg.seed, scene.noise_level);
  }
  core::save_transients(out_path, vol);

  fs::path scene_copy = fs::path(out_path).replace_extension(".scene.json");
  sim::save_scene(scene_copy.string(), scene);
  write_manifest(fs::path(out_path).replace_extension(".manifest.json").string(), "simulate",
                 cfg, {{"scene", scene_path}},
                 {{"transients", out_path}, {"scene_copy", scene_copy.string()}});
  std::cout << "[simulate] wrote " << out_path << " (" << vol.positions() << " x "
            << vol.bins() << " bins)\n";
  return kExitOk;
}

int cmd_carve(const std::string& transients_path, const std::string& out_path,
              const std::string& config_path) {
  core::Config cfg = load_config_opt(config_path);
  core::TransientVolume vol = core::load_transients(transients_path);
  carve::CarveGrid grid = run_carving(vol, cfg);
  carve::save_carve_grid(out_path, grid);
  write_manifest(fs::path(out_path).replace_extension(".manifest.json").string(), "carve",
                 cfg, {{"transients", transients_path}}, {{"carve_grid", out_path}});
  std::cout << "[carve] wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_train(const std::string& transients_path, const std::string& carve_path,
              const std::string& out_dir, const std::string& config_path,
              const std::string& resume_path, int threads_override) {
  core::Config cfg = load_config_opt(config_path);
  if (threads_override > 0) cfg.threads = threads_override;
  core::TransientVolume vol = core::load_transients(transients_path);
  carve::CarveGrid grid = carve_path.empty() ? carve::CarveGrid(cfg.bounds, cfg.carve_dims)
                                             : carve::load_carve_grid(carve_path);
  if (carve_path.empty()) {
    // No carving supplied: label everything object so the free-space loss
    // is inactive rather than wrong.
    std::fill(grid.labels.begin(), grid.labels.end(), std::uint8_t(1));
  }

  fs::create_directories(out_dir);
  write_manifest(out_dir + "/manifest.json", "train", cfg,
                 {{"transients", transients_path}, {"carve_grid", carve_path}},
                 {{"checkpoint", out_dir + "/model.ckpt"}, {"log", out_dir + "/train_log.csv"}});

  if (cfg.precision == core::Precision::Float64) {
    auto result = train::fit<double>(cfg, vol, grid, out_dir, resume_path);
    std::cout << "[train] done: " << result.iterations_run << " iterations, final alpha "
              << result.final_alpha << ", total loss " << result.last.total << "\n";
  } else {
    auto result = train::fit<float>(cfg, vol, grid, out_dir, resume_path);
    std::cout << "[train] done: " << result.iterations_run << " iterations, final alpha "
              << result.final_alpha << ", total loss " << result.last.total << "\n";
  }
  return kExitOk;
}

template <class Real>
int extract_with_precision(const core::Config& cfg, const std::string& checkpoint_path,
                           const std::string& out_dir) {
  train::Model<Real> model = model_from_checkpoint<Real>(cfg, checkpoint_path);
  FieldCallbacks cb = make_callbacks(model, cfg);

  render::CameraSpec camera =
      render::CameraSpec::facing_bounds(cfg.bounds, Vec3(0, 0, 1), cfg.extract_resolution);
  Eigen::MatrixXd albedo =
      render::render_view(cb.sdf, cb.rho, cb.alpha, camera, cfg.bounds, cfg.view_ray_samples);
  auto mask = extract::object_mask_from_albedo(albedo, cfg.albedo_mask_fraction);

  extract::TraceParams tp;
  tp.hit_eps = cfg.hit_eps;
  tp.max_steps = cfg.max_trace_steps;
  tp.damping = cfg.step_damping;
  double t0, t1;
  Vec3 o, dirv;
  camera.pixel_ray(camera.width / 2, camera.height / 2, o, dirv);
  cfg.bounds.clip_ray(o, dirv, t0, t1);
  tp.t_max = t1 + 0.1;

  extract::ExtractionResult ex =
      extract::extract_point_cloud(cb.sdf, cb.sdf_grad, camera, mask, tp);

  fs::create_directories(out_dir);
  img::save_pfm(out_dir + "/albedo.pfm", albedo.cast<float>());
  img::save_pfm(out_dir + "/depth.pfm", ex.depth.depth);
  img::save_pfm3(out_dir + "/normals.pfm", ex.normals.nx, ex.normals.ny, ex.normals.nz);
  img::save_pgm16(out_dir + "/albedo.pgm", albedo);
  img::save_ply(out_dir + "/cloud.ply", ex.cloud);
  write_manifest(out_dir + "/manifest.json", "extract", cfg,
                 {{"checkpoint", checkpoint_path}},
                 {{"depth", out_dir + "/depth.pfm"},
                  {"normals", out_dir + "/normals.pfm"},
                  {"albedo", out_dir + "/albedo.pfm"},
                  {"cloud", out_dir + "/cloud.ply"}});
  std::cout << "[extract] traced " << ex.cloud.size() << " points, alpha " << cb.alpha
            << "\n";
  return kExitOk;
}

int cmd_extract(const std::string& checkpoint_path, const std::string& out_dir,
                const std::string& config_path) {
  core::Config cfg = load_config_opt(config_path);
  if (cfg.precision == core::Precision::Float64) {
    return extract_with_precision<double>(cfg, checkpoint_path, out_dir);
  }
  return extract_with_precision<float>(cfg, checkpoint_path, out_dir);
}

// Ground truth by exact ray casting against the analytic scene.
void analytic_depth_normals(const sim::SceneSpec& scene, const render::CameraSpec& camera,
                            extract::DepthMap& depth, extract::NormalMap& normals) {
  depth.camera = camera;
  depth.depth = Eigen::MatrixXf::Zero(camera.height, camera.width);
  depth.valid.setZero(camera.height, camera.width);
  normals.nx = Eigen::MatrixXf::Zero(camera.height, camera.width);
  normals.ny = Eigen::MatrixXf::Zero(camera.height, camera.width);
  normals.nz = Eigen::MatrixXf::Zero(camera.height, camera.width);
  for (int py = 0; py < camera.height; ++py) {
    for (int px = 0; px < camera.width; ++px) {
      Vec3 o, d;
      camera.pixel_ray(px, py, o, d);
      auto hit = sim::analytic_first_hit(scene, o, d, 100.0, /*exclude_floor=*/true);
      if (!hit) continue;
      depth.depth(py, px) = static_cast<float>(hit->t);
      depth.valid(py, px) = 1;
      Vec3 n = sim::analytic_normal(scene, o + hit->t * d);
      normals.nx(py, px) = static_cast<float>(n.x());
      normals.ny(py, px) = static_cast<float>(n.y());
      normals.nz(py, px) = static_cast<float>(n.z());
    }
  }
}

int cmd_eval(const std::string& pred_dir, const std::string& scene_path,
             const std::string& out_path, const std::string& config_path) {
  core::Config cfg = load_config_opt(config_path);
  sim::SceneSpec scene = sim::load_scene(scene_path);
  cfg.bounds = scene.bounds;

  extract::DepthMap pred_depth;
  pred_depth.depth = img::load_pfm(pred_dir + "/depth.pfm");
  pred_depth.valid = (pred_depth.depth.array() > 0.0f).cast<std::uint8_t>();
  extract::NormalMap pred_normals;
  img::load_pfm3(pred_dir + "/normals.pfm", pred_normals.nx, pred_normals.ny,
                 pred_normals.nz);

  render::CameraSpec camera = render::CameraSpec::facing_bounds(
      cfg.bounds, Vec3(0, 0, 1), static_cast<int>(pred_depth.depth.cols()));
  extract::DepthMap gt_depth;
  extract::NormalMap gt_normals;
  analytic_depth_normals(scene, camera, gt_depth, gt_normals);

  extract::DepthMetrics dm = extract::evaluate_depth(pred_depth, gt_depth);
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> both =
      (pred_depth.valid.array() * gt_depth.valid.array()).matrix();
  extract::NormalMetrics nm = extract::evaluate_normals(pred_normals, gt_normals, both);

  std::ofstream out(out_path);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write metrics: " + out_path);
  out << "depth_rmse_cm,depth_mae_cm,depth_coverage,normal_epe_rmse,normal_epe_mae,"
         "normal_mean_angle_deg,pixels\n";
  out << dm.rmse_cm << ',' << dm.mae_cm << ',' << dm.coverage << ',' << nm.epe_rmse << ','
      << nm.epe_mae << ',' << nm.mean_angle_deg << ',' << dm.pixels << "\n";
  std::cout << "[eval] depth RMSE " << dm.rmse_cm << " cm, MAE " << dm.mae_cm
            << " cm, coverage " << dm.coverage << ", normal EPE RMSE " << nm.epe_rmse
            << ", mean angle " << nm.mean_angle_deg << " deg\n";
  write_manifest(out_path + ".manifest.json", "eval", cfg,
                 {{"pred_dir", pred_dir}, {"scene", scene_path}}, {{"metrics", out_path}});
  return kExitOk;
}

template <class Real>
int render_views_with_precision(const core::Config& cfg, const std::string& checkpoint_path,
                                const std::string& out_dir) {
  train::Model<Real> model = model_from_checkpoint<Real>(cfg, checkpoint_path);
  FieldCallbacks cb = make_callbacks(model, cfg);
  fs::create_directories(out_dir);

  nlohmann::json outputs = nlohmann::json::array();
  const double elev = cfg.view_elevation_deg * M_PI / 180.0;
  for (int v = 0; v < cfg.view_count; ++v) {
    double azim = 2.0 * M_PI * v / std::max(1, cfg.view_count) - M_PI / 2.0;
    Vec3 dir(-std::cos(elev) * std::cos(azim), -std::cos(elev) * std::sin(azim),
             std::sin(elev));
    // Cameras orbit the bounds center looking inward.
    render::CameraSpec cam =
        render::CameraSpec::facing_bounds(cfg.bounds, -dir, cfg.view_image_size);
    cam.position = cfg.bounds.center() + dir * cfg.view_distance;
    Eigen::MatrixXd image =
        render::render_view(cb.sdf, cb.rho, cb.alpha, cam, cfg.bounds, cfg.view_ray_samples);
    std::string base = out_dir + "/view_" + std::to_string(v);
    img::save_pfm(base + ".pfm", image.cast<float>());
    img::save_pgm16(base + ".pgm", image);
    outputs.push_back(base + ".pgm");
  }
  write_manifest(out_dir + "/manifest.json", "render-views", cfg,
                 {{"checkpoint", checkpoint_path}}, {{"views", outputs}});
  std::cout << "[render-views] wrote " << cfg.view_count << " views to " << out_dir << "\n";
  return kExitOk;
}

int cmd_render_views(const std::string& checkpoint_path, const std::string& out_dir,
                     const std::string& config_path) {
  core::Config cfg = load_config_opt(config_path);
  if (cfg.precision == core::Precision::Float64) {
    return render_views_with_precision<double>(cfg, checkpoint_path, out_dir);
  }
  return render_views_with_precision<float>(cfg, checkpoint_path, out_dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NLOS neural implicit surface toolkit"};
  app.require_subcommand(1);

  std::string scene_path, transients_path, carve_path, checkpoint_path, config_path;
  std::string out_path, out_dir, pred_dir, resume_path;
  std::uint64_t seed = 0;
  int threads = 0;

  auto* sim_cmd = app.add_subcommand("simulate", "synthesize transients from a scene spec");
  sim_cmd->add_option("--scene", scene_path, "scene JSON")->required();
  sim_cmd->add_option("--out", out_path, "output .nlt path")->required();
  sim_cmd->add_option("--config", config_path, "config file");
  auto* seed_opt = sim_cmd->add_option("--seed", seed, "noise seed override");

  auto* carve_cmd = app.add_subcommand("carve", "space carving from first-returning photons");
  carve_cmd->add_option("--transients", transients_path, "input .nlt")->required();
  carve_cmd->add_option("--out", out_path, "output carve grid")->required();
  carve_cmd->add_option("--config", config_path, "config file");

  auto* train_cmd = app.add_subcommand("train", "optimize the neural fields");
  train_cmd->add_option("--transients", transients_path, "input .nlt")->required();
  train_cmd->add_option("--carve", carve_path, "carve grid file");
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--threads", threads, "worker threads");

  auto* extract_cmd = app.add_subcommand("extract", "surface extraction from a checkpoint");
  extract_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  extract_cmd->add_option("--out", out_dir, "output directory")->required();
  extract_cmd->add_option("--config", config_path, "config file");

  auto* eval_cmd = app.add_subcommand("eval", "depth/normal metrics against an analytic scene");
  eval_cmd->add_option("--pred", pred_dir, "extraction output directory")->required();
  eval_cmd->add_option("--scene", scene_path, "scene JSON with ground truth")->required();
  eval_cmd->add_option("--out", out_path, "metrics CSV path")->required();
  eval_cmd->add_option("--config", config_path, "config file");

  auto* views_cmd = app.add_subcommand("render-views", "directional albedo from orbit views");
  views_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  views_cmd->add_option("--out", out_dir, "output directory")->required();
  views_cmd->add_option("--config", config_path, "config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sim_cmd->parsed()) {
      return cmd_simulate(scene_path, out_path, config_path, seed, seed_opt->count() > 0);
    }
    if (carve_cmd->parsed()) return cmd_carve(transients_path, out_path, config_path);
    if (train_cmd->parsed()) {
      return cmd_train(transients_path, carve_path, out_dir, config_path, resume_path,
                       threads);
    }
    if (extract_cmd->parsed()) return cmd_extract(checkpoint_path, out_dir, config_path);
    if (eval_cmd->parsed()) return cmd_eval(pred_dir, scene_path, out_path, config_path);
    if (views_cmd->parsed()) return cmd_render_views(checkpoint_path, out_dir, config_path);
  } catch (const NlosError& e) {
    std::cerr << "error (" << error_code_name(e.code()) << "): " << e.what() << "\n";
    return map_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
