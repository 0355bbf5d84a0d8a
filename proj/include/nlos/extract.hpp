#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "nlos/geometry.hpp"
#include "nlos/image_io.hpp"
#include "nlos/render.hpp"

namespace nlos::extract {

using PointSdfFn = std::function<double(const Vec3&)>;

struct TraceParams {
  double hit_eps = 1e-4;
  int max_steps = 256;
  double t_max = 10.0;
  // Step scale below 1 guards against overshoot when the SDF is not exactly
  // eikonal (learned fields); analytic fields can run at 1.
  double damping = 1.0;
  bool refine = true;  // bracket + bisect once the surface is reached
};

struct TraceResult {
  bool hit = false;
  double t = 0.0;
  Vec3 point = Vec3::Zero();
  int steps = 0;
};

// March along the ray by the current signed distance until d <= hit_eps.
TraceResult sphere_trace(const PointSdfFn& sdf, const Vec3& origin, const Vec3& dir,
                         const TraceParams& params);

// Lockstep variant for many rays; evaluates all active rays as one batch per
// step through the supplied batched SDF.
std::vector<TraceResult> sphere_trace_batch(const render::SdfBatchFn& sdf,
                                            const Mat3X& origins, const Mat3X& dirs,
                                            const TraceParams& params);

// Depth image with validity mask (depth 0 = miss).
struct DepthMap {
  Eigen::MatrixXf depth;                  // meters along the ray
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> valid;
  render::CameraSpec camera;
};

// Normals stored as three channel planes.
struct NormalMap {
  Eigen::MatrixXf nx, ny, nz;
};

// Pixel selection: albedo above fraction * max(albedo).
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> object_mask_from_albedo(
    const Eigen::MatrixXd& albedo, double fraction);

struct ExtractionResult {
  DepthMap depth;
  NormalMap normals;
  std::vector<img::OrientedPoint> cloud;
};

// Trace every masked pixel; normals come from the SDF spatial gradient at
// the hit points.
ExtractionResult extract_point_cloud(
    const render::SdfBatchFn& sdf,
    const std::function<Mat3X(const Mat3X&)>& sdf_grad_batch,
    const render::CameraSpec& camera,
    const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& mask,
    const TraceParams& params);

// Ground-truth style extraction for analytic scenes (same camera).
struct DepthMetrics {
  double rmse_cm = 0.0;
  double mae_cm = 0.0;
  std::int64_t pixels = 0;      // pixels entering the metric
  double coverage = 0.0;        // fraction of gt-valid pixels with a prediction
};

// RMSE/MAE over pixels valid in gt; pred misses reduce coverage instead of
// entering the error sum.
DepthMetrics evaluate_depth(const DepthMap& pred, const DepthMap& gt);

struct NormalMetrics {
  double epe_rmse = 0.0;   // ||n_pred - n_gt|| end-point error
  double epe_mae = 0.0;
  double mean_angle_deg = 0.0;
  std::int64_t pixels = 0;
};

NormalMetrics evaluate_normals(const NormalMap& pred, const NormalMap& gt,
                               const Eigen::Matrix<std::uint8_t, Eigen::Dynamic,
                                                   Eigen::Dynamic>& mask);

}  // namespace nlos::extract
