#include "nlos/extract.hpp"

#include <cmath>

#include "nlos/errors.hpp"

namespace nlos::extract {

namespace {

// Bracket the zero crossing forward of t_hit and bisect. Keeps the reported
// point within hit_eps of the level set even at grazing incidence.
double refine_hit(const PointSdfFn& sdf, const Vec3& origin, const Vec3& dir, double t_hit,
                  double d_hit, const TraceParams& params) {
  double t_lo = t_hit;
  double d_lo = d_hit;
  double t = t_hit;
  double t_hi = -1.0;
  double step = std::max(d_hit, params.hit_eps * 0.25);
  for (int i = 0; i < 64; ++i) {
    t += step;
    if (t > params.t_max) break;
    double d = sdf(origin + t * dir);
    if (d <= 0.0) {
      t_hi = t;
      break;
    }
    t_lo = t;
    d_lo = d;
    step = std::max(d * 0.9, params.hit_eps * 0.25);
  }
  (void)d_lo;
  if (t_hi < 0.0) return t_hit;  // no sign change (grazing); keep the accept point
  for (int i = 0; i < 60; ++i) {
    double mid = 0.5 * (t_lo + t_hi);
    double d = sdf(origin + mid * dir);
    if (d > 0.0) {
      t_lo = mid;
    } else {
      t_hi = mid;
    }
  }
  return 0.5 * (t_lo + t_hi);
}

}  // namespace

TraceResult sphere_trace(const PointSdfFn& sdf, const Vec3& origin, const Vec3& dir,
                         const TraceParams& params) {
  if (params.hit_eps <= 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "hit_eps must be positive");
  }
  if (std::abs(dir.norm() - 1.0) > 1e-6) {
    throw NlosError(ErrorCode::InvariantViolation, "trace direction must be unit length");
  }
  TraceResult out;
  double t = 0.0;
  for (int step = 0; step < params.max_steps; ++step) {
    Vec3 p = origin + t * dir;
    double d = sdf(p);
    out.steps = step + 1;
    if (d <= params.hit_eps) {
      if (params.refine) t = refine_hit(sdf, origin, dir, t, std::max(d, 0.0), params);
      out.hit = true;
      out.t = t;
      out.point = origin + t * dir;
      return out;
    }
    t += params.damping * d;
    if (t > params.t_max) break;
  }
  out.hit = false;
  out.t = t;
  out.point = origin + t * dir;
  return out;
}

std::vector<TraceResult> sphere_trace_batch(const render::SdfBatchFn& sdf,
                                            const Mat3X& origins, const Mat3X& dirs,
                                            const TraceParams& params) {
  const Eigen::Index n = origins.cols();
  if (dirs.cols() != n) {
    throw NlosError(ErrorCode::ShapeMismatch, "origin/direction count mismatch");
  }
  std::vector<TraceResult> results(static_cast<size_t>(n));
  std::vector<Eigen::Index> active(static_cast<size_t>(n));
  Eigen::VectorXd t = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) active[static_cast<size_t>(i)] = i;

  for (int step = 0; step < params.max_steps && !active.empty(); ++step) {
    Mat3X pts(3, static_cast<Eigen::Index>(active.size()));
    for (size_t k = 0; k < active.size(); ++k) {
      Eigen::Index i = active[k];
      pts.col(static_cast<Eigen::Index>(k)) = origins.col(i) + t[i] * dirs.col(i);
    }
    Eigen::VectorXd d = sdf(pts);

    std::vector<Eigen::Index> next;
    next.reserve(active.size());
    for (size_t k = 0; k < active.size(); ++k) {
      Eigen::Index i = active[k];
      results[static_cast<size_t>(i)].steps = step + 1;
      if (d[static_cast<Eigen::Index>(k)] <= params.hit_eps) {
        double t_hit = t[i];
        if (params.refine) {
          PointSdfFn point_sdf = [&sdf](const Vec3& p) {
            Mat3X m(3, 1);
            m.col(0) = p;
            return sdf(m)[0];
          };
          t_hit = refine_hit(point_sdf, origins.col(i), dirs.col(i), t_hit,
                             std::max(d[static_cast<Eigen::Index>(k)], 0.0), params);
        }
        results[static_cast<size_t>(i)].hit = true;
        results[static_cast<size_t>(i)].t = t_hit;
        results[static_cast<size_t>(i)].point = origins.col(i) + t_hit * dirs.col(i);
        continue;
      }
      t[i] += params.damping * d[static_cast<Eigen::Index>(k)];
      if (t[i] > params.t_max) {
        results[static_cast<size_t>(i)].hit = false;
        results[static_cast<size_t>(i)].t = t[i];
        results[static_cast<size_t>(i)].point = origins.col(i) + t[i] * dirs.col(i);
        continue;
      }
      next.push_back(i);
    }
    active.swap(next);
  }
  for (Eigen::Index i : active) {
    results[static_cast<size_t>(i)].hit = false;
    results[static_cast<size_t>(i)].t = t[i];
    results[static_cast<size_t>(i)].point = origins.col(i) + t[i] * dirs.col(i);
  }
  return results;
}

Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> object_mask_from_albedo(
    const Eigen::MatrixXd& albedo, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw NlosError(ErrorCode::InvariantViolation, "mask fraction must be in (0,1)");
  }
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask(albedo.rows(),
                                                                   albedo.cols());
  mask.setZero();
  double peak = albedo.size() > 0 ? albedo.maxCoeff() : 0.0;
  if (peak <= 0.0) return mask;
  double thresh = fraction * peak;
  for (Eigen::Index i = 0; i < albedo.rows(); ++i) {
    for (Eigen::Index j = 0; j < albedo.cols(); ++j) {
      mask(i, j) = albedo(i, j) > thresh ? 1 : 0;
    }
  }
  return mask;
}

ExtractionResult extract_point_cloud(
    const render::SdfBatchFn& sdf,
    const std::function<Mat3X(const Mat3X&)>& sdf_grad_batch,
    const render::CameraSpec& camera,
    const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& mask,
    const TraceParams& params) {
  if (mask.rows() != camera.height || mask.cols() != camera.width) {
    throw NlosError(ErrorCode::ShapeMismatch, "mask does not match camera resolution");
  }
  ExtractionResult out;
  out.depth.camera = camera;
  out.depth.depth = Eigen::MatrixXf::Zero(camera.height, camera.width);
  out.depth.valid.setZero(camera.height, camera.width);
  out.normals.nx = Eigen::MatrixXf::Zero(camera.height, camera.width);
  out.normals.ny = Eigen::MatrixXf::Zero(camera.height, camera.width);
  out.normals.nz = Eigen::MatrixXf::Zero(camera.height, camera.width);

  std::vector<std::pair<int, int>> pixels;
  for (int py = 0; py < camera.height; ++py) {
    for (int px = 0; px < camera.width; ++px) {
      if (mask(py, px)) pixels.emplace_back(py, px);
    }
  }
  if (pixels.empty()) return out;

  Mat3X origins(3, static_cast<Eigen::Index>(pixels.size()));
  Mat3X dirs(3, static_cast<Eigen::Index>(pixels.size()));
  for (size_t k = 0; k < pixels.size(); ++k) {
    Vec3 o, d;
    camera.pixel_ray(pixels[k].second, pixels[k].first, o, d);
    origins.col(static_cast<Eigen::Index>(k)) = o;
    dirs.col(static_cast<Eigen::Index>(k)) = d;
  }

  std::vector<TraceResult> traces = sphere_trace_batch(sdf, origins, dirs, params);

  std::vector<Eigen::Index> hit_idx;
  for (size_t k = 0; k < traces.size(); ++k) {
    if (traces[k].hit) hit_idx.push_back(static_cast<Eigen::Index>(k));
  }
  if (hit_idx.empty()) return out;

  Mat3X hit_pts(3, static_cast<Eigen::Index>(hit_idx.size()));
  for (size_t k = 0; k < hit_idx.size(); ++k) {
    hit_pts.col(static_cast<Eigen::Index>(k)) = traces[static_cast<size_t>(hit_idx[k])].point;
  }
  Mat3X grads = sdf_grad_batch(hit_pts);

  for (size_t k = 0; k < hit_idx.size(); ++k) {
    const TraceResult& tr = traces[static_cast<size_t>(hit_idx[k])];
    auto [py, px] = pixels[static_cast<size_t>(hit_idx[k])];
    Vec3 g = grads.col(static_cast<Eigen::Index>(k));
    double gn = g.norm();
    Vec3 normal = gn > 1e-12 ? Vec3(g / gn) : Vec3(0, 0, 1);
    out.depth.depth(py, px) = static_cast<float>(tr.t);
    out.depth.valid(py, px) = 1;
    out.normals.nx(py, px) = static_cast<float>(normal.x());
    out.normals.ny(py, px) = static_cast<float>(normal.y());
    out.normals.nz(py, px) = static_cast<float>(normal.z());
    out.cloud.push_back(img::OrientedPoint{tr.point, normal});
  }
  return out;
}

DepthMetrics evaluate_depth(const DepthMap& pred, const DepthMap& gt) {
  if (pred.depth.rows() != gt.depth.rows() || pred.depth.cols() != gt.depth.cols()) {
    throw NlosError(ErrorCode::ShapeMismatch, "depth map dims differ");
  }
  DepthMetrics m;
  double sq = 0.0, ab = 0.0;
  std::int64_t gt_valid = 0;
  for (Eigen::Index i = 0; i < gt.depth.rows(); ++i) {
    for (Eigen::Index j = 0; j < gt.depth.cols(); ++j) {
      if (!gt.valid(i, j)) continue;
      ++gt_valid;
      if (!pred.valid(i, j)) continue;
      double e = static_cast<double>(pred.depth(i, j)) - static_cast<double>(gt.depth(i, j));
      sq += e * e;
      ab += std::abs(e);
      ++m.pixels;
    }
  }
  if (gt_valid == 0) {
    throw NlosError(ErrorCode::InvariantViolation, "ground truth has no valid pixels");
  }
  m.coverage = static_cast<double>(m.pixels) / static_cast<double>(gt_valid);
  if (m.pixels > 0) {
    m.rmse_cm = std::sqrt(sq / m.pixels) * 100.0;
    m.mae_cm = ab / m.pixels * 100.0;
  }
  return m;
}

NormalMetrics evaluate_normals(const NormalMap& pred, const NormalMap& gt,
                               const Eigen::Matrix<std::uint8_t, Eigen::Dynamic,
                                                   Eigen::Dynamic>& mask) {
  NormalMetrics m;
  double sq = 0.0, ab = 0.0, ang = 0.0;
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      if (!mask(i, j)) continue;
      Vec3 a(pred.nx(i, j), pred.ny(i, j), pred.nz(i, j));
      Vec3 b(gt.nx(i, j), gt.ny(i, j), gt.nz(i, j));
      double epe = (a - b).norm();
      sq += epe * epe;
      ab += epe;
      double c = std::min(std::max(a.dot(b), -1.0), 1.0);
      ang += std::acos(c);
      ++m.pixels;
    }
  }
  if (m.pixels == 0) {
    throw NlosError(ErrorCode::InvariantViolation, "empty mask in normal evaluation");
  }
  m.epe_rmse = std::sqrt(sq / m.pixels);
  m.epe_mae = ab / m.pixels;
  m.mean_angle_deg = ang / m.pixels * 180.0 / M_PI;
  return m;
}

}  // namespace nlos::extract
