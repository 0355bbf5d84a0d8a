#include "nlos/render.hpp"

namespace nlos::render {

RenderedTransient render_transient(const SdfBatchFn& sdf, const RhoBatchFn& rho,
                                   double alpha, const Vec3& wall_point,
                                   const Frame& wall_frame, const BinRange& range,
                                   int total_bins, double bin_width_s,
                                   const SphereSampleGrid& grid, bool cumulative_weights) {
  if (alpha <= 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "alpha must be positive");
  }
  if (range.lo < 0 || range.hi > total_bins || range.count() <= 0) {
    throw NlosError(ErrorCode::InvariantViolation, "bad bin range");
  }
  const int bt = range.count();
  const int d = grid.directions();

  SphereSampleLayout layout = SphereSampleLayout::build(grid, wall_frame, range, bin_width_s);
  Mat3X pts = layout.sample_points(wall_point, bt);
  Mat3X vdirs = layout.view_dirs(bt);

  Eigen::VectorXd d_vals = sdf(pts);
  Eigen::VectorXd rho_vals = rho(pts, vdirs);
  if (!d_vals.allFinite() || !rho_vals.allFinite()) {
    throw NlosError(ErrorCode::NumericError, "non-finite field output in render_transient");
  }

  Eigen::MatrixXd sigma(bt, d);
  Eigen::MatrixXd rho_bd(bt, d);
  for (int k = 0; k < d; ++k) {
    for (int t = 0; t < bt; ++t) {
      sigma(t, k) = density_from_sdf(d_vals[static_cast<Eigen::Index>(k) * bt + t], alpha);
      rho_bd(t, k) = rho_vals[static_cast<Eigen::Index>(k) * bt + t];
    }
  }

  RenderedTransient out;
  out.range = range;
  Eigen::MatrixXd transmittance;
  WeightMath::weights(sigma, core::bin_radial_step(bin_width_s), out.w, transmittance);
  if (cumulative_weights) {
    // Literal cumulative form: w(t) accumulates all earlier per-bin terms.
    Eigen::MatrixXd cum(bt, d);
    for (int k = 0; k < d; ++k) {
      double run = 0.0;
      for (int t = 0; t < bt; ++t) {
        run += out.w(t, k);
        cum(t, k) = run;
      }
    }
    out.w = std::move(cum);
  }
  out.wrho = out.w.array() * rho_bd.array();

  out.tau_o = Eigen::VectorXd::Zero(total_bins);
  Eigen::MatrixXd contrib = out.wrho.array() * layout.atten.array();
  out.tau_o.segment(range.lo, bt) = contrib.rowwise().sum();
  out.ohat = out.w.colwise().sum();
  out.transmittance_end.resize(d);
  for (int k = 0; k < d; ++k) {
    out.transmittance_end[k] =
        transmittance(bt - 1, k) * std::exp(-sigma(bt - 1, k) * core::bin_radial_step(bin_width_s));
  }
  out.tau = out.tau_o;
  out.xi = 0.0;
  return out;
}

std::pair<Eigen::VectorXd, double> composite_background(const Eigen::VectorXd& tau_o,
                                                        const Eigen::VectorXd& tau_b_raw,
                                                        const Eigen::VectorXd& tau_m) {
  if (tau_o.size() != tau_b_raw.size() || tau_o.size() != tau_m.size()) {
    throw NlosError(ErrorCode::ShapeMismatch, "composite_background size mismatch");
  }
  double denom = tau_b_raw.sum();
  double xi = 0.0;
  if (denom < 1e-12) {
    // Degenerate background; leave the object transient as-is.
    xi = 0.0;
  } else {
    xi = std::max(0.0, (tau_m.sum() - tau_o.sum()) / denom);
  }
  Eigen::VectorXd tau = tau_o + xi * tau_b_raw;
  return {tau, xi};
}

// ---------------------------------------------------------------------------
// Cameras and view rendering

CameraSpec CameraSpec::facing_bounds(const SceneBounds& bounds, const Vec3& view_dir,
                                     int resolution) {
  CameraSpec cam;
  cam.model = Model::Orthographic;
  cam.forward = view_dir.normalized();
  Vec3 up_guess = std::abs(cam.forward.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
  Vec3 right = cam.forward.cross(up_guess).normalized();
  cam.up = right.cross(cam.forward);
  // Place the plane outside the box, framing its projected extent.
  Vec3 c = bounds.center();
  double radius = 0.5 * bounds.extent().norm();
  cam.position = c - (radius + 1e-3) * cam.forward;
  cam.half_width = radius;
  cam.half_height = radius;
  cam.width = resolution;
  cam.height = resolution;
  return cam;
}

void CameraSpec::pixel_ray(int px, int py, Vec3& origin, Vec3& dir) const {
  double u = (2.0 * (px + 0.5) / width - 1.0) * half_width;
  double v = (1.0 - 2.0 * (py + 0.5) / height) * half_height;
  Vec3 right = forward.cross(up).normalized();
  if (model == Model::Orthographic) {
    origin = position + u * right + v * up;
    dir = forward;
  } else {
    double tan_half = std::tan(0.5 * fov_deg * M_PI / 180.0);
    double aspect = static_cast<double>(width) / height;
    double x = (2.0 * (px + 0.5) / width - 1.0) * tan_half * aspect;
    double y = (1.0 - 2.0 * (py + 0.5) / height) * tan_half;
    origin = position;
    dir = (x * right + y * up + forward).normalized();
  }
}

Eigen::MatrixXd render_view(const SdfBatchFn& sdf, const RhoBatchFn& rho, double alpha,
                            const CameraSpec& camera, const SceneBounds& bounds,
                            int ray_samples) {
  if (ray_samples < 1) {
    throw NlosError(ErrorCode::InvariantViolation, "ray_samples must be >= 1");
  }
  Eigen::MatrixXd image = Eigen::MatrixXd::Zero(camera.height, camera.width);

  // One scanline at a time keeps batch memory bounded.
  for (int py = 0; py < camera.height; ++py) {
    std::vector<int> live;
    std::vector<double> t0s, dts;
    Mat3X origins(3, camera.width), dirs(3, camera.width);
    for (int px = 0; px < camera.width; ++px) {
      Vec3 o, d;
      camera.pixel_ray(px, py, o, d);
      double t0, t1;
      if (!bounds.clip_ray(o, d, t0, t1) || t1 <= t0) continue;
      live.push_back(px);
      origins.col(live.size() - 1) = o;
      dirs.col(live.size() - 1) = d;
      t0s.push_back(t0);
      dts.push_back((t1 - t0) / ray_samples);
    }
    if (live.empty()) continue;
    const int n = static_cast<int>(live.size());

    Mat3X pts(3, static_cast<Eigen::Index>(n) * ray_samples);
    Mat3X vdirs(3, static_cast<Eigen::Index>(n) * ray_samples);
    for (int i = 0; i < n; ++i) {
      for (int s = 0; s < ray_samples; ++s) {
        double t = t0s[i] + (s + 0.5) * dts[i];
        pts.col(static_cast<Eigen::Index>(i) * ray_samples + s) =
            origins.col(i) + t * dirs.col(i);
        vdirs.col(static_cast<Eigen::Index>(i) * ray_samples + s) = -dirs.col(i);
      }
    }
    Eigen::VectorXd d_vals = sdf(pts);
    Eigen::VectorXd rho_vals = rho(pts, vdirs);

    for (int i = 0; i < n; ++i) {
      double transmittance = 1.0;
      double acc = 0.0;
      for (int s = 0; s < ray_samples; ++s) {
        double sg = density_from_sdf(d_vals[static_cast<Eigen::Index>(i) * ray_samples + s], alpha);
        double a = 1.0 - std::exp(-sg * dts[i]);
        acc += transmittance * a * rho_vals[static_cast<Eigen::Index>(i) * ray_samples + s];
        transmittance *= std::exp(-sg * dts[i]);
      }
      image(py, live[i]) = acc;
    }
  }
  return image;
}

}  // namespace nlos::render
