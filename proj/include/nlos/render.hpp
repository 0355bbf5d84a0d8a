#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "nlos/core.hpp"
#include "nlos/fields.hpp"
#include "nlos/geometry.hpp"
#include "nlos/tape.hpp"

namespace nlos::render {

using ad::MatX;
using ad::ParamVector;
using ad::Tape;
using ad::VecX;

// Learnable sharpness of the SDF-to-density transform, alpha = exp(a) so the
// positivity invariant holds for any unconstrained a.
template <class Real>
struct DensityTransform {
  int log_alpha_entry = -1;

  void register_params(ParamVector<Real>& pv, double alpha_init) {
    if (alpha_init <= 0.0) {
      throw NlosError(ErrorCode::InvariantViolation, "alpha_init must be positive");
    }
    log_alpha_entry = pv.add("density.log_alpha", 1, 1);
    pv.view(log_alpha_entry)(0, 0) = static_cast<Real>(std::log(alpha_init));
  }

  double alpha(const ParamVector<Real>& pv) const {
    return std::exp(static_cast<double>(pv.view(log_alpha_entry)(0, 0)));
  }

  // 1x1 node holding alpha > 0.
  int alpha_node(Tape<Real>& tape) const { return tape.exp(tape.param(log_alpha_entry)); }
};

// sigma = (1/alpha) * sigmoid(-d / alpha); positive and strictly decreasing in d.
inline double density_from_sdf(double d, double alpha) {
  if (alpha <= 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "alpha must be positive");
  }
  return (1.0 / alpha) / (1.0 + std::exp(d / alpha));
}

// A(r, theta) = sin(theta) / r^2.
inline double attenuation(double r, double theta) {
  if (r <= 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "attenuation requires r > 0");
  }
  return std::sin(theta) / (r * r);
}

// Uniform hemisphere sampling in front of the wall: theta in (0, pi/2]
// (offset grid keeps theta away from 0), phi covering the full circle.
struct SphereSampleGrid {
  int n_theta = 64;
  int n_phi = 64;
  double d_theta = 0.0;
  double d_phi = 0.0;
  std::vector<double> theta;
  std::vector<double> phi;

  SphereSampleGrid() = default;
  SphereSampleGrid(int nt, int np) : n_theta(nt), n_phi(np) {
    if (nt < 1 || np < 1) {
      throw NlosError(ErrorCode::InvariantViolation, "angular sample counts must be >= 1");
    }
    d_theta = (0.5 * M_PI) / nt;
    d_phi = (2.0 * M_PI) / np;
    theta.resize(nt);
    phi.resize(np);
    for (int i = 0; i < nt; ++i) theta[i] = (i + 0.5) * d_theta;
    for (int j = 0; j < np; ++j) phi[j] = (j + 0.5) * d_phi;
  }

  int directions() const { return n_theta * n_phi; }
};

// Point on the scan sphere of radius r around p' (frame-local spherical
// coordinates, z along the wall normal).
inline Vec3 sample_sphere_point(const Vec3& wall_point, double r, double theta, double phi,
                                const Frame& frame) {
  Vec3 local(r * std::sin(theta) * std::cos(phi), r * std::sin(theta) * std::sin(phi),
             r * std::cos(theta));
  return wall_point + frame.to_world(local);
}

inline Vec3 sample_sphere_point(const Vec3& wall_point, double r, double theta, double phi) {
  return sample_sphere_point(wall_point, r, theta, phi, Frame::from_normal(Vec3(0, 0, 1)));
}

struct BinRange {
  int lo = 0;   // inclusive
  int hi = 0;   // exclusive

  int count() const { return hi - lo; }
};

// Bins whose scan spheres can intersect the scene bounds from this wall
// point; rendering outside the range contributes exactly zero.
inline BinRange bins_touching_bounds(const Vec3& wall_point, const SceneBounds& bounds,
                                     double bin_width_s, int total_bins) {
  double r_min = std::numeric_limits<double>::infinity();
  double r_max = 0.0;
  // Nearest point of the box and farthest corner.
  Vec3 clamped = wall_point.cwiseMax(bounds.min).cwiseMin(bounds.max);
  r_min = (clamped - wall_point).norm();
  for (int i = 0; i < 8; ++i) {
    r_max = std::max(r_max, (bounds.corner(i) - wall_point).norm());
  }
  double dr = core::bin_radial_step(bin_width_s);
  int lo = std::max(0, static_cast<int>(std::floor(r_min / dr)));
  int hi = std::min(total_bins, static_cast<int>(std::ceil(r_max / dr)) + 1);
  if (hi <= lo) hi = lo;  // empty range
  return BinRange{lo, hi};
}

// Direction layout shared by all rendering paths: dir = i_theta * n_phi +
// i_phi, sample column n = dir * n_bins + bin. A B x D matrix in column-major
// storage then has one direction per column.
struct SphereSampleLayout {
  Mat3X dirs;               // 3 x D unit directions (world)
  Eigen::VectorXd sin_theta;  // D
  Eigen::VectorXd radii;      // n_bins, bin centers (meters)
  Eigen::MatrixXd atten;      // n_bins x D: A(r_t, theta) * dtheta * dphi

  static SphereSampleLayout build(const SphereSampleGrid& grid, const Frame& frame,
                                  const BinRange& range, double bin_width_s) {
    SphereSampleLayout out;
    const int d = grid.directions();
    const int b = range.count();
    out.dirs.resize(3, d);
    out.sin_theta.resize(d);
    for (int i = 0; i < grid.n_theta; ++i) {
      for (int j = 0; j < grid.n_phi; ++j) {
        int k = i * grid.n_phi + j;
        double st = std::sin(grid.theta[i]);
        Vec3 local(st * std::cos(grid.phi[j]), st * std::sin(grid.phi[j]),
                   std::cos(grid.theta[i]));
        out.dirs.col(k) = frame.to_world(local);
        out.sin_theta[k] = st;
      }
    }
    out.radii.resize(b);
    for (int t = 0; t < b; ++t) {
      out.radii[t] = core::bin_to_radius(range.lo + t, bin_width_s);
    }
    out.atten.resize(b, d);
    const double dd = grid.d_theta * grid.d_phi;
    for (int t = 0; t < b; ++t) {
      double inv_r2 = 1.0 / (out.radii[t] * out.radii[t]);
      for (int k = 0; k < d; ++k) {
        out.atten(t, k) = out.sin_theta[k] * inv_r2 * dd;
      }
    }
    return out;
  }

  // All sample points, 3 x (B*D), column dir*B + t.
  Mat3X sample_points(const Vec3& wall_point, int n_bins) const {
    Mat3X pts(3, static_cast<Eigen::Index>(n_bins) * dirs.cols());
    for (Eigen::Index k = 0; k < dirs.cols(); ++k) {
      for (int t = 0; t < n_bins; ++t) {
        pts.col(k * n_bins + t) = wall_point + radii[t] * dirs.col(k);
      }
    }
    return pts;
  }

  // Directions repeated per bin (towards the wall = -dir), 3 x (B*D).
  Mat3X view_dirs(int n_bins) const {
    Mat3X v(3, static_cast<Eigen::Index>(n_bins) * dirs.cols());
    for (Eigen::Index k = 0; k < dirs.cols(); ++k) {
      for (int t = 0; t < n_bins; ++t) {
        v.col(k * n_bins + t) = -dirs.col(k);
      }
    }
    return v;
  }
};

// Per-wall-point rendering products. tau_o is zero outside the marched
// range; w / wrho cover the marched rows only (offset = range.lo).
struct RenderedTransient {
  Eigen::VectorXd tau_o;      // B
  Eigen::VectorXd ohat;       // D, accumulated weight per direction
  Eigen::MatrixXd w;          // range.count() x D
  Eigen::MatrixXd wrho;       // range.count() x D (surface sampling PDF source)
  BinRange range;
  Eigen::VectorXd tau;        // B, composited; equals tau_o until compositing
  double xi = 0.0;

  // Transmittance at the end of each direction's march (diagnostic).
  Eigen::VectorXd transmittance_end;
};

// Discrete weights for one wall point given density and reflectance values
// over the marched grid. Shared by the plain renderer; the tape variant
// mirrors these formulas node-by-node (equality is pinned by tests).
struct WeightMath {
  // sigma, rho: Bt x D. Returns w, T (inclusive start-of-bin transmittance).
  static void weights(const Eigen::MatrixXd& sigma, double dr, Eigen::MatrixXd& w,
                      Eigen::MatrixXd& transmittance) {
    Eigen::MatrixXd optical = sigma * dr;
    Eigen::MatrixXd cum(optical.rows(), optical.cols());
    for (Eigen::Index j = 0; j < optical.cols(); ++j) {
      double run = 0.0;
      for (Eigen::Index i = 0; i < optical.rows(); ++i) {
        cum(i, j) = run;
        run += optical(i, j);
      }
    }
    transmittance = (-cum).array().exp();
    w = transmittance.array() * (1.0 - (-optical).array().exp());
  }
};

using SdfBatchFn = std::function<Eigen::VectorXd(const Mat3X&)>;
using RhoBatchFn = std::function<Eigen::VectorXd(const Mat3X&, const Mat3X&)>;

// Render the object transient at one wall point by marching every direction
// of the spherical grid radially across the bin range.
RenderedTransient render_transient(const SdfBatchFn& sdf, const RhoBatchFn& rho,
                                   double alpha, const Vec3& wall_point,
                                   const Frame& wall_frame, const BinRange& range,
                                   int total_bins, double bin_width_s,
                                   const SphereSampleGrid& grid,
                                   bool cumulative_weights = false);

// Scale background to the residual energy and compose the final transient.
// xi = max(0, (sum tau_m - sum tau_o) / sum tau_b).
std::pair<Eigen::VectorXd, double> composite_background(const Eigen::VectorXd& tau_o,
                                                        const Eigen::VectorXd& tau_b_raw,
                                                        const Eigen::VectorXd& tau_m);

// ---------------------------------------------------------------------------
// Differentiable rendering on the tape.

template <class Real>
struct RenderNodes {
  int tau_o = -1;  // Bt x 1 (marched range only)
  int ohat = -1;   // 1 x D
  int w = -1;      // Bt x D
  int wrho = -1;   // Bt x D
  BinRange range;
};

template <class Real>
RenderNodes<Real> render_transient_tape(Tape<Real>& tape,
                                        const fields::SdfNetwork<Real>& sdf_net,
                                        const fields::ReflectanceNetwork<Real>& refl_net,
                                        int alpha_node, const Vec3& wall_point,
                                        const Frame& wall_frame, const BinRange& range,
                                        double bin_width_s, const SphereSampleGrid& grid,
                                        bool cumulative_weights = false) {
  RenderNodes<Real> out;
  out.range = range;
  const int bt = range.count();
  const int d = grid.directions();
  if (bt <= 0) {
    throw NlosError(ErrorCode::InvariantViolation, "empty bin range in tape renderer");
  }
  SphereSampleLayout layout = SphereSampleLayout::build(grid, wall_frame, range, bin_width_s);
  Mat3X pts = layout.sample_points(wall_point, bt);
  Mat3X vdirs = layout.view_dirs(bt);

  int d_node = sdf_net.eval_tape(tape, pts);                      // 1 x (bt*d)
  int rho_node = refl_net.eval_tape(tape, pts, vdirs);            // 1 x (bt*d) after reshape below

  // sigma = (1/alpha) * sigmoid(-d / alpha)
  int inv_alpha = tape.div(tape.constant(Real(1)), alpha_node);
  int sig_in = tape.neg(tape.broadcast_mul(inv_alpha, d_node));
  int sigma = tape.broadcast_mul(inv_alpha, tape.sigmoid(sig_in));
  int sigma_bd = tape.reshape(sigma, bt, d);

  const Real dr = static_cast<Real>(core::bin_radial_step(bin_width_s));
  int optical = tape.scale_shift(sigma_bd, dr, Real(0));
  int cum = tape.cumsum_exclusive_cols(optical);
  int transmittance = tape.exp(tape.neg(cum));
  int absorb = tape.scale_shift(tape.exp(tape.neg(optical)), Real(-1), Real(1));
  int w = tape.mul(transmittance, absorb);  // per-bin weights
  out.w = w;

  int rho_bd = tape.reshape(rho_node, bt, d);

  int w_used = w;
  if (cumulative_weights) {
    // Literal running-sum variant of the per-bin weight definition.
    int wsum = tape.cumsum_exclusive_cols(w);
    w_used = tape.add(wsum, w);  // inclusive cumulative sum
    out.w = w_used;
  }
  out.wrho = tape.mul(w_used, rho_bd);
  MatX<Real> atten = layout.atten.cast<Real>();
  int contrib = tape.mul(out.wrho, tape.constant(std::move(atten)));
  out.tau_o = tape.row_sum(contrib);    // bt x 1
  out.ohat = tape.col_sum(w_used);      // 1 x d
  return out;
}

// ---------------------------------------------------------------------------
// Directional-albedo view rendering (no attenuation factor, camera rays).

struct CameraSpec {
  enum class Model { Orthographic, Pinhole };
  Model model = Model::Orthographic;
  Vec3 position = Vec3(0, 0, 0);   // ortho: image plane center
  Vec3 forward = Vec3(0, 0, 1);
  Vec3 up = Vec3(0, 1, 0);
  double half_width = 0.5;   // meters (ortho)
  double half_height = 0.5;
  double fov_deg = 45.0;     // pinhole vertical fov
  int width = 128;
  int height = 128;

  // Wall-facing orthographic camera framing the bounds.
  static CameraSpec facing_bounds(const SceneBounds& bounds, const Vec3& view_dir,
                                  int resolution);

  // Ray through pixel center (x right, y down in the image).
  void pixel_ray(int px, int py, Vec3& origin, Vec3& dir) const;
};

// Per-pixel accumulated w * rho along camera rays through the bounds.
Eigen::MatrixXd render_view(const SdfBatchFn& sdf, const RhoBatchFn& rho, double alpha,
                            const CameraSpec& camera, const SceneBounds& bounds,
                            int ray_samples);

// Batched evaluation adapters for the neural fields.
template <class Real>
SdfBatchFn make_sdf_fn(const fields::SdfNetwork<Real>& net, const ParamVector<Real>& pv) {
  return [&net, &pv](const Mat3X& pts) {
    VecX<Real> d = net.eval(pv, pts);
    return d.template cast<double>().eval();
  };
}

template <class Real>
RhoBatchFn make_rho_fn(const fields::ReflectanceNetwork<Real>& net,
                       const ParamVector<Real>& pv) {
  return [&net, &pv](const Mat3X& pts, const Mat3X& dirs) {
    VecX<Real> r = net.eval(pv, pts, dirs);
    return r.template cast<double>().eval();
  };
}

}  // namespace nlos::render
