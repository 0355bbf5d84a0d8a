#pragma once

#include <Eigen/Dense>
#include <vector>

#include "nlos/fields.hpp"
#include "nlos/render.hpp"
#include "nlos/rng.hpp"

namespace nlos::losses {

using ad::ParamVector;
using ad::Tape;
using ad::VecX;

inline constexpr double kEntropyClampEps = 1e-7;

struct LossWeights {
  double tau = 1.0;
  double eikonal = 0.1;
  double zero_sdf = 0.01;
  double entropy = 0.001;
  double free_space = 0.01;

  void validate() const {
    if (tau < 0 || eikonal < 0 || zero_sdf < 0 || entropy < 0 || free_space < 0) {
      throw NlosError(ErrorCode::UsageError, "loss weights must be non-negative");
    }
  }
};

struct LossBreakdown {
  double tau = 0.0;
  double eikonal = 0.0;
  double zero_sdf = 0.0;
  double entropy = 0.0;
  double free_space = 0.0;
  double total = 0.0;
};

// total = lambda . components, exactly.
inline LossBreakdown total_loss(double l_tau, double l_eikonal, double l_zero,
                                double l_entropy, double l_free, const LossWeights& w) {
  w.validate();
  LossBreakdown b;
  b.tau = l_tau;
  b.eikonal = l_eikonal;
  b.zero_sdf = l_zero;
  b.entropy = l_entropy;
  b.free_space = l_free;
  b.total = w.tau * l_tau + w.eikonal * l_eikonal + w.zero_sdf * l_zero +
            w.entropy * l_entropy + w.free_space * l_free;
  return b;
}

// Mean squared transient reconstruction error over all M*B entries.
inline double loss_tau(const Eigen::MatrixXd& rendered, const Eigen::MatrixXd& measured) {
  if (rendered.rows() != measured.rows() || rendered.cols() != measured.cols()) {
    throw NlosError(ErrorCode::ShapeMismatch, "loss_tau shape mismatch");
  }
  return (measured - rendered).array().square().sum() /
         static_cast<double>(rendered.size());
}

// Binary entropy of one accumulated weight, clamped for finiteness.
inline double binary_entropy(double ohat) {
  double o = std::min(std::max(ohat, kEntropyClampEps), 1.0 - kEntropyClampEps);
  return (-o * std::log(o) - (1.0 - o) * std::log(1.0 - o)) / std::log(2.0);
}

// Mean binary entropy over accumulated weights (all wall points and
// directions of the batch).
inline double loss_entropy(const Eigen::VectorXd& ohat) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < ohat.size(); ++i) acc += binary_entropy(ohat[i]);
  return ohat.size() > 0 ? acc / ohat.size() : 0.0;
}

// N_z categorical draws proportional to the given non-negative weights.
// Empty result when the PDF has no mass (sphere is skipped).
std::vector<int> sample_categorical(const Eigen::VectorXd& weights, int n, Rng& rng);

// Surface-point candidates on one scan sphere: draw N_z directions from the
// normalized w*rho PDF and lift them to 3D points at radius r.
std::vector<Vec3> sample_surface_points(const Eigen::VectorXd& wrho_over_dirs,
                                        const render::SphereSampleGrid& grid,
                                        const Frame& wall_frame, const Vec3& wall_point,
                                        double radius, int n_z, Rng& rng);

// Mean |d| over detected surface points; points with mask 0 never enter.
// The caller fixes the normalization (M*B*N_z as printed, or masked count).
template <class Real>
double loss_zero_sdf(const fields::SdfNetwork<Real>& net, const ParamVector<Real>& pv,
                     const std::vector<Vec3>& points, double denom) {
  if (points.empty() || denom <= 0.0) return 0.0;
  Mat3X pts(3, static_cast<Eigen::Index>(points.size()));
  for (size_t i = 0; i < points.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = points[i];
  VecX<Real> d = net.eval(pv, pts);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) acc += std::abs(static_cast<double>(d[i]));
  return acc / denom;
}

// Mean (|grad d| - 1)^2 over uniform samples in the bounds.
template <class Real>
double loss_eikonal(const fields::SdfNetwork<Real>& net, const ParamVector<Real>& pv,
                    const SceneBounds& bounds, int n_samples, double fd_eps, Rng& rng) {
  if (n_samples < 1) {
    throw NlosError(ErrorCode::InvariantViolation, "n_samples must be >= 1");
  }
  Mat3X pts(3, n_samples);
  for (int i = 0; i < n_samples; ++i) {
    for (int a = 0; a < 3; ++a) pts(a, i) = rng.uniform(bounds.min[a], bounds.max[a]);
  }
  Mat3X g = net.grad_fd_batch(pv, pts, fd_eps);
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    double r = g.col(i).norm() - 1.0;
    acc += r * r;
  }
  return acc / n_samples;
}

// Mean hinge violation of the carved lower bound over free-space samples.
template <class Real>
double loss_free_space(const fields::SdfNetwork<Real>& net, const ParamVector<Real>& pv,
                       const Mat3X& free_points, const Eigen::VectorXd& lower_bounds) {
  if (free_points.cols() == 0) return 0.0;
  if (free_points.cols() != lower_bounds.size()) {
    throw NlosError(ErrorCode::ShapeMismatch, "free-space sample size mismatch");
  }
  VecX<Real> d = net.eval(pv, free_points);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    acc += std::max(0.0, lower_bounds[i] - static_cast<double>(d[i]));
  }
  return acc / static_cast<double>(free_points.cols());
}

// ---------------------------------------------------------------------------
// Tape builders (shared formulas, node form). scale multiplies the reduced
// sum, so means are expressed as scale = 1/count.

template <class Real>
int sum_squares_node(Tape<Real>& tape, int residual, double scale) {
  return tape.scale_shift(tape.sum_all(tape.square(residual)), static_cast<Real>(scale),
                          Real(0));
}

// Mean binary entropy of a node of accumulated weights.
template <class Real>
int entropy_node(Tape<Real>& tape, int ohat, double scale) {
  const Real eps = static_cast<Real>(kEntropyClampEps);
  int o = tape.clamp(ohat, eps, Real(1) - eps);
  int one_minus = tape.scale_shift(o, Real(-1), Real(1));
  int term = tape.add(tape.mul(o, tape.log(o)), tape.mul(one_minus, tape.log(one_minus)));
  return tape.scale_shift(tape.sum_all(term), static_cast<Real>(-scale / std::log(2.0)),
                          Real(0));
}

// Mean |d| over surface sample points (node), normalized by denom.
template <class Real>
int zero_sdf_node(Tape<Real>& tape, const fields::SdfNetwork<Real>& net, const Mat3X& points,
                  double denom) {
  int d = net.eval_tape(tape, points);
  return tape.scale_shift(tape.sum_all(tape.abs(d)), static_cast<Real>(1.0 / denom), Real(0));
}

// Eikonal residual via central differences of the SDF network; probe layout
// [+x | -x | +y | -y | +z | -z], each block n wide.
template <class Real>
int eikonal_node(Tape<Real>& tape, const fields::SdfNetwork<Real>& net, const Mat3X& points,
                 double fd_eps) {
  const Eigen::Index n = points.cols();
  Mat3X probes(3, 6 * n);
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = fd_eps;
    probes.middleCols(2 * a * n, n) = points.colwise() + e;
    probes.middleCols((2 * a + 1) * n, n) = points.colwise() - e;
  }
  int d = net.eval_tape(tape, probes);             // 1 x 6n
  int d_col = tape.reshape(d, static_cast<int>(6 * n), 1);
  const Real inv = static_cast<Real>(1.0 / (2.0 * fd_eps));
  int gx = tape.scale_shift(tape.sub(tape.slice_rows(d_col, 0, n),
                                     tape.slice_rows(d_col, static_cast<int>(n), n)),
                            inv, Real(0));
  int gy = tape.scale_shift(tape.sub(tape.slice_rows(d_col, static_cast<int>(2 * n), n),
                                     tape.slice_rows(d_col, static_cast<int>(3 * n), n)),
                            inv, Real(0));
  int gz = tape.scale_shift(tape.sub(tape.slice_rows(d_col, static_cast<int>(4 * n), n),
                                     tape.slice_rows(d_col, static_cast<int>(5 * n), n)),
                            inv, Real(0));
  int norm_sq = tape.add(tape.add(tape.square(gx), tape.square(gy)), tape.square(gz));
  int norm = tape.sqrt(tape.scale_shift(norm_sq, Real(1), Real(1e-12)));
  int resid = tape.scale_shift(norm, Real(1), Real(-1));
  return sum_squares_node(tape, resid, 1.0 / static_cast<double>(n));
}

// Mean max(0, b - d) over free-space samples (node).
template <class Real>
int free_space_node(Tape<Real>& tape, const fields::SdfNetwork<Real>& net,
                    const Mat3X& free_points, const Eigen::VectorXd& lower_bounds) {
  const Eigen::Index n = free_points.cols();
  int d = net.eval_tape(tape, free_points);
  int d_col = tape.reshape(d, static_cast<int>(n), 1);
  ad::MatX<Real> b = lower_bounds.cast<Real>();
  int hinge = tape.relu(tape.sub(tape.constant(std::move(b)), d_col));
  return tape.scale_shift(tape.sum_all(hinge), static_cast<Real>(1.0 / n), Real(0));
}

}  // namespace nlos::losses
