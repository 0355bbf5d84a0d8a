#include "nlos/losses.hpp"

namespace nlos::losses {

std::vector<int> sample_categorical(const Eigen::VectorXd& weights, int n, Rng& rng) {
  std::vector<int> out;
  if (n <= 0 || weights.size() == 0) return out;
  if ((weights.array() < 0.0).any()) {
    throw NlosError(ErrorCode::InvariantViolation, "categorical weights must be non-negative");
  }
  double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total)) return out;

  Eigen::VectorXd cdf(weights.size());
  double run = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    run += weights[i];
    cdf[i] = run;
  }
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    double u = rng.uniform() * total;
    // First index with cdf > u.
    Eigen::Index lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
      Eigen::Index mid = (lo + hi) / 2;
      if (cdf[mid] > u) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    out.push_back(static_cast<int>(lo));
  }
  return out;
}

std::vector<Vec3> sample_surface_points(const Eigen::VectorXd& wrho_over_dirs,
                                        const render::SphereSampleGrid& grid,
                                        const Frame& wall_frame, const Vec3& wall_point,
                                        double radius, int n_z, Rng& rng) {
  if (wrho_over_dirs.size() != grid.directions()) {
    throw NlosError(ErrorCode::ShapeMismatch, "PDF size must match direction count");
  }
  std::vector<int> picks = sample_categorical(wrho_over_dirs, n_z, rng);
  std::vector<Vec3> points;
  points.reserve(picks.size());
  for (int k : picks) {
    int i_theta = k / grid.n_phi;
    int i_phi = k % grid.n_phi;
    points.push_back(render::sample_sphere_point(wall_point, radius, grid.theta[i_theta],
                                                 grid.phi[i_phi], wall_frame));
  }
  return points;
}

}  // namespace nlos::losses
