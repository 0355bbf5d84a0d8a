#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nlos/errors.hpp"
#include "nlos/tape.hpp"

namespace nlos::train {

using ad::ParamVector;
using ad::VecX;

// Adam with bias correction. Moments are kept in double regardless of the
// parameter precision.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(std::int64_t n) {
    m.assign(static_cast<size_t>(n), 0.0);
    v.assign(static_cast<size_t>(n), 0.0);
    step = 0;
  }
};

// One update over the full parameter vector with per-coordinate learning
// rates. Returns false (step skipped, counter unchanged) on non-finite
// gradients.
template <class Real>
bool adam_step(AdamState& state, ParamVector<Real>& params, const VecX<Real>& grads,
               const std::vector<double>& lr_per_coord) {
  const std::int64_t n = params.size();
  if (grads.size() != n || static_cast<std::int64_t>(lr_per_coord.size()) != n ||
      static_cast<std::int64_t>(state.m.size()) != n) {
    throw NlosError(ErrorCode::ShapeMismatch, "adam_step size mismatch");
  }
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) return false;
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::int64_t i = 0; i < n; ++i) {
    double g = static_cast<double>(grads[i]);
    size_t si = static_cast<size_t>(i);
    state.m[si] = state.beta1 * state.m[si] + (1.0 - state.beta1) * g;
    state.v[si] = state.beta2 * state.v[si] + (1.0 - state.beta2) * g * g;
    double mh = state.m[si] / bc1;
    double vh = state.v[si] / bc2;
    double upd = lr_per_coord[si] * mh / (std::sqrt(vh) + state.eps);
    params.raw()[si] -= static_cast<Real>(upd);
  }
  return true;
}

// Global-norm gradient clipping, in place.
template <class Real>
double clip_gradient_norm(VecX<Real>& grads, double max_norm) {
  double norm_sq = 0.0;
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    double g = static_cast<double>(grads[i]);
    norm_sq += g * g;
  }
  double norm = std::sqrt(norm_sq);
  if (max_norm > 0.0 && norm > max_norm) {
    grads *= static_cast<Real>(max_norm / norm);
  }
  return norm;
}

}  // namespace nlos::train
