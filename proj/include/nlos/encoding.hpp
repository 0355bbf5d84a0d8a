#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "nlos/errors.hpp"

namespace nlos::fields {

// Frequency counts for the sinusoidal input encodings.
struct EncodingSpec {
  int l_pos = 6;
  int l_dir = 4;
  int l_time = 4;

  static int encoded_width(int k, int l) { return k + 2 * k * l; }
};

// gamma(x) = (x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x),
// cos(2^{L-1} pi x)), applied per coordinate. Input k x N, output (k+2kL) x N.
inline Eigen::MatrixXd positional_encode(const Eigen::MatrixXd& x, int l_freq) {
  if (l_freq < 0) {
    throw NlosError(ErrorCode::InvariantViolation, "encoding frequency count must be >= 0");
  }
  const Eigen::Index k = x.rows();
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd out(EncodingSpec::encoded_width(static_cast<int>(k), l_freq), n);
  out.topRows(k) = x;
  double freq = M_PI;
  for (int l = 0; l < l_freq; ++l) {
    Eigen::MatrixXd scaled = freq * x;
    out.middleRows(k + 2 * l * k, k) = scaled.array().sin();
    out.middleRows(k + (2 * l + 1) * k, k) = scaled.array().cos();
    freq *= 2.0;
  }
  return out;
}

}  // namespace nlos::fields
