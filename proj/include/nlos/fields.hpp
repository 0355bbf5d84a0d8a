#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "nlos/encoding.hpp"
#include "nlos/errors.hpp"
#include "nlos/geometry.hpp"
#include "nlos/rng.hpp"
#include "nlos/tape.hpp"

namespace nlos::fields {

using ad::MatX;
using ad::ParamVector;
using ad::Tape;
using ad::VecX;

// Smooth rectifier used for hidden activations; close to relu but keeps
// finite-difference gradient checks clean.
inline constexpr double kHiddenSoftplusBeta = 100.0;

struct MlpSpec {
  int input_dim = 0;
  int hidden_width = 64;
  int hidden_layers = 3;
  int output_dim = 1;
};

// Plain fully connected network whose weights live in a shared ParamVector.
template <class Real>
class Mlp {
public:
  Mlp() = default;
  Mlp(MlpSpec spec) : spec_(spec) {}

  void register_params(ParamVector<Real>& pv, const std::string& prefix) {
    weight_entries_.clear();
    bias_entries_.clear();
    int in = spec_.input_dim;
    for (int l = 0; l < spec_.hidden_layers; ++l) {
      weight_entries_.push_back(
          pv.add(prefix + ".h" + std::to_string(l) + ".w", spec_.hidden_width, in));
      bias_entries_.push_back(
          pv.add(prefix + ".h" + std::to_string(l) + ".b", spec_.hidden_width, 1));
      in = spec_.hidden_width;
    }
    weight_entries_.push_back(pv.add(prefix + ".out.w", spec_.output_dim, in));
    bias_entries_.push_back(pv.add(prefix + ".out.b", spec_.output_dim, 1));
  }

  // He-style random init; callers may overwrite (geometric init).
  void random_init(ParamVector<Real>& pv, Rng& rng) const {
    for (size_t l = 0; l < weight_entries_.size(); ++l) {
      auto w = pv.view(weight_entries_[l]);
      double stddev = std::sqrt(2.0 / static_cast<double>(w.cols()));
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
          w(i, j) = static_cast<Real>(rng.normal(0.0, stddev));
        }
      }
      pv.view(bias_entries_[l]).setZero();
    }
  }

  MatX<Real> forward(const ParamVector<Real>& pv, const MatX<Real>& x) const {
    MatX<Real> h = x;
    for (size_t l = 0; l + 1 < weight_entries_.size(); ++l) {
      MatX<Real> z;
      z.noalias() = pv.view(weight_entries_[l]) * h;
      z.colwise() += pv.view(bias_entries_[l]).col(0);
      h = softplus_fast(z);
    }
    MatX<Real> out;
    out.noalias() = pv.view(weight_entries_.back()) * h;
    out.colwise() += pv.view(bias_entries_.back()).col(0);
    return out;
  }

  int forward_tape(Tape<Real>& tape, int x_node) const {
    int h = x_node;
    for (size_t l = 0; l + 1 < weight_entries_.size(); ++l) {
      int z = tape.affine(tape.param(weight_entries_[l]), h, tape.param(bias_entries_[l]));
      h = tape.softplus(z, static_cast<Real>(kHiddenSoftplusBeta));
    }
    return tape.affine(tape.param(weight_entries_.back()), h,
                       tape.param(bias_entries_.back()));
  }

  const MlpSpec& spec() const { return spec_; }
  const std::vector<int>& weight_entries() const { return weight_entries_; }
  const std::vector<int>& bias_entries() const { return bias_entries_; }

private:
  static MatX<Real> softplus_fast(const MatX<Real>& z) {
    const Real beta = static_cast<Real>(kHiddenSoftplusBeta);
    return z.unaryExpr([beta](Real v) {
      Real s = beta * v;
      if (s > Real(30)) return v;
      return static_cast<Real>(std::log1p(std::exp(s)) / beta);
    });
  }

  MlpSpec spec_;
  std::vector<int> weight_entries_;
  std::vector<int> bias_entries_;
};

// Maps world coordinates into the normalized [-1,1]^3 frame shared by all
// field networks.
struct CoordinateMap {
  Vec3 center = Vec3::Zero();
  double half_scale = 1.0;

  static CoordinateMap from_bounds(const SceneBounds& b) {
    return CoordinateMap{b.center(), b.half_scale()};
  }

  Eigen::MatrixXd normalize(const Mat3X& world) const {
    return (world.colwise() - center) / half_scale;
  }
};

// ---------------------------------------------------------------------------
// Signed distance field d(p), meters in world space.

template <class Real>
class SdfNetwork {
public:
  SdfNetwork() = default;
  SdfNetwork(const SceneBounds& bounds, int l_pos, int hidden_width, int hidden_layers)
      : map_(CoordinateMap::from_bounds(bounds)), l_pos_(l_pos) {
    MlpSpec spec;
    spec.input_dim = EncodingSpec::encoded_width(3, l_pos);
    spec.hidden_width = hidden_width;
    spec.hidden_layers = hidden_layers;
    spec.output_dim = 1;
    mlp_ = Mlp<Real>(spec);
  }

  void register_params(ParamVector<Real>& pv) { mlp_.register_params(pv, "sdf"); }

  MatX<Real> encode(const Mat3X& world) const {
    return positional_encode(map_.normalize(world), l_pos_).cast<Real>();
  }

  // d at a batch of world points; 1 x N in meters.
  VecX<Real> eval(const ParamVector<Real>& pv, const Mat3X& world) const {
    MatX<Real> out = mlp_.forward(pv, encode(world));
    return out.transpose() * static_cast<Real>(map_.half_scale);
  }

  double eval_point(const ParamVector<Real>& pv, const Vec3& p) const {
    Mat3X m(3, 1);
    m.col(0) = p;
    return static_cast<double>(eval(pv, m)[0]);
  }

  // 1 x N tape node of world-space signed distances.
  int eval_tape(Tape<Real>& tape, const Mat3X& world) const {
    int x = tape.constant(encode(world));
    int raw = mlp_.forward_tape(tape, x);
    return tape.scale_shift(raw, static_cast<Real>(map_.half_scale), Real(0));
  }

  // Central-difference spatial gradient, one point.
  Vec3 grad_fd(const ParamVector<Real>& pv, const Vec3& p, double eps) const {
    if (eps <= 0.0) {
      throw NlosError(ErrorCode::InvariantViolation, "fd epsilon must be positive");
    }
    Mat3X probes(3, 6);
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = eps;
      probes.col(2 * a) = p + e;
      probes.col(2 * a + 1) = p - e;
    }
    VecX<Real> d = eval(pv, probes);
    return Vec3((d[0] - d[1]) / (2 * eps), (d[2] - d[3]) / (2 * eps),
                (d[4] - d[5]) / (2 * eps));
  }

  // Batched spatial gradients: 3 x N.
  Mat3X grad_fd_batch(const ParamVector<Real>& pv, const Mat3X& pts, double eps) const {
    const Eigen::Index n = pts.cols();
    Mat3X probes(3, 6 * n);
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = eps;
      probes.middleCols(2 * a * n, n) = pts.colwise() + e;
      probes.middleCols((2 * a + 1) * n, n) = pts.colwise() - e;
    }
    VecX<Real> d = eval(pv, probes);
    Mat3X g(3, n);
    for (int a = 0; a < 3; ++a) {
      for (Eigen::Index i = 0; i < n; ++i) {
        g(a, i) = (static_cast<double>(d[2 * a * n + i]) -
                   static_cast<double>(d[(2 * a + 1) * n + i])) /
                  (2 * eps);
      }
    }
    return g;
  }

  const Mlp<Real>& mlp() const { return mlp_; }
  const CoordinateMap& coordinate_map() const { return map_; }
  int l_pos() const { return l_pos_; }

private:
  Mlp<Real> mlp_;
  CoordinateMap map_;
  int l_pos_ = 6;
};

// ---------------------------------------------------------------------------
// View-dependent reflectance rho(p, v) >= 0 via softplus output map.

inline std::atomic<long>& reflectance_normalized_warnings() {
  static std::atomic<long> count{0};
  return count;
}

template <class Real>
class ReflectanceNetwork {
public:
  ReflectanceNetwork() = default;
  ReflectanceNetwork(const SceneBounds& bounds, int l_pos, int l_dir, int hidden_width,
                     int hidden_layers)
      : map_(CoordinateMap::from_bounds(bounds)), l_pos_(l_pos), l_dir_(l_dir) {
    MlpSpec spec;
    spec.input_dim =
        EncodingSpec::encoded_width(3, l_pos) + EncodingSpec::encoded_width(3, l_dir);
    spec.hidden_width = hidden_width;
    spec.hidden_layers = hidden_layers;
    spec.output_dim = 1;
    mlp_ = Mlp<Real>(spec);
  }

  void register_params(ParamVector<Real>& pv) { mlp_.register_params(pv, "refl"); }

  MatX<Real> encode(const Mat3X& world, const Mat3X& dirs) const {
    Mat3X unit = dirs;
    for (Eigen::Index i = 0; i < unit.cols(); ++i) {
      double norm = unit.col(i).norm();
      if (std::abs(norm - 1.0) > 1e-6) {
        reflectance_normalized_warnings()++;
        unit.col(i) /= norm;
      }
    }
    Eigen::MatrixXd enc_p = positional_encode(map_.normalize(world), l_pos_);
    Eigen::MatrixXd enc_v = positional_encode(unit, l_dir_);
    MatX<Real> x(enc_p.rows() + enc_v.rows(), world.cols());
    x.topRows(enc_p.rows()) = enc_p.cast<Real>();
    x.bottomRows(enc_v.rows()) = enc_v.cast<Real>();
    return x;
  }

  VecX<Real> eval(const ParamVector<Real>& pv, const Mat3X& world, const Mat3X& dirs) const {
    MatX<Real> out = mlp_.forward(pv, encode(world, dirs));
    return out.transpose().unaryExpr([](Real v) { return softplus1(v); });
  }

  int eval_tape(Tape<Real>& tape, const Mat3X& world, const Mat3X& dirs) const {
    int x = tape.constant(encode(world, dirs));
    int raw = mlp_.forward_tape(tape, x);
    return tape.softplus(raw, Real(1));
  }

  static Real softplus1(Real v) {
    if (v > Real(30)) return v;
    return static_cast<Real>(std::log1p(std::exp(static_cast<double>(v))));
  }

  const Mlp<Real>& mlp() const { return mlp_; }

private:
  Mlp<Real> mlp_;
  CoordinateMap map_;
  int l_pos_ = 6;
  int l_dir_ = 4;
};

// ---------------------------------------------------------------------------
// Background transient tau_b(p', t_normalized) >= 0.

template <class Real>
class BackgroundNetwork {
public:
  BackgroundNetwork() = default;
  BackgroundNetwork(const SceneBounds& bounds, int l_pos, int l_time, int hidden_width,
                    int hidden_layers)
      : map_(CoordinateMap::from_bounds(bounds)), l_pos_(l_pos), l_time_(l_time) {
    MlpSpec spec;
    spec.input_dim =
        EncodingSpec::encoded_width(3, l_pos) + EncodingSpec::encoded_width(1, l_time);
    spec.hidden_width = hidden_width;
    spec.hidden_layers = hidden_layers;
    spec.output_dim = 1;
    mlp_ = Mlp<Real>(spec);
  }

  void register_params(ParamVector<Real>& pv) { mlp_.register_params(pv, "bg"); }

  // One wall point, all normalized bin times: input width x B.
  MatX<Real> encode(const Vec3& wall_point, const Eigen::VectorXd& t_normalized) const {
    Mat3X p(3, t_normalized.size());
    p.colwise() = wall_point;
    Eigen::MatrixXd enc_p = positional_encode(map_.normalize(p), l_pos_);
    Eigen::MatrixXd enc_t =
        positional_encode(Eigen::MatrixXd(t_normalized.transpose()), l_time_);
    MatX<Real> x(enc_p.rows() + enc_t.rows(), t_normalized.size());
    x.topRows(enc_p.rows()) = enc_p.cast<Real>();
    x.bottomRows(enc_t.rows()) = enc_t.cast<Real>();
    return x;
  }

  VecX<Real> eval(const ParamVector<Real>& pv, const Vec3& wall_point,
                  const Eigen::VectorXd& t_normalized) const {
    MatX<Real> out = mlp_.forward(pv, encode(wall_point, t_normalized));
    return out.transpose().unaryExpr(
        [](Real v) { return ReflectanceNetwork<Real>::softplus1(v); });
  }

  // B x 1 node of non-negative background values.
  int eval_tape(Tape<Real>& tape, const Vec3& wall_point,
                const Eigen::VectorXd& t_normalized) const {
    int x = tape.constant(encode(wall_point, t_normalized));
    int raw = mlp_.forward_tape(tape, x);
    int pos = tape.softplus(raw, Real(1));
    return tape.reshape(pos, static_cast<int>(t_normalized.size()), 1);
  }

  const Mlp<Real>& mlp() const { return mlp_; }

private:
  Mlp<Real> mlp_;
  CoordinateMap map_;
  int l_pos_ = 6;
  int l_time_ = 4;
};

// ---------------------------------------------------------------------------
// Geometric initialization: start d close to the sphere |p - center| - r0.

struct GeometricInitReport {
  double mad_closed_form = 0.0;  // world meters, after the closed-form scheme
  double mad_final = 0.0;
  int fit_steps = 0;
};

// Closed-form sphere-like weight scheme. Raw xyz rows drive the first layer;
// encoded rows start at zero so the classic initialization applies.
template <class Real>
GeometricInitReport geometric_init(SdfNetwork<Real>& net, ParamVector<Real>& pv,
                                   double r0_world, Rng rng, double target_mad_fraction = 0.10,
                                   int max_fit_steps = 2000) {
  if (r0_world <= 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "geometric init radius must be positive");
  }
  const CoordinateMap& map = net.coordinate_map();
  const double r0 = r0_world / map.half_scale;  // normalized units
  const Mlp<Real>& mlp = net.mlp();
  const auto& weights = mlp.weight_entries();
  const auto& biases = mlp.bias_entries();

  for (size_t l = 0; l + 1 < weights.size(); ++l) {
    auto w = pv.view(weights[l]);
    double stddev = std::sqrt(2.0) / std::sqrt(static_cast<double>(w.rows()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, j) = static_cast<Real>(rng.normal(0.0, stddev));
      }
    }
    if (l == 0) {
      // Encoding rows beyond raw xyz start silent.
      w.rightCols(w.cols() - 3).setZero();
    }
    pv.view(biases[l]).setZero();
  }
  {
    auto w = pv.view(weights.back());
    double mean = std::sqrt(M_PI) / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, j) = static_cast<Real>(rng.normal(mean, 1e-4));
      }
    }
    auto b = pv.view(biases.back());
    b(0, 0) = static_cast<Real>(-r0);
  }

  // Sample MAD against the analytic sphere in world units.
  auto measure_mad = [&](Rng probe_rng) {
    const int n = 1000;
    Mat3X pts(3, n);
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        pts(a, i) = map.center[a] + map.half_scale * probe_rng.uniform(-1.0, 1.0);
      }
    }
    VecX<Real> d = net.eval(pv, pts);
    double mad = 0.0;
    for (int i = 0; i < n; ++i) {
      double truth = (pts.col(i) - map.center).norm() - r0_world;
      mad += std::abs(static_cast<double>(d[i]) - truth);
    }
    return mad / n;
  };

  GeometricInitReport report;
  report.mad_closed_form = measure_mad(rng.fork(1));
  report.mad_final = report.mad_closed_form;

  // Short self-supervised fit toward the analytic sphere when the closed
  // form lands outside tolerance (positional encoding shifts it for deep
  // or narrow networks).
  if (report.mad_closed_form > target_mad_fraction * r0_world) {
    std::vector<double> m(pv.raw().size(), 0.0), v(pv.raw().size(), 0.0);
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Rng fit_rng = rng.fork(2);
    int step = 0;
    for (; step < max_fit_steps; ++step) {
      const int batch = 512;
      Mat3X pts(3, batch);
      for (int i = 0; i < batch; ++i) {
        for (int a = 0; a < 3; ++a) {
          pts(a, i) = map.center[a] + map.half_scale * fit_rng.uniform(-1.0, 1.0);
        }
      }
      Tape<Real> tape(&pv);
      int d_node = net.eval_tape(tape, pts);
      MatX<Real> target(1, batch);
      for (int i = 0; i < batch; ++i) {
        target(0, i) = static_cast<Real>((pts.col(i) - map.center).norm() - r0_world);
      }
      int resid = tape.sub(d_node, tape.constant(std::move(target)));
      int loss = tape.scale_shift(tape.sum_all(tape.square(resid)), Real(1.0 / batch), Real(0));
      VecX<Real> g = tape.backward(loss);
      double t = step + 1;
      for (std::int64_t i = 0; i < pv.size(); ++i) {
        double gi = static_cast<double>(g[i]);
        m[i] = b1 * m[i] + (1 - b1) * gi;
        v[i] = b2 * v[i] + (1 - b2) * gi * gi;
        double mh = m[i] / (1 - std::pow(b1, t));
        double vh = v[i] / (1 - std::pow(b2, t));
        pv.raw()[i] -= static_cast<Real>(lr * mh / (std::sqrt(vh) + eps));
      }
      if (step % 100 == 99) {
        report.mad_final = measure_mad(rng.fork(1));
        if (report.mad_final < target_mad_fraction * r0_world) {
          ++step;
          break;
        }
      }
    }
    report.fit_steps = step;
    report.mad_final = measure_mad(rng.fork(1));
  }
  return report;
}

}  // namespace nlos::fields
