#include "nlos/carve.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "nlos/errors.hpp"

namespace nlos::carve {

std::optional<int> detect_first_photon(const Eigen::VectorXd& transient,
                                       const FirstPhotonParams& params) {
  const Eigen::Index b = transient.size();
  if (b < 2) return std::nullopt;

  // Gaussian smoothing (zero padding outside the record).
  Eigen::VectorXd smoothed = transient;
  if (params.gaussian_sigma_bins > 0.0) {
    int radius = static_cast<int>(std::ceil(3.0 * params.gaussian_sigma_bins));
    Eigen::VectorXd kernel(2 * radius + 1);
    double s2 = params.gaussian_sigma_bins * params.gaussian_sigma_bins;
    for (int k = -radius; k <= radius; ++k) {
      kernel[k + radius] = std::exp(-0.5 * k * k / s2);
    }
    kernel /= kernel.sum();
    smoothed.setZero();
    for (Eigen::Index t = 0; t < b; ++t) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        Eigen::Index src = t + k;
        if (src >= 0 && src < b) acc += kernel[k + radius] * transient[src];
      }
      smoothed[t] = acc;
    }
  }

  double peak = smoothed.maxCoeff();
  if (!(peak > 0.0)) return std::nullopt;

  // Suppress sub-floor signal.
  double floor = params.floor_fraction * peak;
  Eigen::VectorXd clean = smoothed.unaryExpr([floor](double v) { return v < floor ? 0.0 : v; });

  // Literal rule: smallest above-threshold falling edge.
  std::optional<int> literal;
  double literal_value = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t + 1 < b; ++t) {
    double diff = clean[t] - clean[t + 1];
    if (diff > params.eta && diff < literal_value) {
      literal_value = diff;
      literal = static_cast<int>(t);
    }
  }
  if (params.literal_only) return literal;

  // Earliest rise of the cleaned signal.
  std::optional<int> rise;
  for (Eigen::Index t = 0; t < b; ++t) {
    if (clean[t] > 0.0) {
      rise = static_cast<int>(t);
      break;
    }
  }

  if (!literal) return rise;
  if (rise && *literal > *rise) return rise;
  return literal;
}

CarveGrid::CarveGrid(const SceneBounds& b, int dims) : bounds(b), nx(dims), ny(dims), nz(dims) {
  if (dims < 1) {
    throw NlosError(ErrorCode::InvariantViolation, "carve grid dims must be >= 1");
  }
  votes.assign(static_cast<size_t>(voxel_count()), 0);
  labels.assign(static_cast<size_t>(voxel_count()), 1);
  lower_bound.assign(static_cast<size_t>(voxel_count()), 0.0f);
}

std::int64_t CarveGrid::count_object() const {
  std::int64_t n = 0;
  for (std::uint8_t l : labels) n += l;
  return n;
}

std::int64_t CarveGrid::count_free() const { return voxel_count() - count_object(); }

void carve(const std::vector<Detection>& detections, CarveGrid& grid) {
  grid.n_detections = static_cast<int>(detections.size());
  if (detections.empty()) {
    // Conservative: nothing carved, everything stays labeled object.
    std::fill(grid.labels.begin(), grid.labels.end(), std::uint8_t(1));
    return;
  }

  const Vec3 h = grid.voxel_size();
  for (const Detection& det : detections) {
    if (det.radius <= 0.0) continue;
    // Voxel index window covered by the sphere.
    Vec3 lo = det.wall_point.array() - det.radius;
    Vec3 hi = det.wall_point.array() + det.radius;
    int i0 = std::max(0, static_cast<int>(std::floor((lo.x() - grid.bounds.min.x()) / h.x())));
    int j0 = std::max(0, static_cast<int>(std::floor((lo.y() - grid.bounds.min.y()) / h.y())));
    int k0 = std::max(0, static_cast<int>(std::floor((lo.z() - grid.bounds.min.z()) / h.z())));
    int i1 = std::min(grid.nx - 1, static_cast<int>(std::ceil((hi.x() - grid.bounds.min.x()) / h.x())));
    int j1 = std::min(grid.ny - 1, static_cast<int>(std::ceil((hi.y() - grid.bounds.min.y()) / h.y())));
    int k1 = std::min(grid.nz - 1, static_cast<int>(std::ceil((hi.z() - grid.bounds.min.z()) / h.z())));
    const double r2 = det.radius * det.radius;
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        for (int k = k0; k <= k1; ++k) {
          if ((grid.voxel_center(i, j, k) - det.wall_point).squaredNorm() < r2) {
            ++grid.votes[static_cast<size_t>(grid.index(i, j, k))];
          }
        }
      }
    }
  }

  // Complement counts: a voxel outside (nearly) every carving sphere is
  // consistent with the object hypothesis. The 0.99-of-max rule on these
  // counts keeps the partition robust to a stray detection.
  const std::uint32_t n = static_cast<std::uint32_t>(detections.size());
  std::uint32_t max_outside = 0;
  for (std::uint32_t v : grid.votes) max_outside = std::max(max_outside, n - v);
  const double threshold = 0.99 * static_cast<double>(max_outside);
  for (size_t idx = 0; idx < grid.labels.size(); ++idx) {
    double outside = static_cast<double>(n - grid.votes[idx]);
    grid.labels[idx] = outside > threshold ? 1 : 0;
  }
}

namespace {

// 1D lower-envelope squared distance transform (Felzenszwalb-Huttenlocher)
// with grid spacing h. f holds squared distances; positions are i*h.
// Unseeded cells must carry a large finite sentinel, not infinity.
void edt_1d(std::vector<double>& f, double h, std::vector<double>& scratch_d,
            std::vector<int>& scratch_v, std::vector<double>& scratch_z) {
  const int n = static_cast<int>(f.size());
  if (n == 0) return;
  std::vector<double>& d = scratch_d;
  std::vector<int>& v = scratch_v;
  std::vector<double>& z = scratch_z;
  d.resize(n);
  v.resize(n);
  z.resize(n + 1);

  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto sq = [](double x) { return x * x; };
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      double xq = q * h, xv = v[k] * h;
      s = (f[q] + sq(xq) - f[v[k]] - sq(xv)) / (2 * xq - 2 * xv);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // New parabola dominates everything so far.
      v[k] = q;
      z[k] = -std::numeric_limits<double>::infinity();
      z[k + 1] = std::numeric_limits<double>::infinity();
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = std::numeric_limits<double>::infinity();
    }
  }

  k = 0;
  for (int q = 0; q < n; ++q) {
    double xq = q * h;
    while (z[k + 1] < xq) ++k;
    double xv = v[k] * h;
    d[q] = sq(xq - xv) + f[v[k]];
  }
  f = d;
}

}  // namespace

void lower_bound_field(CarveGrid& grid) {
  const std::int64_t total = grid.voxel_count();
  const Vec3 h = grid.voxel_size();
  // Finite sentinel well above any reachable squared distance.
  const double big = grid.bounds.extent().squaredNorm() * 16.0 + 1.0;

  bool any_object = false;
  std::vector<double> dist(static_cast<size_t>(total));
  for (std::int64_t i = 0; i < total; ++i) {
    bool obj = grid.labels[static_cast<size_t>(i)] != 0;
    any_object |= obj;
    dist[static_cast<size_t>(i)] = obj ? 0.0 : big;
  }
  if (!any_object) {
    std::fill(grid.lower_bound.begin(), grid.lower_bound.end(), 0.0f);
    return;
  }

  std::vector<double> line, sd, sz;
  std::vector<int> sv;

  // Pass along z (contiguous), then y, then x.
  line.resize(static_cast<size_t>(grid.nz));
  for (int i = 0; i < grid.nx; ++i) {
    for (int j = 0; j < grid.ny; ++j) {
      for (int k = 0; k < grid.nz; ++k) line[static_cast<size_t>(k)] = dist[grid.index(i, j, k)];
      edt_1d(line, h.z(), sd, sv, sz);
      for (int k = 0; k < grid.nz; ++k) dist[grid.index(i, j, k)] = line[static_cast<size_t>(k)];
    }
  }
  line.resize(static_cast<size_t>(grid.ny));
  for (int i = 0; i < grid.nx; ++i) {
    for (int k = 0; k < grid.nz; ++k) {
      for (int j = 0; j < grid.ny; ++j) line[static_cast<size_t>(j)] = dist[grid.index(i, j, k)];
      edt_1d(line, h.y(), sd, sv, sz);
      for (int j = 0; j < grid.ny; ++j) dist[grid.index(i, j, k)] = line[static_cast<size_t>(j)];
    }
  }
  line.resize(static_cast<size_t>(grid.nx));
  for (int j = 0; j < grid.ny; ++j) {
    for (int k = 0; k < grid.nz; ++k) {
      for (int i = 0; i < grid.nx; ++i) line[static_cast<size_t>(i)] = dist[grid.index(i, j, k)];
      edt_1d(line, h.x(), sd, sv, sz);
      for (int i = 0; i < grid.nx; ++i) dist[grid.index(i, j, k)] = line[static_cast<size_t>(i)];
    }
  }

  const double half_diag = 0.5 * grid.voxel_diagonal();
  for (std::int64_t i = 0; i < total; ++i) {
    if (grid.labels[static_cast<size_t>(i)] != 0) {
      grid.lower_bound[static_cast<size_t>(i)] = 0.0f;
    } else {
      double b = std::sqrt(dist[static_cast<size_t>(i)]) - half_diag;
      grid.lower_bound[static_cast<size_t>(i)] = static_cast<float>(std::max(0.0, b));
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr char kMagic[8] = {'N', 'L', 'C', 'A', 'R', 'V', 'E', '1'};
}

void save_carve_grid(const std::string& path, const CarveGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  std::int32_t dims[3] = {grid.nx, grid.ny, grid.nz};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  double b[6] = {grid.bounds.min.x(), grid.bounds.min.y(), grid.bounds.min.z(),
                 grid.bounds.max.x(), grid.bounds.max.y(), grid.bounds.max.z()};
  out.write(reinterpret_cast<const char*>(b), sizeof(b));
  std::int32_t ndet = grid.n_detections;
  out.write(reinterpret_cast<const char*>(&ndet), sizeof(ndet));
  out.write(reinterpret_cast<const char*>(grid.labels.data()),
            static_cast<std::streamsize>(grid.labels.size()));
  out.write(reinterpret_cast<const char*>(grid.lower_bound.data()),
            static_cast<std::streamsize>(grid.lower_bound.size() * sizeof(float)));
  if (!out) throw NlosError(ErrorCode::IoError, "write failed: " + path);
}

CarveGrid load_carve_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, 7) != 0) {
    throw NlosError(ErrorCode::MalformedHeader, "not a carve grid file: " + path);
  }
  if (magic[7] != '1') {
    throw NlosError(ErrorCode::UnsupportedVersion, "unsupported carve grid version");
  }
  std::int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  double b[6];
  in.read(reinterpret_cast<char*>(b), sizeof(b));
  std::int32_t ndet = 0;
  in.read(reinterpret_cast<char*>(&ndet), sizeof(ndet));
  if (!in || dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    throw NlosError(ErrorCode::MalformedHeader, "bad carve grid header: " + path);
  }
  CarveGrid grid;
  grid.bounds = SceneBounds(Vec3(b[0], b[1], b[2]), Vec3(b[3], b[4], b[5]));
  grid.nx = dims[0];
  grid.ny = dims[1];
  grid.nz = dims[2];
  grid.n_detections = ndet;
  const std::int64_t total = grid.voxel_count();
  grid.votes.assign(static_cast<size_t>(total), 0);  // votes are not persisted
  grid.labels.resize(static_cast<size_t>(total));
  grid.lower_bound.resize(static_cast<size_t>(total));
  in.read(reinterpret_cast<char*>(grid.labels.data()), static_cast<std::streamsize>(total));
  in.read(reinterpret_cast<char*>(grid.lower_bound.data()),
          static_cast<std::streamsize>(total * sizeof(float)));
  if (!in) {
    throw NlosError(ErrorCode::PayloadSizeMismatch, "truncated carve grid: " + path);
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw NlosError(ErrorCode::PayloadSizeMismatch, "trailing bytes in carve grid: " + path);
  }
  return grid;
}

}  // namespace nlos::carve
