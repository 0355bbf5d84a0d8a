#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlos/geometry.hpp"

namespace nlos::carve {

// Detection tuning. eta is an absolute difference threshold; callers usually
// derive it as a fraction of the transient peak.
struct FirstPhotonParams {
  double gaussian_sigma_bins = 2.0;
  double floor_fraction = 0.1;
  double eta = 0.0;
  bool literal_only = false;  // keep the falling-edge rule without fallback
};

// Bin of the first-returning photon, or nullopt when the transient carries
// no detectable rise. The literal rule is argmin_{t in S} tau(t) - tau(t+1)
// with S = { t : tau(t) - tau(t+1) > eta }; the robust path falls back to the
// earliest smoothed rise when the literal rule misses or fires late.
std::optional<int> detect_first_photon(const Eigen::VectorXd& transient,
                                       const FirstPhotonParams& params);

struct Detection {
  Vec3 wall_point;
  double radius;
};

// Voxel grid over the scene bounds with per-voxel carving votes, an
// object/free partition, and the free-space lower-bound field.
struct CarveGrid {
  SceneBounds bounds;
  int nx = 0, ny = 0, nz = 0;
  std::vector<std::uint32_t> votes;   // carving-sphere membership counts
  std::vector<std::uint8_t> labels;   // 1 = object, 0 = free
  std::vector<float> lower_bound;     // b(p) in meters, 0 on object voxels
  int n_detections = 0;

  CarveGrid() = default;
  CarveGrid(const SceneBounds& b, int dims);

  std::int64_t index(int i, int j, int k) const {
    return (static_cast<std::int64_t>(i) * ny + j) * nz + k;
  }
  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(nx) * ny * nz;
  }
  Vec3 voxel_size() const {
    return Vec3(bounds.extent().x() / nx, bounds.extent().y() / ny,
                bounds.extent().z() / nz);
  }
  double voxel_diagonal() const { return voxel_size().norm(); }
  Vec3 voxel_center(int i, int j, int k) const {
    Vec3 h = voxel_size();
    return bounds.min + Vec3((i + 0.5) * h.x(), (j + 0.5) * h.y(), (k + 0.5) * h.z());
  }

  std::int64_t count_object() const;
  std::int64_t count_free() const;
};

// Accumulate carving votes (voxel centers inside each detection's empty
// sphere) and label the grid. The robust partition keeps a voxel as object
// unless at least 1% of the detections carve it, which is the complement
// form of the 0.99-of-max vote rule.
void carve(const std::vector<Detection>& detections, CarveGrid& grid);

// Exact euclidean distance to the nearest object voxel center minus half the
// voxel diagonal, floored at zero. Empty object set gives b = 0 everywhere.
void lower_bound_field(CarveGrid& grid);

// Versioned binary round trip.
void save_carve_grid(const std::string& path, const CarveGrid& grid);
CarveGrid load_carve_grid(const std::string& path);

}  // namespace nlos::carve
