#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "nlos/core.hpp"
#include "nlos/geometry.hpp"
#include "nlos/rng.hpp"

namespace nlos::sim {

struct Primitive {
  enum class Kind { Sphere, Box, Rect };
  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();   // sphere/box center, rect anchor
  double radius = 0.0;          // sphere
  Vec3 half_extents = Vec3::Zero();  // axis-aligned box
  Vec3 normal = Vec3(0, 0, 1);  // rect
  double half_u = 0.0, half_v = 0.0;  // rect extents
  double albedo = 1.0;
  bool is_floor = false;
};

// Analytic test scene: primitives with constant Lambertian albedo plus the
// acquisition geometry used to synthesize transients from it.
struct SceneSpec {
  SceneBounds bounds{Vec3(-0.4, -0.4, 0.1), Vec3(0.4, 0.4, 0.9)};
  core::WallGrid wall;
  int bins = 128;
  double bin_width_ps = 70.0;
  double background_factor = 0.0;  // floor contribution scale
  double noise_level = 0.0;
  int quadrature_theta = 256;
  int quadrature_phi = 256;
  std::vector<Primitive> primitives;

  bool has_floor() const {
    for (const Primitive& p : primitives) {
      if (p.is_floor) return true;
    }
    return false;
  }
};

double primitive_sdf(const Primitive& prim, const Vec3& p);

// Exact union SDF over all primitives (positive outside, negative inside).
double analytic_sdf(const SceneSpec& scene, const Vec3& p);

// Exact first intersection of a ray with the scene; nullopt on miss.
struct Hit {
  double t = 0.0;
  int primitive = -1;
};
std::optional<Hit> analytic_first_hit(const SceneSpec& scene, const Vec3& origin,
                                      const Vec3& dir, double t_max,
                                      bool exclude_floor = false);

// Outward surface normal from the union SDF (central differences).
Vec3 analytic_normal(const SceneSpec& scene, const Vec3& p);

// Hard-surface forward simulation: for every wall point, integrate
// albedo * A(r, theta) over the visible surface on a dense angular grid,
// depositing each directional return into the bin containing its range.
// object/floor components are kept separate for oracle checks.
struct SimulationResult {
  core::TransientVolume total;        // object + background_factor * floor
  Eigen::MatrixXf object_component;
  Eigen::MatrixXf floor_component;    // unscaled floor return
  int clipped_bins = 0;               // directional returns beyond the record
};

SimulationResult simulate_transients(const SceneSpec& scene);

// Additive smooth floor injection on an existing volume; the decomposition
// sums to the output exactly.
struct BackgroundInjection {
  core::TransientVolume combined;
  Eigen::MatrixXf background_component;  // scaled floor contribution
  double factor = 0.0;
};
BackgroundInjection add_background(const core::TransientVolume& clean,
                                   const SceneSpec& scene, double factor);

// Poisson-style perturbation: tau' = level * Poisson(tau / level) per entry.
// Mean-preserving, non-negative; level 0 is the identity.
core::TransientVolume add_noise(const core::TransientVolume& volume, std::uint64_t seed,
                                double level);

// JSON scene file round trip.
SceneSpec load_scene(const std::string& path);
void save_scene(const std::string& path, const SceneSpec& scene);

}  // namespace nlos::sim
