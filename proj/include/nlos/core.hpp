#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlos/geometry.hpp"

namespace nlos::core {

// Scan positions on the relay wall. Positions are stored explicitly so that
// irregular scan patterns survive a file round trip.
struct WallGrid {
  std::vector<Vec3> positions;
  Vec3 normal = Vec3(0, 0, 1);
  int rows = 0;
  int cols = 0;

  WallGrid() = default;
  WallGrid(std::vector<Vec3> pos, const Vec3& n, int r, int c);

  // Regular grid on the z=0 plane spanning [min_u,max_u] x [min_v,max_v].
  static WallGrid regular(int rows, int cols, double min_u, double max_u,
                          double min_v, double max_v);

  int count() const { return static_cast<int>(positions.size()); }
  const Vec3& position(int row, int col) const { return positions[row * cols + col]; }

  // If the grid is exactly origin + i*du + j*dv, return (origin, du, dv).
  std::optional<std::array<Vec3, 3>> regular_basis() const;
};

// Measured (or simulated) photon histogram per wall position.
struct TransientVolume {
  // count() x bins, row m = transient at wall position m.
  Eigen::MatrixXf data;
  // Picoseconds is the canonical stored unit so the text header round trips
  // the exact double.
  double bin_width_ps = 0.0;
  int bin_offset = 0;  // first recorded bin index (gated acquisitions)
  WallGrid wall;

  TransientVolume() = default;
  TransientVolume(Eigen::MatrixXf d, double bin_width_ps_in, WallGrid w, int offset = 0);

  double bin_width_s() const { return bin_width_ps * 1e-12; }
  int positions() const { return static_cast<int>(data.rows()); }
  int bins() const { return static_cast<int>(data.cols()); }
};

// Center-of-bin radius for a confocal round trip (wall -> object -> wall).
inline double bin_to_radius(int t, double bin_width_s) {
  return (static_cast<double>(t) + 0.5) * kSpeedOfLight * bin_width_s * 0.5;
}

inline double bin_radial_step(double bin_width_s) {
  return kSpeedOfLight * bin_width_s * 0.5;
}

// Binary mask of bins whose signal exceeds kappa times the volume-wide peak.
// Pass a background-subtracted signal when background modeling is active.
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> compute_object_mask(
    const Eigen::MatrixXf& signal, double kappa);

// ---------------------------------------------------------------------------
// .nlt transient file (versioned text header + float32 LE payload)

void save_transients(const std::string& path, const TransientVolume& volume);
TransientVolume load_transients(const std::string& path);

// ---------------------------------------------------------------------------
// Run configuration. Flat key/value text file; unknown keys are rejected.

enum class Precision { Float32, Float64 };

struct Config {
  std::uint64_t seed = 0;
  Precision precision = Precision::Float32;
  int threads = 1;

  // Scene bounds (required by carve/train/extract).
  SceneBounds bounds{Vec3(-0.4, -0.4, 0.1), Vec3(0.4, 0.4, 0.9)};

  // Loss weights.
  double lambda_tau = 1.0;
  double lambda_eikonal = 0.1;
  double lambda_zero = 0.01;
  double lambda_entropy = 0.001;
  double lambda_free = 0.01;

  // Rendering sample counts.
  int n_theta = 64;
  int n_phi = 64;
  int n_zero_samples = 16;    // surface samples per masked scan sphere
  int n_eikonal_samples = 4096;
  int n_free_samples = 4096;
  bool restrict_bins_to_bounds = true;
  bool cumulative_weights = false;  // reproduce the cumulative-sum weight variant

  // Optimization.
  int iterations = 20000;
  int batch_wall_points = 8;
  double lr = 1e-4;
  double lr_alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 10.0;
  double alpha_init = 0.5;
  int checkpoint_every = 1000;
  int log_every = 1;
  bool background_enabled = true;
  bool lz_normalize_masked = false;  // normalize L_z by masked count instead of M*B*N_z

  // Masking.
  double mask_kappa = 0.05;

  // Encodings and network sizes.
  int enc_l_pos = 6;
  int enc_l_dir = 4;
  int enc_l_time = 4;
  int sdf_hidden_layers = 4;
  int sdf_hidden_width = 64;
  int refl_hidden_layers = 3;
  int refl_hidden_width = 64;
  int bg_hidden_layers = 3;
  int bg_hidden_width = 32;
  double geom_init_radius = 0.25;  // meters
  double fd_epsilon = 1e-3;        // spatial gradient step, meters

  // Carving.
  int carve_dims = 128;
  double carve_sigma_bins = 2.0;
  double carve_floor_fraction = 0.1;
  double carve_eta_fraction = 0.05;
  bool first_photon_literal = false;  // literal falling-edge rule only

  // Extraction.
  int extract_resolution = 128;
  double hit_eps = 1e-4;
  int max_trace_steps = 256;
  double step_damping = 0.9;
  double albedo_mask_fraction = 0.1;

  // View rendering.
  int view_count = 3;
  int view_image_size = 128;
  int view_ray_samples = 192;
  double view_distance = 1.2;
  double view_elevation_deg = 20.0;

  void validate() const;
};

Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);
std::string serialize_config(const Config& cfg);
void save_config(const std::string& path, const Config& cfg);
std::uint64_t config_hash(const Config& cfg);

}  // namespace nlos::core
