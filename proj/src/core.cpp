#include "nlos/core.hpp"

#include <array>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace nlos::core {

namespace {

bool nearly_unit(const Vec3& v, double tol) { return std::abs(v.norm() - 1.0) <= tol; }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_vec3(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

Vec3 parse_vec3(const std::string& s, const std::string& what) {
  std::istringstream is(s);
  Vec3 v;
  if (!(is >> v.x() >> v.y() >> v.z())) {
    throw NlosError(ErrorCode::MalformedHeader, "expected three numbers for " + what);
  }
  return v;
}

}  // namespace

WallGrid::WallGrid(std::vector<Vec3> pos, const Vec3& n, int r, int c)
    : positions(std::move(pos)), normal(n), rows(r), cols(c) {
  if (rows * cols != count()) {
    throw NlosError(ErrorCode::ShapeMismatch, "wall grid dims do not match position count");
  }
  if (!nearly_unit(normal, 1e-9)) {
    throw NlosError(ErrorCode::InvariantViolation, "wall normal must be unit length");
  }
  if (!positions.empty()) {
    // All positions must lie on the plane through positions[0].
    const Vec3& p0 = positions[0];
    for (const Vec3& p : positions) {
      if (std::abs(normal.dot(p - p0)) > 1e-6) {
        throw NlosError(ErrorCode::InvariantViolation, "wall positions are not coplanar");
      }
    }
  }
}

WallGrid WallGrid::regular(int rows, int cols, double min_u, double max_u,
                           double min_v, double max_v) {
  if (rows < 1 || cols < 1) {
    throw NlosError(ErrorCode::InvariantViolation, "wall grid needs at least one position");
  }
  std::vector<Vec3> pos;
  pos.reserve(static_cast<size_t>(rows) * cols);
  double du = rows > 1 ? (max_u - min_u) / (rows - 1) : 0.0;
  double dv = cols > 1 ? (max_v - min_v) / (cols - 1) : 0.0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      pos.emplace_back(min_u + i * du, min_v + j * dv, 0.0);
    }
  }
  return WallGrid(std::move(pos), Vec3(0, 0, 1), rows, cols);
}

std::optional<std::array<Vec3, 3>> WallGrid::regular_basis() const {
  if (rows < 1 || cols < 1 || positions.empty()) return std::nullopt;
  const Vec3 origin = positions[0];
  const Vec3 du = rows > 1 ? Vec3(position(1, 0) - origin) : Vec3::Zero();
  const Vec3 dv = cols > 1 ? Vec3(position(0, 1) - origin) : Vec3::Zero();
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      Vec3 expect = origin + static_cast<double>(i) * du + static_cast<double>(j) * dv;
      // Bitwise match required: the compact header form recomputes positions
      // with exactly this arithmetic on load.
      if (std::memcmp(expect.data(), position(i, j).data(), sizeof(double) * 3) != 0) {
        return std::nullopt;
      }
    }
  }
  return std::array<Vec3, 3>{origin, du, dv};
}

TransientVolume::TransientVolume(Eigen::MatrixXf d, double bin_width_ps_in, WallGrid w,
                                 int offset)
    : data(std::move(d)), bin_width_ps(bin_width_ps_in), bin_offset(offset), wall(std::move(w)) {
  if (data.rows() != wall.count()) {
    throw NlosError(ErrorCode::ShapeMismatch,
                    "transient rows must equal wall position count");
  }
  if (data.cols() < 2) {
    throw NlosError(ErrorCode::InvariantViolation, "transient volume needs at least 2 bins");
  }
  if (bin_width_ps <= 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "bin width must be positive");
  }
  if ((data.array() < 0.0f).any()) {
    throw NlosError(ErrorCode::InvariantViolation, "photon counts must be non-negative");
  }
}

Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> compute_object_mask(
    const Eigen::MatrixXf& signal, double kappa) {
  if (!(kappa > 0.0 && kappa < 1.0)) {
    throw NlosError(ErrorCode::InvariantViolation, "mask fraction must be in (0,1)");
  }
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask(signal.rows(),
                                                                   signal.cols());
  mask.setZero();
  if (signal.size() == 0) return mask;
  float peak = signal.maxCoeff();
  if (peak <= 0.0f) return mask;
  float thresh = static_cast<float>(kappa) * peak;
  for (Eigen::Index i = 0; i < signal.rows(); ++i) {
    for (Eigen::Index j = 0; j < signal.cols(); ++j) {
      mask(i, j) = signal(i, j) > thresh ? 1 : 0;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// .nlt I/O

namespace {
constexpr int kNltVersion = 1;
}

void save_transients(const std::string& path, const TransientVolume& volume) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot open for writing: " + path);

  std::ostringstream h;
  h << "nlt_version: " << kNltVersion << "\n";
  h << "rows: " << volume.wall.rows << "\n";
  h << "cols: " << volume.wall.cols << "\n";
  h << "bins: " << volume.bins() << "\n";
  h << "bin_width_ps: " << format_double(volume.bin_width_ps) << "\n";
  if (volume.bin_offset != 0) h << "bin_offset: " << volume.bin_offset << "\n";
  h << "wall_normal: " << format_vec3(volume.wall.normal) << "\n";
  auto basis = volume.wall.regular_basis();
  if (basis) {
    h << "wall_origin: " << format_vec3((*basis)[0]) << "\n";
    h << "wall_axis_u: " << format_vec3((*basis)[1]) << "\n";
    h << "wall_axis_v: " << format_vec3((*basis)[2]) << "\n";
  } else {
    h << "wall_positions: inline\n";
  }
  h << "\n";
  out << h.str();

  if (!basis) {
    // Positions as float64 LE so irregular grids round trip exactly.
    for (const Vec3& p : volume.wall.positions) {
      out.write(reinterpret_cast<const char*>(p.data()), sizeof(double) * 3);
    }
  }
  // Payload ordered (row, col, bin): data is positions x bins row-major.
  for (Eigen::Index i = 0; i < volume.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < volume.data.cols(); ++j) {
      float v = volume.data(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
  if (!out) throw NlosError(ErrorCode::IoError, "write failed: " + path);
}

TransientVolume load_transients(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open: " + path);

  std::map<std::string, std::string> header;
  std::string line;
  bool saw_blank = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      saw_blank = true;
      break;
    }
    auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw NlosError(ErrorCode::MalformedHeader, "header line missing ':' in " + path);
    }
    std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    while (!value.empty() && value.front() == ' ') value.erase(value.begin());
    if (header.count(key)) {
      throw NlosError(ErrorCode::MalformedHeader, "duplicate header key: " + key);
    }
    header[key] = value;
  }
  if (!saw_blank) {
    throw NlosError(ErrorCode::MalformedHeader, "header not terminated by blank line");
  }

  auto require = [&](const std::string& key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) {
      throw NlosError(ErrorCode::MalformedHeader, "missing header key: " + key);
    }
    return it->second;
  };

  int version = std::stoi(require("nlt_version"));
  if (version != kNltVersion) {
    throw NlosError(ErrorCode::UnsupportedVersion,
                    "unsupported nlt_version " + std::to_string(version));
  }
  int rows = std::stoi(require("rows"));
  int cols = std::stoi(require("cols"));
  int bins = std::stoi(require("bins"));
  double bin_width_ps = std::stod(require("bin_width_ps"));
  int bin_offset = header.count("bin_offset") ? std::stoi(header.at("bin_offset")) : 0;
  Vec3 normal = parse_vec3(require("wall_normal"), "wall_normal");
  if (rows < 1 || cols < 1 || bins < 2) {
    throw NlosError(ErrorCode::MalformedHeader, "non-positive dimensions in header");
  }

  const std::int64_t m = static_cast<std::int64_t>(rows) * cols;
  std::vector<Vec3> positions;
  positions.reserve(m);
  if (header.count("wall_origin")) {
    Vec3 origin = parse_vec3(require("wall_origin"), "wall_origin");
    Vec3 du = parse_vec3(require("wall_axis_u"), "wall_axis_u");
    Vec3 dv = parse_vec3(require("wall_axis_v"), "wall_axis_v");
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        positions.push_back(origin + static_cast<double>(i) * du +
                            static_cast<double>(j) * dv);
      }
    }
  } else if (header.count("wall_positions")) {
    for (std::int64_t i = 0; i < m; ++i) {
      Vec3 p;
      in.read(reinterpret_cast<char*>(p.data()), sizeof(double) * 3);
      if (!in) {
        throw NlosError(ErrorCode::PayloadSizeMismatch,
                        "truncated wall positions in " + path);
      }
      positions.push_back(p);
    }
  } else {
    throw NlosError(ErrorCode::MalformedHeader,
                    "header needs wall_origin/axes or wall_positions");
  }

  Eigen::MatrixXf data(m, bins);
  for (std::int64_t i = 0; i < m; ++i) {
    for (int j = 0; j < bins; ++j) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof(float));
      if (!in) {
        throw NlosError(ErrorCode::PayloadSizeMismatch, "truncated payload in " + path);
      }
      data(i, j) = v;
    }
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw NlosError(ErrorCode::PayloadSizeMismatch, "trailing bytes after payload in " + path);
  }

  return TransientVolume(std::move(data), bin_width_ps,
                         WallGrid(std::move(positions), normal, rows, cols), bin_offset);
}

// ---------------------------------------------------------------------------
// Config

void Config::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (v < 0.0) {
      throw NlosError(ErrorCode::UsageError, std::string("negative weight: ") + name);
    }
  };
  nonneg(lambda_tau, "lambda_tau");
  nonneg(lambda_eikonal, "lambda_eikonal");
  nonneg(lambda_zero, "lambda_zero");
  nonneg(lambda_entropy, "lambda_entropy");
  nonneg(lambda_free, "lambda_free");
  if (n_theta < 1 || n_phi < 1 || n_zero_samples < 1 || n_eikonal_samples < 1 ||
      n_free_samples < 1) {
    throw NlosError(ErrorCode::UsageError, "sample counts must be >= 1");
  }
  if (!(mask_kappa > 0.0 && mask_kappa < 1.0)) {
    throw NlosError(ErrorCode::UsageError, "mask_kappa must be in (0,1)");
  }
  if (iterations < 0 || batch_wall_points < 1) {
    throw NlosError(ErrorCode::UsageError, "bad iteration/batch settings");
  }
  if (lr <= 0.0 || lr_alpha <= 0.0 || alpha_init <= 0.0) {
    throw NlosError(ErrorCode::UsageError, "learning rates and alpha_init must be positive");
  }
  if (enc_l_pos < 0 || enc_l_dir < 0 || enc_l_time < 0) {
    throw NlosError(ErrorCode::UsageError, "encoding frequency counts must be >= 0");
  }
  if (threads < 1) {
    throw NlosError(ErrorCode::UsageError, "threads must be >= 1");
  }
}

namespace {

struct FieldBinder {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

std::string bool_str(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw NlosError(ErrorCode::UsageError, "expected true/false for " + key);
}

// Ordered table: serialization emits keys in this order, parsing accepts
// exactly these keys.
const std::vector<std::pair<std::string, FieldBinder>>& config_fields() {
  static const std::vector<std::pair<std::string, FieldBinder>> fields = [] {
    std::vector<std::pair<std::string, FieldBinder>> f;
    auto add_u64 = [&](const char* k, std::uint64_t Config::* m) {
      f.push_back({k,
                   {[m](Config& c, const std::string& v) { c.*m = std::stoull(v); },
                    [m](const Config& c) { return std::to_string(c.*m); }}});
    };
    auto add_int = [&](const char* k, int Config::* m) {
      f.push_back({k,
                   {[m](Config& c, const std::string& v) { c.*m = std::stoi(v); },
                    [m](const Config& c) { return std::to_string(c.*m); }}});
    };
    auto add_double = [&](const char* k, double Config::* m) {
      f.push_back({k,
                   {[m](Config& c, const std::string& v) { c.*m = std::stod(v); },
                    [m](const Config& c) { return format_double(c.*m); }}});
    };
    auto add_bool = [&](const char* k, bool Config::* m) {
      f.push_back({k,
                   {[m, key = std::string(k)](Config& c, const std::string& v) {
                      c.*m = parse_bool(v, key);
                    },
                    [m](const Config& c) { return bool_str(c.*m); }}});
    };

    add_u64("seed", &Config::seed);
    f.push_back({"precision",
                 {[](Config& c, const std::string& v) {
                    if (v == "float32") c.precision = Precision::Float32;
                    else if (v == "float64") c.precision = Precision::Float64;
                    else throw NlosError(ErrorCode::UsageError, "precision must be float32 or float64");
                  },
                  [](const Config& c) {
                    return std::string(c.precision == Precision::Float32 ? "float32" : "float64");
                  }}});
    add_int("threads", &Config::threads);
    f.push_back({"bounds_min",
                 {[](Config& c, const std::string& v) { c.bounds.min = parse_vec3(v, "bounds_min"); },
                  [](const Config& c) { return format_vec3(c.bounds.min); }}});
    f.push_back({"bounds_max",
                 {[](Config& c, const std::string& v) { c.bounds.max = parse_vec3(v, "bounds_max"); },
                  [](const Config& c) { return format_vec3(c.bounds.max); }}});
    add_double("lambda_tau", &Config::lambda_tau);
    add_double("lambda_eikonal", &Config::lambda_eikonal);
    add_double("lambda_zero", &Config::lambda_zero);
    add_double("lambda_entropy", &Config::lambda_entropy);
    add_double("lambda_free", &Config::lambda_free);
    add_int("n_theta", &Config::n_theta);
    add_int("n_phi", &Config::n_phi);
    add_int("n_zero_samples", &Config::n_zero_samples);
    add_int("n_eikonal_samples", &Config::n_eikonal_samples);
    add_int("n_free_samples", &Config::n_free_samples);
    add_bool("restrict_bins_to_bounds", &Config::restrict_bins_to_bounds);
    add_bool("cumulative_weights", &Config::cumulative_weights);
    add_int("iterations", &Config::iterations);
    add_int("batch_wall_points", &Config::batch_wall_points);
    add_double("lr", &Config::lr);
    add_double("lr_alpha", &Config::lr_alpha);
    add_double("beta1", &Config::beta1);
    add_double("beta2", &Config::beta2);
    add_double("adam_eps", &Config::adam_eps);
    add_double("grad_clip_norm", &Config::grad_clip_norm);
    add_double("alpha_init", &Config::alpha_init);
    add_int("checkpoint_every", &Config::checkpoint_every);
    add_int("log_every", &Config::log_every);
    add_bool("background_enabled", &Config::background_enabled);
    add_bool("lz_normalize_masked", &Config::lz_normalize_masked);
    add_double("mask_kappa", &Config::mask_kappa);
    add_int("enc_l_pos", &Config::enc_l_pos);
    add_int("enc_l_dir", &Config::enc_l_dir);
    add_int("enc_l_time", &Config::enc_l_time);
    add_int("sdf_hidden_layers", &Config::sdf_hidden_layers);
    add_int("sdf_hidden_width", &Config::sdf_hidden_width);
    add_int("refl_hidden_layers", &Config::refl_hidden_layers);
    add_int("refl_hidden_width", &Config::refl_hidden_width);
    add_int("bg_hidden_layers", &Config::bg_hidden_layers);
    add_int("bg_hidden_width", &Config::bg_hidden_width);
    add_double("geom_init_radius", &Config::geom_init_radius);
    add_double("fd_epsilon", &Config::fd_epsilon);
    add_int("carve_dims", &Config::carve_dims);
    add_double("carve_sigma_bins", &Config::carve_sigma_bins);
    add_double("carve_floor_fraction", &Config::carve_floor_fraction);
    add_double("carve_eta_fraction", &Config::carve_eta_fraction);
    add_bool("first_photon_literal", &Config::first_photon_literal);
    add_int("extract_resolution", &Config::extract_resolution);
    add_double("hit_eps", &Config::hit_eps);
    add_int("max_trace_steps", &Config::max_trace_steps);
    add_double("step_damping", &Config::step_damping);
    add_double("albedo_mask_fraction", &Config::albedo_mask_fraction);
    add_int("view_count", &Config::view_count);
    add_int("view_image_size", &Config::view_image_size);
    add_int("view_ray_samples", &Config::view_ray_samples);
    add_double("view_distance", &Config::view_distance);
    add_double("view_elevation_deg", &Config::view_elevation_deg);
    return f;
  }();
  return fields;
}

}  // namespace

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t')) {
      line.pop_back();
    }
    if (line.empty()) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw NlosError(ErrorCode::UsageError,
                      "config line " + std::to_string(lineno) + " missing ':'");
    }
    std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t')) {
      value.erase(value.begin());
    }
    bool found = false;
    for (const auto& [name, binder] : config_fields()) {
      if (name == key) {
        binder.set(cfg, value);
        found = true;
        break;
      }
    }
    if (!found) {
      throw NlosError(ErrorCode::UsageError, "unknown config key: " + key);
    }
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const Config& cfg) {
  std::ostringstream out;
  for (const auto& [name, binder] : config_fields()) {
    out << name << ": " << binder.get(cfg) << "\n";
  }
  return out.str();
}

void save_config(const std::string& path, const Config& cfg) {
  std::ofstream out(path);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write config: " + path);
  out << serialize_config(cfg);
}

std::uint64_t config_hash(const Config& cfg) {
  // FNV-1a over the canonical serialization.
  std::string s = serialize_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace nlos::core
