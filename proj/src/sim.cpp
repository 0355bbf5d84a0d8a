#include "nlos/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "nlos/errors.hpp"
#include "nlos/render.hpp"

namespace nlos::sim {

double primitive_sdf(const Primitive& prim, const Vec3& p) {
  switch (prim.kind) {
    case Primitive::Kind::Sphere:
      return (p - prim.center).norm() - prim.radius;
    case Primitive::Kind::Box: {
      Vec3 q = (p - prim.center).cwiseAbs() - prim.half_extents;
      Vec3 outside = q.cwiseMax(0.0);
      double inside = std::min(q.maxCoeff(), 0.0);
      return outside.norm() + inside;
    }
    case Primitive::Kind::Rect: {
      Frame f = Frame::from_normal(prim.normal);
      Vec3 rel = p - prim.center;
      double lu = rel.dot(f.u), lv = rel.dot(f.v), ln = rel.dot(f.n);
      double du = std::max(std::abs(lu) - prim.half_u, 0.0);
      double dv = std::max(std::abs(lv) - prim.half_v, 0.0);
      return std::sqrt(du * du + dv * dv + ln * ln);
    }
  }
  return std::numeric_limits<double>::infinity();
}

double analytic_sdf(const SceneSpec& scene, const Vec3& p) {
  double d = std::numeric_limits<double>::infinity();
  for (const Primitive& prim : scene.primitives) {
    d = std::min(d, primitive_sdf(prim, p));
  }
  return d;
}

namespace {

std::optional<double> ray_primitive(const Primitive& prim, const Vec3& o, const Vec3& dir) {
  switch (prim.kind) {
    case Primitive::Kind::Sphere: {
      Vec3 oc = o - prim.center;
      double b = oc.dot(dir);
      double c = oc.squaredNorm() - prim.radius * prim.radius;
      double disc = b * b - c;
      if (disc < 0.0) return std::nullopt;
      double s = std::sqrt(disc);
      double t = -b - s;
      if (t > 1e-9) return t;
      t = -b + s;
      if (t > 1e-9) return t;
      return std::nullopt;
    }
    case Primitive::Kind::Box: {
      double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        double lo = prim.center[a] - prim.half_extents[a];
        double hi = prim.center[a] + prim.half_extents[a];
        if (std::abs(dir[a]) < 1e-15) {
          if (o[a] < lo || o[a] > hi) return std::nullopt;
          continue;
        }
        double ta = (lo - o[a]) / dir[a];
        double tb = (hi - o[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
      }
      if (t0 > 1e-9) return t0;
      return std::nullopt;
    }
    case Primitive::Kind::Rect: {
      double denom = dir.dot(prim.normal);
      if (std::abs(denom) < 1e-12) return std::nullopt;
      double t = (prim.center - o).dot(prim.normal) / denom;
      if (t <= 1e-9) return std::nullopt;
      Frame f = Frame::from_normal(prim.normal);
      Vec3 rel = o + t * dir - prim.center;
      if (std::abs(rel.dot(f.u)) <= prim.half_u && std::abs(rel.dot(f.v)) <= prim.half_v) {
        return t;
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<Hit> analytic_first_hit(const SceneSpec& scene, const Vec3& origin,
                                      const Vec3& dir, double t_max, bool exclude_floor) {
  std::optional<Hit> best;
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    const Primitive& prim = scene.primitives[i];
    if (exclude_floor && prim.is_floor) continue;
    auto t = ray_primitive(prim, origin, dir);
    if (t && *t <= t_max && (!best || *t < best->t)) {
      best = Hit{*t, static_cast<int>(i)};
    }
  }
  return best;
}

Vec3 analytic_normal(const SceneSpec& scene, const Vec3& p) {
  const double eps = 1e-6;
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = eps;
    g[a] = (analytic_sdf(scene, p + e) - analytic_sdf(scene, p - e)) / (2 * eps);
  }
  double n = g.norm();
  return n > 0 ? Vec3(g / n) : Vec3(0, 0, 1);
}

SimulationResult simulate_transients(const SceneSpec& scene) {
  const int m = scene.wall.count();
  const int b = scene.bins;
  if (m == 0 || b < 2) {
    throw NlosError(ErrorCode::InvariantViolation, "simulation needs wall positions and bins");
  }
  const double bin_width_s = scene.bin_width_ps * 1e-12;
  const double dr = core::bin_radial_step(bin_width_s);
  const double r_max = b * dr;

  render::SphereSampleGrid grid(scene.quadrature_theta, scene.quadrature_phi);
  Frame frame = Frame::from_normal(scene.wall.normal);

  SimulationResult result;
  result.object_component = Eigen::MatrixXf::Zero(m, b);
  result.floor_component = Eigen::MatrixXf::Zero(m, b);
  result.clipped_bins = 0;

  const double cell = grid.d_theta * grid.d_phi;
  for (int wp = 0; wp < m; ++wp) {
    const Vec3& origin = scene.wall.positions[static_cast<size_t>(wp)];
    for (int i = 0; i < grid.n_theta; ++i) {
      double st = std::sin(grid.theta[i]);
      double ct = std::cos(grid.theta[i]);
      for (int j = 0; j < grid.n_phi; ++j) {
        Vec3 dir = frame.to_world(
            Vec3(st * std::cos(grid.phi[j]), st * std::sin(grid.phi[j]), ct));
        auto hit = analytic_first_hit(scene, origin, dir, r_max * 4.0);
        if (!hit) continue;
        if (hit->t >= r_max) {
          ++result.clipped_bins;
          continue;
        }
        int bin = static_cast<int>(hit->t / dr);
        if (bin >= b) {
          ++result.clipped_bins;
          continue;
        }
        const Primitive& prim = scene.primitives[static_cast<size_t>(hit->primitive)];
        float energy =
            static_cast<float>(prim.albedo * st / (hit->t * hit->t) * cell);
        if (prim.is_floor) {
          result.floor_component(wp, bin) += energy;
        } else {
          result.object_component(wp, bin) += energy;
        }
      }
    }
  }

  Eigen::MatrixXf total =
      result.object_component +
      static_cast<float>(scene.background_factor) * result.floor_component;
  result.total = core::TransientVolume(std::move(total), scene.bin_width_ps, scene.wall);
  return result;
}

BackgroundInjection add_background(const core::TransientVolume& clean,
                                   const SceneSpec& scene, double factor) {
  if (!scene.has_floor()) {
    throw NlosError(ErrorCode::InvariantViolation,
                    "add_background requires a floor primitive in the scene");
  }
  if (factor < 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "background factor must be >= 0");
  }
  SimulationResult sim = simulate_transients(scene);
  BackgroundInjection out;
  out.factor = factor;
  out.background_component = static_cast<float>(factor) * sim.floor_component;
  Eigen::MatrixXf combined = clean.data + out.background_component;
  out.combined =
      core::TransientVolume(std::move(combined), clean.bin_width_ps, clean.wall,
                            clean.bin_offset);
  return out;
}

core::TransientVolume add_noise(const core::TransientVolume& volume, std::uint64_t seed,
                                double level) {
  if (level < 0.0) {
    throw NlosError(ErrorCode::InvariantViolation, "noise level must be >= 0");
  }
  if (level == 0.0) return volume;
  Rng rng(seed);
  Eigen::MatrixXf noisy(volume.data.rows(), volume.data.cols());
  for (Eigen::Index i = 0; i < volume.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < volume.data.cols(); ++j) {
      double rate = static_cast<double>(volume.data(i, j)) / level;
      noisy(i, j) = static_cast<float>(level * static_cast<double>(rng.poisson(rate)));
    }
  }
  return core::TransientVolume(std::move(noisy), volume.bin_width_ps, volume.wall,
                               volume.bin_offset);
}

// ---------------------------------------------------------------------------
// Scene JSON

namespace {

Vec3 vec3_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) {
    throw NlosError(ErrorCode::MalformedHeader, "expected [x,y,z] for " + what);
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

nlohmann::json vec3_to_json(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

}  // namespace

SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open scene: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw NlosError(ErrorCode::MalformedHeader, "scene parse error: " + std::string(e.what()));
  }

  SceneSpec scene;
  try {
    scene.bounds = SceneBounds(vec3_from_json(j.at("bounds").at("min"), "bounds.min"),
                               vec3_from_json(j.at("bounds").at("max"), "bounds.max"));
    const auto& w = j.at("wall");
    scene.wall = core::WallGrid::regular(w.at("rows").get<int>(), w.at("cols").get<int>(),
                                         w.at("min_u").get<double>(), w.at("max_u").get<double>(),
                                         w.at("min_v").get<double>(), w.at("max_v").get<double>());
    scene.bins = j.at("bins").get<int>();
    scene.bin_width_ps = j.at("bin_width_ps").get<double>();
    scene.background_factor = j.value("background_factor", 0.0);
    scene.noise_level = j.value("noise_level", 0.0);
    scene.quadrature_theta = j.value("quadrature_theta", 256);
    scene.quadrature_phi = j.value("quadrature_phi", 256);
    for (const auto& pj : j.at("primitives")) {
      Primitive prim;
      std::string type = pj.at("type").get<std::string>();
      if (type == "sphere") {
        prim.kind = Primitive::Kind::Sphere;
        prim.center = vec3_from_json(pj.at("center"), "sphere.center");
        prim.radius = pj.at("radius").get<double>();
      } else if (type == "box") {
        prim.kind = Primitive::Kind::Box;
        prim.center = vec3_from_json(pj.at("center"), "box.center");
        prim.half_extents = vec3_from_json(pj.at("half_extents"), "box.half_extents");
      } else if (type == "rect") {
        prim.kind = Primitive::Kind::Rect;
        prim.center = vec3_from_json(pj.at("point"), "rect.point");
        prim.normal = vec3_from_json(pj.at("normal"), "rect.normal").normalized();
        prim.half_u = pj.at("half_u").get<double>();
        prim.half_v = pj.at("half_v").get<double>();
      } else {
        throw NlosError(ErrorCode::MalformedHeader, "unknown primitive type: " + type);
      }
      prim.albedo = pj.value("albedo", 1.0);
      prim.is_floor = pj.value("floor", false);
      if (prim.albedo < 0.0) {
        throw NlosError(ErrorCode::InvariantViolation, "albedo must be >= 0");
      }
      scene.primitives.push_back(prim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw NlosError(ErrorCode::MalformedHeader, "scene schema error: " + std::string(e.what()));
  }
  return scene;
}

void save_scene(const std::string& path, const SceneSpec& scene) {
  nlohmann::json j;
  j["bounds"]["min"] = vec3_to_json(scene.bounds.min);
  j["bounds"]["max"] = vec3_to_json(scene.bounds.max);
  const Vec3 first = scene.wall.positions.empty() ? Vec3::Zero() : scene.wall.positions.front();
  const Vec3 last = scene.wall.positions.empty() ? Vec3::Zero() : scene.wall.positions.back();
  j["wall"] = {{"rows", scene.wall.rows},     {"cols", scene.wall.cols},
               {"min_u", first.x()},          {"max_u", last.x()},
               {"min_v", first.y()},          {"max_v", last.y()}};
  j["bins"] = scene.bins;
  j["bin_width_ps"] = scene.bin_width_ps;
  j["background_factor"] = scene.background_factor;
  j["noise_level"] = scene.noise_level;
  j["quadrature_theta"] = scene.quadrature_theta;
  j["quadrature_phi"] = scene.quadrature_phi;
  j["primitives"] = nlohmann::json::array();
  for (const Primitive& prim : scene.primitives) {
    nlohmann::json pj;
    switch (prim.kind) {
      case Primitive::Kind::Sphere:
        pj["type"] = "sphere";
        pj["center"] = vec3_to_json(prim.center);
        pj["radius"] = prim.radius;
        break;
      case Primitive::Kind::Box:
        pj["type"] = "box";
        pj["center"] = vec3_to_json(prim.center);
        pj["half_extents"] = vec3_to_json(prim.half_extents);
        break;
      case Primitive::Kind::Rect:
        pj["type"] = "rect";
        pj["point"] = vec3_to_json(prim.center);
        pj["normal"] = vec3_to_json(prim.normal);
        pj["half_u"] = prim.half_u;
        pj["half_v"] = prim.half_v;
        break;
    }
    pj["albedo"] = prim.albedo;
    if (prim.is_floor) pj["floor"] = true;
    j["primitives"].push_back(pj);
  }
  std::ofstream out(path);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write scene: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace nlos::sim
