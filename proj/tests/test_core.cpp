#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nlos/core.hpp"
#include "nlos/rng.hpp"

using namespace nlos;
using namespace nlos::core;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TransientVolume random_volume(Rng& rng, int rows = 4, int cols = 3, int bins = 16) {
  Eigen::MatrixXf data(rows * cols, bins);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      data(i, j) = static_cast<float>(rng.uniform() * 10.0);
    }
  }
  WallGrid wall = WallGrid::regular(rows, cols, -0.3, 0.3, -0.2, 0.2);
  return TransientVolume(std::move(data), 60.0 + rng.uniform() * 20.0, std::move(wall),
                         rng.below(3) == 0 ? 2 : 0);
}

}  // namespace

TEST_CASE("bin_to_radius matches the confocal round-trip mapping") {
  // 0.5 * c * 70ps / 2
  CHECK(bin_to_radius(0, 70e-12) == doctest::Approx(0.005246368).epsilon(1e-6));
  double spacing = bin_to_radius(1, 70e-12) - bin_to_radius(0, 70e-12);
  CHECK(spacing == doctest::Approx(kSpeedOfLight * 70e-12 / 2).epsilon(1e-12));
  CHECK(bin_to_radius(5, 140e-12) == doctest::Approx(2.0 * bin_to_radius(5, 70e-12)));
}

TEST_CASE("bin radii are strictly increasing") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    int t = static_cast<int>(rng.below(4000));
    double bw = rng.uniform(1e-12, 1e-9);
    CHECK(bin_to_radius(t, bw) < bin_to_radius(t + 1, bw));
  }
  // Exact spacing.
  CHECK(bin_to_radius(101, 70e-12) - bin_to_radius(100, 70e-12) ==
        doctest::Approx(bin_radial_step(70e-12)).epsilon(1e-12));
}

TEST_CASE("object mask thresholds against the global peak") {
  Eigen::MatrixXf zeros = Eigen::MatrixXf::Zero(3, 8);
  auto m0 = compute_object_mask(zeros, 0.05);
  CHECK(m0.sum() == 0);

  Eigen::MatrixXf one = zeros;
  one(1, 3) = 1.0f;
  auto m1 = compute_object_mask(one, 0.05);
  CHECK(m1.sum() == 1);
  CHECK(m1(1, 3) == 1);

  CHECK_THROWS_AS(compute_object_mask(one, 0.0), NlosError);
  CHECK_THROWS_AS(compute_object_mask(one, 1.0), NlosError);
}

TEST_CASE("object mask is monotone in kappa") {
  Rng rng(11);
  Eigen::MatrixXf sig(5, 20);
  for (Eigen::Index i = 0; i < sig.rows(); ++i) {
    for (Eigen::Index j = 0; j < sig.cols(); ++j) {
      sig(i, j) = static_cast<float>(rng.uniform());
    }
  }
  auto loose = compute_object_mask(sig, 0.1);
  auto tight = compute_object_mask(sig, 0.5);
  for (Eigen::Index i = 0; i < sig.rows(); ++i) {
    for (Eigen::Index j = 0; j < sig.cols(); ++j) {
      if (tight(i, j)) CHECK(loose(i, j));
    }
  }
}

TEST_CASE("wall grid invariants") {
  CHECK_THROWS_AS(WallGrid({Vec3(0, 0, 0), Vec3(0, 0, 1)}, Vec3(0, 0, 1), 1, 2), NlosError);
  CHECK_THROWS_AS(WallGrid({Vec3(0, 0, 0)}, Vec3(0, 0, 2), 1, 1), NlosError);
  WallGrid ok = WallGrid::regular(2, 2, -1, 1, -1, 1);
  CHECK(ok.count() == 4);
  CHECK(ok.regular_basis().has_value());
}

TEST_CASE("transient volume rejects bad payloads") {
  WallGrid wall = WallGrid::regular(2, 2, -1, 1, -1, 1);
  Eigen::MatrixXf neg = Eigen::MatrixXf::Constant(4, 4, -1.0f);
  CHECK_THROWS_AS(TransientVolume(neg, 70.0, wall), NlosError);
  Eigen::MatrixXf wrong_rows = Eigen::MatrixXf::Zero(3, 4);
  CHECK_THROWS_AS(TransientVolume(wrong_rows, 70.0, wall), NlosError);
}

TEST_CASE("nlt round trip is bit exact") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    TransientVolume vol = random_volume(rng);
    std::string path = temp_path("roundtrip.nlt");
    save_transients(path, vol);
    TransientVolume back = load_transients(path);
    REQUIRE(back.data.rows() == vol.data.rows());
    REQUIRE(back.data.cols() == vol.data.cols());
    CHECK(std::memcmp(back.data.data(), vol.data.data(),
                      sizeof(float) * vol.data.size()) == 0);
    CHECK(back.bin_width_ps == vol.bin_width_ps);
    CHECK(back.bin_offset == vol.bin_offset);
    REQUIRE(back.wall.count() == vol.wall.count());
    for (int i = 0; i < vol.wall.count(); ++i) {
      CHECK(back.wall.positions[i] == vol.wall.positions[i]);
    }
    // Save again: byte-identical files.
    std::string path2 = temp_path("roundtrip2.nlt");
    save_transients(path2, back);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }
}

TEST_CASE("nlt irregular grids round trip through inline positions") {
  Rng rng(5);
  std::vector<Vec3> pos;
  for (int i = 0; i < 6; ++i) pos.emplace_back(rng.uniform(), rng.uniform(), 0.0);
  WallGrid wall(pos, Vec3(0, 0, 1), 2, 3);
  Eigen::MatrixXf data = Eigen::MatrixXf::Constant(6, 4, 1.5f);
  TransientVolume vol(data, 70.0, wall);
  std::string path = temp_path("irregular.nlt");
  save_transients(path, vol);
  TransientVolume back = load_transients(path);
  for (int i = 0; i < 6; ++i) CHECK(back.wall.positions[i] == pos[i]);
}

TEST_CASE("nlt loader reports distinct errors") {
  Rng rng(9);
  TransientVolume vol = random_volume(rng);
  std::string path = temp_path("errors.nlt");
  save_transients(path, vol);

  // Truncated payload.
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path + ".trunc", std::ios::binary);
    out.write(all.data(), static_cast<std::streamsize>(all.size() - 8));
  }
  try {
    load_transients(path + ".trunc");
    FAIL("expected payload error");
  } catch (const NlosError& e) {
    CHECK(e.code() == ErrorCode::PayloadSizeMismatch);
  }

  // Unsupported version.
  {
    std::ofstream out(path + ".v99");
    out << "nlt_version: 99\nrows: 1\ncols: 1\nbins: 2\nbin_width_ps: 70\n"
           "wall_normal: 0 0 1\nwall_origin: 0 0 0\nwall_axis_u: 0 0 0\n"
           "wall_axis_v: 0 0 0\n\n";
  }
  try {
    load_transients(path + ".v99");
    FAIL("expected version error");
  } catch (const NlosError& e) {
    CHECK(e.code() == ErrorCode::UnsupportedVersion);
  }

  // Malformed header.
  {
    std::ofstream out(path + ".bad");
    out << "this is not a header\n\n";
  }
  try {
    load_transients(path + ".bad");
    FAIL("expected header error");
  } catch (const NlosError& e) {
    CHECK(e.code() == ErrorCode::MalformedHeader);
  }
}

TEST_CASE("config round trip and strict keys") {
  Config cfg;
  cfg.seed = 42;
  cfg.lambda_entropy = 0.002;
  cfg.n_theta = 12;
  cfg.precision = Precision::Float64;
  std::string text = serialize_config(cfg);
  Config back = parse_config_text(text);
  CHECK(serialize_config(back) == text);
  CHECK(config_hash(back) == config_hash(cfg));

  CHECK_THROWS_AS(parse_config_text("no_such_key: 1\n"), NlosError);
  CHECK_THROWS_AS(parse_config_text("lambda_tau: -1\n"), NlosError);
  CHECK_THROWS_AS(parse_config_text("mask_kappa: 2\n"), NlosError);

  // Comments and blank lines are fine.
  Config c2 = parse_config_text("# comment\n\nseed: 7\n");
  CHECK(c2.seed == 7);
}
