#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nlos/errors.hpp"

namespace nlos::train {

// Versioned binary snapshot: parameters (alpha included), plus the trainer
// state needed to resume a run within floating-point reproducibility.
template <class Real>
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::int64_t iteration = 0;
  std::vector<Real> params;

  bool has_trainer_state = false;
  std::vector<double> adam_m, adam_v;
  std::int64_t adam_step = 0;
  std::string rng_state;
  std::vector<double> xi;                // per wall point background scale
  Eigen::MatrixXf object_component;      // running tau_m - xi * tau_b estimate
};

namespace detail {
inline constexpr char kCheckpointMagic[8] = {'N', 'L', 'C', 'K', 'P', 'T', '0', '1'};

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}
template <class T>
void write_vec(std::ofstream& out, const std::vector<T>& v) {
  std::uint64_t n = v.size();
  write_pod(out, n);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(T)));
}
template <class T>
void read_vec(std::ifstream& in, std::vector<T>& v) {
  std::uint64_t n = 0;
  read_pod(in, n);
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}
}  // namespace detail

template <class Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ck) {
  using namespace detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint8_t precision = sizeof(Real);
  write_pod(out, precision);
  write_pod(out, ck.config_hash);
  write_pod(out, ck.iteration);
  write_vec(out, ck.params);
  std::uint8_t has_trainer = ck.has_trainer_state ? 1 : 0;
  write_pod(out, has_trainer);
  if (ck.has_trainer_state) {
    write_pod(out, ck.adam_step);
    write_vec(out, ck.adam_m);
    write_vec(out, ck.adam_v);
    std::uint64_t rng_len = ck.rng_state.size();
    write_pod(out, rng_len);
    out.write(ck.rng_state.data(), static_cast<std::streamsize>(rng_len));
    write_vec(out, ck.xi);
    std::int64_t rows = ck.object_component.rows(), cols = ck.object_component.cols();
    write_pod(out, rows);
    write_pod(out, cols);
    out.write(reinterpret_cast<const char*>(ck.object_component.data()),
              static_cast<std::streamsize>(sizeof(float) * rows * cols));
  }
  if (!out) throw NlosError(ErrorCode::IoError, "checkpoint write failed: " + path);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, 6) != 0) {
    throw NlosError(ErrorCode::MalformedHeader, "not a checkpoint file: " + path);
  }
  if (magic[6] != '0' || magic[7] != '1') {
    throw NlosError(ErrorCode::UnsupportedVersion, "unsupported checkpoint version");
  }
  std::uint8_t precision = 0;
  read_pod(in, precision);
  if (precision != sizeof(Real)) {
    throw NlosError(ErrorCode::UnsupportedVersion,
                    "checkpoint precision does not match requested precision");
  }
  Checkpoint<Real> ck;
  read_pod(in, ck.config_hash);
  read_pod(in, ck.iteration);
  read_vec(in, ck.params);
  std::uint8_t has_trainer = 0;
  read_pod(in, has_trainer);
  ck.has_trainer_state = has_trainer != 0;
  if (ck.has_trainer_state) {
    read_pod(in, ck.adam_step);
    read_vec(in, ck.adam_m);
    read_vec(in, ck.adam_v);
    std::uint64_t rng_len = 0;
    read_pod(in, rng_len);
    ck.rng_state.resize(rng_len);
    in.read(ck.rng_state.data(), static_cast<std::streamsize>(rng_len));
    read_vec(in, ck.xi);
    std::int64_t rows = 0, cols = 0;
    read_pod(in, rows);
    read_pod(in, cols);
    if (rows < 0 || cols < 0) {
      throw NlosError(ErrorCode::MalformedHeader, "bad checkpoint dims");
    }
    ck.object_component.resize(rows, cols);
    in.read(reinterpret_cast<char*>(ck.object_component.data()),
            static_cast<std::streamsize>(sizeof(float) * rows * cols));
  }
  if (!in) throw NlosError(ErrorCode::PayloadSizeMismatch, "truncated checkpoint: " + path);
  return ck;
}

}  // namespace nlos::train
