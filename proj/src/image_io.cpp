#include "nlos/image_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "nlos/errors.hpp"

namespace nlos::img {

namespace {

void write_pfm_header(std::ofstream& out, const char* kind, Eigen::Index w, Eigen::Index h) {
  out << kind << "\n" << w << " " << h << "\n" << "-1.0" << "\n";  // -1: little endian
}

struct PfmHeader {
  bool color = false;
  Eigen::Index width = 0, height = 0;
  double scale = -1.0;
};

PfmHeader read_pfm_header(std::ifstream& in, const std::string& path) {
  PfmHeader h;
  std::string kind;
  in >> kind;
  if (kind == "PF") {
    h.color = true;
  } else if (kind == "Pf") {
    h.color = false;
  } else {
    throw NlosError(ErrorCode::MalformedHeader, "not a PFM file: " + path);
  }
  in >> h.width >> h.height >> h.scale;
  if (!in || h.width <= 0 || h.height <= 0) {
    throw NlosError(ErrorCode::MalformedHeader, "bad PFM dimensions: " + path);
  }
  if (h.scale >= 0.0) {
    throw NlosError(ErrorCode::UnsupportedVersion, "big-endian PFM not supported: " + path);
  }
  in.get();  // single whitespace before payload
  return h;
}

}  // namespace

void save_pfm(const std::string& path, const Eigen::MatrixXf& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write: " + path);
  write_pfm_header(out, "Pf", image.cols(), image.rows());
  // PFM stores rows bottom-up.
  for (Eigen::Index row = image.rows() - 1; row >= 0; --row) {
    for (Eigen::Index col = 0; col < image.cols(); ++col) {
      float v = image(row, col);
      out.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
  if (!out) throw NlosError(ErrorCode::IoError, "write failed: " + path);
}

Eigen::MatrixXf load_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open: " + path);
  PfmHeader h = read_pfm_header(in, path);
  if (h.color) {
    throw NlosError(ErrorCode::MalformedHeader, "expected grayscale PFM: " + path);
  }
  Eigen::MatrixXf image(h.height, h.width);
  for (Eigen::Index row = h.height - 1; row >= 0; --row) {
    for (Eigen::Index col = 0; col < h.width; ++col) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof(float));
      if (!in) throw NlosError(ErrorCode::PayloadSizeMismatch, "truncated PFM: " + path);
      image(row, col) = v;
    }
  }
  return image;
}

void save_pfm3(const std::string& path, const Eigen::MatrixXf& r, const Eigen::MatrixXf& g,
               const Eigen::MatrixXf& b) {
  if (r.rows() != g.rows() || r.rows() != b.rows() || r.cols() != g.cols() ||
      r.cols() != b.cols()) {
    throw NlosError(ErrorCode::ShapeMismatch, "PFM channel shapes differ");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write: " + path);
  write_pfm_header(out, "PF", r.cols(), r.rows());
  for (Eigen::Index row = r.rows() - 1; row >= 0; --row) {
    for (Eigen::Index col = 0; col < r.cols(); ++col) {
      float rgb[3] = {r(row, col), g(row, col), b(row, col)};
      out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
    }
  }
  if (!out) throw NlosError(ErrorCode::IoError, "write failed: " + path);
}

void load_pfm3(const std::string& path, Eigen::MatrixXf& r, Eigen::MatrixXf& g,
               Eigen::MatrixXf& b) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open: " + path);
  PfmHeader h = read_pfm_header(in, path);
  if (!h.color) {
    throw NlosError(ErrorCode::MalformedHeader, "expected 3-channel PFM: " + path);
  }
  r.resize(h.height, h.width);
  g.resize(h.height, h.width);
  b.resize(h.height, h.width);
  for (Eigen::Index row = h.height - 1; row >= 0; --row) {
    for (Eigen::Index col = 0; col < h.width; ++col) {
      float rgb[3];
      in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
      if (!in) throw NlosError(ErrorCode::PayloadSizeMismatch, "truncated PFM: " + path);
      r(row, col) = rgb[0];
      g(row, col) = rgb[1];
      b(row, col) = rgb[2];
    }
  }
}

void save_pgm16(const std::string& path, const Eigen::MatrixXd& image, double scale) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write: " + path);
  double top = scale > 0.0 ? scale : image.maxCoeff();
  if (top <= 0.0) top = 1.0;
  out << "P5\n" << image.cols() << " " << image.rows() << "\n65535\n";
  for (Eigen::Index row = 0; row < image.rows(); ++row) {
    for (Eigen::Index col = 0; col < image.cols(); ++col) {
      double v = std::min(std::max(image(row, col) / top, 0.0), 1.0);
      auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      unsigned char be[2] = {static_cast<unsigned char>(q >> 8),
                             static_cast<unsigned char>(q & 0xff)};
      out.write(reinterpret_cast<const char*>(be), 2);
    }
  }
  if (!out) throw NlosError(ErrorCode::IoError, "write failed: " + path);
}

void save_ply(const std::string& path, const std::vector<OrientedPoint>& points) {
  std::ofstream out(path);
  if (!out) throw NlosError(ErrorCode::IoError, "cannot write: " + path);
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << points.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "end_header\n";
  char line[160];
  for (const OrientedPoint& p : points) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %.9g %.9g %.9g\n", p.position.x(),
                  p.position.y(), p.position.z(), p.normal.x(), p.normal.y(), p.normal.z());
    out << line;
  }
  if (!out) throw NlosError(ErrorCode::IoError, "write failed: " + path);
}

std::vector<OrientedPoint> load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NlosError(ErrorCode::IoError, "cannot open: " + path);
  std::string line;
  size_t count = 0;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) {
      count = std::stoul(line.substr(15));
    } else if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) {
    throw NlosError(ErrorCode::MalformedHeader, "PLY header not terminated: " + path);
  }
  std::vector<OrientedPoint> points;
  points.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    OrientedPoint p;
    if (!(in >> p.position.x() >> p.position.y() >> p.position.z() >> p.normal.x() >>
          p.normal.y() >> p.normal.z())) {
      throw NlosError(ErrorCode::PayloadSizeMismatch, "truncated PLY: " + path);
    }
    points.push_back(p);
  }
  return points;
}

}  // namespace nlos::img
