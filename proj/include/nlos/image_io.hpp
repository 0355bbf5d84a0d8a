#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nlos/geometry.hpp"

namespace nlos::img {

// Grayscale PFM ("Pf"), little-endian, bottom-up rows per the format spec.
void save_pfm(const std::string& path, const Eigen::MatrixXf& image);
Eigen::MatrixXf load_pfm(const std::string& path);

// 3-channel PFM ("PF"); channels interleaved r,g,b per pixel.
void save_pfm3(const std::string& path, const Eigen::MatrixXf& r, const Eigen::MatrixXf& g,
               const Eigen::MatrixXf& b);
void load_pfm3(const std::string& path, Eigen::MatrixXf& r, Eigen::MatrixXf& g,
               Eigen::MatrixXf& b);

// 16-bit binary PGM (big-endian samples per Netpbm). Values are scaled so
// that `scale` maps to 65535; pass <= 0 to normalize by the image maximum.
void save_pgm16(const std::string& path, const Eigen::MatrixXd& image, double scale = 0.0);

// Oriented point cloud as ASCII PLY with x y z nx ny nz properties.
struct OrientedPoint {
  Vec3 position;
  Vec3 normal;
};
void save_ply(const std::string& path, const std::vector<OrientedPoint>& points);
std::vector<OrientedPoint> load_ply(const std::string& path);

}  // namespace nlos::img
