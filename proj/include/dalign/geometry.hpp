#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "dalign/image.hpp"
#include "dalign/tensor.hpp"

namespace dalign {

// Pinhole intrinsics in pixels. Pixel (u, v) has its center at integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t width = 1;
  std::size_t height = 1;

  // Throws ContractError unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// Camera-frame points (x right, y down, z forward) with RGB colors in [0, 1].
struct PointCloud {
  std::vector<Point3> points;
  std::vector<std::array<float, 3>> colors;

  std::size_t size() const { return points.size(); }
};

Point3 backproject_pixel(double u, double v, double depth, const CameraIntrinsics& intrinsics);

// Lifts every pixel with depth > 0 to a colored point; zero-depth pixels are skipped.
PointCloud backproject(const DepthMap& depth, const CameraIntrinsics& intrinsics, const RgbImage& rgb);

enum class ProjectionStatus { InFrame, OutOfFrame, BehindCamera };

struct Projection {
  ProjectionStatus status = ProjectionStatus::BehindCamera;
  double u = 0.0;
  double v = 0.0;
};

// In-frame means -0.5 <= u < width - 0.5 and likewise for v. Coordinates are
// reported unclamped for out-of-frame points.
Projection project(const Point3& point, const CameraIntrinsics& intrinsics);

struct BoundingBox {
  Point3 min{-50.0, -50.0, 50.0};
  Point3 max{50.0, 50.0, 150.0};

  void validate() const;
  bool contains(const Point3& p) const;
};

// Cell counts per axis. Depth runs along z, height along y, width along x.
struct GridResolution {
  std::size_t depth = 21;
  std::size_t height = 21;
  std::size_t width = 21;

  std::size_t cells() const { return depth * height * width; }
};

// Per-cell channels kept in the grid: mean RGB (3), optionally mean member
// position normalized to the box (3), then occupancy. Flattened tokens may add
// the normalized cell center (3) ahead of occupancy.
struct VoxelFeatureSpec {
  bool mean_position = true;
  bool cell_center = true;

  std::size_t grid_channels() const { return 3 + (mean_position ? 3 : 0) + 1; }
  std::size_t token_width() const { return grid_channels() + (cell_center ? 3 : 0); }
};

struct VoxelGrid {
  GridResolution resolution;
  VoxelFeatureSpec spec;
  std::size_t channels = 0;  // grid_channels(); occupancy is the last one
  std::vector<float> features;         // D×H×W×channels
  std::vector<std::uint32_t> counts;   // member points per cell
  std::size_t occupied_count = 0;
  std::size_t in_bounds_count = 0;
  std::size_t discarded_count = 0;

  std::size_t cell(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * resolution.height + j) * resolution.width + k;
  }
  float at(std::size_t i, std::size_t j, std::size_t k, std::size_t ch) const {
    return features[cell(i, j, k) * channels + ch];
  }
  float occupancy(std::size_t i, std::size_t j, std::size_t k) const {
    return at(i, j, k, channels - 1);
  }
};

// Cell index (i, j, k) of a point inside the closed box; points on the upper
// face land in the last cell.
std::array<std::size_t, 3> voxel_cell(const Point3& p, const BoundingBox& box, const GridResolution& res);

// Mean-pools member point features per cell and appends occupancy. Points
// outside the box are discarded and counted.
VoxelGrid voxelize(const PointCloud& cloud, const BoundingBox& box, const GridResolution& res,
                   const VoxelFeatureSpec& spec = {});

// Row-major token sequence [D·H·W × token_width]; cell (i, j, k) becomes token
// i·H·W + j·W + k.
Tensor<float> flatten_voxels(const VoxelGrid& grid);

}  // namespace dalign
