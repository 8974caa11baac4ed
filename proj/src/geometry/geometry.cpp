#include "dalign/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "dalign/errors.hpp"

namespace dalign {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ContractError("camera focal lengths must be positive");
  if (width == 0 || height == 0) throw ContractError("camera image size must be positive");
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) ||
      !(cy >= 0.0 && cy < static_cast<double>(height))) {
    throw ContractError("principal point lies outside the image");
  }
}

Point3 backproject_pixel(double u, double v, double depth, const CameraIntrinsics& intr) {
  return Point3{(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth};
}

PointCloud backproject(const DepthMap& depth, const CameraIntrinsics& intr, const RgbImage& rgb) {
  intr.validate();
  if (depth.width != intr.width || depth.height != intr.height || rgb.width != intr.width ||
      rgb.height != intr.height) {
    throw DimensionError("depth, RGB and intrinsics disagree on image size");
  }
  if (depth.values.size() != depth.width * depth.height ||
      rgb.pixels.size() != rgb.width * rgb.height * 3) {
    throw DimensionError("raster buffer does not match its dimensions");
  }
  PointCloud cloud;
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      const float z = depth.at(u, v);
      if (!(z > 0.0f) || !std::isfinite(z)) continue;
      cloud.points.push_back(backproject_pixel(static_cast<double>(u), static_cast<double>(v), z, intr));
      cloud.colors.push_back({rgb.at(u, v, 0) / 255.0f, rgb.at(u, v, 1) / 255.0f, rgb.at(u, v, 2) / 255.0f});
    }
  }
  return cloud;
}

Projection project(const Point3& p, const CameraIntrinsics& intr) {
  Projection out;
  if (!(p.z > 0.0)) return out;
  out.u = intr.fx * p.x / p.z + intr.cx;
  out.v = intr.fy * p.y / p.z + intr.cy;
  const bool inside = out.u >= -0.5 && out.u < static_cast<double>(intr.width) - 0.5 &&
                      out.v >= -0.5 && out.v < static_cast<double>(intr.height) - 0.5;
  out.status = inside ? ProjectionStatus::InFrame : ProjectionStatus::OutOfFrame;
  return out;
}

void BoundingBox::validate() const {
  if (!(max.x > min.x) || !(max.y > min.y) || !(max.z > min.z)) {
    throw ContractError("bounding box max must exceed min on every axis");
  }
}

bool BoundingBox::contains(const Point3& p) const {
  return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
         p.z <= max.z;
}

namespace {

std::size_t axis_cell(double value, double lo, double hi, std::size_t cells) {
  const double t = (value - lo) / (hi - lo) * static_cast<double>(cells);
  const auto idx = static_cast<std::size_t>(std::floor(t));
  return std::min(idx, cells - 1);
}

}  // namespace

std::array<std::size_t, 3> voxel_cell(const Point3& p, const BoundingBox& box, const GridResolution& res) {
  return {axis_cell(p.z, box.min.z, box.max.z, res.depth),
          axis_cell(p.y, box.min.y, box.max.y, res.height),
          axis_cell(p.x, box.min.x, box.max.x, res.width)};
}

VoxelGrid voxelize(const PointCloud& cloud, const BoundingBox& box, const GridResolution& res,
                   const VoxelFeatureSpec& spec) {
  box.validate();
  if (res.depth == 0 || res.height == 0 || res.width == 0) {
    throw ContractError("voxel grid resolution must be at least 1 per axis");
  }
  if (cloud.colors.size() != cloud.points.size()) {
    throw DimensionError("point cloud has mismatched position and color counts");
  }
  VoxelGrid grid;
  grid.resolution = res;
  grid.spec = spec;
  grid.channels = spec.grid_channels();
  const std::size_t cells = res.cells();
  grid.features.assign(cells * grid.channels, 0.0f);
  grid.counts.assign(cells, 0);

  // Sums accumulate in double, so reordering the cloud only perturbs results
  // far below float resolution.
  std::vector<std::size_t> cell_of(cloud.size(), cells);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const Point3& p = cloud.points[n];
    if (!box.contains(p)) {
      ++grid.discarded_count;
      continue;
    }
    const auto [i, j, k] = voxel_cell(p, box, res);
    cell_of[n] = grid.cell(i, j, k);
    ++grid.counts[cell_of[n]];
    ++grid.in_bounds_count;
  }

  const std::size_t sums_width = spec.mean_position ? 6 : 3;
  std::vector<double> sums(cells * sums_width, 0.0);
  const double ex = box.max.x - box.min.x, ey = box.max.y - box.min.y, ez = box.max.z - box.min.z;
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    if (cell_of[n] == cells) continue;
    double* s = sums.data() + cell_of[n] * sums_width;
    s[0] += cloud.colors[n][0];
    s[1] += cloud.colors[n][1];
    s[2] += cloud.colors[n][2];
    if (spec.mean_position) {
      const Point3& p = cloud.points[n];
      s[3] += (p.x - box.min.x) / ex;
      s[4] += (p.y - box.min.y) / ey;
      s[5] += (p.z - box.min.z) / ez;
    }
  }
  for (std::size_t c = 0; c < cells; ++c) {
    if (grid.counts[c] == 0) continue;
    ++grid.occupied_count;
    const double inv = 1.0 / grid.counts[c];
    float* f = grid.features.data() + c * grid.channels;
    for (std::size_t ch = 0; ch < sums_width; ++ch) {
      f[ch] = static_cast<float>(sums[c * sums_width + ch] * inv);
    }
    f[grid.channels - 1] = 1.0f;
  }
  return grid;
}

Tensor<float> flatten_voxels(const VoxelGrid& grid) {
  const GridResolution& res = grid.resolution;
  const std::size_t width = grid.spec.token_width();
  const std::size_t occupancy = grid.channels - 1;
  Tensor<float> tokens({res.cells(), width});
  for (std::size_t i = 0; i < res.depth; ++i) {
    for (std::size_t j = 0; j < res.height; ++j) {
      for (std::size_t k = 0; k < res.width; ++k) {
        const std::size_t cell = grid.cell(i, j, k);
        const float* src = grid.features.data() + cell * grid.channels;
        float* dst = tokens.data().data() + cell * width;
        std::copy(src, src + occupancy, dst);
        std::size_t at = occupancy;
        if (grid.spec.cell_center) {
          dst[at++] = static_cast<float>((static_cast<double>(k) + 0.5) / static_cast<double>(res.width));
          dst[at++] = static_cast<float>((static_cast<double>(j) + 0.5) / static_cast<double>(res.height));
          dst[at++] = static_cast<float>((static_cast<double>(i) + 0.5) / static_cast<double>(res.depth));
        }
        dst[at] = src[occupancy];
      }
    }
  }
  return tokens;
}

}  // namespace dalign
