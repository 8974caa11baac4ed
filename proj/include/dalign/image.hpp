#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dalign {

// 8-bit RGB raster, row-major, interleaved channels.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t u, std::size_t v, std::size_t ch) { return pixels[(v * width + u) * 3 + ch]; }
  std::uint8_t at(std::size_t u, std::size_t v, std::size_t ch) const {
    return pixels[(v * width + u) * 3 + ch];
  }
  bool operator==(const RgbImage&) const = default;
};

// Depth raster in scene units along the optical axis; 0 marks an invalid pixel.
struct DepthMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  DepthMap() = default;
  DepthMap(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0.0f) {}

  float& at(std::size_t u, std::size_t v) { return values[v * width + u]; }
  float at(std::size_t u, std::size_t v) const { return values[v * width + u]; }
  bool operator==(const DepthMap&) const = default;
};

// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

// "DPTH" magic, little-endian u32 width, u32 height, then row-major f32 values.
void write_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth(const std::filesystem::path& path);

}  // namespace dalign
