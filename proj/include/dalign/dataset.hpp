#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dalign/classes.hpp"
#include "dalign/geometry.hpp"
#include "dalign/image.hpp"
#include "dalign/random.hpp"

namespace dalign {

// Contents of <episode>/manifest.json.
struct EpisodeManifest {
  std::string episode_id;
  int user_id = 0;
  int scene_id = 0;
  std::size_t frame_count = 0;
  CameraIntrinsics intrinsics;
  bool has_depth = false;

  bool operator==(const EpisodeManifest&) const;
};

struct EpisodeSequence {
  EpisodeManifest manifest;
  std::vector<RgbImage> frames;
  std::vector<DepthMap> depths;  // empty unless manifest.has_depth
  std::vector<int> labels;       // one class id per frame
};

std::string manifest_to_json(const EpisodeManifest& manifest);
// FormatError on malformed JSON, missing or extra fields, or bad values.
EpisodeManifest manifest_from_json(const std::string& text);

// Writes manifest.json, frames/frame_%05d.ppm, depth/depth_%05d.dpth and
// labels.csv under `dir` (created if needed).
void write_episode(const std::filesystem::path& dir, const EpisodeSequence& episode);

// Accepts an episode directory or its manifest.json. Everything is validated
// before returning: IntegrityError when file or label counts disagree with
// frame_count, IoError naming the path of an unreadable file.
EpisodeSequence load_episode(const std::filesystem::path& path);

// Episode directories (those holding manifest.json) directly under `root`, sorted by name.
std::vector<std::filesystem::path> list_episodes(const std::filesystem::path& root);

struct SplitSpec {
  double train = 0.70;
  double val = 0.20;
  double test = 0.10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Seeded shuffle of 0..n-1, then val = floor(val·n) and test = floor(test·n)
// items, with the remainder going to train. ContractError for n < 3.
SplitIndices split_dataset(std::size_t n, const SplitSpec& spec);

// w_c = N / (8·N_c). MissingClassError naming every absent class.
std::array<double, kNumClasses> compute_class_weights(std::span<const int> labels);

}  // namespace dalign
