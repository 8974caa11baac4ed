#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dalign/dataset.hpp"
#include "dalign/geometry.hpp"
#include "dalign/human_encoder.hpp"
#include "dalign/robot_encoder.hpp"

namespace dalign {

enum class Branch { Human, Robot };

const char* branch_name(Branch branch);

// Voxel input pipeline of the robot branch.
struct VoxelPipeline {
  GridResolution grid;
  BoundingBox bbox;
  VoxelFeatureSpec features;
  // Keep only occupied cells (N varies per frame up to D·H·W). A frame with no
  // occupied cell falls back to the full grid.
  bool occupied_only = true;

  // backproject -> voxelize -> flatten, giving [N × token_width].
  Tensor<float> tokens(const RgbImage& rgb, const DepthMap& depth, const CameraIntrinsics& intrinsics) const;
};

struct TrainConfig {
  Branch branch = Branch::Human;
  std::size_t epochs = 200;
  double learning_rate = 1e-4;
  // Episodes per step for the human branch, frames per step for the robot branch.
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool class_weighting = true;
  // Weight of the soft alignment term when both branches are trained jointly.
  double alignment_lambda = 0.0;
  // Training ends after the first epoch whose validation frame accuracy
  // reaches this value (in [0, 1]); 0 runs every epoch.
  double stop_at_val_accuracy = 0.0;
  SplitSpec split;
  HumanEncoderConfig human;
  PerceiverConfig robot;
  VoxelPipeline voxels;

  // ParameterError for any out-of-range field.
  void validate() const;
};

// Full-size defaults for each branch.
TrainConfig default_train_config(Branch branch);
// Desk-scale configurations used for synthetic runs.
TrainConfig reduced_train_config(Branch branch);

// Flat "key = value" text, one entry per line; '#' starts a comment. Keys not
// present keep the defaults of `branch` (read first, else human). FormatError
// names the line of an unknown, duplicate or malformed entry.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
// Every key, values printed so that parsing reproduces the config exactly.
std::string format_train_config(const TrainConfig& config);

}  // namespace dalign
