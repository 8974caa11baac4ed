#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dalign/dataset.hpp"

namespace dalign {

// Scripted pick-and-place renderer. Scene units are centimetres in the camera
// frame (x right, y down, z forward); the table top is the plane y = 20.
struct SyntheticConfig {
  std::size_t width = 64;
  std::size_t height = 48;
  std::size_t frames = 40;
  double focal_scale = 0.9;  // fx = fy = focal_scale · width

  CameraIntrinsics intrinsics() const;
};

struct AxisBox {
  Point3 min, max;
  std::array<std::uint8_t, 3> color{};
};

// Per-frame pose of the scripted scene.
struct SceneState {
  double gripper_x = 0.0;
  double gripper_y = 0.0;       // palm bottom; fingers hang 10 below
  double finger_offset = 10.0;  // inner finger face distance from gripper_x
  Point3 block_center;          // 10 cm cube
};

struct EpisodeScript {
  std::array<std::uint8_t, 3> block_color{};
  double start_x = 0.0;
  double target_x = 0.0;
  double block_z = 95.0;
  std::vector<int> labels;
  std::vector<SceneState> states;
};

// Frame counts per phase: random weights in [0.7, 1.3], at least one frame
// each, summing to `frames`. ContractError for frames < 8.
std::array<std::size_t, kNumClasses> phase_lengths(std::size_t frames, Rng& rng);

EpisodeScript script_episode(const SyntheticConfig& config, int scene_id, std::uint64_t seed);

// Boxes visible in a state: wall, table, block, gripper palm and two fingers.
std::vector<AxisBox> scene_boxes(const SceneState& state, const std::array<std::uint8_t, 3>& block_color);

// Ray-cast render; depth is the camera-frame z of the first hit, 0 where no box is hit.
void render_scene(const std::vector<AxisBox>& boxes, const CameraIntrinsics& intrinsics, RgbImage& rgb,
                  DepthMap& depth);

EpisodeSequence generate_synthetic_episode(const SyntheticConfig& config, std::uint64_t seed,
                                           const std::string& episode_id = "ep_0000", int user_id = 0,
                                           int scene_id = 0);

// Writes `count` episodes ep_0000.. under `root`; episode i uses user i mod 5
// and scene (i / 5) mod 10. Returns the episode directories.
std::vector<std::filesystem::path> generate_corpus(const std::filesystem::path& root, std::size_t count,
                                                   const SyntheticConfig& config, std::uint64_t seed);

}  // namespace dalign
