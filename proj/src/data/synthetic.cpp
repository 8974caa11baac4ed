#include "dalign/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "dalign/errors.hpp"

namespace dalign {

namespace {

constexpr double kTableTop = 20.0;
constexpr double kBlockHalf = 5.0;
constexpr double kLift = 30.0;
constexpr double kFingerOpen = 10.0;
constexpr double kFingerClosed = kBlockHalf;
constexpr double kFingerWidth = 1.5;
constexpr double kFingerLength = 10.0;
constexpr double kPalmHalfWidth = 8.0;  // covers the closed fingers only; open fingers hang outside
constexpr double kPalmHeight = 4.0;
constexpr double kHomeLift = 30.0;
constexpr double kHomeOffset = 15.0;

const std::array<std::array<std::uint8_t, 3>, 10> kBlockPalette = {{{220, 40, 40},
                                                                     {40, 170, 60},
                                                                     {40, 80, 220},
                                                                     {230, 200, 40},
                                                                     {200, 60, 200},
                                                                     {40, 200, 210},
                                                                     {240, 130, 30},
                                                                     {140, 90, 220},
                                                                     {120, 200, 40},
                                                                     {230, 110, 150}}};

double lerp(double a, double b, double s) { return a + (b - a) * s; }

// Splits one seed into independent streams.
std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Palm y such that fingertips sit on the table when the block rests on it.
double grasp_y() { return kTableTop - kFingerLength; }

}  // namespace

CameraIntrinsics SyntheticConfig::intrinsics() const {
  CameraIntrinsics c;
  c.width = width;
  c.height = height;
  c.fx = c.fy = focal_scale * static_cast<double>(width);
  c.cx = (static_cast<double>(width) - 1.0) / 2.0;
  c.cy = (static_cast<double>(height) - 1.0) / 2.0;
  return c;
}

std::array<std::size_t, kNumClasses> phase_lengths(std::size_t frames, Rng& rng) {
  if (frames < kNumClasses) {
    throw ContractError("a synthetic episode needs at least 8 frames to cover every phase, got " +
                        std::to_string(frames));
  }
  std::array<double, kNumClasses> w{};
  for (double& v : w) v = rng.uniform(0.7, 1.3);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  // One frame per phase up front, the rest shared by largest remainder.
  const auto spare = static_cast<double>(frames - kNumClasses);
  std::array<std::size_t, kNumClasses> len{};
  std::array<double, kNumClasses> frac{};
  std::size_t used = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double share = spare * w[c] / total;
    len[c] = 1 + static_cast<std::size_t>(std::floor(share));
    frac[c] = share - std::floor(share);
    used += len[c];
  }
  std::array<std::size_t, kNumClasses> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; used < frames; ++i, ++used) ++len[order[i % kNumClasses]];
  return len;
}

EpisodeScript script_episode(const SyntheticConfig& config, int scene_id, std::uint64_t seed) {
  Rng rng(mix(seed, 1));
  EpisodeScript s;
  s.block_color = kBlockPalette[static_cast<std::size_t>(scene_id) % kBlockPalette.size()];
  s.start_x = -25.0 + rng.uniform(-5.0, 5.0);
  s.target_x = 25.0 + rng.uniform(-5.0, 5.0);
  s.block_z = 95.0 + rng.uniform(-5.0, 5.0);
  const auto lengths = phase_lengths(config.frames, rng);

  const double rest_y = kTableTop - kBlockHalf;  // block center on the table
  const double gy0 = grasp_y();
  const double home_y = gy0 - kHomeLift;
  for (std::size_t phase = 0; phase < kNumClasses; ++phase) {
    const std::size_t n = lengths[phase];
    for (std::size_t k = 0; k < n; ++k) {
      // Mid-step progress: a phase never reaches its end pose, so neighbouring
      // phases do not share frames.
      const double p = static_cast<double>(k + 1) / static_cast<double>(n + 1);
      SceneState st;
      st.block_center = {s.start_x, rest_y, s.block_z};
      st.finger_offset = kFingerOpen;
      switch (static_cast<ActionClass>(phase)) {
        case ActionClass::Reaching:
          st.gripper_x = lerp(s.start_x - kHomeOffset, s.start_x, p);
          st.gripper_y = lerp(home_y, gy0, p);
          break;
        case ActionClass::Grasping:
          st.gripper_x = s.start_x;
          st.gripper_y = gy0;
          st.finger_offset = lerp(kFingerOpen, kFingerClosed, p);
          break;
        case ActionClass::Lifting:
          st.gripper_x = s.start_x;
          st.gripper_y = gy0 - kLift * p;
          st.finger_offset = kFingerClosed;
          st.block_center.y = rest_y - kLift * p;
          break;
        case ActionClass::Holding:
          st.gripper_x = s.start_x;
          st.gripper_y = gy0 - kLift;
          st.finger_offset = kFingerClosed;
          st.block_center.y = rest_y - kLift;
          break;
        case ActionClass::Transporting:
          st.gripper_x = lerp(s.start_x, s.target_x, p);
          st.gripper_y = gy0 - kLift;
          st.finger_offset = kFingerClosed;
          st.block_center = {st.gripper_x, rest_y - kLift, s.block_z};
          break;
        case ActionClass::Placing:
          st.gripper_x = s.target_x;
          st.gripper_y = gy0 - kLift * (1.0 - p);
          st.finger_offset = kFingerClosed;
          st.block_center = {s.target_x, rest_y - kLift * (1.0 - p), s.block_z};
          break;
        case ActionClass::Releasing:
          st.gripper_x = s.target_x;
          st.gripper_y = gy0;
          st.finger_offset = lerp(kFingerClosed, kFingerOpen, p);
          st.block_center.x = s.target_x;
          break;
        case ActionClass::Nothing:
          st.gripper_x = lerp(s.target_x, s.target_x + kHomeOffset, p);
          st.gripper_y = lerp(gy0, home_y, p);
          st.block_center.x = s.target_x;
          break;
      }
      s.labels.push_back(static_cast<int>(phase));
      s.states.push_back(st);
    }
  }
  return s;
}

std::vector<AxisBox> scene_boxes(const SceneState& st, const std::array<std::uint8_t, 3>& block_color) {
  std::vector<AxisBox> boxes;
  boxes.push_back({{-400, -400, 140}, {400, 400, 141}, {200, 200, 190}});      // wall
  boxes.push_back({{-60, kTableTop, 70}, {60, 60, 140}, {150, 105, 60}});      // table
  const Point3& b = st.block_center;
  boxes.push_back({{b.x - kBlockHalf, b.y - kBlockHalf, b.z - kBlockHalf},
                   {b.x + kBlockHalf, b.y + kBlockHalf, b.z + kBlockHalf},
                   block_color});
  const std::array<std::uint8_t, 3> metal{60, 60, 70};
  const double gx = st.gripper_x, gy = st.gripper_y, z0 = b.z - kBlockHalf, z1 = b.z + kBlockHalf;
  const double palm_half = std::max(kPalmHalfWidth, st.finger_offset + kFingerWidth);
  boxes.push_back({{gx - palm_half, gy - kPalmHeight, z0}, {gx + palm_half, gy, z1}, metal});
  const double w = st.finger_offset;
  boxes.push_back({{gx - w - kFingerWidth, gy, z0}, {gx - w, gy + kFingerLength, z1}, metal});
  boxes.push_back({{gx + w, gy, z0}, {gx + w + kFingerWidth, gy + kFingerLength, z1}, metal});
  return boxes;
}

void render_scene(const std::vector<AxisBox>& boxes, const CameraIntrinsics& intr, RgbImage& rgb, DepthMap& depth) {
  rgb = RgbImage(intr.width, intr.height);
  depth = DepthMap(intr.width, intr.height);
  for (std::size_t v = 0; v < intr.height; ++v) {
    for (std::size_t u = 0; u < intr.width; ++u) {
      // Ray (dx, dy, 1)·t from the origin; t is the hit's z.
      const double d[3] = {(static_cast<double>(u) - intr.cx) / intr.fx,
                           (static_cast<double>(v) - intr.cy) / intr.fy, 1.0};
      double best = std::numeric_limits<double>::infinity();
      int best_axis = -1;
      const AxisBox* hit = nullptr;
      for (const AxisBox& box : boxes) {
        const double lo[3] = {box.min.x, box.min.y, box.min.z};
        const double hi[3] = {box.max.x, box.max.y, box.max.z};
        double t_near = 0.0, t_far = std::numeric_limits<double>::infinity();
        int axis = -1;
        bool miss = false;
        for (int a = 0; a < 3 && !miss; ++a) {
          if (d[a] == 0.0) {
            miss = lo[a] > 0.0 || hi[a] < 0.0;
            continue;
          }
          double t0 = lo[a] / d[a], t1 = hi[a] / d[a];
          if (t0 > t1) std::swap(t0, t1);
          if (t0 > t_near) t_near = t0, axis = a;
          t_far = std::min(t_far, t1);
          miss = t_near > t_far;
        }
        if (miss || axis < 0 || t_near >= best) continue;
        best = t_near;
        best_axis = axis;
        hit = &box;
      }
      if (!hit) continue;
      // Flat shading by face orientation: front faces brightest.
      const double shade = best_axis == 2 ? 1.0 : best_axis == 1 ? 0.8 : 0.65;
      for (std::size_t c = 0; c < 3; ++c) {
        rgb.at(u, v, c) = static_cast<std::uint8_t>(std::lround(hit->color[c] * shade));
      }
      depth.at(u, v) = static_cast<float>(best);
    }
  }
}

EpisodeSequence generate_synthetic_episode(const SyntheticConfig& config, std::uint64_t seed,
                                           const std::string& episode_id, int user_id, int scene_id) {
  const EpisodeScript script = script_episode(config, scene_id, seed);
  EpisodeSequence ep;
  ep.manifest.episode_id = episode_id;
  ep.manifest.user_id = user_id;
  ep.manifest.scene_id = scene_id;
  ep.manifest.frame_count = config.frames;
  ep.manifest.intrinsics = config.intrinsics();
  ep.manifest.has_depth = true;
  ep.labels = script.labels;
  for (const SceneState& st : script.states) {
    RgbImage rgb;
    DepthMap depth;
    render_scene(scene_boxes(st, script.block_color), ep.manifest.intrinsics, rgb, depth);
    ep.frames.push_back(std::move(rgb));
    ep.depths.push_back(std::move(depth));
  }
  return ep;
}

std::vector<std::filesystem::path> generate_corpus(const std::filesystem::path& root, std::size_t count,
                                                   const SyntheticConfig& config, std::uint64_t seed) {
  std::vector<std::filesystem::path> dirs;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "ep_%04zu", i);
    const int user = static_cast<int>(i % 5), scene = static_cast<int>((i / 5) % 10);
    const EpisodeSequence ep = generate_synthetic_episode(config, mix(seed, 1000 + i), id, user, scene);
    dirs.push_back(root / id);
    write_episode(dirs.back(), ep);
  }
  return dirs;
}

}  // namespace dalign
