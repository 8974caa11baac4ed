#include "dalign/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dalign/errors.hpp"

namespace dalign {

namespace fs = std::filesystem;

namespace {

const std::array<const char*, 11> kManifestFields = {"episode_id", "user_id", "scene_id", "frame_count",
                                                     "fx",         "fy",      "cx",       "cy",
                                                     "width",      "height",  "has_depth"};

std::string numbered(const char* pattern, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, index);
  return buf;
}

fs::path frame_path(const fs::path& dir, std::size_t t) { return dir / "frames" / numbered("frame_%05zu.ppm", t); }
fs::path depth_path(const fs::path& dir, std::size_t t) { return dir / "depth" / numbered("depth_%05zu.dpth", t); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_matching(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  if (!fs::is_directory(dir)) return 0;
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with(prefix) && entry.path().extension() == ext) ++n;
  }
  return n;
}

std::vector<int> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "frame_index,class_id") {
    throw FormatError(path.string() + ": expected header frame_index,class_id");
  }
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t index = 0;
    int cls = 0;
    char extra = 0;
    if (std::sscanf(line.c_str(), "%zu,%d%c", &index, &cls, &extra) != 2) {
      throw FormatError(path.string() + ": malformed label row '" + line + "'");
    }
    if (index != labels.size()) {
      throw IntegrityError(path.string() + ": frame_index " + std::to_string(index) + " out of sequence");
    }
    if (cls < 0 || cls >= static_cast<int>(kNumClasses)) {
      throw IntegrityError(path.string() + ": class id " + std::to_string(cls) + " out of range");
    }
    labels.push_back(cls);
  }
  return labels;
}

}  // namespace

bool EpisodeManifest::operator==(const EpisodeManifest& o) const {
  return episode_id == o.episode_id && user_id == o.user_id && scene_id == o.scene_id &&
         frame_count == o.frame_count && intrinsics.fx == o.intrinsics.fx && intrinsics.fy == o.intrinsics.fy &&
         intrinsics.cx == o.intrinsics.cx && intrinsics.cy == o.intrinsics.cy &&
         intrinsics.width == o.intrinsics.width && intrinsics.height == o.intrinsics.height &&
         has_depth == o.has_depth;
}

std::string manifest_to_json(const EpisodeManifest& m) {
  nlohmann::ordered_json j;
  j["episode_id"] = m.episode_id;
  j["user_id"] = m.user_id;
  j["scene_id"] = m.scene_id;
  j["frame_count"] = m.frame_count;
  j["fx"] = m.intrinsics.fx;
  j["fy"] = m.intrinsics.fy;
  j["cx"] = m.intrinsics.cx;
  j["cy"] = m.intrinsics.cy;
  j["width"] = m.intrinsics.width;
  j["height"] = m.intrinsics.height;
  j["has_depth"] = m.has_depth;
  return j.dump(2) + "\n";
}

EpisodeManifest manifest_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("manifest must be a JSON object");
  for (const char* field : kManifestFields) {
    if (!j.contains(field)) throw FormatError(std::string("manifest is missing field ") + field);
  }
  if (j.size() != kManifestFields.size()) throw FormatError("manifest has unexpected fields");
  EpisodeManifest m;
  try {
    m.episode_id = j.at("episode_id").get<std::string>();
    m.user_id = j.at("user_id").get<int>();
    m.scene_id = j.at("scene_id").get<int>();
    m.frame_count = j.at("frame_count").get<std::size_t>();
    m.intrinsics.fx = j.at("fx").get<double>();
    m.intrinsics.fy = j.at("fy").get<double>();
    m.intrinsics.cx = j.at("cx").get<double>();
    m.intrinsics.cy = j.at("cy").get<double>();
    m.intrinsics.width = j.at("width").get<std::size_t>();
    m.intrinsics.height = j.at("height").get<std::size_t>();
    m.has_depth = j.at("has_depth").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest field has the wrong type: ") + e.what());
  }
  if (m.episode_id.empty()) throw FormatError("manifest episode_id is empty");
  if (m.frame_count == 0) throw FormatError("manifest frame_count must be at least 1");
  try {
    m.intrinsics.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("manifest intrinsics invalid: ") + e.what());
  }
  return m;
}

void write_episode(const fs::path& dir, const EpisodeSequence& ep) {
  const EpisodeManifest& m = ep.manifest;
  if (ep.frames.size() != m.frame_count || ep.labels.size() != m.frame_count ||
      (m.has_depth && ep.depths.size() != m.frame_count)) {
    throw IntegrityError("episode " + m.episode_id + " holds data inconsistent with frame_count");
  }
  fs::create_directories(dir / "frames");
  if (m.has_depth) fs::create_directories(dir / "depth");
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest_to_json(m);
  }
  for (std::size_t t = 0; t < m.frame_count; ++t) {
    write_ppm(frame_path(dir, t), ep.frames[t]);
    if (m.has_depth) write_depth(depth_path(dir, t), ep.depths[t]);
  }
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
  labels << "frame_index,class_id\n";
  for (std::size_t t = 0; t < ep.labels.size(); ++t) labels << t << ',' << ep.labels[t] << '\n';
}

EpisodeSequence load_episode(const fs::path& path) {
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
  EpisodeSequence ep;
  ep.manifest = manifest_from_json(read_text(manifest_path));
  const EpisodeManifest& m = ep.manifest;
  const std::size_t t_count = m.frame_count;

  const std::size_t frames_found = count_matching(dir / "frames", "frame_", ".ppm");
  if (frames_found != t_count) {
    throw IntegrityError(dir.string() + ": manifest claims " + std::to_string(t_count) + " frames, found " +
                         std::to_string(frames_found));
  }
  if (m.has_depth) {
    const std::size_t depth_found = count_matching(dir / "depth", "depth_", ".dpth");
    if (depth_found != t_count) {
      throw IntegrityError(dir.string() + ": manifest claims " + std::to_string(t_count) + " depth maps, found " +
                           std::to_string(depth_found));
    }
  }
  ep.labels = read_labels(dir / "labels.csv");
  if (ep.labels.size() != t_count) {
    throw IntegrityError(dir.string() + ": manifest claims " + std::to_string(t_count) + " frames, labels.csv has " +
                         std::to_string(ep.labels.size()) + " rows");
  }
  ep.frames.reserve(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    const fs::path fp = frame_path(dir, t);
    if (!fs::exists(fp)) throw IntegrityError("missing frame file " + fp.string());
    ep.frames.push_back(read_ppm(fp));
    if (ep.frames.back().width != m.intrinsics.width || ep.frames.back().height != m.intrinsics.height) {
      throw IntegrityError(fp.string() + ": size disagrees with the manifest");
    }
    if (m.has_depth) {
      const fs::path dp = depth_path(dir, t);
      if (!fs::exists(dp)) throw IntegrityError("missing depth file " + dp.string());
      ep.depths.push_back(read_depth(dp));
      if (ep.depths.back().width != m.intrinsics.width || ep.depths.back().height != m.intrinsics.height) {
        throw IntegrityError(dp.string() + ": size disagrees with the manifest");
      }
    }
  }
  return ep;
}

std::vector<fs::path> list_episodes(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void SplitSpec::validate() const {
  if (!(train > 0 && val > 0 && test > 0)) throw ContractError("split fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");
}

SplitIndices split_dataset(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  if (n < 3) throw ContractError("splitting needs at least 3 episodes, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);
  // The epsilon keeps exact products such as 0.2·70 = 14 from flooring to 13.
  const auto n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(spec.test * static_cast<double>(n) + 1e-9));
  const std::size_t n_train = n - n_val - n_test;
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

std::array<double, kNumClasses> compute_class_weights(std::span<const int> labels) {
  std::array<std::size_t, kNumClasses> counts{};
  for (int id : labels) {
    check_class_id(id);
    ++counts[static_cast<std::size_t>(id)];
  }
  std::string missing;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) missing += (missing.empty() ? "" : ", ") + std::string(kClassNames[c]);
  }
  if (!missing.empty()) throw MissingClassError("no samples for class(es): " + missing);
  std::array<double, kNumClasses> w{};
  const auto total = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    w[c] = total / (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]));
  }
  return w;
}

}  // namespace dalign
