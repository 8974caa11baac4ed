#include "dalign/train_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "dalign/errors.hpp"

namespace dalign {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw FormatError("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw FormatError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& s) { return static_cast<std::size_t>(parse_u64(s)); }

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw FormatError("expected true or false, got '" + s + "'");
}

std::vector<double> parse_doubles(const std::string& s, std::size_t count) {
  const auto parts = split_commas(s);
  if (parts.size() != count) {
    throw FormatError("expected " + std::to_string(count) + " comma-separated values, got '" + s + "'");
  }
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(parse_double(p));
  return out;
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define SIZE_FIELD(key, member)                                                  \
  {                                                                              \
    key, {                                                                       \
      [](TrainConfig& c, const std::string& v) { c.member = parse_size(v); },    \
          [](const TrainConfig& c) { return std::to_string(c.member); }          \
    }                                                                            \
  }
#define DOUBLE_FIELD(key, member)                                                \
  {                                                                              \
    key, {                                                                       \
      [](TrainConfig& c, const std::string& v) { c.member = parse_double(v); },  \
          [](const TrainConfig& c) { return fmt_double(c.member); }              \
    }                                                                            \
  }

// Ordered as written by format_train_config.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"branch",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "human") c.branch = Branch::Human;
          else if (v == "robot") c.branch = Branch::Robot;
          else throw FormatError("branch must be human or robot, got '" + v + "'");
        },
        [](const TrainConfig& c) { return std::string(branch_name(c.branch)); }}},
      SIZE_FIELD("epochs", epochs),
      DOUBLE_FIELD("learning_rate", learning_rate),
      SIZE_FIELD("batch_size", batch_size),
      {"seed",
       {[](TrainConfig& c, const std::string& v) { c.seed = parse_u64(v); },
        [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      {"class_weighting",
       {[](TrainConfig& c, const std::string& v) { c.class_weighting = parse_bool(v); },
        [](const TrainConfig& c) { return std::string(c.class_weighting ? "true" : "false"); }}},
      DOUBLE_FIELD("alignment_lambda", alignment_lambda),
      DOUBLE_FIELD("stop_at_val_accuracy", stop_at_val_accuracy),
      DOUBLE_FIELD("split.train", split.train),
      DOUBLE_FIELD("split.val", split.val),
      DOUBLE_FIELD("split.test", split.test),
      {"split.seed",
       {[](TrainConfig& c, const std::string& v) { c.split.seed = parse_u64(v); },
        [](const TrainConfig& c) { return std::to_string(c.split.seed); }}},
      SIZE_FIELD("human.input_size", human.input_size),
      {"human.stage_widths",
       {[](TrainConfig& c, const std::string& v) {
          c.human.stage_widths.clear();
          for (const auto& p : split_commas(v)) c.human.stage_widths.push_back(parse_size(p));
        },
        [](const TrainConfig& c) {
          std::string s;
          for (std::size_t w : c.human.stage_widths) s += (s.empty() ? "" : ",") + std::to_string(w);
          return s;
        }}},
      SIZE_FIELD("human.lstm_hidden", human.lstm_hidden),
      SIZE_FIELD("human.lstm_layers", human.lstm_layers),
      SIZE_FIELD("human.mlp_hidden", human.mlp_hidden),
      DOUBLE_FIELD("human.dropout_rate", human.dropout_rate),
      SIZE_FIELD("robot.input_dim", robot.input_dim),
      SIZE_FIELD("robot.latent_dim", robot.latent_dim),
      SIZE_FIELD("robot.num_latents", robot.num_latents),
      SIZE_FIELD("robot.cross_heads", robot.cross_heads),
      SIZE_FIELD("robot.self_layers", robot.self_layers),
      SIZE_FIELD("robot.self_heads", robot.self_heads),
      SIZE_FIELD("robot.mlp_hidden", robot.mlp_hidden),
      SIZE_FIELD("robot.max_tokens", robot.max_tokens),
      SIZE_FIELD("robot.ff_expansion", robot.ff_expansion),
      {"robot.grid",
       {[](TrainConfig& c, const std::string& v) {
          const auto d = split_commas(v);
          if (d.size() != 3) throw FormatError("robot.grid needs D,H,W, got '" + v + "'");
          c.voxels.grid = {parse_size(d[0]), parse_size(d[1]), parse_size(d[2])};
        },
        [](const TrainConfig& c) {
          const GridResolution& g = c.voxels.grid;
          return std::to_string(g.depth) + "," + std::to_string(g.height) + "," + std::to_string(g.width);
        }}},
      {"robot.bbox",
       {[](TrainConfig& c, const std::string& v) {
          const auto b = parse_doubles(v, 6);
          c.voxels.bbox = {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
        },
        [](const TrainConfig& c) {
          const BoundingBox& b = c.voxels.bbox;
          std::string s;
          for (double v : {b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z}) {
            s += (s.empty() ? "" : ",") + fmt_double(v);
          }
          return s;
        }}},
      {"robot.mean_position",
       {[](TrainConfig& c, const std::string& v) { c.voxels.features.mean_position = parse_bool(v); },
        [](const TrainConfig& c) { return std::string(c.voxels.features.mean_position ? "true" : "false"); }}},
      {"robot.occupied_only",
       {[](TrainConfig& c, const std::string& v) { c.voxels.occupied_only = parse_bool(v); },
        [](const TrainConfig& c) { return std::string(c.voxels.occupied_only ? "true" : "false"); }}},
      {"robot.cell_center",
       {[](TrainConfig& c, const std::string& v) { c.voxels.features.cell_center = parse_bool(v); },
        [](const TrainConfig& c) { return std::string(c.voxels.features.cell_center ? "true" : "false"); }}},
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD

}  // namespace

const char* branch_name(Branch branch) { return branch == Branch::Human ? "human" : "robot"; }

Tensor<float> VoxelPipeline::tokens(const RgbImage& rgb, const DepthMap& depth,
                                    const CameraIntrinsics& intrinsics) const {
  const VoxelGrid voxels = voxelize(backproject(depth, intrinsics, rgb), bbox, grid, features);
  Tensor<float> all = flatten_voxels(voxels);
  if (!occupied_only || voxels.occupied_count == 0) return all;
  const std::size_t width = features.token_width();
  Tensor<float> kept({voxels.occupied_count, width});
  const float* src = all.data().data();
  float* dst = kept.data().data();
  for (std::size_t cell = 0; cell < voxels.counts.size(); ++cell) {
    if (voxels.counts[cell] == 0) continue;
    std::copy(src + cell * width, src + (cell + 1) * width, dst);
    dst += width;
  }
  return kept;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ParameterError("epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (batch_size < 1) throw ParameterError("batch_size must be at least 1");
  if (!(alignment_lambda >= 0.0)) throw ParameterError("alignment_lambda must be non-negative");
  if (!(stop_at_val_accuracy >= 0.0 && stop_at_val_accuracy <= 1.0)) {
    throw ParameterError("stop_at_val_accuracy must lie in [0, 1]");
  }
  try {
    split.validate();
    human.validate();
    robot.validate();
    voxels.bbox.validate();
  } catch (const ContractError& e) {
    throw ParameterError(e.what());
  }
  const GridResolution& g = voxels.grid;
  if (g.depth == 0 || g.height == 0 || g.width == 0) throw ParameterError("robot.grid entries must be positive");
  if (robot.input_dim != voxels.features.token_width()) {
    throw ParameterError("robot input width " + std::to_string(robot.input_dim) + " does not match voxel tokens of width " +
                         std::to_string(voxels.features.token_width()));
  }
  if (g.cells() > robot.max_tokens) {
    throw ParameterError("robot.grid has " + std::to_string(g.cells()) + " cells, above robot.max_tokens " +
                         std::to_string(robot.max_tokens));
  }
}

TrainConfig default_train_config(Branch branch) {
  TrainConfig c;
  c.branch = branch;
  if (branch == Branch::Human) {
    c.epochs = 200;
    c.batch_size = 16;
  } else {
    c.epochs = 150;
    c.batch_size = 10;
  }
  return c;
}

TrainConfig reduced_train_config(Branch branch) {
  TrainConfig c = default_train_config(branch);
  c.learning_rate = 1e-3;
  c.human.input_size = 32;
  c.human.stage_widths = {8, 16, 32, 512};
  c.robot.latent_dim = 64;
  c.robot.num_latents = 32;
  c.robot.cross_heads = 4;
  c.robot.self_heads = 4;
  c.robot.mlp_hidden = 64;
  c.voxels.grid = {12, 12, 12};
  // Synthetic workspace: above the table top, in front of the back wall.
  c.voxels.bbox = {{-50.0, -40.0, 75.0}, {50.0, 22.0, 135.0}};
  if (branch == Branch::Human) c.batch_size = 4;
  return c;
}

TrainConfig parse_train_config(const std::string& text) {
  std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  std::string branch;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw FormatError("config line " + std::to_string(number) + ": duplicate key " + key);
    if (key == "branch") branch = value;
    entries.emplace_back(number, key, value);
  }
  TrainConfig config = default_train_config(branch == "robot" ? Branch::Robot : Branch::Human);
  std::map<std::string, const Field*> lookup;
  for (const auto& [key, field] : fields()) lookup[key] = &field;
  for (const auto& [n, key, value] : entries) {
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw FormatError("config line " + std::to_string(n) + ": unknown key " + key);
    try {
      it->second->set(config, value);
    } catch (const FormatError& e) {
      throw FormatError("config line " + std::to_string(n) + " (" + key + "): " + e.what());
    }
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace dalign
