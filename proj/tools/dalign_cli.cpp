// Command-line front end: data generation, training, evaluation, alignment,
// voxel export and gradient checks.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "dalign/errors.hpp"
#include "dalign/gradient_suite.hpp"
#include "dalign/harness.hpp"
#include "dalign/synthetic.hpp"

using namespace dalign;
namespace fs = std::filesystem;

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text, std::size_t count, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(std::stod(item));
      } else {
        out.push_back(static_cast<T>(std::stoull(item)));
      }
    } catch (const std::exception&) {
      throw ContractError(std::string(what) + ": cannot parse '" + item + "'");
    }
  }
  if (out.size() != count) {
    throw ContractError(std::string(what) + " needs " + std::to_string(count) + " comma-separated values");
  }
  return out;
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

int gen_data(std::size_t episodes, std::size_t frames, std::uint64_t seed, std::size_t width, std::size_t height,
             const fs::path& out) {
  SyntheticConfig sc;
  sc.frames = frames;
  sc.width = width;
  sc.height = height;
  const auto dirs = generate_corpus(out, episodes, sc, seed);
  std::cout << "wrote " << dirs.size() << " episodes of " << frames << " frames to " << out.string() << "\n";
  return 0;
}

int train(Branch branch, const fs::path& config_path, const fs::path& data, const fs::path& out,
          std::optional<std::uint64_t> seed) {
  TrainConfig config = load_train_config(config_path);
  if (config.branch != branch) {
    throw ContractError(config_path.string() + " configures the " + branch_name(config.branch) + " branch");
  }
  if (seed) config.seed = *seed;
  const auto episodes = load_corpus(data);
  std::printf("%-6s %-11s %-11s %-9s %-9s\n", "epoch", "train_loss", "val_loss", "val_acc", "seconds");
  const TrainResult r = train_branch(config, episodes, [](const EpochRecord& e) {
    std::printf("%-6zu %-11.6f %-11.6f %-9.4f %-9.1f\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.seconds);
    std::fflush(stdout);
  });
  fs::create_directories(out);
  save_checkpoint(r.best, out / "best.ckpt");
  write_curve_csv(out / "curves.csv", r.curve);
  std::ofstream(out / "config.txt") << format_train_config(config);
  nlohmann::ordered_json summary;
  summary["branch"] = branch_name(branch);
  summary["best_epoch"] = r.best_epoch;
  summary["best_val_accuracy"] = r.best_val_accuracy;
  summary["epochs_run"] = r.curve.size() - 1;
  summary["class_weights"] = r.class_weights;
  for (const auto& [name, part] : {std::pair{"train", &r.split.train}, {"val", &r.split.val}, {"test", &r.split.test}}) {
    auto& ids = summary["split"][name] = nlohmann::ordered_json::array();
    for (std::size_t i : *part) ids.push_back(episodes[i].manifest.episode_id);
  }
  std::ofstream(out / "summary.json") << summary.dump(2) << "\n";
  std::cout << "best epoch " << r.best_epoch << ", val accuracy " << r.best_val_accuracy << "; checkpoint "
            << (out / "best.ckpt").string() << "\n";
  return 0;
}

int eval(const fs::path& ckpt, const fs::path& data, const std::string& split, const fs::path& out) {
  const BranchModel model = BranchModel::from_checkpoint(load_checkpoint(ckpt));
  const auto episodes = select_split(load_corpus(data), model.config().split, split);
  if (episodes.empty()) throw ContractError("split '" + split + "' is empty");
  const EvalReport report = evaluate(model, episodes);
  write_eval_report(out, report);
  std::printf("%s branch, %s split: %zu frames, frame accuracy %.2f%%", branch_name(model.branch()), split.c_str(),
              report.frames, report.overall_accuracy);
  if (report.mean_class_accuracy) std::printf(", mean class accuracy %.2f%%", *report.mean_class_accuracy);
  std::printf("\n");
  return 0;
}

int align(const fs::path& human_ckpt, const fs::path& robot_ckpt, const fs::path& data,
          const std::optional<fs::path>& robot_data, const std::string& split, const fs::path& out) {
  const BranchModel human = BranchModel::from_checkpoint(load_checkpoint(human_ckpt));
  const BranchModel robot = BranchModel::from_checkpoint(load_checkpoint(robot_ckpt));
  const auto human_eps = select_split(load_corpus(data), human.config().split, split);
  const auto robot_eps = robot_data ? select_split(load_corpus(*robot_data), human.config().split, split) : human_eps;
  const AlignmentRun run = align_episodes(human, robot, human_eps, robot_eps);
  for (const auto& [id, reason] : run.skipped) std::cerr << "skipped " << id << ": " << reason << "\n";
  write_alignment_run(out, run);
  if (run.corpus_mean) {
    std::printf("%zu pairs, corpus mean S = %.6f\n", run.pairs.size(), *run.corpus_mean);
  } else {
    std::printf("no pairs aligned\n");
  }
  return run.pairs.empty() ? 1 : 0;
}

// "VOXG", u32 frames, u32 D, H, W, u32 token width, then per frame the
// D·H·W tokens as little-endian f32.
int voxelize_episode(const fs::path& episode, const std::string& grid_text, const std::string& bbox_text,
                     const fs::path& out) {
  const auto g = parse_list<std::size_t>(grid_text, 3, "--grid");
  const auto b = parse_list<double>(bbox_text, 6, "--bbox");
  VoxelPipeline voxels;
  voxels.grid = {g[0], g[1], g[2]};
  voxels.bbox = {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
  voxels.occupied_only = false;
  const EpisodeSequence ep = load_episode(episode);
  const auto frames = robot_inputs(ep, voxels);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream file(out, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + out.string());
  file.write("VOXG", 4);
  put_u32(file, static_cast<std::uint32_t>(frames.size()));
  for (std::size_t d : g) put_u32(file, static_cast<std::uint32_t>(d));
  put_u32(file, static_cast<std::uint32_t>(voxels.features.token_width()));
  std::size_t occupied = 0;
  for (const Tensor<float>& tokens : frames) {
    const std::vector<float> values = tokens.to_vector();
    for (std::size_t n = 0; n < tokens.dim(0); ++n) occupied += values[n * tokens.dim(1) + tokens.dim(1) - 1] > 0.0f;
    for (float v : values) put_u32(file, std::bit_cast<std::uint32_t>(v));
  }
  std::printf("%zu frames, %zu tokens each, %.1f occupied on average\n", frames.size(), frames.front().dim(0),
              static_cast<double>(occupied) / static_cast<double>(frames.size()));
  return 0;
}

int gradcheck(const std::string& module) {
  bool ok = true;
  for (const GradientSuiteEntry& e : run_gradient_suite(module)) {
    std::printf("%-4s %-10s %-24s max rel error %.3e over %zu entries (%.2fs)\n", e.result.passed ? "ok" : "FAIL",
                e.module.c_str(), e.name.c_str(), e.result.max_relative_error, e.result.entries_checked, e.seconds);
    ok = ok && e.result.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-intention / robot-action alignment toolkit"};
  app.require_subcommand(1);

  std::size_t episodes = 30, frames = 40, width = 64, height = 48;
  std::uint64_t seed = 0;
  fs::path out, data, config, ckpt, human_ckpt, robot_ckpt, episode;
  std::string split = "val", grid = "21,21,21", bbox = "-50,-50,50,50,50,150", module = "all";

  auto* gen = app.add_subcommand("gen-data", "Render a seeded synthetic corpus");
  gen->add_option("--episodes", episodes, "Episode count")->check(CLI::PositiveNumber);
  gen->add_option("--frames", frames, "Frames per episode (at least 8)");
  gen->add_option("--seed", seed, "Corpus seed");
  gen->add_option("--width", width, "Image width")->check(CLI::PositiveNumber);
  gen->add_option("--height", height, "Image height")->check(CLI::PositiveNumber);
  gen->add_option("--out", out, "Output directory")->required();

  std::optional<std::uint64_t> train_seed;
  auto add_train = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Flat key = value config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--data", data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--seed", train_seed, "Override the config seed");
    return sub;
  };
  auto* train_h = add_train("train-human", "Train the human intention branch");
  auto* train_r = add_train("train-robot", "Train the robot action branch");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  ev->add_option("--out", out, "Report directory")->required();

  std::optional<fs::path> robot_data;
  std::string align_split = "all";
  auto* al = app.add_subcommand("align", "Score human/robot agreement over paired episodes");
  al->add_option("--human-ckpt", human_ckpt, "Human checkpoint")->required()->check(CLI::ExistingFile);
  al->add_option("--robot-ckpt", robot_ckpt, "Robot checkpoint")->required()->check(CLI::ExistingFile);
  al->add_option("--data", data, "Corpus of human episodes")->required()->check(CLI::ExistingDirectory);
  al->add_option("--robot-data", robot_data, "Corpus of robot episodes (default: --data)");
  al->add_option("--split", align_split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  al->add_option("--out", out, "Report directory")->required();

  auto* vox = app.add_subcommand("voxelize", "Export the flattened voxel tokens of an episode");
  vox->add_option("--episode", episode, "Episode directory")->required()->check(CLI::ExistingDirectory);
  vox->add_option("--grid", grid, "D,H,W");
  vox->add_option("--bbox", bbox, "x0,y0,z0,x1,y1,z1");
  vox->add_option("--out", out, "Output file")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in 64-bit");
  gc->add_option("--module", module, "all, autodiff, human, robot or alignment");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return gen_data(episodes, frames, seed, width, height, out);
    if (*train_h) return train(Branch::Human, config, data, out, train_seed);
    if (*train_r) return train(Branch::Robot, config, data, out, train_seed);
    if (*ev) return eval(ckpt, data, split, out);
    if (*al) return align(human_ckpt, robot_ckpt, data, robot_data, align_split, out);
    if (*vox) return voxelize_episode(episode, grid, bbox, out);
    if (*gc) return gradcheck(module);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
