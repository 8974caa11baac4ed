#include "dalign/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <json.hpp>
#include <numeric>

#include "dalign/adam.hpp"
#include "dalign/errors.hpp"
#include "dalign/ops.hpp"

namespace dalign {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigBlock = "meta/config";

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string join_percent(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

nlohmann::ordered_json optional_json(std::optional<double> v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

BranchModel::BranchModel(const TrainConfig& config) : config_(config) {
  config_.validate();
  if (config_.branch == Branch::Human) {
    human_ = std::make_unique<HumanEncoder<float>>(config_.human);
  } else {
    robot_ = std::make_unique<PerceiverEncoder<float>>(config_.robot);
  }
}

BranchModel::BranchModel(const TrainConfig& config, Rng& rng) : BranchModel(config) {
  if (human_) human_->initialize(rng);
  if (robot_) robot_->initialize(rng);
}

BranchModel BranchModel::from_checkpoint(const Checkpoint& ckpt) {
  const CheckpointBlock* meta = ckpt.find(kConfigBlock);
  if (!meta) throw FormatError("checkpoint has no meta/config block");
  std::string text;
  for (float byte : meta->values) {
    if (!(byte >= 0.0f && byte <= 255.0f) || byte != std::floor(byte)) {
      throw FormatError("meta/config block does not hold bytes");
    }
    text.push_back(static_cast<char>(static_cast<unsigned char>(byte)));
  }
  BranchModel model(parse_train_config(text));
  load_params(ckpt, model.params());
  if (model.human_) model.human_->mark_initialized();
  if (model.robot_) model.robot_->mark_initialized();
  return model;
}

HumanEncoder<float>& BranchModel::human() {
  if (!human_) throw ContractError("model is a robot branch");
  return *human_;
}
const HumanEncoder<float>& BranchModel::human() const {
  if (!human_) throw ContractError("model is a robot branch");
  return *human_;
}
PerceiverEncoder<float>& BranchModel::robot() {
  if (!robot_) throw ContractError("model is a human branch");
  return *robot_;
}
const PerceiverEncoder<float>& BranchModel::robot() const {
  if (!robot_) throw ContractError("model is a human branch");
  return *robot_;
}
ParameterStore<float>& BranchModel::params() { return human_ ? human_->params() : robot_->params(); }
const ParameterStore<float>& BranchModel::params() const { return human_ ? human_->params() : robot_->params(); }

Checkpoint BranchModel::to_checkpoint() const {
  Checkpoint ckpt = checkpoint_from_params(params());
  // The config text rides along one byte per float, which f32 stores exactly.
  const std::string text = format_train_config(config_);
  CheckpointBlock meta{kConfigBlock, {text.size()}, {}};
  for (char c : text) meta.values.push_back(static_cast<float>(static_cast<unsigned char>(c)));
  ckpt.blocks.push_back(std::move(meta));
  return ckpt;
}

Tensor<float> human_input(const EpisodeSequence& episode, std::size_t input_size) {
  const std::size_t frame_size = 3 * input_size * input_size;
  Tensor<float> clip({episode.frames.size(), 3, input_size, input_size});
  float* dst = clip.data().data();
  for (const RgbImage& frame : episode.frames) {
    const Tensor<float> one = preprocess_frame(frame, input_size);
    std::copy(one.data().begin(), one.data().end(), dst);
    dst += frame_size;
  }
  return clip;
}

std::vector<Tensor<float>> robot_inputs(const EpisodeSequence& episode, const VoxelPipeline& voxels) {
  if (!episode.manifest.has_depth || episode.depths.size() != episode.frames.size()) {
    throw ContractError("episode " + episode.manifest.episode_id + " has no depth for the robot branch");
  }
  std::vector<Tensor<float>> tokens;
  tokens.reserve(episode.frames.size());
  for (std::size_t t = 0; t < episode.frames.size(); ++t) {
    tokens.push_back(voxels.tokens(episode.frames[t], episode.depths[t], episode.manifest.intrinsics));
  }
  return tokens;
}

std::vector<ClassDistribution> BranchModel::predict_episode(const EpisodeSequence& episode) const {
  if (human_) return human_->predict(human_input(episode, config_.human.input_size));
  return robot_->predict(robot_inputs(episode, config_.voxels));
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Cached network inputs for one episode.
struct PreparedEpisode {
  Tensor<float> clip;                // human
  std::vector<Tensor<float>> tokens;  // robot
  const std::vector<int>* labels = nullptr;
};

struct SplitMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double mean_class_accuracy = 0.0;
};

Tensor<float> episode_logits(const BranchModel& model, const PreparedEpisode& ep, bool training, Rng& rng) {
  if (model.branch() == Branch::Human) return model.human().forward(ep.clip, training, rng);
  return model.robot().forward(ep.tokens);
}

SplitMetrics measure(const BranchModel& model, const std::vector<PreparedEpisode>& prepared,
                     const std::vector<std::size_t>& indices, std::span<const float> weights) {
  Rng unused(0);
  double weighted = 0.0;
  std::size_t frames = 0, correct = 0;
  std::array<std::size_t, kNumClasses> support{}, hits{};
  for (std::size_t i : indices) {
    const PreparedEpisode& ep = prepared[i];
    const Tensor<float> logits = episode_logits(model, ep, false, unused);
    const Tensor<float> loss = ops::weighted_cross_entropy(logits, std::span<const int>(*ep.labels), weights);
    weighted += static_cast<double>(loss.item()) * static_cast<double>(ep.labels->size());
    const auto dists = distributions_from_logits(logits);
    for (std::size_t t = 0; t < dists.size(); ++t) {
      const int y = (*ep.labels)[t];
      const bool hit = dists[t].argmax() == y;
      ++support[static_cast<std::size_t>(y)];
      hits[static_cast<std::size_t>(y)] += hit;
      correct += hit;
      ++frames;
    }
  }
  SplitMetrics m;
  m.loss = weighted / static_cast<double>(frames);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(frames);
  std::size_t present = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (support[c] == 0) continue;
    m.mean_class_accuracy += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
    ++present;
  }
  m.mean_class_accuracy /= static_cast<double>(present);
  return m;
}

std::string at_step(std::size_t epoch, std::size_t step) {
  return " at epoch " + std::to_string(epoch) + " step " + std::to_string(step);
}

}  // namespace

TrainResult train_branch(const TrainConfig& config, const std::vector<EpisodeSequence>& episodes,
                         const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result;
  result.split = split_dataset(episodes.size(), config.split);
  const SplitIndices& split = result.split;

  std::vector<int> train_labels;
  for (std::size_t i : split.train) {
    const auto& labels = episodes[i].labels;
    train_labels.insert(train_labels.end(), labels.begin(), labels.end());
  }
  result.class_weights = compute_class_weights(train_labels);
  std::vector<float> weights(kNumClasses, 1.0f);
  if (config.class_weighting) {
    for (std::size_t c = 0; c < kNumClasses; ++c) weights[c] = static_cast<float>(result.class_weights[c]);
  }

  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };

  Rng rng(config.seed);
  BranchModel model(config, rng);
  AdamHyperParams hp;
  hp.learning_rate = config.learning_rate;
  AdamOptimizer<float> optimizer(hp);

  std::vector<PreparedEpisode> prepared(episodes.size());
  for (const auto* part : {&split.train, &split.val}) {
    for (std::size_t i : *part) {
      prepared[i].labels = &episodes[i].labels;
      if (config.branch == Branch::Human) {
        prepared[i].clip = human_input(episodes[i], config.human.input_size);
      } else {
        prepared[i].tokens = robot_inputs(episodes[i], config.voxels);
      }
    }
  }

  auto record_epoch = [&](std::size_t epoch, double train_loss) {
    const SplitMetrics val = measure(model, prepared, split.val, weights);
    EpochRecord rec{epoch, train_loss, val.loss, val.accuracy, val.mean_class_accuracy, elapsed()};
    result.curve.push_back(rec);
    if (epoch == 0 || rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      result.best = model.to_checkpoint();
    }
    if (on_epoch) on_epoch(rec);
    return rec;
  };
  record_epoch(0, measure(model, prepared, split.train, weights).loss);

  // Training items: episodes for the human branch, (episode, frame) for the robot branch.
  std::vector<std::pair<std::size_t, std::size_t>> items;
  for (std::size_t i : split.train) {
    if (config.branch == Branch::Human) {
      items.emplace_back(i, 0);
    } else {
      for (std::size_t t = 0; t < episodes[i].labels.size(); ++t) items.emplace_back(i, t);
    }
  }

  ParameterStore<float>& params = model.params();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(items);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < items.size(); begin += config.batch_size) {
      const std::size_t end = std::min(items.size(), begin + config.batch_size);
      const std::size_t step = steps + 1;
      std::vector<int> targets;
      params.zero_grad();
      Tape<float> tape;
      Tensor<float> loss;
      try {
        Tensor<float> logits;
        if (config.branch == Branch::Human) {
          std::vector<Tensor<float>> parts;
          for (std::size_t b = begin; b < end; ++b) {
            const PreparedEpisode& ep = prepared[items[b].first];
            parts.push_back(model.human().forward(ep.clip, true, rng));
            targets.insert(targets.end(), ep.labels->begin(), ep.labels->end());
          }
          logits = parts.size() == 1 ? parts[0] : ops::concat_rows(parts);
        } else {
          std::vector<Tensor<float>> batch;
          for (std::size_t b = begin; b < end; ++b) {
            const auto [i, t] = items[b];
            batch.push_back(prepared[i].tokens[t]);
            targets.push_back((*prepared[i].labels)[t]);
          }
          logits = model.robot().forward(batch);
        }
        loss = ops::weighted_cross_entropy(logits, std::span<const int>(targets), std::span<const float>(weights));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + at_step(epoch, step));
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw NumericError("non-finite training loss" + at_step(epoch, step));
      tape.backward(loss);
      if (!params.grads_finite()) throw NumericError("non-finite gradient" + at_step(epoch, step));
      optimizer.step(params);
      if (!params.all_finite()) throw NumericError("non-finite parameter after update" + at_step(epoch, step));
      loss_sum += value;
      ++steps;
    }
    const EpochRecord rec = record_epoch(epoch, loss_sum / static_cast<double>(steps));
    if (config.stop_at_val_accuracy > 0.0 && rec.val_accuracy >= config.stop_at_val_accuracy) break;
  }
  return result;
}

TrainResult train_human(const TrainConfig& config, const std::vector<EpisodeSequence>& episodes,
                        const EpochCallback& on_epoch) {
  if (config.branch != Branch::Human) throw ContractError("train_human needs branch = human");
  return train_branch(config, episodes, on_epoch);
}

TrainResult train_robot(const TrainConfig& config, const std::vector<EpisodeSequence>& episodes,
                        const EpochCallback& on_epoch) {
  if (config.branch != Branch::Robot) throw ContractError("train_robot needs branch = robot");
  return train_branch(config, episodes, on_epoch);
}

void write_curve_csv(const fs::path& path, const std::vector<EpochRecord>& curve) {
  std::string out = "epoch,train_loss,val_loss,val_accuracy,val_mean_class_accuracy,seconds\n";
  char buf[256];
  for (const EpochRecord& r : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.3f\n", r.epoch, r.train_loss, r.val_loss, r.val_accuracy,
                  r.val_mean_class_accuracy, r.seconds);
    out += buf;
  }
  write_text(path, out);
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport build_eval_report(std::vector<FrameTrace> traces) {
  if (traces.empty()) throw ContractError("evaluation needs at least one frame");
  EvalReport r;
  std::size_t correct = 0;
  for (const FrameTrace& f : traces) {
    check_class_id(f.true_class);
    check_class_id(f.predicted_class);
    ++r.confusion[static_cast<std::size_t>(f.true_class)][static_cast<std::size_t>(f.predicted_class)];
    ++r.support[static_cast<std::size_t>(f.true_class)];
    correct += f.true_class == f.predicted_class;
  }
  r.frames = traces.size();
  r.overall_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(r.frames);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (r.support[c] == 0) continue;
    r.per_class_accuracy[c] = 100.0 * static_cast<double>(r.confusion[c][c]) / static_cast<double>(r.support[c]);
    sum += *r.per_class_accuracy[c];
    ++present;
  }
  if (present > 0) r.mean_class_accuracy = sum / static_cast<double>(present);
  r.traces = std::move(traces);
  return r;
}

void EvalReport::check_consistency() const {
  std::size_t total = 0, diagonal = 0, present = 0;
  double sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t row = std::accumulate(confusion[c].begin(), confusion[c].end(), std::size_t{0});
    if (row != support[c]) {
      throw IntegrityError("confusion row " + std::string(kClassNames[c]) + " sums to " + std::to_string(row) +
                           ", support is " + std::to_string(support[c]));
    }
    total += row;
    diagonal += confusion[c][c];
    if (row == 0) {
      if (per_class_accuracy[c]) throw IntegrityError("class without support has an accuracy");
      continue;
    }
    const double expect = 100.0 * static_cast<double>(confusion[c][c]) / static_cast<double>(row);
    if (!per_class_accuracy[c] || *per_class_accuracy[c] != expect) {
      throw IntegrityError("per-class accuracy of " + std::string(kClassNames[c]) + " is not diagonal / row sum");
    }
    sum += expect;
    ++present;
  }
  if (total != frames || (!traces.empty() && traces.size() != frames)) {
    throw IntegrityError("confusion total disagrees with frame count");
  }
  if (100.0 * static_cast<double>(diagonal) / static_cast<double>(frames) != overall_accuracy) {
    throw IntegrityError("overall accuracy is not trace / total");
  }
  const std::optional<double> mean =
      present ? std::optional<double>(sum / static_cast<double>(present)) : std::nullopt;
  if (mean != mean_class_accuracy) throw IntegrityError("mean class accuracy does not cover the supported classes");
}

EvalReport evaluate(const BranchModel& model, const std::vector<EpisodeSequence>& episodes) {
  std::vector<FrameTrace> traces;
  for (const EpisodeSequence& ep : episodes) {
    const auto dists = model.predict_episode(ep);
    for (std::size_t t = 0; t < dists.size(); ++t) {
      traces.push_back({ep.manifest.episode_id, t, ep.labels[t], dists[t].argmax(), dists[t]});
    }
  }
  EvalReport report = build_eval_report(std::move(traces));
  report.check_consistency();
  return report;
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["frames"] = r.frames;
  j["overall_frame_accuracy_percent"] = r.overall_accuracy;
  j["mean_class_accuracy_percent"] = optional_json(r.mean_class_accuracy);
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    nlohmann::ordered_json row;
    row["class"] = kClassNames[c];
    row["support"] = r.support[c];
    row["correct"] = r.confusion[c][c];
    row["accuracy_percent"] = optional_json(r.per_class_accuracy[c]);
    classes.push_back(row);
  }
  j["per_class"] = classes;
  j["confusion"] = r.confusion;
  return j.dump(2);
}

void write_eval_report(const fs::path& dir, const EvalReport& r) {
  fs::create_directories(dir);
  write_text(dir / "report.json", eval_report_json(r) + "\n");

  std::string per_class = "class_id,class_name,support,correct,accuracy_percent\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    per_class += std::to_string(c) + "," + std::string(kClassNames[c]) + "," + std::to_string(r.support[c]) + "," +
                 std::to_string(r.confusion[c][c]) + "," + join_percent(r.per_class_accuracy[c]) + "\n";
  }
  per_class += "overall,,," + std::to_string(r.frames) + "," + join_percent(r.overall_accuracy) + "\n";
  per_class += "mean_class,,,," + join_percent(r.mean_class_accuracy) + "\n";
  write_text(dir / "per_class.csv", per_class);

  std::string confusion = "true\\predicted";
  for (auto name : kClassNames) confusion += "," + std::string(name);
  confusion += "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    confusion += std::string(kClassNames[c]);
    for (std::size_t p = 0; p < kNumClasses; ++p) confusion += "," + std::to_string(r.confusion[c][p]);
    confusion += "\n";
  }
  write_text(dir / "confusion.csv", confusion);

  std::map<std::string, std::string> traces;
  char buf[32];
  for (const FrameTrace& f : r.traces) {
    std::string& out = traces[f.episode_id];
    if (out.empty()) out = "frame_index,p0,p1,p2,p3,p4,p5,p6,p7\n";
    out += std::to_string(f.frame_index);
    for (double p : f.distribution.probs) {
      std::snprintf(buf, sizeof buf, ",%.9g", p);
      out += buf;
    }
    out += "\n";
  }
  for (const auto& [id, text] : traces) write_text(dir / "traces" / (id + ".csv"), text);
}

// ---------------------------------------------------------------------------
// Alignment

AlignmentRun align_episodes(const BranchModel& human, const BranchModel& robot,
                            const std::vector<EpisodeSequence>& human_episodes,
                            const std::vector<EpisodeSequence>& robot_episodes, const ClassCorrespondence& corr) {
  if (human.branch() != Branch::Human || robot.branch() != Branch::Robot) {
    throw ContractError("align needs a human checkpoint and a robot checkpoint");
  }
  if (human_episodes.size() != robot_episodes.size()) {
    throw DimensionError("align needs as many robot episodes as human episodes");
  }
  AlignmentRun run;
  double sum = 0.0;
  for (std::size_t i = 0; i < human_episodes.size(); ++i) {
    const EpisodeSequence& h = human_episodes[i];
    const EpisodeSequence& r = robot_episodes[i];
    if (h.frames.size() != r.frames.size()) {
      run.skipped.emplace_back(h.manifest.episode_id, "length mismatch: human " + std::to_string(h.frames.size()) +
                                                          " frames, robot " + std::to_string(r.frames.size()));
      continue;
    }
    const auto ph = human.predict_episode(h);
    const auto pr = robot.predict_episode(r);
    run.pairs.push_back({h.manifest.episode_id, alignment_score(ph, pr, corr)});
    sum += run.pairs.back().report.score;
  }
  if (!run.pairs.empty()) run.corpus_mean = sum / static_cast<double>(run.pairs.size());
  return run;
}

void write_alignment_run(const fs::path& dir, const AlignmentRun& run) {
  fs::create_directories(dir);
  nlohmann::ordered_json summary;
  summary["pairs"] = nlohmann::ordered_json::array();
  for (const AlignedPair& p : run.pairs) {
    write_alignment_csv(dir / (p.episode_id + ".csv"), p.report);
    write_text(dir / (p.episode_id + ".json"), alignment_json(p.report) + "\n");
    summary["pairs"].push_back({{"episode_id", p.episode_id}, {"T", p.report.length()}, {"S", p.report.score}});
  }
  summary["skipped"] = nlohmann::ordered_json::array();
  for (const auto& [id, reason] : run.skipped) summary["skipped"].push_back({{"episode_id", id}, {"reason", reason}});
  summary["corpus_mean_S"] = optional_json(run.corpus_mean);
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

std::vector<EpisodeSequence> select_split(const std::vector<EpisodeSequence>& episodes, const SplitSpec& spec,
                                          const std::string& split) {
  if (split == "all") return episodes;
  const SplitIndices s = split_dataset(episodes.size(), spec);
  const std::vector<std::size_t>* part = split == "train" ? &s.train
                                         : split == "val" ? &s.val
                                         : split == "test" ? &s.test
                                                           : nullptr;
  if (!part) throw ContractError("unknown split '" + split + "'; use train, val, test or all");
  std::vector<EpisodeSequence> out;
  for (std::size_t i : *part) out.push_back(episodes[i]);
  return out;
}

std::vector<EpisodeSequence> load_corpus(const fs::path& root) {
  std::vector<EpisodeSequence> out;
  for (const fs::path& dir : list_episodes(root)) out.push_back(load_episode(dir));
  if (out.empty()) throw IoError("no episodes under " + root.string());
  return out;
}

}  // namespace dalign
