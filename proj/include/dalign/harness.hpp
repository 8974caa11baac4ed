#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dalign/alignment.hpp"
#include "dalign/checkpoint.hpp"
#include "dalign/dataset.hpp"
#include "dalign/train_config.hpp"

namespace dalign {

// A trained (or freshly initialized) branch together with the configuration
// that built it. Checkpoints carry that configuration as a "meta/config"
// block, so a model can be rebuilt from the file alone.
class BranchModel {
 public:
  // Builds and initializes the branch described by `config`.
  BranchModel(const TrainConfig& config, Rng& rng);
  static BranchModel from_checkpoint(const Checkpoint& ckpt);

  Branch branch() const { return config_.branch; }
  const TrainConfig& config() const { return config_; }

  HumanEncoder<float>& human();
  PerceiverEncoder<float>& robot();
  const HumanEncoder<float>& human() const;
  const PerceiverEncoder<float>& robot() const;
  ParameterStore<float>& params();
  const ParameterStore<float>& params() const;

  Checkpoint to_checkpoint() const;

  // Eval-mode per-frame distributions for one episode.
  std::vector<ClassDistribution> predict_episode(const EpisodeSequence& episode) const;

 private:
  explicit BranchModel(const TrainConfig& config);

  TrainConfig config_;
  std::unique_ptr<HumanEncoder<float>> human_;
  std::unique_ptr<PerceiverEncoder<float>> robot_;
};

// Human input [T×3×S×S].
Tensor<float> human_input(const EpisodeSequence& episode, std::size_t input_size);
// One token set per frame. ContractError when the episode has no depth.
std::vector<Tensor<float>> robot_inputs(const EpisodeSequence& episode, const VoxelPipeline& voxels);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained model
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;            // frame accuracy in [0, 1]
  double val_mean_class_accuracy = 0.0;  // mean over classes present in val
  double seconds = 0.0;                  // wall time since training began
};

struct TrainResult {
  Checkpoint best;  // parameters at the best validation accuracy
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::array<double, kNumClasses> class_weights{};
  SplitIndices split;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minimizes class-weighted cross-entropy over per-frame labels with Adam.
// The human branch consumes whole episodes (batch_size episodes per step); the
// robot branch consumes single frames (batch_size frames per step). Epoch 0 of
// the curve is the untrained model. MissingClassError when the training split
// lacks a class; NumericError naming epoch and step on a non-finite loss,
// gradient or parameter.
TrainResult train_branch(const TrainConfig& config, const std::vector<EpisodeSequence>& episodes,
                         const EpochCallback& on_epoch = {});
TrainResult train_human(const TrainConfig& config, const std::vector<EpisodeSequence>& episodes,
                        const EpochCallback& on_epoch = {});
TrainResult train_robot(const TrainConfig& config, const std::vector<EpisodeSequence>& episodes,
                        const EpochCallback& on_epoch = {});

void write_curve_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& curve);

struct FrameTrace {
  std::string episode_id;
  std::size_t frame_index = 0;
  int true_class = 0;
  int predicted_class = 0;
  ClassDistribution distribution;
};

struct EvalReport {
  // Rows are true classes, columns predictions.
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  std::array<std::size_t, kNumClasses> support{};
  // Percent; empty for classes without support.
  std::array<std::optional<double>, kNumClasses> per_class_accuracy{};
  double overall_accuracy = 0.0;            // percent of frames
  std::optional<double> mean_class_accuracy;  // percent, over supported classes
  std::size_t frames = 0;
  std::vector<FrameTrace> traces;

  // IntegrityError unless row sums equal supports, accuracies equal
  // diagonal / row sum and the mean covers exactly the supported classes.
  void check_consistency() const;
};

// Aggregates argmax predictions; ContractError for no frames.
EvalReport build_eval_report(std::vector<FrameTrace> traces);
EvalReport evaluate(const BranchModel& model, const std::vector<EpisodeSequence>& episodes);

// report.json, per_class.csv, confusion.csv and traces/<episode_id>.csv
// (frame_index,p0..p7) under `dir`.
void write_eval_report(const std::filesystem::path& dir, const EvalReport& report);
std::string eval_report_json(const EvalReport& report);

struct AlignedPair {
  std::string episode_id;
  AlignmentReport report;
};

struct AlignmentRun {
  std::vector<AlignedPair> pairs;
  std::vector<std::pair<std::string, std::string>> skipped;  // episode id, reason
  std::optional<double> corpus_mean;                          // mean of per-pair S
};

// Pairs human_episodes[i] with robot_episodes[i]. A pair whose lengths differ
// is skipped and recorded, not fatal.
AlignmentRun align_episodes(const BranchModel& human, const BranchModel& robot,
                            const std::vector<EpisodeSequence>& human_episodes,
                            const std::vector<EpisodeSequence>& robot_episodes,
                            const ClassCorrespondence& corr = ClassCorrespondence::identity());

// <episode_id>.csv and <episode_id>.json per pair, then summary.json.
void write_alignment_run(const std::filesystem::path& dir, const AlignmentRun& run);

// Episodes of `split` ("train", "val", "test" or "all") under `config.split`.
std::vector<EpisodeSequence> select_split(const std::vector<EpisodeSequence>& episodes, const SplitSpec& spec,
                                          const std::string& split);

std::vector<EpisodeSequence> load_corpus(const std::filesystem::path& root);

}  // namespace dalign
