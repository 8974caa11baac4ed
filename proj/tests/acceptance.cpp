// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <string>

#include "dalign/alignment.hpp"
#include "dalign/checkpoint.hpp"
#include "dalign/errors.hpp"
#include "dalign/geometry.hpp"
#include "dalign/gradient_suite.hpp"
#include "dalign/harness.hpp"
#include "dalign/ops.hpp"
#include "dalign/synthetic.hpp"
#include "oracles.hpp"

using namespace dalign;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed sub-check; the first few are kept for the report.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || std::count(detail.begin(), detail.end(), ';') < 3) detail += (detail.empty() ? "" : "; ") + what;
    pass = false;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ClassDistribution peaked(int cls, double p) {
  ClassDistribution d;
  for (std::size_t c = 0; c < kNumClasses; ++c) d.probs[c] = (1.0 - p) / 7.0;
  d.probs[static_cast<std::size_t>(cls)] = p;
  return d;
}

bool sums_to_one(const ClassDistribution& d) {
  return std::abs(std::accumulate(d.probs.begin(), d.probs.end(), 0.0) - 1.0) <= 1e-6;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto start = Clock::now();
  const auto entries = run_gradient_suite("all");
  const double elapsed = seconds_since(start);
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& e : entries) {
    o.require(e.result.max_relative_error <= 1e-5,
              e.name + " error " + fmt("%.3e", e.result.max_relative_error) + " at " + e.result.worst_tensor);
    worst = std::max(worst, e.result.max_relative_error);
    checked += e.result.entries_checked;
  }
  for (const char* need : {"human_branch", "robot_branch"}) {
    o.require(std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.name == need; }),
              std::string(need) + " missing");
  }
  o.require(elapsed <= 120.0, "runtime " + fmt("%.1f s", elapsed));
  o.detail = std::to_string(entries.size()) + " checks, " + std::to_string(checked) + " entries, max rel error " +
             fmt("%.2e", worst) + " (<= 1e-5), " + fmt("%.1f s", elapsed) + " (<= 120 s)" +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome voxel_oracle() {
  Outcome o;
  const auto start = Clock::now();
  Rng rng(2002);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    BoundingBox box;
    box.min = {rng.uniform(-5, 0), rng.uniform(-5, 0), rng.uniform(0, 5)};
    box.max = {box.min.x + rng.uniform(0.5, 10), box.min.y + rng.uniform(0.5, 10), box.min.z + rng.uniform(0.5, 10)};
    const GridResolution res{1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8)};
    const PointCloud cloud = testing::random_cloud(rng, rng.below(1001), box);
    const VoxelFeatureSpec spec;
    const VoxelGrid grid = voxelize(cloud, box, res, spec);
    const testing::VoxelOracle oracle = testing::brute_force_voxels(cloud, box, res, spec);
    for (std::size_t i = 0; i < oracle.features.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(grid.features[i]) - oracle.features[i]));
    }
    std::size_t occupied = 0;
    for (std::size_t c = 0; c < res.cells(); ++c) {
      occupied += oracle.counts[c] > 0;
      o.require(grid.counts[c] == oracle.counts[c], "cell count mismatch in trial " + std::to_string(trial));
    }
    o.require(grid.occupied_count == occupied, "occupied count mismatch in trial " + std::to_string(trial));
    o.require(grid.in_bounds_count == oracle.in_bounds && grid.discarded_count == oracle.discarded,
              "discard count mismatch in trial " + std::to_string(trial));
  }
  const double elapsed = seconds_since(start);
  o.require(worst <= 1e-6, "max abs error " + fmt("%.2e", worst));
  o.require(elapsed <= 30.0, "runtime " + fmt("%.1f s", elapsed));
  o.detail = "500 clouds, max abs error " + fmt("%.2e", worst) + " (<= 1e-6), counts exact, " +
             fmt("%.2f s", elapsed) + " (<= 30 s)" + (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome geometry_round_trip() {
  Outcome o;
  Rng rng(3003);
  double worst = 0.0;
  for (int n = 0; n < 10000; ++n) {
    CameraIntrinsics in;
    in.width = 32 + rng.below(1000);
    in.height = 32 + rng.below(1000);
    in.fx = rng.uniform(50, 1500);
    in.fy = rng.uniform(50, 1500);
    in.cx = rng.uniform(0, static_cast<double>(in.width) - 1);
    in.cy = rng.uniform(0, static_cast<double>(in.height) - 1);
    const double u = rng.uniform(0, static_cast<double>(in.width - 1));
    const double v = rng.uniform(0, static_cast<double>(in.height - 1));
    const double d = rng.uniform(0.05, 200);
    const Projection p = project(backproject_pixel(u, v, d, in), in);
    o.require(p.status == ProjectionStatus::InFrame, "round trip left the frame");
    worst = std::max({worst, std::abs(p.u - u), std::abs(p.v - v)});
  }
  o.require(worst <= 1e-5, "max round-trip error " + fmt("%.2e", worst));

  CameraIntrinsics in{100.0, 120.0, 50.0, 40.0, 101, 81};
  for (double d : {0.5, 2.0, 37.25}) {
    const Point3 p = backproject_pixel(in.cx, in.cy, d, in);
    o.require(p.x == 0.0 && p.y == 0.0 && p.z == d, "principal point does not back-project to (0,0,d)");
    const Projection q = project({0.0, 0.0, d}, in);
    o.require(q.u == in.cx && q.v == in.cy, "(0,0,d) does not project to the principal point");
  }
  const DepthMap zero(101, 81);
  const RgbImage rgb(101, 81);
  o.require(backproject(zero, in, rgb).size() == 0, "all-zero depth gave points");
  DepthMap one = zero;
  one.at(50, 40) = 3.0f;
  const PointCloud single = backproject(one, in, rgb);
  o.require(single.size() == 1 && single.points[0].x == 0.0 && single.points[0].y == 0.0 && single.points[0].z == 3.0,
            "single valid pixel not lifted exactly");
  o.detail = "10^4 pixels, max error " + fmt("%.2e", worst) + " px (<= 1e-5); principal point and zero depth exact" +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome capacity_contract() {
  Outcome o;
  Rng rng(4004);
  const BoundingBox box;
  const GridResolution res;  // 21³
  const PointCloud cloud = testing::random_cloud(rng, 20000, box);
  const Tensor<float> tokens = flatten_voxels(voxelize(cloud, box, res));
  o.require(tokens.shape() == Shape{9261, 10}, "21³ grid flattened to " + shape_string(tokens.shape()));

  PerceiverConfig cfg;  // latent 512, 128 latents
  PerceiverEncoder<float> enc(cfg);
  enc.initialize(rng);
  const Tensor<float> code = enc.encode_voxel_grid(tokens);
  o.require(code.shape() == Shape{512}, "code shape " + shape_string(code.shape()));

  std::vector<std::size_t> perm(9261);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Tensor<float> shuffled({9261, 10});
  for (std::size_t n = 0; n < 9261; ++n) {
    for (std::size_t c = 0; c < 10; ++c) shuffled.at(n, c) = tokens.at(perm[n], c);
  }
  const Tensor<float> code2 = enc.encode_voxel_grid(shuffled);
  double worst = 0.0;
  for (std::size_t i = 0; i < 512; ++i) worst = std::max(worst, static_cast<double>(std::abs(code[i] - code2[i])));
  o.require(worst <= 1e-5, "permutation changed the code by " + fmt("%.2e", worst));

  bool rejected = false;
  try {
    enc.encode_voxel_grid(Tensor<float>({9262, 10}));
  } catch (const CapacityError&) {
    rejected = true;
  }
  o.require(rejected, "N = 9262 was not rejected");
  o.detail = "9261x10 tokens, code of 512, permutation max diff " + fmt("%.2e", worst) + " (<= 1e-5), N = 9262 rejected" +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome distribution_contracts() {
  Outcome o;
  Rng rng(5005);
  std::size_t checked = 0;
  double worst = 0.0;
  auto check = [&](const std::vector<ClassDistribution>& ds, const char* where) {
    for (const auto& d : ds) {
      const double s = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
      worst = std::max(worst, std::abs(s - 1.0));
      o.require(sums_to_one(d), std::string(where) + " sum off by " + fmt("%.2e", s - 1.0));
      ++checked;
    }
  };
  // Both branches, default sizes except the human input, on a synthetic episode.
  SyntheticConfig sc;
  sc.frames = 16;
  const EpisodeSequence ep = generate_synthetic_episode(sc, 55);
  for (Branch b : {Branch::Human, Branch::Robot}) {
    TrainConfig c = default_train_config(b);
    c.human.input_size = 64;
    const BranchModel model(c, rng);
    check(model.predict_episode(ep), branch_name(b));
  }
  // Float logits spanning many scales.
  for (double scale : {1e-3, 1.0, 10.0, 80.0, 1e4}) {
    Tensor<float> logits({64, 8});
    for (float& v : logits.data()) v = static_cast<float>(rng.uniform(-scale, scale));
    check(distributions_from_logits(logits), "logits");
  }
  for (float c : {0.0f, -3.5f, 1e6f}) {
    Tensor<float> uniform({1, 8});
    for (float& v : uniform.data()) v = c;
    const auto dists = distributions_from_logits(uniform);
    for (double p : dists[0].probs) o.require(p == 0.125, "uniform logits gave " + fmt("%.17g", p));
  }
  HumanEncoder<float> h(HumanEncoderConfig{});
  h.initialize(rng);
  for (auto& [name, t] : h.params()) fill(t, 0.0f);
  for (double p : h.classify_intention(Tensor<float>({64})).probs) o.require(p == 0.125, "zero human head not uniform");
  PerceiverEncoder<float> r(PerceiverConfig{});
  r.initialize(rng);
  for (auto& [name, t] : r.params()) fill(t, 0.0f);
  for (double p : r.classify_action(Tensor<float>({512})).probs) o.require(p == 0.125, "zero robot head not uniform");
  o.detail = std::to_string(checked) + " distributions, max |sum - 1| " + fmt("%.2e", worst) +
             " (<= 1e-6); uniform logits give 0.125 exactly" + (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome alignment_algebra() {
  Outcome o;
  Rng rng(6006);
  double lo = 1.0, hi = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = 1 + rng.below(40);
    std::vector<ClassDistribution> a, b;
    for (std::size_t i = 0; i < t; ++i) {
      Tensor<float> logits({2, 8});
      const double temp = rng.uniform(0.1, 20.0);
      for (float& v : logits.data()) v = static_cast<float>(rng.uniform(-temp, temp));
      const auto d = distributions_from_logits(logits);
      a.push_back(d[0]);
      b.push_back(d[1]);
    }
    const double s = alignment_score(a, b).score;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  o.require(lo >= 0.0 && hi <= 1.0, "S left [0, 1]: " + fmt("%.3g", lo) + ".." + fmt("%.3g", hi));
  std::vector<ClassDistribution> perfect;
  for (int t = 0; t < 24; ++t) perfect.push_back(ClassDistribution::one_hot(t % 8));
  const double s_perfect = alignment_score(perfect, perfect).score;
  o.require(s_perfect == 1.0, "perfect match gave " + fmt("%.17g", s_perfect));
  // Hand oracle: step 1 agrees (0.8 · 0.5), step 2 disagrees; mean over T = 2.
  const double expected = (0.8 * 0.5 + 0.0) / 2.0;
  const double s2 = alignment_score(std::vector{peaked(2, 0.8), peaked(4, 0.9)},
                                    std::vector{peaked(2, 0.5), peaked(3, 0.6)})
                        .score;
  o.require(std::abs(s2 - expected) <= 1e-15 && std::abs(expected - 0.2) <= 1e-15,
            "T=2 case gave " + fmt("%.17g", s2));
  const auto grad = run_gradient_suite("alignment");
  double gerr = 0.0;
  for (const auto& e : grad) gerr = std::max(gerr, e.result.max_relative_error);
  o.require(gerr <= 1e-5, "soft surrogate gradient error " + fmt("%.2e", gerr));
  o.detail = "S in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "] over 1000 pairs; perfect S = " +
             fmt("%.17g", s_perfect) + "; T=2 case S = " + fmt("%.17g", s2) + "; surrogate gradient error " +
             fmt("%.2e", gerr) + (o.pass ? "" : "; " + o.detail);
  return o;
}

struct EndToEnd {
  std::vector<EpisodeSequence> corpus;
  TrainResult human, robot;
  double seconds = 0.0;
};

Outcome synthetic_end_to_end(const fs::path& work, EndToEnd& run) {
  Outcome o;
  const auto start = Clock::now();
  SyntheticConfig sc;  // 64×48, T = 40
  generate_corpus(work / "corpus30", 30, sc, 7);
  run.corpus = load_corpus(work / "corpus30");

  auto train = [&](Branch b, std::size_t epochs) {
    TrainConfig c = reduced_train_config(b);
    c.epochs = epochs;
    const auto t0 = Clock::now();
    TrainResult r = train_branch(c, run.corpus);
    std::size_t first = 0;
    for (const auto& e : r.curve) {
      if (first == 0 && e.val_accuracy >= 0.90) first = e.epoch;
    }
    std::printf("      %s: best val accuracy %.4f at epoch %zu, first >= 0.90 at epoch %zu, epoch-0 loss %.4f, %.1f s\n",
                branch_name(b), r.best_val_accuracy, r.best_epoch, first, r.curve[0].train_loss, seconds_since(t0));
    std::fflush(stdout);
    return r;
  };
  run.human = train(Branch::Human, 200);
  run.robot = train(Branch::Robot, 150);
  run.seconds = seconds_since(start);

  const double ln8 = std::log(8.0);
  for (const auto* r : {&run.human, &run.robot}) {
    const char* name = r == &run.human ? "human" : "robot";
    o.require(r->best_val_accuracy >= 0.90, std::string(name) + " best val accuracy " + fmt("%.4f", r->best_val_accuracy));
    o.require(std::abs(r->curve[0].train_loss - ln8) <= 0.3,
              std::string(name) + " epoch-0 loss " + fmt("%.4f", r->curve[0].train_loss));
    o.require(r->split.train.size() == 21 && r->split.val.size() == 6 && r->split.test.size() == 3,
              std::string(name) + " split is not 21/6/3");
  }
  o.require(run.seconds <= 1800.0, "runtime " + fmt("%.0f s", run.seconds));

  // Smoothed loss trend over the first 20 robot epochs (5-epoch means).
  auto window = [&](std::size_t from, bool val) {
    double s = 0.0;
    for (std::size_t e = from; e < from + 5; ++e) s += val ? run.robot.curve[e].val_loss : run.robot.curve[e].train_loss;
    return s / 5.0;
  };
  const bool trend = window(16, false) < window(1, false) && window(16, true) < window(1, true);
  o.detail = "human " + fmt("%.3f", run.human.best_val_accuracy) + " / robot " + fmt("%.3f", run.robot.best_val_accuracy) +
             " best val accuracy (>= 0.90); epoch-0 loss " + fmt("%.3f", run.human.curve[0].train_loss) + " / " +
             fmt("%.3f", run.robot.curve[0].train_loss) + " (ln 8 +- 0.3); " + fmt("%.0f s", run.seconds) +
             " (<= 1800 s); robot loss trend over 20 epochs " + (trend ? "decreasing" : "not decreasing") +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome protocol_fidelity() {
  Outcome o;
  SyntheticConfig sc;
  sc.frames = 40;
  std::vector<EpisodeSequence> corpus;
  for (int i = 0; i < 70; ++i) corpus.push_back(generate_synthetic_episode(sc, 9000 + i));
  const SplitIndices s = split_dataset(corpus.size(), SplitSpec{});
  o.require(s.train.size() == 49 && s.val.size() == 14 && s.test.size() == 7,
            "split " + std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) + "/" +
                std::to_string(s.test.size()));
  std::vector<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(70);
  std::iota(expect.begin(), expect.end(), 0);
  o.require(all == expect, "split is not a partition");

  std::size_t sets = 0;
  auto check_total = [&](const std::vector<int>& labels, const char* what) {
    const auto w = compute_class_weights(labels);
    std::array<std::size_t, kNumClasses> counts{};
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    double total = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) total += static_cast<double>(counts[c]) * w[c];
    o.require(total == static_cast<double>(labels.size()), std::string(what) + ": sum N_c w_c = " + fmt("%.17g", total));
    ++sets;
  };
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    std::vector<int> labels;
    for (std::size_t i : *part) labels.insert(labels.end(), corpus[i].labels.begin(), corpus[i].labels.end());
    check_total(labels, "split");
  }
  for (const auto& ep : corpus) check_total(ep.labels, ep.manifest.episode_id.c_str());
  std::vector<int> balanced;
  for (int c = 0; c < 8; ++c) balanced.insert(balanced.end(), 25, c);
  for (double w : compute_class_weights(balanced)) o.require(w == 1.0, "balanced weight " + fmt("%.17g", w));
  o.detail = "70 episodes split " + std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) + "/" +
             std::to_string(s.test.size()) + "; sum N_c w_c = N exactly on " + std::to_string(sets) +
             " label sets; balanced weights 1" + (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome determinism_and_persistence(const fs::path& work, const EndToEnd& run) {
  Outcome o;
  for (Branch b : {Branch::Human, Branch::Robot}) {
    TrainConfig c = reduced_train_config(b);
    c.epochs = 4;
    const TrainResult x = train_branch(c, run.corpus), y = train_branch(c, run.corpus);
    bool same = x.curve.size() == y.curve.size();
    for (std::size_t e = 0; same && e < x.curve.size(); ++e) {
      same = x.curve[e].train_loss == y.curve[e].train_loss && x.curve[e].val_loss == y.curve[e].val_loss &&
             x.curve[e].val_accuracy == y.curve[e].val_accuracy;
    }
    o.require(same, std::string(branch_name(b)) + " curves differ between identical runs");
    o.require(serialize_checkpoint(x.best) == serialize_checkpoint(y.best),
              std::string(branch_name(b)) + " checkpoints differ between identical runs");
  }

  for (const TrainResult* r : {&run.human, &run.robot}) {
    const fs::path a = work / "a.ckpt", b = work / "b.ckpt";
    save_checkpoint(r->best, a);
    save_checkpoint(BranchModel::from_checkpoint(load_checkpoint(a)).to_checkpoint(), b);
    o.require(file_bytes(a) == file_bytes(b), "save -> load -> save not byte-identical");

    BranchModel target = BranchModel::from_checkpoint(r->best);
    const Checkpoint before = target.to_checkpoint();
    const auto good = file_bytes(a);
    for (std::size_t byte = 0; byte < 12; ++byte) {
      auto bad = good;
      bad[byte] ^= 0xa5;
      bool format_error = false;
      try {
        load_params(parse_checkpoint(bad), target.params());
      } catch (const FormatError&) {
        format_error = true;
      } catch (const Error&) {
      }
      // Bytes 8..11 hold the block count: a changed count surfaces as an integrity error instead.
      if (byte < 8) o.require(format_error, "header byte " + std::to_string(byte) + " corruption not a format error");
    }
    for (std::size_t keep : {std::size_t{3}, good.size() / 3, good.size() - 1}) {
      bool integrity = false;
      try {
        load_params(parse_checkpoint(std::vector<std::uint8_t>(good.begin(), good.begin() + static_cast<long>(keep))),
                    target.params());
      } catch (const IntegrityError&) {
        integrity = true;
      }
      o.require(integrity, "truncation to " + std::to_string(keep) + " bytes not an integrity error");
    }
    o.require(serialize_checkpoint(target.to_checkpoint()) == serialize_checkpoint(before),
              "a rejected checkpoint modified the model");
  }
  o.detail = "identical seeds give bit-identical curves and checkpoints for both branches; round trip byte-identical; "
             "corrupt headers and truncations rejected with the model untouched" +
             (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome report_consistency(const EndToEnd& run) {
  Outcome o;
  std::size_t reports = 0;
  std::string accuracies;
  for (const TrainResult* r : {&run.human, &run.robot}) {
    const BranchModel model = BranchModel::from_checkpoint(r->best);
    for (const auto& [name, part] : {std::pair{"val", &r->split.val}, std::pair{"test", &r->split.test}}) {
      std::vector<EpisodeSequence> eps;
      for (std::size_t i : *part) eps.push_back(run.corpus[i]);
      const EvalReport rep = evaluate(model, eps);
      try {
        rep.check_consistency();
      } catch (const IntegrityError& e) {
        o.require(false, e.what());
      }
      std::size_t total = 0;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        total += std::accumulate(rep.confusion[c].begin(), rep.confusion[c].end(), std::size_t{0});
      }
      o.require(total == eps.size() * 40, "confusion total does not match frames");
      accuracies += std::string(accuracies.empty() ? "" : ", ") + branch_name(model.branch()) + " " + name + " " +
                    fmt("%.1f%%", rep.overall_accuracy);
      ++reports;
    }
  }
  std::vector<FrameTrace> traces;
  for (const auto& ep : run.corpus) {
    for (std::size_t t = 0; t < ep.labels.size(); ++t) {
      traces.push_back({ep.manifest.episode_id, t, ep.labels[t], ep.labels[t], ClassDistribution::one_hot(ep.labels[t])});
    }
  }
  const EvalReport perfect = build_eval_report(traces);
  perfect.check_consistency();
  for (std::size_t a = 0; a < kNumClasses; ++a) {
    for (std::size_t b = 0; b < kNumClasses; ++b) {
      if (a != b) o.require(perfect.confusion[a][b] == 0, "perfect predictor off-diagonal entry");
    }
    o.require(perfect.per_class_accuracy[a] == 100.0, "perfect predictor per-class accuracy below 100");
  }
  o.detail = std::to_string(reports) + " trained-model reports consistent (" + accuracies +
             "); perfect predictor diagonal at 100%" + (o.pass ? "" : "; " + o.detail);
  return o;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("dalign_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& fn) {
    std::printf("  ... %d. %s\n", id, title);
    std::fflush(stdout);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
    std::fflush(stdout);
  };

  EndToEnd run;
  report(1, "Gradient suite", gradient_suite);
  report(2, "Voxelization oracle", voxel_oracle);
  report(3, "Geometry round trip", geometry_round_trip);
  report(4, "Capacity/shape contract", capacity_contract);
  report(5, "Distribution contracts", distribution_contracts);
  report(6, "Alignment algebra", alignment_algebra);
  report(7, "Synthetic end-to-end", [&] { return synthetic_end_to_end(work, run); });
  report(8, "Protocol fidelity", protocol_fidelity);
  report(9, "Determinism & persistence", [&] { return determinism_and_persistence(work, run); });
  report(10, "Report consistency", [&] { return report_consistency(run); });

  fs::remove_all(work);
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
