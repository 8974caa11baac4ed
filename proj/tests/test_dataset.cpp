#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <set>

#include "dalign/dataset.hpp"
#include "dalign/errors.hpp"
#include "dalign/synthetic.hpp"

using namespace dalign;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dalign_dataset_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

EpisodeManifest sample_manifest() {
  EpisodeManifest m;
  m.episode_id = "ep_0003";
  m.user_id = 2;
  m.scene_id = 7;
  m.frame_count = 10;
  m.intrinsics = {100.0, 110.0, 31.5, 23.5, 64, 48};
  m.has_depth = true;
  return m;
}

EpisodeSequence tiny_episode(std::size_t frames, bool depth) {
  EpisodeSequence ep;
  ep.manifest = sample_manifest();
  ep.manifest.frame_count = frames;
  ep.manifest.has_depth = depth;
  ep.manifest.intrinsics = {4.0, 4.0, 1.5, 1.0, 4, 3};
  for (std::size_t t = 0; t < frames; ++t) {
    RgbImage img(4, 3);
    img.pixels[t % img.pixels.size()] = static_cast<std::uint8_t>(10 + t);
    ep.frames.push_back(img);
    if (depth) {
      DepthMap d(4, 3);
      d.values[0] = 1.5f + static_cast<float>(t);
      ep.depths.push_back(d);
    }
    ep.labels.push_back(static_cast<int>(t % kNumClasses));
  }
  return ep;
}

std::vector<int> expand_counts(const std::array<std::size_t, kNumClasses>& counts) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < kNumClasses; ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
  return labels;
}

double weighted_total(const std::array<std::size_t, kNumClasses>& counts) {
  const std::vector<int> labels = expand_counts(counts);
  const auto w = compute_class_weights(labels);
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) total += static_cast<double>(counts[c]) * w[c];
  return total;
}

}  // namespace

TEST(Manifest, JsonRoundTrip) {
  const EpisodeManifest m = sample_manifest();
  EXPECT_EQ(manifest_from_json(manifest_to_json(m)), m);
}

TEST(Manifest, HasExactlyTheElevenFields) {
  const auto j = nlohmann::json::parse(manifest_to_json(sample_manifest()));
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"episode_id", "user_id", "scene_id", "frame_count", "fx", "fy", "cx", "cy",
                                         "width", "height", "has_depth"}));
}

TEST(Manifest, RejectsMissingExtraAndBadFields) {
  auto j = nlohmann::json::parse(manifest_to_json(sample_manifest()));
  auto without = j;
  without.erase("cy");
  EXPECT_THROW(manifest_from_json(without.dump()), FormatError);
  auto extra = j;
  extra["notes"] = "x";
  EXPECT_THROW(manifest_from_json(extra.dump()), FormatError);
  auto wrong_type = j;
  wrong_type["frame_count"] = "ten";
  EXPECT_THROW(manifest_from_json(wrong_type.dump()), FormatError);
  auto zero = j;
  zero["frame_count"] = 0;
  EXPECT_THROW(manifest_from_json(zero.dump()), FormatError);
  auto bad_focal = j;
  bad_focal["fx"] = -1.0;
  EXPECT_THROW(manifest_from_json(bad_focal.dump()), FormatError);
  EXPECT_THROW(manifest_from_json("{not json"), FormatError);
}

TEST_F(TempDir, EpisodeRoundTrip) {
  const EpisodeSequence ep = tiny_episode(9, true);
  write_episode(dir_ / "ep", ep);
  EXPECT_TRUE(fs::exists(dir_ / "ep" / "frames" / "frame_00008.ppm"));
  EXPECT_TRUE(fs::exists(dir_ / "ep" / "depth" / "depth_00000.dpth"));
  for (const fs::path& p : {dir_ / "ep", dir_ / "ep" / "manifest.json"}) {
    const EpisodeSequence back = load_episode(p);
    EXPECT_EQ(back.manifest, ep.manifest);
    EXPECT_EQ(back.frames, ep.frames);
    EXPECT_EQ(back.depths, ep.depths);
    EXPECT_EQ(back.labels, ep.labels);
  }
}

TEST_F(TempDir, SingleFrameEpisodeLoads) {
  write_episode(dir_ / "one", tiny_episode(1, false));
  const EpisodeSequence back = load_episode(dir_ / "one");
  EXPECT_EQ(back.frames.size(), 1u);
  EXPECT_TRUE(back.depths.empty());
}

TEST_F(TempDir, LabelCountMismatchIsIntegrityError) {
  write_episode(dir_ / "ep", tiny_episode(10, false));
  {
    std::ofstream out(dir_ / "ep" / "labels.csv");
    out << "frame_index,class_id\n";
    for (int t = 0; t < 9; ++t) out << t << "," << t % 8 << "\n";
  }
  EXPECT_THROW(load_episode(dir_ / "ep"), IntegrityError);
}

TEST_F(TempDir, MissingFrameIsIntegrityError) {
  write_episode(dir_ / "ep", tiny_episode(10, true));
  fs::remove(dir_ / "ep" / "frames" / "frame_00004.ppm");
  EXPECT_THROW(load_episode(dir_ / "ep"), IntegrityError);
  write_episode(dir_ / "ep2", tiny_episode(10, true));
  fs::remove(dir_ / "ep2" / "depth" / "depth_00009.dpth");
  EXPECT_THROW(load_episode(dir_ / "ep2"), IntegrityError);
}

TEST_F(TempDir, LabelOutOfRangeOrSizeMismatchRejected) {
  write_episode(dir_ / "ep", tiny_episode(3, false));
  {
    std::ofstream out(dir_ / "ep" / "labels.csv");
    out << "frame_index,class_id\n0,0\n1,8\n2,1\n";
  }
  EXPECT_ANY_THROW(load_episode(dir_ / "ep"));
  EpisodeSequence wrong = tiny_episode(3, false);
  wrong.frames[1] = RgbImage(5, 3);
  write_episode(dir_ / "ep2", wrong);
  EXPECT_ANY_THROW(load_episode(dir_ / "ep2"));
}

TEST_F(TempDir, UnreadableFrameNamesItsPath) {
  write_episode(dir_ / "ep", tiny_episode(3, false));
  { std::ofstream(dir_ / "ep" / "frames" / "frame_00001.ppm") << "garbage"; }
  try {
    load_episode(dir_ / "ep");
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("frame_00001.ppm"), std::string::npos) << e.what();
  }
}

TEST_F(TempDir, ListEpisodesSorted) {
  write_episode(dir_ / "ep_b", tiny_episode(1, false));
  write_episode(dir_ / "ep_a", tiny_episode(1, false));
  fs::create_directories(dir_ / "not_an_episode");
  const auto eps = list_episodes(dir_);
  ASSERT_EQ(eps.size(), 2u);
  EXPECT_EQ(eps[0].filename(), "ep_a");
  EXPECT_EQ(eps[1].filename(), "ep_b");
}

TEST(Split, SeventyEpisodes) {
  const SplitIndices s = split_dataset(70, {});
  EXPECT_EQ(s.train.size(), 49u);
  EXPECT_EQ(s.val.size(), 14u);
  EXPECT_EQ(s.test.size(), 7u);
}

TEST(Split, SmallCountsSendRemainderToTrain) {
  const SplitIndices ten = split_dataset(10, {});
  EXPECT_EQ(ten.train.size(), 7u);
  EXPECT_EQ(ten.val.size(), 2u);
  EXPECT_EQ(ten.test.size(), 1u);
  const SplitIndices thirty = split_dataset(30, {});
  EXPECT_EQ(thirty.train.size(), 21u);
  EXPECT_EQ(thirty.val.size(), 6u);
  EXPECT_EQ(thirty.test.size(), 3u);
  const SplitIndices eleven = split_dataset(11, {});
  EXPECT_EQ(eleven.val.size(), 2u);
  EXPECT_EQ(eleven.test.size(), 1u);
  EXPECT_EQ(eleven.train.size(), 8u);
}

TEST(Split, ExactPartitionForManySizesAndSeeds) {
  for (std::size_t n = 3; n < 120; n += 7) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      SplitSpec spec;
      spec.seed = seed;
      const SplitIndices s = split_dataset(n, spec);
      std::vector<std::size_t> all;
      for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expect(n);
      std::iota(expect.begin(), expect.end(), 0);
      EXPECT_EQ(all, expect) << "n=" << n;
    }
  }
}

TEST(Split, DeterministicPerSeed) {
  SplitSpec a, b;
  a.seed = b.seed = 17;
  const SplitIndices x = split_dataset(40, a), y = split_dataset(40, b);
  EXPECT_EQ(x.train, y.train);
  EXPECT_EQ(x.val, y.val);
  EXPECT_EQ(x.test, y.test);
  b.seed = 18;
  EXPECT_NE(split_dataset(40, b).val, x.val);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_dataset(2, {}), ContractError);
  SplitSpec bad;
  bad.val = 0.5;
  bad.test = 0.6;
  EXPECT_THROW(split_dataset(10, bad), ContractError);
}

TEST(ClassWeights, BalancedGivesUnitWeights) {
  const std::vector<int> labels = expand_counts({7, 7, 7, 7, 7, 7, 7, 7});
  for (double w : compute_class_weights(labels)) EXPECT_EQ(w, 1.0);
}

TEST(ClassWeights, HandValue) {
  // N = 80, Lifting has 5.
  const auto w = compute_class_weights(expand_counts({10, 11, 5, 10, 12, 11, 11, 10}));
  EXPECT_DOUBLE_EQ(w[2], 2.0);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
}

TEST(ClassWeights, WeightedCountsSumToTotal) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<std::size_t, kNumClasses> counts{};
    for (auto& c : counts) c = 1 + rng.below(60);
    const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    EXPECT_EQ(weighted_total(counts), n);
  }
}

TEST(ClassWeights, ScaleInvariant) {
  const std::array<std::size_t, kNumClasses> counts{3, 9, 4, 6, 12, 5, 2, 7};
  std::array<std::size_t, kNumClasses> doubled{};
  for (std::size_t c = 0; c < kNumClasses; ++c) doubled[c] = 2 * counts[c];
  EXPECT_EQ(compute_class_weights(expand_counts(counts)), compute_class_weights(expand_counts(doubled)));
}

TEST(ClassWeights, MissingClassIsNamed) {
  const std::vector<int> labels = expand_counts({3, 3, 0, 3, 3, 3, 0, 3});
  try {
    compute_class_weights(labels);
    FAIL() << "expected MissingClassError";
  } catch (const MissingClassError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Lifting"), std::string::npos) << msg;
    EXPECT_NE(msg.find("Releasing"), std::string::npos) << msg;
  }
}

TEST(Synthetic, PhaseLengthsCoverEveryPhase) {
  for (std::size_t frames : {8, 9, 17, 40, 101}) {
    Rng rng(frames);
    const auto len = phase_lengths(frames, rng);
    EXPECT_EQ(std::accumulate(len.begin(), len.end(), std::size_t{0}), frames);
    for (std::size_t n : len) EXPECT_GE(n, 1u);
  }
  Rng rng(0);
  EXPECT_THROW(phase_lengths(7, rng), ContractError);
}

TEST(Synthetic, TooFewFramesIsContractError) {
  SyntheticConfig cfg;
  cfg.frames = 7;
  EXPECT_THROW(generate_synthetic_episode(cfg, 1), ContractError);
}

TEST(Synthetic, LabelsAreAllClassesInCanonicalOrder) {
  SyntheticConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.frames = 8 + seed * 3;
    const EpisodeScript s = script_episode(cfg, static_cast<int>(seed), seed);
    ASSERT_EQ(s.labels.size(), cfg.frames);
    EXPECT_EQ(std::set<int>(s.labels.begin(), s.labels.end()).size(), kNumClasses);
    EXPECT_TRUE(std::is_sorted(s.labels.begin(), s.labels.end()));
    EXPECT_EQ(s.labels.front(), 0);
    EXPECT_EQ(s.labels.back(), 7);
  }
}

TEST(Synthetic, SameSeedSameEpisode) {
  SyntheticConfig cfg;
  cfg.frames = 12;
  const EpisodeSequence a = generate_synthetic_episode(cfg, 42), b = generate_synthetic_episode(cfg, 42);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.depths, b.depths);
  EXPECT_EQ(a.labels, b.labels);
  const EpisodeSequence c = generate_synthetic_episode(cfg, 43);
  EXPECT_NE(a.depths, c.depths);
}

TEST(Synthetic, BlockDepthMatchesScriptedDistance) {
  SyntheticConfig cfg;
  const CameraIntrinsics intr = cfg.intrinsics();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const EpisodeScript s = script_episode(cfg, 0, seed);
    const EpisodeSequence ep = generate_synthetic_episode(cfg, seed);
    std::size_t checked = 0;
    for (std::size_t t = 0; t < cfg.frames; ++t) {
      const Point3 b = s.states[t].block_center;
      const double front = b.z - 5.0;
      const Projection p = project({b.x, b.y, front}, intr);
      ASSERT_EQ(p.status, ProjectionStatus::InFrame);
      const auto u = static_cast<std::size_t>(std::lround(p.u)), v = static_cast<std::size_t>(std::lround(p.v));
      // Front-face hits are shaded at full brightness in the block color.
      const bool block_visible = ep.frames[t].at(u, v, 0) == s.block_color[0] &&
                                 ep.frames[t].at(u, v, 1) == s.block_color[1] &&
                                 ep.frames[t].at(u, v, 2) == s.block_color[2];
      if (!block_visible) continue;
      EXPECT_NEAR(ep.depths[t].at(u, v), front, 1e-4) << "seed " << seed << " frame " << t;
      ++checked;
    }
    EXPECT_GE(checked, cfg.frames / 2) << "block hidden in most frames";
  }
}

TEST(Synthetic, DepthBackprojectsOntoScene) {
  // Every valid pixel lies on some box surface, so back-projected points hit the wall or nearer.
  SyntheticConfig cfg;
  const EpisodeSequence ep = generate_synthetic_episode(cfg, 9);
  for (float z : ep.depths[5].values) {
    EXPECT_GT(z, 0.0f);
    EXPECT_LE(z, 140.0f + 1e-3f);
  }
}

TEST(Synthetic, PhasesLookDifferent) {
  SyntheticConfig cfg;
  const EpisodeSequence ep = generate_synthetic_episode(cfg, 5);
  for (std::size_t t = 1; t < ep.frames.size(); ++t) {
    if (ep.labels[t] != ep.labels[t - 1]) EXPECT_NE(ep.frames[t], ep.frames[t - 1]) << "frame " << t;
  }
}

TEST_F(TempDir, CorpusLayoutAndIds) {
  SyntheticConfig cfg;
  cfg.frames = 8;
  const auto dirs = generate_corpus(dir_, 7, cfg, 1);
  ASSERT_EQ(dirs.size(), 7u);
  EXPECT_EQ(list_episodes(dir_), dirs);
  const EpisodeSequence e6 = load_episode(dirs[6]);
  EXPECT_EQ(e6.manifest.episode_id, "ep_0006");
  EXPECT_EQ(e6.manifest.user_id, 1);
  EXPECT_EQ(e6.manifest.scene_id, 1);
  EXPECT_TRUE(e6.manifest.has_depth);
}
