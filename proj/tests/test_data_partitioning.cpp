/*
 * Copyright 2026 The fedmde Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "fedmde/camera_geometry.hpp"
#include "fedmde/dataset.hpp"
#include "fedmde/errors.hpp"
#include "fedmde/kitti_dataset.hpp"
#include "fedmde/ssl_losses.hpp"
#include "fedmde/synthetic_scene.hpp"

using namespace fedmde;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> drives_of_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<std::string> ids;
  for (std::size_t d = 0; d < sizes.size(); ++d) {
    char name[16];
    std::snprintf(name, sizeof name, "d%02zu", d);
    ids.insert(ids.end(), sizes[d], name);
  }
  return ids;
}

// Disjoint, sorted, and covering 0..n-1 exactly once.
void expect_exact_cover(const PartitionPlan& plan, std::size_t n) {
  std::vector<std::size_t> all;
  for (const auto& a : plan.assignment) {
    EXPECT_FALSE(a.empty());
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    all.insert(all.end(), a.begin(), a.end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(n);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
}

}  // namespace

TEST(PartitionIid, ExactDivision) {
  auto plan = partition_iid(100, 10, 1);
  EXPECT_EQ(plan.counts(), std::vector<std::size_t>(10, 10));
  expect_exact_cover(plan, 100);
}

TEST(PartitionIid, RemainderGoesToOneParticipant) {
  auto counts = partition_iid(101, 10, 2).counts();
  EXPECT_EQ(std::count(counts.begin(), counts.end(), 10u), 9);
  EXPECT_EQ(std::count(counts.begin(), counts.end(), 11u), 1);
}

TEST(PartitionIid, DeterministicAndSeedDependent) {
  auto a = partition_iid(50, 4, 3), b = partition_iid(50, 4, 3), c = partition_iid(50, 4, 4);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_NE(a.assignment, c.assignment);
}

TEST(PartitionIid, BalancedAndCoveringForRandomSizes) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto c = std::uniform_int_distribution<std::int64_t>(1, 12)(rng);
    const auto n = std::uniform_int_distribution<std::size_t>(c, 400)(rng);
    auto plan = partition_iid(n, c, seed);
    auto counts = plan.counts();
    EXPECT_LE(*std::max_element(counts.begin(), counts.end()) -
                  *std::min_element(counts.begin(), counts.end()),
              1u);
    expect_exact_cover(plan, n);
  }
}

TEST(PartitionIid, RejectsBadArguments) {
  EXPECT_THROW(partition_iid(10, 0, 1), std::invalid_argument);
  EXPECT_THROW(partition_iid(3, 4, 1), std::invalid_argument);
}

TEST(PartitionNiid, LargestDrivesBecomeParticipants) {
  auto ids = drives_of_sizes({50, 30, 10, 5, 5});
  auto plan = partition_niid(std::span<const std::string>(ids), 3, 6);
  auto counts = plan.counts();
  EXPECT_EQ(plan.total(), 100u);
  expect_exact_cover(plan, 100);
  // Each participant keeps its whole drive.
  const std::size_t base[] = {50, 30, 10};
  for (std::size_t p = 0; p < 3; ++p) {
    std::map<std::string, std::size_t> per_drive;
    for (auto i : plan.assignment[p]) ++per_drive[ids[i]];
    char name[16];
    std::snprintf(name, sizeof name, "d%02zu", p);
    EXPECT_EQ(per_drive[name], base[p]);
    EXPECT_GE(counts[p], base[p]);
  }
  EXPECT_EQ(counts[0] + counts[1] + counts[2] - 90, 10u);
  EXPECT_GT(*std::min_element(counts.begin(), counts.end()), 10u);
}

TEST(PartitionNiid, EqualDrivesWithoutLeftoversGroupByDrive) {
  auto ids = drives_of_sizes({7, 7, 7});
  auto plan = partition_niid(std::span<const std::string>(ids), 3, 7);
  for (std::size_t p = 0; p < 3; ++p) {
    ASSERT_EQ(plan.assignment[p].size(), 7u);
    for (auto i : plan.assignment[p]) EXPECT_EQ(ids[i], ids[plan.assignment[p][0]]);
  }
}

TEST(PartitionNiid, TiesBrokenByDriveId) {
  std::vector<std::string> ids = {"b", "b", "a", "a", "c"};
  auto plan = partition_niid(std::span<const std::string>(ids), 2, 1);
  EXPECT_EQ(ids[plan.assignment[0].front()], "a");
  EXPECT_EQ(ids[plan.assignment[1].front()], "b");
}

TEST(PartitionNiid, Deterministic) {
  auto ids = drives_of_sizes({9, 8, 4, 3, 2, 2});
  auto a = partition_niid(std::span<const std::string>(ids), 3, 11);
  auto b = partition_niid(std::span<const std::string>(ids), 3, 11);
  EXPECT_EQ(a.assignment, b.assignment);
}

TEST(PartitionNiid, ConservesAndRaisesMinimumForRandomDrives) {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto drives = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
    std::vector<std::size_t> sizes(drives);
    for (auto& s : sizes) s = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
    const auto c = std::uniform_int_distribution<std::int64_t>(1, static_cast<std::int64_t>(drives))(rng);
    auto ids = drives_of_sizes(sizes);
    auto plan = partition_niid(std::span<const std::string>(ids), c, seed);
    expect_exact_cover(plan, ids.size());

    // Raw grouping: one participant per drive.
    const auto raw_min = *std::min_element(sizes.begin(), sizes.end());
    auto counts = plan.counts();
    const auto new_min = *std::min_element(counts.begin(), counts.end());
    if (static_cast<std::size_t>(c) < drives) {
      EXPECT_GT(new_min, raw_min) << "seed " << seed;
    } else {
      EXPECT_EQ(new_min, raw_min);
    }
    // Same multiset of samples as the IID plan over the same input.
    auto iid = partition_iid(ids.size(), c, seed);
    EXPECT_EQ(iid.total(), plan.total());
  }
}

TEST(PartitionNiid, TooFewDrivesRejected) {
  auto ids = drives_of_sizes({4, 4});
  EXPECT_THROW(partition_niid(std::span<const std::string>(ids), 3, 0), std::invalid_argument);
  EXPECT_THROW(partition_niid(std::span<const std::string>(ids), 0, 0), std::invalid_argument);
}

TEST(PartitionPlan, JsonRoundTrip) {
  auto plan = partition_iid(23, 4, 9);
  auto back = PartitionPlan::from_json(plan.to_json());
  EXPECT_EQ(back.assignment, plan.assignment);
  EXPECT_EQ(back.seed, plan.seed);
  EXPECT_EQ(back.scenario, Scenario::kFederatedIid);
  EXPECT_THROW(PartitionPlan::from_json("{not json"), std::invalid_argument);
}

TEST(PartitionCentralized, OneParticipantWithEverything) {
  auto plan = partition_centralized(12);
  ASSERT_EQ(plan.participant_count(), 1u);
  expect_exact_cover(plan, 12);
}

TEST(Scenario, ParseAndPrint) {
  for (auto s : {Scenario::kCentralized, Scenario::kFederatedIid, Scenario::kFederatedNiid}) {
    EXPECT_EQ(parse_scenario(to_string(s)), s);
  }
  EXPECT_EQ(to_string(Scenario::kFederatedNiid), "FT-NIID");
  EXPECT_THROW(parse_scenario("FT"), std::invalid_argument);
}

TEST(MakeBatches, ExactFitUsesEverySampleOnce) {
  std::vector<std::size_t> ids(4000);
  std::iota(ids.begin(), ids.end(), 0);
  auto batches = make_batches(ids, 1000, 4, 1);
  ASSERT_EQ(batches.size(), 1000u);
  std::vector<std::size_t> seen;
  for (const auto& b : batches) {
    EXPECT_EQ(b.size(), 4u);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, ids);
}

TEST(MakeBatches, ResamplesUntilQuota) {
  std::vector<std::size_t> ids(40);
  std::iota(ids.begin(), ids.end(), 100);
  auto batches = make_batches(ids, 1000, 4, 2);
  ASSERT_EQ(batches.size(), 1000u);
  std::map<std::size_t, int> uses;
  for (const auto& b : batches) {
    for (auto i : b) {
      EXPECT_GE(i, 100u);
      EXPECT_LT(i, 140u);
      ++uses[i];
    }
  }
  EXPECT_EQ(uses.size(), 40u);
  EXPECT_GT(std::max_element(uses.begin(), uses.end(),
                             [](auto a, auto b) { return a.second < b.second; })->second,
            1);
}

TEST(MakeBatches, ShortLastBatchAndDeterminism) {
  std::vector<std::size_t> ids(10);
  std::iota(ids.begin(), ids.end(), 0);
  auto a = make_batches(ids, 3, 4, 3);
  EXPECT_EQ(a.size(), 3u);
  EXPECT_EQ(a[2].size(), 2u);
  EXPECT_EQ(a, make_batches(ids, 3, 4, 3));
  EXPECT_NE(a, make_batches(ids, 3, 4, 4));
  EXPECT_THROW(make_batches({}, 3, 4, 3), std::invalid_argument);
}

TEST(SyntheticScene, DeterministicPixels) {
  SyntheticSceneSpec spec;
  spec.width = 32;
  spec.height = 16;
  spec.drive_frames = {3, 2};
  auto a = generate_synthetic_scene(spec, 21);
  auto b = generate_synthetic_scene(spec, 21);
  ASSERT_EQ(a.samples.size(), 5u);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_TRUE(torch::equal(a.samples[i].target, b.samples[i].target));
    EXPECT_TRUE(torch::equal(*a.samples[i].ground_truth, *b.samples[i].ground_truth));
    EXPECT_NO_THROW(validate_sample(a.samples[i]));
  }
  EXPECT_EQ(a.samples[0].drive_id, "drive00");
  EXPECT_EQ(a.samples[4].drive_id, "drive01");
}

TEST(SyntheticScene, StaticCameraGivesIdenticalFrames) {
  SyntheticSceneSpec spec;
  spec.width = 32;
  spec.height = 16;
  spec.speed = 0.0;
  spec.drive_frames = {2};
  auto scene = generate_synthetic_scene(spec, 22);
  for (std::size_t i = 0; i < scene.samples.size(); ++i) {
    const auto& s = scene.samples[i];
    EXPECT_TRUE(torch::equal(s.target, s.sources[0]));
    auto depth = s.ground_truth->unsqueeze(0).to(torch::kFloat64);
    auto warp = warp_frame(s.sources[0].unsqueeze(0).to(torch::kFloat64), depth, depth,
                           scene.poses[i][0].to_tensor().unsqueeze(0), s.intrinsics);
    EXPECT_NEAR(photometric_loss(warp, s.target.unsqueeze(0).to(torch::kFloat64), {}).item<double>(),
                0.0, 1e-6);
  }
}

TEST(SyntheticScene, TrueDepthAndPoseReconstructTarget) {
  SyntheticSceneSpec spec;
  spec.width = 64;
  spec.height = 32;
  spec.drive_frames = {3};
  spec.boxes = 0;
  spec.fog_density = 0.0;
  spec.texture_frequency = 0.05;
  spec.supersample = 8;
  auto scene = generate_synthetic_scene(spec, 23);
  for (std::size_t i = 0; i < scene.samples.size(); ++i) {
    const auto& s = scene.samples[i];
    const auto& pose = scene.poses[i][0];
    EXPECT_GT(std::abs(pose.translation[2]), 0.0);
    auto src_depth = scene.depth_by_frame.at(s.source_ids[0]).unsqueeze(0).to(torch::kFloat64);
    auto tgt_depth = s.ground_truth->unsqueeze(0).to(torch::kFloat64);
    auto warp = warp_frame(s.sources[0].unsqueeze(0).to(torch::kFloat64), src_depth, tgt_depth,
                           pose.to_tensor().unsqueeze(0), s.intrinsics);
    ASSERT_GT(warp.valid_count(), 0);
    auto valid = warp.validity.expand({1, 3, spec.height, spec.width});
    auto diff = (warp.reconstruction - s.target.unsqueeze(0).to(torch::kFloat64)).abs();
    EXPECT_LT(diff.masked_select(valid).mean().item<double>(), 1e-3) << "sample " << i;
  }
}

TEST(SyntheticScene, RejectsNonPositiveResolution) {
  SyntheticSceneSpec spec;
  spec.width = 0;
  EXPECT_THROW(generate_synthetic_scene(spec, 1), std::invalid_argument);
}

class KittiLayout : public ::testing::Test {
 protected:
  fs::path root;
  const std::string drive = "2011_09_26_drive_0001_sync";

  void SetUp() override {
    root = fs::temp_directory_path() / "fedmde_kitti_layout";
    fs::remove_all(root);
    const auto images = root / drive / "image_02" / "data";
    const auto gt = root / drive / "proj_depth" / "groundtruth" / "image_02";
    fs::create_directories(images);
    fs::create_directories(gt);
    for (int f = 0; f < 5; ++f) {
      cv::Mat img(40, 100, CV_8UC3, cv::Scalar(10 * f, 100, 200));
      char name[32];
      std::snprintf(name, sizeof name, "%010d.png", f);
      cv::imwrite((images / name).string(), img);
      cv::Mat depth(40, 100, CV_16UC1, cv::Scalar(static_cast<int>(20.0 * 256)));
      depth(cv::Rect(0, 0, 50, 40)).setTo(static_cast<int>(120.0 * 256));
      cv::imwrite((gt / name).string(), depth);
    }
    std::ofstream(root / drive / "calib.txt") << "50 50 49.5 19.5 100 40\n";
    std::ofstream split(root / "train.txt");
    for (int f = 1; f <= 3; ++f) {
      char line[96];
      std::snprintf(line, sizeof line, "%s/image_02/data/%010d.png\n", drive.c_str(), f);
      split << line;
    }
  }
  void TearDown() override { fs::remove_all(root); }
};

TEST_F(KittiLayout, LoadsListedFramesAtConfiguredResolution) {
  auto samples = load_kitti_layout(root, root / "train.txt");
  ASSERT_EQ(samples.size(), 3u);
  for (const auto& s : samples) {
    EXPECT_EQ(s.drive_id, drive);
    EXPECT_EQ(s.target.sizes(), (std::vector<std::int64_t>{3, 256, 832}));
    ASSERT_EQ(s.sources.size(), 2u);
    for (const auto& src : s.sources) EXPECT_EQ(src.sizes(), s.target.sizes());
    EXPECT_EQ(s.intrinsics.width, 832);
    EXPECT_NEAR(s.intrinsics.fx, 50.0 * 832 / 100, 1e-9);
    ASSERT_TRUE(s.ground_truth.has_value());
    EXPECT_EQ(s.ground_truth->sizes(), (std::vector<std::int64_t>{1, 256, 832}));
    EXPECT_FLOAT_EQ(s.ground_truth->max().item<float>(), 80.0f);
    EXPECT_FLOAT_EQ(s.ground_truth->min().item<float>(), 20.0f);
    EXPECT_NO_THROW(validate_sample(s));
  }
}

TEST_F(KittiLayout, MissingFilesAreListed) {
  fs::remove(root / drive / "image_02" / "data" / "0000000004.png");
  fs::remove(root / drive / "calib.txt");
  try {
    load_kitti_layout(root, root / "train.txt");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("0000000004.png"), std::string::npos) << what;
    EXPECT_NE(what.find("calib.txt"), std::string::npos) << what;
  }
  EXPECT_THROW(load_kitti_layout(root, root / "missing.txt"), IngestionError);
}

TEST_F(KittiLayout, CorruptImageIsSkipped) {
  std::ofstream(root / drive / "image_02" / "data" / "0000000002.png") << "not a png";
  auto samples = load_kitti_layout(root, root / "train.txt", {832, 256, 80.0, 1});
  // Frame 1 uses 2 as its next frame, frame 2 is itself corrupt.
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_NE(samples[0].id.find("0000000003"), std::string::npos);
}
