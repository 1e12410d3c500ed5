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

#include <filesystem>
#include <fstream>

#include "fedmde/checkpoint.hpp"
#include "fedmde/depth_models.hpp"
#include "fedmde/errors.hpp"
#include "fedmde/ssl_losses.hpp"
#include "oracles.hpp"

using namespace fedmde;
namespace fs = std::filesystem;

namespace {

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k) {
  return in * out * k * k + out;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("fedmde_models_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(SigmoidToDepth, BoundaryAndMidpointValues) {
  auto s = torch::tensor({0.0, 1.0, 0.5}, torch::kFloat64);
  auto d = sigmoid_to_depth(s);
  // 1/b = 100 and 1/(a + b) = 0.1 give b = 0.01, a = 9.99.
  const double b = 1.0 / 100.0, a = 1.0 / 0.1 - b;
  EXPECT_NEAR(d[0].item<double>(), 100.0, 1e-12);
  EXPECT_NEAR(d[1].item<double>(), 0.1, 1e-12);
  EXPECT_NEAR(d[2].item<double>(), 1.0 / (a * 0.5 + b), 1e-12);
  EXPECT_NEAR(d[2].item<double>(), 0.19980, 1e-5);
}

TEST(SigmoidToDepth, StrictlyDecreasing) {
  auto s = torch::linspace(0, 1, 1001, torch::kFloat64);
  auto d = sigmoid_to_depth(s);
  EXPECT_TRUE((d.slice(0, 1) < d.slice(0, 0, -1)).all().item<bool>());
}

TEST(SigmoidToDepth, RejectsOutOfRange) {
  EXPECT_THROW(sigmoid_to_depth(torch::tensor({1.5})), std::invalid_argument);
  EXPECT_THROW(sigmoid_to_depth(torch::tensor({-0.1})), std::invalid_argument);
}

TEST(DepthNet, OutputShapeAndRange) {
  torch::manual_seed(51);
  DepthNet net(DepthNetConfig{8});
  auto img = torch::rand({2, 3, 32, 64});
  auto d = depth_forward(net, img);
  EXPECT_EQ(d.sizes(), (std::vector<std::int64_t>{2, 1, 32, 64}));
  EXPECT_GE(d.min().item<double>(), kMinDepth);
  EXPECT_LE(d.max().item<double>(), kMaxDepth);
  EXPECT_TRUE(torch::equal(d, depth_forward(net, img)));
}

TEST(DepthNet, RejectsBadInputShape) {
  DepthNet net(DepthNetConfig{4});
  EXPECT_THROW(depth_forward(net, torch::rand({1, 3, 30, 64})), std::invalid_argument);
  EXPECT_THROW(depth_forward(net, torch::rand({1, 1, 32, 64})), std::invalid_argument);
}

TEST(DepthNet, PerturbingAWeightChangesOutput) {
  torch::manual_seed(52);
  DepthNet net(DepthNetConfig{8});
  auto img = torch::rand({1, 3, 16, 32});
  const double before = depth_forward(net, img).mean().item<double>();
  {
    torch::NoGradGuard ng;
    net->named_parameters()["enc0a.weight"].add_(torch::randn_like(
        net->named_parameters()["enc0a.weight"]) * 0.1);
  }
  EXPECT_NE(depth_forward(net, img).mean().item<double>(), before);
}

TEST(DepthNet, GradientsReachEveryParameter) {
  torch::manual_seed(53);
  DepthNet net(DepthNetConfig{4});
  depth_forward(net, torch::rand({1, 3, 16, 16})).mean().backward();
  for (const auto& p : net->named_parameters()) {
    ASSERT_TRUE(p.value().grad().defined()) << p.key();
  }
}

TEST(PoseNet, DeterministicAndFinite) {
  torch::manual_seed(54);
  PoseNet net(PoseNetConfig{8});
  auto a = torch::rand({3, 3, 32, 64}), b = torch::rand({3, 3, 32, 64});
  auto p = pose_forward(net, a, b);
  EXPECT_EQ(p.sizes(), (std::vector<std::int64_t>{3, 6}));
  EXPECT_TRUE(torch::isfinite(p).all().item<bool>());
  EXPECT_TRUE(torch::equal(p, pose_forward(net, a, b)));
  EXPECT_THROW(pose_forward(net, a, torch::rand({3, 3, 32, 32})), std::invalid_argument);
}

TEST(PoseNet, WarpLossGradientThroughNetworkMatchesFiniteDifferences) {
  torch::manual_seed(55);
  PoseNet net(PoseNetConfig{4, 0.05});
  net->to(torch::kFloat64);
  const Intrinsics k{16, 16, 7.5, 7.5, 16, 16};
  auto target = torch::rand({1, 3, 16, 16}, torch::kFloat64);
  auto source = torch::rand({1, 3, 16, 16}, torch::kFloat64);
  auto depth = 2.0 + torch::rand({1, 1, 16, 16}, torch::kFloat64);
  auto loss = [&] {
    auto pose = pose_forward(net, target, source);
    return photometric_loss(warp_frame(source, depth, depth, pose, k), target, {});
  };
  auto bias = net->named_parameters()["head.bias"];
  net->zero_grad();
  loss().backward();
  auto analytic = bias.grad().clone();
  torch::NoGradGuard ng;
  auto original = bias.detach().clone();
  auto numeric = oracle::numeric_gradient(
      [&](const torch::Tensor& x) {
        bias.copy_(x);
        return loss().item<double>();
      },
      original, 1e-7);
  bias.copy_(original);
  EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-3);
}

TEST(ParameterBytes, Examples) {
  ParameterSet ten;
  ten.add("w", torch::zeros({10}, torch::kFloat32));
  EXPECT_EQ(parameter_bytes({&ten}), 40);
  ParameterSet empty;
  EXPECT_EQ(parameter_bytes({&empty}), 0);
  ParameterSet dbl;
  dbl.add("w", torch::zeros({2, 3}, torch::kFloat64));
  EXPECT_EQ(parameter_bytes({&ten, &dbl}), 40 + 48);
}

TEST(ParameterBytes, DesktopNetworksMatchLayerCount) {
  const std::int64_t c = 8, pc = 16;
  DepthNet depth(DepthNetConfig{c});
  PoseNet pose(PoseNetConfig{pc});
  const std::int64_t depth_count =
      conv_params(3, c, 3) + conv_params(c, c, 3) + conv_params(c, 2 * c, 3) +
      conv_params(2 * c, 2 * c, 3) + conv_params(2 * c, 4 * c, 3) + conv_params(4 * c, 4 * c, 3) +
      conv_params(4 * c, 4 * c, 3) +                                    // bottleneck
      conv_params(4 * c, 4 * c, 3) + conv_params(8 * c, 2 * c, 3) +     // level 2 decoder
      conv_params(2 * c, 2 * c, 3) + conv_params(4 * c, c, 3) +         // level 1 decoder
      conv_params(c, c, 3) + conv_params(2 * c, c, 3) + conv_params(c, 1, 3);
  const std::int64_t pose_count = conv_params(6, pc, 7) + conv_params(pc, 2 * pc, 5) +
                                  conv_params(2 * pc, 4 * pc, 3) +
                                  conv_params(4 * pc, 4 * pc, 3) + conv_params(4 * pc, 6, 1);
  auto dp = snapshot_parameters(*depth);
  auto pp = snapshot_parameters(*pose);
  EXPECT_EQ(dp.total_bytes(), 4 * depth_count);
  EXPECT_EQ(pp.total_bytes(), 4 * pose_count);
  EXPECT_EQ(parameter_bytes({&dp, &pp}), 4 * (depth_count + pose_count));
}

TEST(ParameterSet, SameArchitectureIsAggregationCompatible) {
  for (std::int64_t c : {2, 4, 8}) {
    torch::manual_seed(c);
    DepthNet a(DepthNetConfig{c});
    torch::manual_seed(c + 100);
    DepthNet b(DepthNetConfig{c});
    EXPECT_TRUE(snapshot_parameters(*a).compatible_with(snapshot_parameters(*b)));
  }
  DepthNet small(DepthNetConfig{2}), big(DepthNetConfig{4});
  auto mismatch = snapshot_parameters(*small).first_mismatch(snapshot_parameters(*big));
  ASSERT_TRUE(mismatch.has_value());
  EXPECT_EQ(*mismatch, "enc0a.weight");
}

TEST(ParameterSet, SnapshotIsAValueCopy) {
  DepthNet net(DepthNetConfig{2});
  auto snap = snapshot_parameters(*net);
  const auto before = snap.at("head.bias").clone();
  {
    torch::NoGradGuard ng;
    net->named_parameters()["head.bias"].add_(1.0);
  }
  EXPECT_TRUE(torch::equal(snap.at("head.bias"), before));
  load_parameters(*net, snap);
  EXPECT_TRUE(torch::equal(net->named_parameters()["head.bias"], before));
}

TEST(ParameterSet, DuplicateNamesRejected) {
  ParameterSet p;
  p.add("a", torch::zeros({1}));
  EXPECT_THROW(p.add("a", torch::zeros({1})), std::invalid_argument);
}

TEST(PseudoDepth, ZeroNoiseIsExactAndRepeatable) {
  auto depth = 1.0 + 10.0 * torch::rand({1, 8, 16});
  AnalyticPseudoDepth provider({{"f0", depth}});
  auto img = torch::rand({3, 8, 16});
  auto a = pseudo_depth(provider, "f0", img);
  EXPECT_TRUE(torch::equal(a, depth));
  EXPECT_TRUE(torch::equal(a, pseudo_depth(provider, "f0", img)));
  EXPECT_THROW(pseudo_depth(provider, "missing", img), std::invalid_argument);
}

TEST(PseudoDepth, NoisyOutputStaysWithinBound) {
  torch::manual_seed(56);
  auto depth = (1.0 + 10.0 * torch::rand({1, 16, 32})).to(torch::kFloat64);
  for (double bound : {0.01, 0.1, 0.3}) {
    AnalyticPseudoDepth provider({{"f", depth}}, {bound, 0.5, 1.0, 9});
    auto p = pseudo_depth(provider, "f", torch::Tensor());
    auto rel = (p / depth - 1.0).abs();
    EXPECT_LE(rel.max().item<double>(), bound + 1e-12);
    EXPECT_GT(rel.max().item<double>(), 0.0);
    EXPECT_GT(p.min().item<double>(), 0.0);
    EXPECT_TRUE(torch::equal(p, pseudo_depth(provider, "f", torch::Tensor())));
  }
  EXPECT_THROW(AnalyticPseudoDepth({{"f", depth}}, {1.0, 0.1, 1.0, 0}), std::invalid_argument);
}

TEST(PseudoDepth, NoGradientFlowsThroughProvider) {
  auto depth = torch::ones({1, 4, 4}).requires_grad_(true);
  AnalyticPseudoDepth provider({{"f", depth}}, {0.1, 0.05, 1.0, 1});
  auto img = torch::rand({3, 4, 4}).requires_grad_(true);
  auto p = pseudo_depth(provider, "f", img);
  EXPECT_FALSE(p.requires_grad());
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir tmp;
  torch::manual_seed(57);
  DepthNet net(DepthNetConfig{4});
  auto params = snapshot_parameters(*net);
  const auto file = tmp.path / "depth.ckpt";
  save_checkpoint(file, params, net->config().architecture_id(), 7);
  auto loaded = load_checkpoint(file);
  EXPECT_TRUE(loaded.params.identical_to(params));
  EXPECT_EQ(loaded.manifest.round, 7);
  EXPECT_EQ(loaded.manifest.parameter_bytes, params.total_bytes());
  EXPECT_EQ(loaded.manifest.architecture, "depthnet-unet3-elu-c4");

  ParameterSet dbl;
  dbl.add("x", torch::rand({3, 2}, torch::kFloat64));
  save_checkpoint(tmp.path / "dbl.ckpt", dbl, "test", 0);
  EXPECT_TRUE(load_checkpoint(tmp.path / "dbl.ckpt").params.identical_to(dbl));
}

TEST(Checkpoint, CorruptionIsDetected) {
  TempDir tmp;
  DepthNet net(DepthNetConfig{2});
  auto params = snapshot_parameters(*net);
  const auto file = tmp.path / "depth.ckpt";
  EXPECT_THROW(load_checkpoint(file), IngestionError);

  save_checkpoint(file, params, "arch", 1);
  fs::resize_file(file, fs::file_size(file) / 2);
  EXPECT_THROW(load_checkpoint(file), IngestionError);

  save_checkpoint(file, params, "arch", 1);
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_checkpoint(file), IngestionError);

  save_checkpoint(file, params, "arch", 1);
  std::ofstream(file.string() + ".manifest.json")
      << R"({"architecture":"arch","architecture_hash":1,"parameter_bytes":4,"round":1})";
  EXPECT_THROW(load_checkpoint(file), IngestionError);
}
