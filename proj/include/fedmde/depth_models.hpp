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

// Desk-scale DepthNet / PoseNet and the frozen pseudo-depth providers.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "fedmde/camera_geometry.hpp"
#include "fedmde/parameter_set.hpp"

namespace fedmde {

inline constexpr double kMinDepth = 0.1;
inline constexpr double kMaxDepth = 100.0;

/// D = 1 / (a * sigma + b) with a, b chosen so that sigma = 0 maps to
/// kMaxDepth and sigma = 1 maps to kMinDepth.
torch::Tensor sigmoid_to_depth(const torch::Tensor& sigma);

struct DepthNetConfig {
  std::int64_t base_channels = 16;

  /// Stable textual id of the architecture, hashed into checkpoint manifests.
  std::string architecture_id() const;
};

/// Three-level encoder-decoder with skip connections, ELU activations and a
/// sigmoid output. Input height and width must be multiples of 8.
class DepthNetImpl : public torch::nn::Module {
 public:
  explicit DepthNetImpl(const DepthNetConfig& config = {});

  /// image [B, 3, H, W] in [0, 1] -> sigmoid map [B, 1, H, W].
  torch::Tensor forward(const torch::Tensor& image);

  const DepthNetConfig& config() const { return config_; }

 private:
  DepthNetConfig config_;
  torch::nn::Conv2d enc0a_{nullptr}, enc0b_{nullptr};
  torch::nn::Conv2d enc1a_{nullptr}, enc1b_{nullptr};
  torch::nn::Conv2d enc2a_{nullptr}, enc2b_{nullptr};
  torch::nn::Conv2d bottleneck_{nullptr};
  torch::nn::Conv2d up2_{nullptr}, dec2_{nullptr};
  torch::nn::Conv2d up1_{nullptr}, dec1_{nullptr};
  torch::nn::Conv2d up0_{nullptr}, dec0_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(DepthNet);

struct PoseNetConfig {
  std::int64_t base_channels = 16;
  double output_scale = 0.01;

  std::string architecture_id() const;
};

/// Strided conv encoder over a stacked image pair (6 channels) followed by
/// global averaging into a 6-DoF relative pose.
class PoseNetImpl : public torch::nn::Module {
 public:
  explicit PoseNetImpl(const PoseNetConfig& config = {});

  /// Pose mapping points of `target` into the camera frame of `source` [B, 6].
  torch::Tensor forward(const torch::Tensor& target, const torch::Tensor& source);

  const PoseNetConfig& config() const { return config_; }

 private:
  PoseNetConfig config_;
  torch::nn::Conv2d conv0_{nullptr}, conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PoseNet);

/// Depth map [B, 1, H, W] in [kMinDepth, kMaxDepth] for `image`.
torch::Tensor depth_forward(DepthNet& net, const torch::Tensor& image);

/// Relative pose [B, 6] from `target` to `source`.
torch::Tensor pose_forward(PoseNet& net, const torch::Tensor& target, const torch::Tensor& source);

/// Frozen single-image depth prior. Implementations hold no trainable
/// parameters and return the same map for the same frame on every call.
class PseudoDepthProvider {
 public:
  virtual ~PseudoDepthProvider() = default;

  /// `frame_id` identifies the frame within its dataset; `image` is [3, H, W].
  /// Returns a positive, detached depth map [1, H, W].
  virtual torch::Tensor predict(const std::string& frame_id, const torch::Tensor& image) const = 0;
};

torch::Tensor pseudo_depth(const PseudoDepthProvider& provider, const std::string& frame_id,
                           const torch::Tensor& image);

/// Stand-in for a pretrained depth network on synthetic data: the analytic
/// scene depth times (1 + n), where n is Gaussian noise blurred with a
/// Gaussian kernel and clipped to [-noise_bound, noise_bound].
class AnalyticPseudoDepth final : public PseudoDepthProvider {
 public:
  struct Options {
    double noise_bound = 0.0;    // relative, must be < 1
    double noise_std = 0.05;     // before blurring
    double blur_sigma = 2.0;     // pixels
    std::uint64_t seed = 0;
  };

  AnalyticPseudoDepth(std::map<std::string, torch::Tensor> depths, Options options);
  explicit AnalyticPseudoDepth(std::map<std::string, torch::Tensor> depths)
      : AnalyticPseudoDepth(std::move(depths), Options{}) {}

  torch::Tensor predict(const std::string& frame_id, const torch::Tensor& image) const override;

  const Options& options() const { return options_; }

 private:
  std::map<std::string, torch::Tensor> depths_;
  Options options_;
};

}  // namespace fedmde
