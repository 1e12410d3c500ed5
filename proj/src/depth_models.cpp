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

#include "fedmde/depth_models.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "fedmde/seeding.hpp"

namespace fedmde {

namespace {

namespace nn = torch::nn;

constexpr double kDepthOffset = 1.0 / kMaxDepth;               // b
constexpr double kDepthScale = 1.0 / kMinDepth - kDepthOffset;  // a

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t kernel = 3,
                std::int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return torch::nn::functional::interpolate(
      x, torch::nn::functional::InterpolateFuncOptions()
             .scale_factor(std::vector<double>{2.0, 2.0})
             .mode(torch::kNearest));
}

void check_image(const torch::Tensor& image, const char* what) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw std::invalid_argument(std::string(what) + ": image must be [B, 3, H, W]");
  }
}

}  // namespace

torch::Tensor sigmoid_to_depth(const torch::Tensor& sigma) {
  if ((sigma < 0).any().item<bool>() || (sigma > 1).any().item<bool>()) {
    throw std::invalid_argument("sigmoid_to_depth: sigma outside [0, 1]");
  }
  return 1.0 / (kDepthScale * sigma + kDepthOffset);
}

std::string DepthNetConfig::architecture_id() const {
  return "depthnet-unet3-elu-c" + std::to_string(base_channels);
}

DepthNetImpl::DepthNetImpl(const DepthNetConfig& config) : config_(config) {
  const auto c = config.base_channels;
  if (c <= 0) throw std::invalid_argument("DepthNet: base_channels must be positive");
  enc0a_ = register_module("enc0a", conv(3, c));
  enc0b_ = register_module("enc0b", conv(c, c));
  enc1a_ = register_module("enc1a", conv(c, 2 * c, 3, 2));
  enc1b_ = register_module("enc1b", conv(2 * c, 2 * c));
  enc2a_ = register_module("enc2a", conv(2 * c, 4 * c, 3, 2));
  enc2b_ = register_module("enc2b", conv(4 * c, 4 * c));
  bottleneck_ = register_module("bottleneck", conv(4 * c, 4 * c, 3, 2));
  up2_ = register_module("up2", conv(4 * c, 4 * c));
  dec2_ = register_module("dec2", conv(8 * c, 2 * c));
  up1_ = register_module("up1", conv(2 * c, 2 * c));
  dec1_ = register_module("dec1", conv(4 * c, c));
  up0_ = register_module("up0", conv(c, c));
  dec0_ = register_module("dec0", conv(2 * c, c));
  head_ = register_module("head", conv(c, 1));
}

torch::Tensor DepthNetImpl::forward(const torch::Tensor& image) {
  check_image(image, "DepthNet");
  if (image.size(2) % 8 != 0 || image.size(3) % 8 != 0) {
    throw std::invalid_argument("DepthNet: height and width must be multiples of 8");
  }
  auto x = (image - 0.45) / 0.225;
  auto e0 = torch::elu(enc0b_(torch::elu(enc0a_(x))));
  auto e1 = torch::elu(enc1b_(torch::elu(enc1a_(e0))));
  auto e2 = torch::elu(enc2b_(torch::elu(enc2a_(e1))));
  auto b = torch::elu(bottleneck_(e2));
  auto d2 = torch::elu(dec2_(torch::cat({torch::elu(up2_(upsample2(b))), e2}, 1)));
  auto d1 = torch::elu(dec1_(torch::cat({torch::elu(up1_(upsample2(d2))), e1}, 1)));
  auto d0 = torch::elu(dec0_(torch::cat({torch::elu(up0_(upsample2(d1))), e0}, 1)));
  return torch::sigmoid(head_(d0));
}

std::string PoseNetConfig::architecture_id() const {
  return "posenet-conv4-elu-c" + std::to_string(base_channels) + "-s" +
         std::to_string(output_scale);
}

PoseNetImpl::PoseNetImpl(const PoseNetConfig& config) : config_(config) {
  const auto c = config.base_channels;
  if (c <= 0) throw std::invalid_argument("PoseNet: base_channels must be positive");
  conv0_ = register_module("conv0", conv(6, c, 7, 2));
  conv1_ = register_module("conv1", conv(c, 2 * c, 5, 2));
  conv2_ = register_module("conv2", conv(2 * c, 4 * c, 3, 2));
  conv3_ = register_module("conv3", conv(4 * c, 4 * c, 3, 2));
  head_ = register_module("head", conv(4 * c, 6, 1));
}

torch::Tensor PoseNetImpl::forward(const torch::Tensor& target, const torch::Tensor& source) {
  check_image(target, "PoseNet");
  check_image(source, "PoseNet");
  if (target.sizes() != source.sizes()) {
    throw std::invalid_argument("PoseNet: image pair shapes differ");
  }
  auto x = (torch::cat({target, source}, 1) - 0.45) / 0.225;
  x = torch::elu(conv0_(x));
  x = torch::elu(conv1_(x));
  x = torch::elu(conv2_(x));
  x = torch::elu(conv3_(x));
  return head_(x).mean({2, 3}) * config_.output_scale;
}

torch::Tensor depth_forward(DepthNet& net, const torch::Tensor& image) {
  return sigmoid_to_depth(net->forward(image));
}

torch::Tensor pose_forward(PoseNet& net, const torch::Tensor& target, const torch::Tensor& source) {
  return net->forward(target, source);
}

torch::Tensor pseudo_depth(const PseudoDepthProvider& provider, const std::string& frame_id,
                           const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  return provider.predict(frame_id, image).detach();
}

AnalyticPseudoDepth::AnalyticPseudoDepth(std::map<std::string, torch::Tensor> depths,
                                         Options options)
    : depths_(std::move(depths)), options_(options) {
  if (!(options_.noise_bound >= 0.0 && options_.noise_bound < 1.0)) {
    throw std::invalid_argument("AnalyticPseudoDepth: noise_bound must lie in [0, 1)");
  }
}

torch::Tensor AnalyticPseudoDepth::predict(const std::string& frame_id,
                                           const torch::Tensor& image) const {
  auto it = depths_.find(frame_id);
  if (it == depths_.end()) {
    throw std::invalid_argument("AnalyticPseudoDepth: unknown frame " + frame_id);
  }
  const auto& depth = it->second;
  if (image.defined() && (image.size(-1) != depth.size(-1) || image.size(-2) != depth.size(-2))) {
    throw std::invalid_argument("AnalyticPseudoDepth: image and depth sizes differ");
  }
  if (options_.noise_bound == 0.0) return depth.clone();

  const auto h = depth.size(-2);
  const auto w = depth.size(-1);
  std::mt19937_64 rng(derive_seed(options_.seed, "pseudo-depth", frame_id));
  std::normal_distribution<double> gauss(0.0, options_.noise_std);
  auto noise = torch::empty({1, 1, h, w}, torch::kFloat64);
  auto* data = noise.data_ptr<double>();
  for (std::int64_t i = 0; i < h * w; ++i) data[i] = gauss(rng);

  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * options_.blur_sigma));
  if (radius > 0) {
    auto k = torch::arange(-radius, radius + 1, torch::kFloat64);
    k = torch::exp(-(k * k) / (2.0 * options_.blur_sigma * options_.blur_sigma));
    k = k / k.sum();
    namespace nnf = torch::nn::functional;
    auto padded = nnf::pad(noise, nnf::PadFuncOptions({radius, radius, radius, radius})
                                      .mode(torch::kReplicate));
    noise = nnf::conv2d(padded, k.view({1, 1, 1, -1}));
    noise = nnf::conv2d(noise, k.view({1, 1, -1, 1}));
  }
  noise = noise.clamp(-options_.noise_bound, options_.noise_bound).reshape(depth.sizes());
  return (depth.to(torch::kFloat64) * (1.0 + noise)).to(depth.scalar_type());
}

}  // namespace fedmde
