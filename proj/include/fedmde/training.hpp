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

// Local self-supervised training of one DepthNet/PoseNet pair. The same
// trainer drives a centralized run and each federated participant.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "fedmde/cost_metrics.hpp"
#include "fedmde/dataset.hpp"
#include "fedmde/depth_models.hpp"
#include "fedmde/parameter_set.hpp"
#include "fedmde/ssl_losses.hpp"

namespace fedmde {

struct ModelConfig {
  DepthNetConfig depth;
  PoseNetConfig pose;
};

/// Weights of both networks; this pair is what federation exchanges.
struct ModelParameters {
  ParameterSet depth;
  ParameterSet pose;

  std::int64_t bytes() const { return parameter_bytes({&depth, &pose}); }
  bool identical_to(const ModelParameters& other) const {
    return depth.identical_to(other.depth) && pose.identical_to(other.pose);
  }
};

/// Freshly initialized weights, reproducible from `seed`.
ModelParameters initial_parameters(const ModelConfig& config, std::uint64_t seed);

struct TrainingOptions {
  ObjectiveOptions objective;
  double learning_rate = 1e-4;
  std::int64_t batch_size = 4;
  std::int64_t batches_per_epoch = 1000;
  std::int64_t ranking_pairs = 1024;

  void validate() const;
};

/// Training frames plus their frozen pseudo depths (aligned by index, or
/// empty to train without the prior terms).
struct TrainingData {
  std::span<const Sample> samples;
  std::span<const torch::Tensor> pseudo_depths;
};

/// Runs the provider once per training frame. A null provider yields an empty
/// vector.
std::vector<torch::Tensor> precompute_pseudo_depths(const PseudoDepthProvider* provider,
                                                    std::span<const Sample> samples);

/// Forward pass of both networks on a batch and the weighted objective.
SelfSupervisionLoss batch_objective(DepthNet& depth_net, PoseNet& pose_net,
                                    const BatchTensors& batch, const torch::Tensor& pseudo_depth,
                                    const torch::Tensor& ranking_pairs,
                                    const ObjectiveOptions& options);

struct EpochSummary {
  std::int64_t steps = 0;    // batches attempted
  std::int64_t skipped = 0;  // batches with an empty validity mask
  double first_loss = 0.0;
  double last_loss = 0.0;
  double mean_loss = 0.0;
  LossBreakdown mean_terms;
};

class LocalTrainer {
 public:
  LocalTrainer(const ModelConfig& config, TrainingOptions options, std::uint64_t seed);

  /// Overwrites the network weights. Optimizer moments are kept.
  void set_parameters(const ModelParameters& params);
  ModelParameters parameters() const;

  /// One pass of `batches_per_epoch` batches drawn from `sample_ids`.
  /// Batch order and pair sampling depend only on the seed and the number of
  /// epochs completed so far. Throws NonFiniteLossError.
  EpochSummary train_epoch(const TrainingData& data, std::span<const std::size_t> sample_ids);

  std::int64_t epochs_completed() const { return epochs_completed_; }
  void set_epochs_completed(std::int64_t epochs) { epochs_completed_ = epochs; }

  void save_optimizer(const std::filesystem::path& path) const;
  void load_optimizer(const std::filesystem::path& path);

  DepthNet& depth_net() { return depth_net_; }
  PoseNet& pose_net() { return pose_net_; }
  const TrainingOptions& options() const { return options_; }
  std::uint64_t seed() const { return seed_; }

 private:
  TrainingOptions options_;
  std::uint64_t seed_;
  DepthNet depth_net_;
  PoseNet pose_net_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::int64_t epochs_completed_ = 0;
};

/// Mean median-scaled metrics of `depth_net` over frames with ground truth.
/// Throws EvaluationError if no frame carries ground truth.
DepthMetrics evaluate_model(DepthNet& depth_net, std::span<const Sample> validation);

/// Same, for bare weights.
DepthMetrics evaluate_parameters(const ModelConfig& config, const ModelParameters& params,
                                 std::span<const Sample> validation);

}  // namespace fedmde
