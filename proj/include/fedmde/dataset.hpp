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

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedmde/camera_geometry.hpp"

namespace fedmde {

/// One training snippet: a target frame and its adjacent source frames.
/// Ground truth and region masks are for evaluation only; the training path
/// never reads them.
struct Sample {
  std::string id;  // frame id of the target, unique in its dataset
  torch::Tensor target;  // [3, H, W] float32 in [0, 1]
  std::vector<torch::Tensor> sources;
  std::vector<std::string> source_ids;
  Intrinsics intrinsics;
  std::string drive_id;
  std::optional<torch::Tensor> ground_truth;  // [1, H, W], metres, capped
  std::optional<torch::Tensor> region_mask;   // [1, H, W] bool, true = dynamic
};

/// Checks shapes, intrinsics and the [0, 1] pixel range.
void validate_sample(const Sample& sample);

/// Clamps pixel values to [0, 1] as images enter the system.
torch::Tensor ingest_image(const torch::Tensor& pixels);

enum class Scenario { kCentralized, kFederatedIid, kFederatedNiid };

std::string_view to_string(Scenario scenario);
Scenario parse_scenario(std::string_view text);

/// Participant id (index) -> sorted sample indices into the training set.
struct PartitionPlan {
  Scenario scenario = Scenario::kCentralized;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> assignment;

  std::size_t participant_count() const { return assignment.size(); }
  std::vector<std::size_t> counts() const;
  std::size_t total() const;

  /// Structured audit document: {"scenario", "seed", "participants": {id: [...]}}.
  /// from_json throws std::invalid_argument on malformed input.
  std::string to_json() const;
  static PartitionPlan from_json(std::string_view text);
};

/// Everything in one participant, in index order.
PartitionPlan partition_centralized(std::size_t sample_count);

/// Uniformly random split with counts differing by at most one.
PartitionPlan partition_iid(std::size_t sample_count, std::int64_t participants,
                            std::uint64_t seed);

/// The `participants` drives with the most samples become participants
/// (ties broken by drive id). Samples of the remaining drives are shuffled
/// and dealt one by one, smallest participant first.
PartitionPlan partition_niid(std::span<const std::string> drive_ids, std::int64_t participants,
                             std::uint64_t seed);
PartitionPlan partition_niid(std::span<const Sample> samples, std::int64_t participants,
                             std::uint64_t seed);

using Batch = std::vector<std::size_t>;

/// One epoch worth of batches over `sample_ids`. The shuffled ids are cut into
/// batches of `batch_size` (the last one may be short); if that yields fewer
/// than `batches_per_epoch` batches, extra batches are drawn from them with
/// replacement until the quota is met.
std::vector<Batch> make_batches(std::span<const std::size_t> sample_ids,
                                std::int64_t batches_per_epoch, std::int64_t batch_size,
                                std::uint64_t seed);

/// Stacks the frames of a batch: targets [B, 3, H, W] and one tensor per
/// source slot.
struct BatchTensors {
  torch::Tensor targets;
  std::vector<torch::Tensor> sources;
  std::vector<std::string> target_ids;
  Intrinsics intrinsics;
};
BatchTensors stack_batch(std::span<const Sample> samples, const Batch& batch);

}  // namespace fedmde
