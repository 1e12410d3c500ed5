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

// Communication and computation cost accounting for federated training, and
// the standard median-scaled depth evaluation protocol.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>
#include <string>

namespace fedmde {

/// Exact rational in (0, 1] for the participant fraction.
struct Fraction {
  std::int64_t numerator = 1;
  std::int64_t denominator = 1;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  bool is_one() const { return numerator == denominator; }
  void validate() const;
  std::string to_string() const;
  /// Accepts "1/3", "0.5" (finite decimals) or "1".
  static Fraction parse(const std::string& text);
};

inline constexpr double kBytesPerGigabyte = 1e9;

/// W_max = 2 T C omega (bytes).
std::uint64_t comm_upper_bound(std::uint64_t rounds, std::uint64_t participants,
                               std::uint64_t omega_bytes);

/// W_min = 2 T C F omega (bytes). Throws std::invalid_argument unless 0 < F <= 1.
double comm_lower_bound(std::uint64_t rounds, std::uint64_t participants, const Fraction& fraction,
                        std::uint64_t omega_bytes);

/// Bytes moved by one participant in one round: one download plus one upload.
std::uint64_t comm_per_participant_round(std::uint64_t omega_bytes);

std::uint64_t steps_centralized(std::uint64_t epochs, std::uint64_t batches_per_epoch);

/// Steps of one participant in one round.
struct ParticipantSteps {
  std::int64_t participant = 0;
  std::uint64_t epochs = 0;
  std::uint64_t batches = 0;
};

/// Sum over rounds of sum over participants of epochs * batches.
std::uint64_t steps_federated(std::span<const std::vector<ParticipantSteps>> rounds);

struct CostReport {
  std::uint64_t w_max = 0;
  double w_min = 0.0;
  std::uint64_t per_participant_per_round = 0;
  std::uint64_t steps_total = 0;
  std::map<std::int64_t, std::uint64_t> steps_per_participant;
  std::uint64_t depth_bytes = 0;
  std::uint64_t pose_bytes = 0;
};

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rms = 0.0;
  double rms_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::int64_t pixels = 0;
};

inline constexpr double kEvalMaxDepth = 80.0;

/// Pixels with ground truth in (0, cap].
torch::Tensor evaluation_mask(const torch::Tensor& ground_truth, double cap = kEvalMaxDepth);

/// pred * median(gt on mask) / median(pred on mask). Even counts use the mean
/// of the two middle values. Throws EvaluationError on an empty mask.
torch::Tensor median_scale_align(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                                 const torch::Tensor& mask);

/// AbsRel, SqRel, RMS, RMSlog and threshold accuracies over the mask, with
/// ground truth clamped to `cap`.
DepthMetrics depth_errors(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                          const torch::Tensor& mask, double cap = kEvalMaxDepth);

/// Median-aligned metrics of one prediction against its ground truth.
DepthMetrics evaluate_depth(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                            double cap = kEvalMaxDepth);

struct RegionMetrics {
  std::optional<DepthMetrics> dynamic_region;  // absent when no dynamic pixel
  std::optional<DepthMetrics> static_region;   // absent when no static pixel
};

/// Errors of an already aligned prediction on dynamic (mask true) and static
/// pixels separately.
RegionMetrics region_split_errors(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                                  const torch::Tensor& region_mask, double cap = kEvalMaxDepth);

/// Pixel-count-independent mean of per-image metrics.
DepthMetrics average_metrics(std::span<const DepthMetrics> metrics);

}  // namespace fedmde
