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

// Self-supervision losses for depth and ego-motion learning from video.
//
// Every loss returns a scalar tensor that stays attached to the autograd
// graph, so the same code serves training (float32) and gradient checks
// (float64). Batched inputs are pooled: a mean "over V" averages over all
// valid pixels of all batch items.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedmde/camera_geometry.hpp"

namespace fedmde {

struct LossWeights {
  double alpha = 1.0;    // masked photometric
  double beta = 0.5;     // geometry consistency
  double gamma = 0.1;    // normal matching
  double delta = 0.1;    // confident depth ranking
  double epsilon = 0.1;  // edge-aware relative normal
  double lambda_i = 0.15;
  double lambda_s = 0.85;

  void validate() const;
};

/// Windowed SSIM with a 3x3 mean filter over reflection-padded images and the
/// usual stabilizers C1 = 0.01^2, C2 = 0.03^2. Returns the channel mean [B, 1, H, W].
torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b);

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Per-pixel photometric integrand
///   lambda_i * mean_c |a - b| + lambda_s * (1 - SSIM) / 2     -> [B, 1, H, W]
torch::Tensor photometric_error_map(const torch::Tensor& reconstruction,
                                    const torch::Tensor& target, const LossWeights& weights);

/// Mean of the photometric integrand over the validity mask.
/// Throws EmptyValidityError when nothing is valid.
torch::Tensor photometric_loss(const WarpResult& warp, const torch::Tensor& target,
                               const LossWeights& weights);

/// |projected - interpolated| / (projected + interpolated) on the validity
/// mask, zero elsewhere. Symmetric and bounded in [0, 1).
torch::Tensor depth_inconsistency(const torch::Tensor& projected,
                                  const torch::Tensor& interpolated,
                                  const torch::Tensor& validity);

/// Photometric loss with each valid pixel weighted by `mask` (M = 1 - D_diff).
torch::Tensor mask_weighted_photometric(const WarpResult& warp, const torch::Tensor& target,
                                        const torch::Tensor& mask, const LossWeights& weights);

/// Mean depth inconsistency over the validity mask.
torch::Tensor geometry_consistency_loss(const torch::Tensor& inconsistency,
                                        const torch::Tensor& validity);

struct SurfaceNormals {
  torch::Tensor normals;  // [B, 3, H, W] unit length where valid
  torch::Tensor valid;    // [B, 1, H, W] bool: interior and non-degenerate
};

/// Normals from central differences of back-projected points. Border pixels
/// and pixels with a vanishing cross product are flagged invalid.
SurfaceNormals surface_normals(const torch::Tensor& depth, const Intrinsics& intrinsics);

/// Mean over pixels of the L1 distance between the unit normals of `depth`
/// and `pseudo_depth`. Pixels where either normal is degenerate are skipped.
torch::Tensor normal_matching_loss(const torch::Tensor& depth, const torch::Tensor& pseudo_depth,
                                   const Intrinsics& intrinsics);

struct RankingOptions {
  double tau = 0.1;     // pseudo-depth ratio needed to trust an ordering
  double margin = 0.0;  // hinge margin in depth units
};

/// Uniformly sampled pixel-index pairs [count, 2] in [0, pixel_count).
torch::Tensor sample_point_pairs(std::int64_t pixel_count, std::int64_t count,
                                 std::mt19937_64& rng);

/// Hinge on predicted ordering for pairs whose pseudo depths differ by more
/// than a factor (1 + tau). `pairs` holds flat pixel indices shared by all
/// batch items. Returns 0 (and logs) when no pair is confident.
torch::Tensor confident_depth_ranking_loss(const torch::Tensor& depth,
                                           const torch::Tensor& pseudo_depth,
                                           const torch::Tensor& pairs,
                                           const RankingOptions& options = {});

struct EdgeOptions {
  double percentile = 0.9;  // gradient-magnitude quantile that defines an edge
};

struct EdgePairs {
  // Flat pixel indices of the two pair members; batch item of each pair.
  torch::Tensor first;
  torch::Tensor second;
  torch::Tensor batch;
  std::int64_t size() const { return first.numel(); }
};

/// Pairs of pixels straddling image edges: for every edge pixel p the pair is
/// (p - d, p + d) with d the unit step along the dominant gradient axis.
EdgePairs find_edge_pairs(const torch::Tensor& image, const EdgeOptions& options = {});

/// Mean |cos(theta_pred) - cos(theta_pseudo)| over edge pairs, where theta is
/// the angle between the two normals of a pair. Returns 0 (and logs) when the
/// image has no edges.
torch::Tensor edge_aware_relative_normal_loss(const torch::Tensor& depth,
                                              const torch::Tensor& pseudo_depth,
                                              const torch::Tensor& image,
                                              const Intrinsics& intrinsics,
                                              const EdgeOptions& options = {});

struct MinReprojection {
  torch::Tensor error;         // [B, 1, H, W] elementwise minimum over sources
  torch::Tensor source_index;  // [B, 1, H, W] argmin
  torch::Tensor keep;          // [B, 1, H, W] bool, warped beats identity
};

/// Per-pixel minimum over source reprojection errors plus the stationary-pixel
/// automask: a pixel is kept iff its best warped error is strictly below the
/// best error of the unwarped sources.
MinReprojection min_reprojection_with_automask(std::span<const torch::Tensor> per_source_errors,
                                               std::span<const torch::Tensor> identity_errors);

struct LossTerms {
  torch::Tensor l_p;
  torch::Tensor l_p_masked;
  torch::Tensor l_g;
  torch::Tensor l_n;
  torch::Tensor l_cdr;
  torch::Tensor l_ern;
};

struct LossBreakdown {
  double l_p = 0.0;
  double l_p_masked = 0.0;
  double l_g = 0.0;
  double l_n = 0.0;
  double l_cdr = 0.0;
  double l_ern = 0.0;
  double l_self = 0.0;
  LossWeights weights;
};

struct SelfSupervisionLoss {
  torch::Tensor total;  // differentiable l_self
  LossBreakdown breakdown;
};

/// alpha*L_p^M + beta*L_g + gamma*L_n + delta*L_cdr + epsilon*L_ern.
/// Throws NonFiniteLossError naming the first non-finite term.
SelfSupervisionLoss total_self_supervision_loss(const LossTerms& terms,
                                                const LossWeights& weights);

struct ObjectiveOptions {
  LossWeights weights;
  RankingOptions ranking;
  EdgeOptions edges;
};

/// Inputs of the combined objective for one batch. Depths and poses are the
/// differentiable quantities; everything else is held fixed.
struct ObjectiveInputs {
  torch::Tensor target;                     // [B, 3, H, W]
  std::vector<torch::Tensor> sources;       // per slot [B, 3, H, W]
  torch::Tensor target_depth;               // [B, 1, H, W]
  std::vector<torch::Tensor> source_depths;  // per slot [B, 1, H, W]
  std::vector<torch::Tensor> poses;         // per slot [B, 6], target -> source
  torch::Tensor pseudo_depth;  // [B, 1, H, W]; undefined disables the prior terms
  torch::Tensor ranking_pairs;  // [N, 2] flat pixel indices
  Intrinsics intrinsics;
};

/// All loss terms for one batch. Photometric terms use the per-pixel minimum
/// over source slots restricted to automasked pixels; each pixel takes its
/// weight mask from the slot that achieved the minimum. L_g averages the
/// per-slot geometry consistency. Throws EmptyValidityError if no pixel
/// survives projection and automasking.
LossTerms self_supervision_terms(const ObjectiveInputs& inputs, const ObjectiveOptions& options);

}  // namespace fedmde
