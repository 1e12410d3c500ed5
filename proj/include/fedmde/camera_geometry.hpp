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

// Pinhole camera model, rigid motion and differentiable view synthesis.
//
// Tensor layout conventions used throughout the library:
//   images  [B, 3, H, W], channel values in [0, 1]
//   depths  [B, 1, H, W], positive
//   poses   [B, 6] as (rx, ry, rz, tx, ty, tz): axis-angle rotation in
//           radians followed by translation in scene units
//
// A pose maps points expressed in the target camera frame into the source
// camera frame, so warping with it reconstructs the target from the source.

#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>

namespace fedmde {

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  std::int64_t width = 0;
  std::int64_t height = 0;

  /// Throws std::invalid_argument unless fx, fy > 0 and the principal point
  /// lies inside the image.
  void validate() const;

  /// Rescales to a new resolution, keeping the field of view.
  Intrinsics resized(std::int64_t new_width, std::int64_t new_height) const;

  /// 3x3 calibration matrix.
  torch::Tensor matrix(torch::Dtype dtype = torch::kFloat64) const;

  /// Parses "fx fy cx cy width height".
  static Intrinsics parse(std::string_view line);
  static Intrinsics load(const std::filesystem::path& path);
  std::string to_string() const;
};

struct PoseSE3 {
  std::array<double, 3> rotation{};     // axis-angle, radians
  std::array<double, 3> translation{};  // scene units

  torch::Tensor to_tensor(torch::Dtype dtype = torch::kFloat64) const;
  static PoseSE3 from_tensor(const torch::Tensor& pose6);
};

/// Axis-angle exponential: [..., 6] -> [..., 4, 4]. Differentiable, including
/// at zero rotation.
torch::Tensor pose_to_transform(const torch::Tensor& pose6);
torch::Tensor pose_to_transform(const PoseSE3& pose);

/// Inverse of a rigid transform [..., 4, 4].
torch::Tensor invert_transform(const torch::Tensor& transform);

/// Logarithm of a single rigid 4x4 transform back to axis-angle form.
PoseSE3 transform_to_pose(const torch::Tensor& transform);

struct ReprojectedPoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // z of the transformed point
  bool in_front = false;
};

/// Back-projects pixel (u, v) at `depth`, moves it by `pose` and projects it
/// into the other view. Points with non-positive transformed depth come back
/// with in_front = false and undefined pixel coordinates.
ReprojectedPoint reproject_point(double u, double v, double depth,
                                 const Intrinsics& intrinsics,
                                 const PoseSE3& pose);

/// Camera-frame 3D points for every pixel of `depth` [B, 1, H, W] -> [B, 3, H, W].
torch::Tensor backproject(const torch::Tensor& depth, const Intrinsics& intrinsics);

/// Bilinear lookup of `image` [B, C, H, W] at continuous pixel coordinates
/// `x`, `y` [B, H', W']. Coordinates must already lie in [0, W-1] x [0, H-1].
torch::Tensor bilinear_sample(const torch::Tensor& image, const torch::Tensor& x,
                              const torch::Tensor& y);

struct WarpResult {
  torch::Tensor reconstruction;      // [B, 3, H, W], zero outside validity
  torch::Tensor validity;            // [B, 1, H, W] bool
  torch::Tensor projected_depth;     // [B, 1, H, W] z of transformed points
  torch::Tensor interpolated_depth;  // [B, 1, H, W] zero outside validity
  torch::Tensor source_u;            // [B, 1, H, W] projected coordinates
  torch::Tensor source_v;

  std::int64_t valid_count() const;
};

/// Reconstructs the target view by sampling `source` at the reprojection of
/// every target pixel. Pixels that land outside the source image or behind
/// the camera are excluded from the validity mask instead of being clamped.
/// Differentiable with respect to target_depth, source_depth and pose.
WarpResult warp_frame(const torch::Tensor& source, const torch::Tensor& source_depth,
                      const torch::Tensor& target_depth, const torch::Tensor& pose,
                      const Intrinsics& intrinsics);

}  // namespace fedmde
