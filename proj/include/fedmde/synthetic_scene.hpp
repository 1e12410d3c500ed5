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

// Procedural street scenes rendered under a moving pinhole camera, with exact
// depth and inter-frame motion. Used in place of a real driving dataset.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedmde/camera_geometry.hpp"
#include "fedmde/dataset.hpp"

namespace fedmde {

struct SyntheticSceneSpec {
  std::int64_t width = 64;
  std::int64_t height = 32;
  /// Samples per drive; one drive per entry.
  std::vector<std::int64_t> drive_frames = {12};
  /// Source frames per sample: 1 = next frame, 2 = previous and next frame.
  std::int64_t sources = 1;
  double texture_frequency = 1.0;  // solid-texture frequency multiplier, 1/m
  double speed = 0.5;              // forward motion per frame, m
  double yaw_amplitude = 0.0;      // radians, sinusoidal along the drive
  double lateral_amplitude = 0.0;  // m, sinusoidal along the drive
  std::int64_t boxes = 6;
  bool street_walls = true;
  double camera_height = 1.5;
  double street_half_width = 5.0;
  double far_distance = 60.0;  // back wall, measured from the drive start
  double fog_density = 0.02;   // 1/m, attenuation toward a grey horizon
  std::int64_t supersample = 2;
  std::string drive_prefix = "drive";

  void validate() const;
};

struct SyntheticScene {
  std::vector<Sample> samples;  // ground truth attached to every sample
  /// Analytic depth [1, H, W] of every rendered frame, by frame id.
  std::map<std::string, torch::Tensor> depth_by_frame;
  /// True target -> source pose per sample and source slot.
  std::vector<std::vector<PoseSE3>> poses;
};

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed);

}  // namespace fedmde
