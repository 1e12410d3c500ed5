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

// Ingestion of a KITTI-style drive layout.
//
//   <root>/<drive>/image_02/data/<frame>.png              colour frames
//   <root>/<drive>/proj_depth/groundtruth/image_02/<frame>.png
//                                                         optional, uint16 / 256 m
//   <root>/<drive>/pseudo_depth/<frame>.png               optional prior, uint16 / 256
//   <root>/<drive>/calib.txt or <root>/calib.txt          "fx fy cx cy width height"
//
// Split files list one frame path per line, relative to <root>, e.g.
//   2011_09_26_drive_0001_sync/image_02/data/0000000005.png
// The first path component names the drive.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedmde/dataset.hpp"
#include "fedmde/depth_models.hpp"

namespace fedmde {

struct KittiOptions {
  std::int64_t width = 832;
  std::int64_t height = 256;
  double max_depth = 80.0;
  /// 2 = previous and next frame, 1 = next frame only.
  std::int64_t sources = 2;
};

/// Loads every frame listed in `split_file`. Missing frames or calibration
/// raise IngestionError listing every missing path; unreadable images are
/// skipped with a warning.
std::vector<Sample> load_kitti_layout(const std::filesystem::path& root,
                                      const std::filesystem::path& split_file,
                                      const KittiOptions& options = {});

/// Reads precomputed pseudo-depth maps from <root>/<drive>/pseudo_depth/.
class FilePseudoDepth final : public PseudoDepthProvider {
 public:
  FilePseudoDepth(std::filesystem::path root, std::int64_t width, std::int64_t height);
  torch::Tensor predict(const std::string& frame_id, const torch::Tensor& image) const override;

 private:
  std::filesystem::path root_;
  std::int64_t width_;
  std::int64_t height_;
};

}  // namespace fedmde
