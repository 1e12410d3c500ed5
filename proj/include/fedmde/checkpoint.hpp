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

// One checkpoint per network: a binary name -> array file plus a JSON manifest
// next to it ("<file>.manifest.json").
//
// Binary layout (little-endian):
//   8 bytes   magic "FMDCKPT1"
//   u32       entry count
//   per entry: u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//              u32 rank, i64 dims[rank], raw element data

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fedmde/parameter_set.hpp"

namespace fedmde {

struct CheckpointManifest {
  std::string architecture;
  std::uint64_t architecture_hash = 0;
  std::int64_t parameter_bytes = 0;
  std::int64_t round = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const std::string& architecture, std::int64_t round);

struct LoadedCheckpoint {
  ParameterSet params;
  CheckpointManifest manifest;
};

/// Throws IngestionError on a missing or malformed file, or when the manifest
/// disagrees with the stored arrays.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedmde
