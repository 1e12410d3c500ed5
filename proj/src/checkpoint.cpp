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

#include "fedmde/checkpoint.hpp"

#include <json.hpp>

#include <array>
#include <fstream>

#include "fedmde/errors.hpp"
#include "fedmde/seeding.hpp"

namespace fedmde {

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'M', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IngestionError("truncated checkpoint " + path.string());
  }
  return value;
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  return path.string() + ".manifest.json";
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const std::string& architecture, std::int64_t round) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      std::uint8_t code = 0;
      if (e.value.scalar_type() == torch::kFloat64) {
        code = 1;
      } else if (e.value.scalar_type() != torch::kFloat32) {
        throw std::invalid_argument("checkpoint: only float32/float64 arrays are supported");
      }
      put<std::uint8_t>(out, code);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.dim()));
      for (auto d : e.value.sizes()) put<std::int64_t>(out, d);
      auto data = e.value.contiguous();
      out.write(static_cast<const char*>(data.data_ptr()),
                static_cast<std::streamsize>(data.numel() * data.element_size()));
    }
  }
  std::filesystem::rename(tmp, path);

  nlohmann::json manifest = {{"architecture", architecture},
                             {"architecture_hash", fnv1a64(architecture)},
                             {"parameter_bytes", params.total_bytes()},
                             {"round", round}};
  std::ofstream(manifest_path(path)) << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("missing checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IngestionError("not a checkpoint file: " + path.string());
  }
  LoadedCheckpoint out;
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IngestionError("truncated checkpoint " + path.string());
    const auto code = get<std::uint8_t>(in, path);
    if (code > 1) throw IngestionError("unknown dtype in checkpoint " + path.string());
    const auto rank = get<std::uint32_t>(in, path);
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = get<std::int64_t>(in, path);
    auto value = torch::empty(dims, code == 1 ? torch::kFloat64 : torch::kFloat32);
    if (!in.read(static_cast<char*>(value.data_ptr()),
                 static_cast<std::streamsize>(value.numel() * value.element_size()))) {
      throw IngestionError("truncated checkpoint " + path.string());
    }
    out.params.add(std::move(name), value);
  }

  std::ifstream min(manifest_path(path));
  if (!min) throw IngestionError("missing checkpoint manifest for " + path.string());
  nlohmann::json manifest;
  try {
    min >> manifest;
    out.manifest.architecture = manifest.at("architecture").get<std::string>();
    out.manifest.architecture_hash = manifest.at("architecture_hash").get<std::uint64_t>();
    out.manifest.parameter_bytes = manifest.at("parameter_bytes").get<std::int64_t>();
    out.manifest.round = manifest.at("round").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("malformed checkpoint manifest for " + path.string() + ": " + e.what());
  }
  if (out.manifest.parameter_bytes != out.params.total_bytes()) {
    throw IngestionError("checkpoint manifest byte count disagrees with " + path.string());
  }
  if (out.manifest.architecture_hash != fnv1a64(out.manifest.architecture)) {
    throw IngestionError("checkpoint manifest hash mismatch for " + path.string());
  }
  return out;
}

}  // namespace fedmde
