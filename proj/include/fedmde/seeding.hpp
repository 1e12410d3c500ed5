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

// All randomness in a run derives from one master seed. Each component asks
// for its own stream by tag plus integer or string keys, so streams never
// depend on the order in which other components drew numbers.

#pragma once

#include <cstdint>
#include <string_view>

namespace fedmde {

/// 64-bit FNV-1a; stable across platforms and runs.
constexpr std::uint64_t fnv1a64(std::string_view text,
                                std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
  return splitmix64(seed ^ splitmix64(key));
}

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::string_view key) {
  return mix_seed(seed, fnv1a64(key));
}

template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, Keys... keys) {
  std::uint64_t s = mix_seed(master, tag);
  ((s = mix_seed(s, keys)), ...);
  return s;
}

}  // namespace fedmde
