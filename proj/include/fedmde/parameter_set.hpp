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
#include <string>
#include <vector>

namespace fedmde {

/// Ordered name -> array snapshot of every trainable weight of one network.
/// Entries are detached value copies; a ParameterSet never aliases live
/// module storage, so snapshots can be handed between workers freely.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    torch::Tensor value;
  };

  ParameterSet() = default;

  /// Appends a copy of `value`. Names must be unique.
  void add(std::string name, const torch::Tensor& value);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const torch::Tensor& at(const std::string& name) const;

  std::int64_t element_count() const;
  /// Sum over entries of element count times element size.
  std::int64_t total_bytes() const;

  /// Name of the first entry whose name or shape differs, if any.
  std::optional<std::string> first_mismatch(const ParameterSet& other) const;
  bool compatible_with(const ParameterSet& other) const { return !first_mismatch(other); }

  /// Bitwise equality of names, shapes, dtypes and values.
  bool identical_to(const ParameterSet& other) const;

  /// Largest absolute elementwise difference; sets must be compatible.
  double max_abs_difference(const ParameterSet& other) const;

  ParameterSet to(torch::Dtype dtype) const;

 private:
  std::vector<Entry> entries_;
};

/// Snapshot of a module's named parameters in registration order.
ParameterSet snapshot_parameters(const torch::nn::Module& module);

/// Copies `params` into the module's parameters; names and shapes must match.
void load_parameters(torch::nn::Module& module, const ParameterSet& params);

/// Total bytes across all given sets.
std::int64_t parameter_bytes(std::initializer_list<const ParameterSet*> sets);

}  // namespace fedmde
