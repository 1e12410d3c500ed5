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

#include "fedmde/parameter_set.hpp"

#include <stdexcept>

#include "fedmde/errors.hpp"

namespace fedmde {

void ParameterSet::add(std::string name, const torch::Tensor& value) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  entries_.push_back({std::move(name), value.detach().clone()});
}

const torch::Tensor& ParameterSet::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::int64_t ParameterSet::element_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::int64_t ParameterSet::total_bytes() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel() * static_cast<std::int64_t>(e.value.element_size());
  return n;
}

std::optional<std::string> ParameterSet::first_mismatch(const ParameterSet& other) const {
  const auto n = std::max(entries_.size(), other.entries_.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= entries_.size()) return other.entries_[i].name;
    if (i >= other.entries_.size()) return entries_[i].name;
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.sizes() != b.value.sizes()) return a.name;
  }
  return std::nullopt;
}

bool ParameterSet::identical_to(const ParameterSet& other) const {
  if (!compatible_with(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i].value;
    const auto& b = other.entries_[i].value;
    if (a.scalar_type() != b.scalar_type() || !torch::equal(a, b)) return false;
  }
  return true;
}

double ParameterSet::max_abs_difference(const ParameterSet& other) const {
  if (auto bad = first_mismatch(other)) {
    throw AggregationError("incompatible parameter sets at entry " + *bad);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto d = (entries_[i].value.to(torch::kFloat64) - other.entries_[i].value.to(torch::kFloat64))
                 .abs();
    if (d.numel() > 0) worst = std::max(worst, d.max().item<double>());
  }
  return worst;
}

ParameterSet ParameterSet::to(torch::Dtype dtype) const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.value.to(dtype));
  return out;
}

ParameterSet snapshot_parameters(const torch::nn::Module& module) {
  ParameterSet out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    out.add(item.key(), item.value());
  }
  return out;
}

void load_parameters(torch::nn::Module& module, const ParameterSet& params) {
  torch::NoGradGuard no_grad;
  auto named = module.named_parameters(/*recurse=*/true);
  if (named.size() != params.size()) {
    throw AggregationError("parameter count mismatch while loading");
  }
  std::size_t i = 0;
  for (auto& item : named) {
    const auto& entry = params.entries()[i++];
    if (entry.name != item.key() || entry.value.sizes() != item.value().sizes()) {
      throw AggregationError("parameter mismatch while loading: " + item.key());
    }
    item.value().copy_(entry.value);
  }
}

std::int64_t parameter_bytes(std::initializer_list<const ParameterSet*> sets) {
  std::int64_t n = 0;
  for (const auto* s : sets) n += s->total_bytes();
  return n;
}

}  // namespace fedmde
