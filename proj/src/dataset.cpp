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

#include "fedmde/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedmde {

void validate_sample(const Sample& sample) {
  sample.intrinsics.validate();
  auto check = [&](const torch::Tensor& img, const std::string& what) {
    if (img.dim() != 3 || img.size(0) != 3 || img.size(1) != sample.intrinsics.height ||
        img.size(2) != sample.intrinsics.width) {
      throw std::invalid_argument("sample " + sample.id + ": " + what +
                                  " does not match the intrinsics size");
    }
    if ((img < 0).any().item<bool>() || (img > 1).any().item<bool>()) {
      throw std::invalid_argument("sample " + sample.id + ": " + what + " outside [0, 1]");
    }
  };
  check(sample.target, "target");
  if (sample.sources.empty()) throw std::invalid_argument("sample " + sample.id + ": no sources");
  if (sample.source_ids.size() != sample.sources.size()) {
    throw std::invalid_argument("sample " + sample.id + ": source ids do not match sources");
  }
  for (const auto& s : sample.sources) check(s, "source");
}

torch::Tensor ingest_image(const torch::Tensor& pixels) {
  return pixels.to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
}

std::string_view to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::kCentralized:
      return "CT";
    case Scenario::kFederatedIid:
      return "FT-IID";
    case Scenario::kFederatedNiid:
      return "FT-NIID";
  }
  return "?";
}

Scenario parse_scenario(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  std::replace(s.begin(), s.end(), '_', '-');
  if (s == "ct" || s == "centralized") return Scenario::kCentralized;
  if (s == "ft-iid" || s == "iid") return Scenario::kFederatedIid;
  if (s == "ft-niid" || s == "niid") return Scenario::kFederatedNiid;
  throw std::invalid_argument("unknown scenario: " + std::string(text));
}

std::vector<std::size_t> PartitionPlan::counts() const {
  std::vector<std::size_t> out;
  out.reserve(assignment.size());
  for (const auto& a : assignment) out.push_back(a.size());
  return out;
}

std::size_t PartitionPlan::total() const {
  std::size_t n = 0;
  for (const auto& a : assignment) n += a.size();
  return n;
}

std::string PartitionPlan::to_json() const {
  nlohmann::ordered_json doc;
  doc["scenario"] = std::string(to_string(scenario));
  doc["seed"] = seed;
  nlohmann::ordered_json participants = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    participants[std::to_string(i)] = assignment[i];
  }
  doc["participants"] = std::move(participants);
  return doc.dump(2);
}

PartitionPlan PartitionPlan::from_json(std::string_view text) {
  PartitionPlan plan;
  try {
    auto doc = nlohmann::json::parse(text);
    plan.scenario = parse_scenario(doc.at("scenario").get<std::string>());
    plan.seed = doc.at("seed").get<std::uint64_t>();
    const auto& participants = doc.at("participants");
    plan.assignment.resize(participants.size());
    for (const auto& [key, ids] : participants.items()) {
      const auto idx = static_cast<std::size_t>(std::stoul(key));
      if (idx >= plan.assignment.size()) throw std::invalid_argument("participant ids not dense");
      plan.assignment[idx] = ids.get<std::vector<std::size_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("partition plan: ") + e.what());
  }
  return plan;
}

PartitionPlan partition_centralized(std::size_t sample_count) {
  if (sample_count == 0) throw std::invalid_argument("partition: empty training set");
  PartitionPlan plan;
  plan.scenario = Scenario::kCentralized;
  plan.assignment.resize(1);
  plan.assignment[0].resize(sample_count);
  std::iota(plan.assignment[0].begin(), plan.assignment[0].end(), std::size_t{0});
  return plan;
}

PartitionPlan partition_iid(std::size_t sample_count, std::int64_t participants,
                            std::uint64_t seed) {
  if (participants <= 0) throw std::invalid_argument("partition_iid: participants must be > 0");
  const auto c = static_cast<std::size_t>(participants);
  if (sample_count < c) throw std::invalid_argument("partition_iid: fewer samples than participants");
  std::vector<std::size_t> order(sample_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  PartitionPlan plan;
  plan.scenario = Scenario::kFederatedIid;
  plan.seed = seed;
  plan.assignment.resize(c);
  for (std::size_t i = 0; i < order.size(); ++i) plan.assignment[i % c].push_back(order[i]);
  for (auto& a : plan.assignment) std::sort(a.begin(), a.end());
  return plan;
}

PartitionPlan partition_niid(std::span<const std::string> drive_ids, std::int64_t participants,
                             std::uint64_t seed) {
  if (participants <= 0) throw std::invalid_argument("partition_niid: participants must be > 0");
  std::map<std::string, std::vector<std::size_t>> by_drive;
  for (std::size_t i = 0; i < drive_ids.size(); ++i) by_drive[drive_ids[i]].push_back(i);
  const auto c = static_cast<std::size_t>(participants);
  if (by_drive.size() < c) {
    throw std::invalid_argument("partition_niid: " + std::to_string(by_drive.size()) +
                                " drives for " + std::to_string(c) + " participants");
  }
  std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> drives;
  for (const auto& d : by_drive) drives.push_back(&d);
  // Largest first; std::map order already makes equal sizes lexicographic.
  std::stable_sort(drives.begin(), drives.end(),
                   [](auto* a, auto* b) { return a->second.size() > b->second.size(); });

  PartitionPlan plan;
  plan.scenario = Scenario::kFederatedNiid;
  plan.seed = seed;
  plan.assignment.resize(c);
  std::vector<std::size_t> leftovers;
  for (std::size_t i = 0; i < drives.size(); ++i) {
    const auto& ids = drives[i]->second;
    if (i < c) {
      plan.assignment[i] = ids;
    } else {
      leftovers.insert(leftovers.end(), ids.begin(), ids.end());
    }
  }

  std::mt19937_64 rng(seed);
  std::shuffle(leftovers.begin(), leftovers.end(), rng);
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return plan.assignment[a].size() < plan.assignment[b].size();
  });
  for (std::size_t i = 0; i < leftovers.size(); ++i) {
    plan.assignment[order[i % c]].push_back(leftovers[i]);
  }
  for (auto& a : plan.assignment) std::sort(a.begin(), a.end());
  return plan;
}

PartitionPlan partition_niid(std::span<const Sample> samples, std::int64_t participants,
                             std::uint64_t seed) {
  std::vector<std::string> drives;
  drives.reserve(samples.size());
  for (const auto& s : samples) drives.push_back(s.drive_id);
  return partition_niid(std::span<const std::string>(drives), participants, seed);
}

std::vector<Batch> make_batches(std::span<const std::size_t> sample_ids,
                                std::int64_t batches_per_epoch, std::int64_t batch_size,
                                std::uint64_t seed) {
  if (sample_ids.empty()) throw std::invalid_argument("make_batches: no samples");
  if (batches_per_epoch < 0 || batch_size <= 0) {
    throw std::invalid_argument("make_batches: invalid batch quota or size");
  }
  std::vector<std::size_t> order(sample_ids.begin(), sample_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> available;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < order.size(); i += bs) {
    available.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(i + bs, order.size())));
  }
  const auto quota = static_cast<std::size_t>(batches_per_epoch);
  std::vector<Batch> out;
  out.reserve(quota);
  for (std::size_t i = 0; i < std::min(quota, available.size()); ++i) out.push_back(available[i]);
  std::uniform_int_distribution<std::size_t> pick(0, available.size() - 1);
  while (out.size() < quota) out.push_back(available[pick(rng)]);
  return out;
}

BatchTensors stack_batch(std::span<const Sample> samples, const Batch& batch) {
  if (batch.empty()) throw std::invalid_argument("stack_batch: empty batch");
  BatchTensors out;
  const auto& first = samples[batch.front()];
  out.intrinsics = first.intrinsics;
  std::vector<torch::Tensor> targets;
  std::vector<std::vector<torch::Tensor>> sources(first.sources.size());
  for (auto idx : batch) {
    const auto& s = samples[idx];
    if (s.sources.size() != sources.size()) {
      throw std::invalid_argument("stack_batch: samples disagree on source count");
    }
    targets.push_back(s.target);
    out.target_ids.push_back(s.id);
    for (std::size_t k = 0; k < sources.size(); ++k) sources[k].push_back(s.sources[k]);
  }
  out.targets = torch::stack(targets);
  for (auto& s : sources) out.sources.push_back(torch::stack(s));
  return out;
}

}  // namespace fedmde
