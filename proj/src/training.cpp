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

#include "fedmde/training.hpp"

#include "fedmde/log.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "fedmde/errors.hpp"
#include "fedmde/seeding.hpp"

namespace fedmde {

ModelParameters initial_parameters(const ModelConfig& config, std::uint64_t seed) {
  torch::manual_seed(derive_seed(seed, "init"));
  DepthNet depth(config.depth);
  PoseNet pose(config.pose);
  return {snapshot_parameters(*depth), snapshot_parameters(*pose)};
}

void TrainingOptions::validate() const {
  objective.weights.validate();
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be finite and non-negative");
  }
  if (batch_size < 1 || batches_per_epoch < 1) {
    throw std::invalid_argument("batch size and batches per epoch must be positive");
  }
  if (ranking_pairs < 0) throw std::invalid_argument("ranking pairs must be non-negative");
}

std::vector<torch::Tensor> precompute_pseudo_depths(const PseudoDepthProvider* provider,
                                                    std::span<const Sample> samples) {
  std::vector<torch::Tensor> out;
  if (provider == nullptr) return out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(pseudo_depth(*provider, s.id, s.target));
  return out;
}

SelfSupervisionLoss batch_objective(DepthNet& depth_net, PoseNet& pose_net,
                                    const BatchTensors& batch, const torch::Tensor& pseudo,
                                    const torch::Tensor& pairs, const ObjectiveOptions& options) {
  const auto b = batch.targets.size(0);
  std::vector<torch::Tensor> frames{batch.targets};
  frames.insert(frames.end(), batch.sources.begin(), batch.sources.end());
  // Targets and sources share one forward pass.
  auto depths = depth_forward(depth_net, torch::cat(frames, 0)).split(b, 0);

  ObjectiveInputs in;
  in.target = batch.targets;
  in.sources = batch.sources;
  in.target_depth = depths[0];
  for (std::size_t k = 0; k < batch.sources.size(); ++k) {
    in.source_depths.push_back(depths[k + 1]);
    in.poses.push_back(pose_forward(pose_net, batch.targets, batch.sources[k]));
  }
  in.pseudo_depth = pseudo;
  in.ranking_pairs = pairs;
  in.intrinsics = batch.intrinsics;
  return total_self_supervision_loss(self_supervision_terms(in, options), options.weights);
}

LocalTrainer::LocalTrainer(const ModelConfig& config, TrainingOptions options, std::uint64_t seed)
    : options_(std::move(options)), seed_(seed), depth_net_(config.depth), pose_net_(config.pose) {
  options_.validate();
  std::vector<torch::Tensor> params = depth_net_->parameters();
  auto pose_params = pose_net_->parameters();
  params.insert(params.end(), pose_params.begin(), pose_params.end());
  optimizer_ = std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(options_.learning_rate));
}

void LocalTrainer::set_parameters(const ModelParameters& params) {
  load_parameters(*depth_net_, params.depth);
  load_parameters(*pose_net_, params.pose);
}

ModelParameters LocalTrainer::parameters() const {
  return {snapshot_parameters(*depth_net_), snapshot_parameters(*pose_net_)};
}

namespace {

void accumulate(LossBreakdown& sum, const LossBreakdown& b) {
  sum.l_p += b.l_p;
  sum.l_p_masked += b.l_p_masked;
  sum.l_g += b.l_g;
  sum.l_n += b.l_n;
  sum.l_cdr += b.l_cdr;
  sum.l_ern += b.l_ern;
  sum.l_self += b.l_self;
}

void scale(LossBreakdown& b, double s) {
  b.l_p *= s;
  b.l_p_masked *= s;
  b.l_g *= s;
  b.l_n *= s;
  b.l_cdr *= s;
  b.l_ern *= s;
  b.l_self *= s;
}

}  // namespace

EpochSummary LocalTrainer::train_epoch(const TrainingData& data,
                                       std::span<const std::size_t> sample_ids) {
  if (sample_ids.empty()) throw std::invalid_argument("train_epoch: no samples");
  const bool with_prior = !data.pseudo_depths.empty();
  if (with_prior && data.pseudo_depths.size() != data.samples.size()) {
    throw std::invalid_argument("train_epoch: pseudo depths must align with samples");
  }
  const auto epoch = epochs_completed_;
  const auto batches = make_batches(sample_ids, options_.batches_per_epoch, options_.batch_size,
                                    derive_seed(seed_, "batches", epoch));
  std::mt19937_64 pair_rng(derive_seed(seed_, "pairs", epoch));

  depth_net_->train();
  pose_net_->train();
  EpochSummary summary;
  summary.mean_terms.weights = options_.objective.weights;
  std::int64_t counted = 0;
  for (const auto& batch_ids : batches) {
    ++summary.steps;
    auto batch = stack_batch(data.samples, batch_ids);
    torch::Tensor pseudo;
    if (with_prior) {
      std::vector<torch::Tensor> maps;
      for (auto i : batch_ids) maps.push_back(data.pseudo_depths[i]);
      pseudo = torch::stack(maps).to(batch.targets.scalar_type());
    }
    const auto pixels = batch.targets.size(2) * batch.targets.size(3);
    auto pairs = sample_point_pairs(pixels, options_.ranking_pairs, pair_rng);

    optimizer_->zero_grad();
    SelfSupervisionLoss loss;
    try {
      loss = batch_objective(depth_net_, pose_net_, batch, pseudo, pairs, options_.objective);
    } catch (const EmptyValidityError& e) {
      log::warn(std::string("skipping batch with no usable pixels: ") + e.what());
      ++summary.skipped;
      continue;
    }
    loss.total.backward();
    optimizer_->step();

    const double value = loss.breakdown.l_self;
    if (counted == 0) summary.first_loss = value;
    summary.last_loss = value;
    summary.mean_loss += value;
    accumulate(summary.mean_terms, loss.breakdown);
    ++counted;
  }
  if (counted > 0) {
    summary.mean_loss /= static_cast<double>(counted);
    scale(summary.mean_terms, 1.0 / static_cast<double>(counted));
  }
  ++epochs_completed_;
  return summary;
}

void LocalTrainer::save_optimizer(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive archive;
  optimizer_->save(archive);
  archive.save_to(path.string());
}

void LocalTrainer::load_optimizer(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  optimizer_->load(archive);
}

DepthMetrics evaluate_model(DepthNet& depth_net, std::span<const Sample> validation) {
  torch::NoGradGuard no_grad;
  const bool was_training = depth_net->is_training();
  depth_net->eval();
  std::vector<DepthMetrics> per_image;
  for (const auto& s : validation) {
    if (!s.ground_truth) continue;
    auto pred = depth_forward(depth_net, s.target.unsqueeze(0)).squeeze(0);
    per_image.push_back(evaluate_depth(pred, s.ground_truth->to(pred.scalar_type())));
  }
  if (was_training) depth_net->train();
  if (per_image.empty()) throw EvaluationError("no validation frame has ground truth");
  return average_metrics(per_image);
}

DepthMetrics evaluate_parameters(const ModelConfig& config, const ModelParameters& params,
                                 std::span<const Sample> validation) {
  DepthNet net(config.depth);
  load_parameters(*net, params.depth);
  return evaluate_model(net, validation);
}

}  // namespace fedmde
