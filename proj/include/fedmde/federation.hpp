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

// Synchronous federated averaging over participants that each train on their
// own partition, plus the centralized baseline driven by the same trainer.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedmde/cost_metrics.hpp"
#include "fedmde/dataset.hpp"
#include "fedmde/training.hpp"

namespace fedmde {

struct RoundConfig {
  std::int64_t participants = 4;  // C
  Fraction fraction;              // F
  std::int64_t local_epochs = 1;  // E
  std::int64_t rounds = 1;        // T

  void validate() const;
  /// max(floor(F * C), 1).
  std::int64_t selected_per_round() const;
};

enum class SelectionPolicy {
  kIndependent,  // a fresh uniform draw every round
  kCycle,        // visit everyone once before anyone is picked again
};

/// Sorted ids of the participants that train in `round` (1-based). A pure
/// function of its arguments, so a resumed run selects exactly as the
/// original would have.
std::vector<std::int64_t> select_participants(std::int64_t participants, std::int64_t count,
                                              std::int64_t round, SelectionPolicy policy,
                                              std::uint64_t seed);

struct GlobalModel {
  ModelParameters params;
  std::int64_t version = 0;
};

struct ClientUpdate {
  std::int64_t participant = 0;
  ModelParameters params;
  std::int64_t sample_count = 0;  // m_c
};

/// Sample-weighted average of the updates (weights m_c / sum m_c), summed in
/// double in participant-id order so the result does not depend on the order
/// updates arrived in. Throws AggregationError for an empty or inconsistent
/// set of updates.
GlobalModel fedavg(std::span<const ClientUpdate> updates, std::int64_t base_version);

using Evaluator = std::function<DepthMetrics(const ModelParameters&)>;

struct LocalResult {
  ModelParameters params;
  std::vector<EpochSummary> epochs;
  std::vector<DepthMetrics> epoch_validation;  // empty without a local evaluator
  std::int64_t batches_per_epoch = 0;
};

/// E local epochs starting from the global weights. `global` is only read.
/// With `evaluate`, the local model is scored on the shared validation set
/// after every epoch.
LocalResult local_update(LocalTrainer& trainer, const TrainingData& data,
                         std::span<const std::size_t> sample_ids, const GlobalModel& global,
                         std::int64_t local_epochs, const Evaluator* evaluate = nullptr);

/// Produces one participant's update for a round. Implementations may throw;
/// the round then continues without that participant.
class LocalUpdater {
 public:
  virtual ~LocalUpdater() = default;
  virtual LocalResult update(std::int64_t participant, std::span<const std::size_t> sample_ids,
                             const GlobalModel& global, std::int64_t local_epochs,
                             std::int64_t round) = 0;
};

/// The real thing: one persistent LocalTrainer (weights and Adam moments)
/// per participant, seeded from the master seed and the participant id.
class SelfSupervisedUpdater final : public LocalUpdater {
 public:
  SelfSupervisedUpdater(ModelConfig model, TrainingOptions options, TrainingData data,
                        std::uint64_t master_seed, Evaluator local_validation = {});

  LocalResult update(std::int64_t participant, std::span<const std::size_t> sample_ids,
                     const GlobalModel& global, std::int64_t local_epochs,
                     std::int64_t round) override;

  LocalTrainer& trainer(std::int64_t participant);

  /// Optimizer moments and epoch counters of every trainer created so far.
  void save_state(const std::filesystem::path& dir) const;
  void load_state(const std::filesystem::path& dir);

 private:
  ModelConfig model_;
  TrainingOptions options_;
  TrainingData data_;
  std::uint64_t master_seed_;
  Evaluator local_validation_;
  std::map<std::int64_t, std::unique_ptr<LocalTrainer>> trainers_;
};

/// Seed of participant `id`; participant 0 doubles as the centralized trainer.
std::uint64_t participant_seed(std::uint64_t master_seed, std::int64_t id);

struct ParticipantReport {
  std::int64_t participant = 0;
  std::vector<double> train_loss;     // mean per local epoch
  std::vector<double> val_abs_rel;    // per local epoch, if evaluated
};

struct RoundRecord {
  std::int64_t round = 0;
  std::vector<std::int64_t> selected;
  std::vector<std::int64_t> failed;
  bool aborted = false;  // every selected participant failed
  std::int64_t global_version = 0;
  std::vector<ParticipantSteps> steps;
  std::vector<ParticipantReport> reports;  // successful participants only
  double mean_train_loss = 0.0;
  DepthMetrics validation;
  double best_abs_rel = std::numeric_limits<double>::infinity();
  std::uint64_t cumulative_steps = 0;
  std::uint64_t cumulative_w_max = 0;
  double cumulative_w_min = 0.0;
  std::uint64_t cumulative_bytes = 0;  // actually moved: downloads plus successful uploads
};

/// Everything needed to continue a run after round `completed_rounds`.
struct FederationState {
  GlobalModel global;
  std::int64_t completed_rounds = 0;
  std::uint64_t cumulative_steps = 0;
  std::uint64_t cumulative_bytes = 0;
  double best_abs_rel = std::numeric_limits<double>::infinity();
};

class FederationObserver {
 public:
  virtual ~FederationObserver() = default;
  virtual void on_selection(std::int64_t /*round*/, const std::vector<std::int64_t>& /*ids*/) {}
  virtual void on_failure(std::int64_t /*round*/, std::int64_t /*participant*/,
                          const std::string& /*what*/) {}
  virtual void on_round(const RoundRecord& /*record*/, const FederationState& /*state*/) {}
};

struct FederationSetup {
  RoundConfig config;
  SelectionPolicy policy = SelectionPolicy::kIndependent;
  std::uint64_t seed = 0;
  const PartitionPlan* plan = nullptr;
};

/// Runs rounds completed_rounds + 1 .. T. The global model is evaluated after
/// every round (also after an aborted one).
FederationState run_federation(const FederationSetup& setup, FederationState state,
                               LocalUpdater& updater, const Evaluator& evaluate,
                               FederationObserver* observer = nullptr);

struct EpochRecord {
  std::int64_t epoch = 0;
  std::uint64_t steps = 0;
  std::uint64_t cumulative_steps = 0;
  EpochSummary train;
  DepthMetrics validation;
  double best_abs_rel = std::numeric_limits<double>::infinity();
};

struct CentralizedState {
  std::int64_t completed_epochs = 0;
  std::uint64_t cumulative_steps = 0;
  double best_abs_rel = std::numeric_limits<double>::infinity();
};

using EpochCallback = std::function<void(const EpochRecord&, const CentralizedState&)>;

/// Centralized baseline: `trainer` sees every id for epochs
/// completed_epochs + 1 .. epochs, evaluated after each epoch.
CentralizedState run_centralized(std::int64_t epochs, LocalTrainer& trainer,
                                 const TrainingData& data, std::span<const std::size_t> ids,
                                 CentralizedState state, const Evaluator& evaluate,
                                 const EpochCallback& on_epoch = {});

}  // namespace fedmde
