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

#include "fedmde/federation.hpp"

#include "fedmde/log.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "fedmde/errors.hpp"
#include "fedmde/seeding.hpp"

namespace fedmde {

void RoundConfig::validate() const {
  if (participants < 1) throw std::invalid_argument("participants must be at least 1");
  fraction.validate();
  if (local_epochs < 1) throw std::invalid_argument("local epochs must be at least 1");
  if (rounds < 1) throw std::invalid_argument("rounds must be at least 1");
}

std::int64_t RoundConfig::selected_per_round() const {
  fraction.validate();
  return std::max<std::int64_t>(fraction.numerator * participants / fraction.denominator, 1);
}

namespace {

std::vector<std::int64_t> shuffled_ids(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

}  // namespace

std::vector<std::int64_t> select_participants(std::int64_t participants, std::int64_t count,
                                              std::int64_t round, SelectionPolicy policy,
                                              std::uint64_t seed) {
  if (participants < 1 || count < 1 || count > participants) {
    throw std::invalid_argument("selection: need 1 <= count <= participants");
  }
  if (round < 1) throw std::invalid_argument("selection: rounds are 1-based");

  std::vector<std::int64_t> chosen;
  if (policy == SelectionPolicy::kIndependent) {
    auto ids = shuffled_ids(participants, derive_seed(seed, "select", round));
    chosen.assign(ids.begin(), ids.begin() + count);
  } else {
    // Replay the cycle from round 1; cheap, and keeps selection stateless.
    std::int64_t cycle = 0;
    auto pending = shuffled_ids(participants, derive_seed(seed, "cycle", cycle));
    for (std::int64_t r = 1; r <= round; ++r) {
      chosen.clear();
      const auto take = std::min<std::size_t>(pending.size(), static_cast<std::size_t>(count));
      chosen.assign(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(take));
      pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(take));
      if (pending.empty()) {
        pending = shuffled_ids(participants, derive_seed(seed, "cycle", ++cycle));
        // Top up an unfinished round from the new cycle without repeating anyone.
        for (auto it = pending.begin();
             it != pending.end() && static_cast<std::int64_t>(chosen.size()) < count;) {
          if (std::find(chosen.begin(), chosen.end(), *it) == chosen.end()) {
            chosen.push_back(*it);
            it = pending.erase(it);
          } else {
            ++it;
          }
        }
      }
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace {

ParameterSet average_sets(const std::vector<const ClientUpdate*>& updates,
                          const std::vector<double>& weights,
                          const ParameterSet& (*pick)(const ClientUpdate&)) {
  const auto& reference = pick(*updates.front());
  for (const auto* u : updates) {
    if (auto bad = reference.first_mismatch(pick(*u))) {
      throw AggregationError("update of participant " + std::to_string(u->participant) +
                             " does not match at entry '" + *bad + "'");
    }
  }
  ParameterSet out;
  for (std::size_t e = 0; e < reference.size(); ++e) {
    const auto& entry = reference.entries()[e];
    auto acc = torch::zeros(entry.value.sizes(), torch::kFloat64);
    for (std::size_t i = 0; i < updates.size(); ++i) {
      const auto& value = pick(*updates[i]).entries()[e].value;
      if (!torch::isfinite(value).all().item<bool>()) {
        throw AggregationError("update of participant " + std::to_string(updates[i]->participant) +
                               " has non-finite entry '" + entry.name + "'");
      }
      acc += weights[i] * value.to(torch::kFloat64);
    }
    out.add(entry.name, acc.to(entry.value.scalar_type()));
  }
  return out;
}

}  // namespace

GlobalModel fedavg(std::span<const ClientUpdate> updates, std::int64_t base_version) {
  if (updates.empty()) throw AggregationError("no updates to aggregate");
  std::vector<const ClientUpdate*> ordered;
  for (const auto& u : updates) {
    if (u.sample_count <= 0) {
      throw AggregationError("participant " + std::to_string(u.participant) +
                             " reported no samples");
    }
    ordered.push_back(&u);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->participant < b->participant; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->participant == ordered[i - 1]->participant) {
      throw AggregationError("duplicate update from participant " +
                             std::to_string(ordered[i]->participant));
    }
  }
  std::int64_t total = 0;
  for (const auto* u : ordered) total += u->sample_count;
  std::vector<double> weights;
  for (const auto* u : ordered) {
    weights.push_back(static_cast<double>(u->sample_count) / static_cast<double>(total));
  }
  GlobalModel out;
  out.params.depth = average_sets(ordered, weights,
                                  [](const ClientUpdate& u) -> const ParameterSet& {
                                    return u.params.depth;
                                  });
  out.params.pose = average_sets(ordered, weights,
                                 [](const ClientUpdate& u) -> const ParameterSet& {
                                   return u.params.pose;
                                 });
  out.version = base_version + 1;
  return out;
}

LocalResult local_update(LocalTrainer& trainer, const TrainingData& data,
                         std::span<const std::size_t> sample_ids, const GlobalModel& global,
                         std::int64_t local_epochs, const Evaluator* evaluate) {
  if (local_epochs < 1) throw std::invalid_argument("local epochs must be at least 1");
  trainer.set_parameters(global.params);
  LocalResult result;
  result.batches_per_epoch = trainer.options().batches_per_epoch;
  for (std::int64_t e = 0; e < local_epochs; ++e) {
    result.epochs.push_back(trainer.train_epoch(data, sample_ids));
    if (evaluate && *evaluate) result.epoch_validation.push_back((*evaluate)(trainer.parameters()));
  }
  result.params = trainer.parameters();
  return result;
}

std::uint64_t participant_seed(std::uint64_t master_seed, std::int64_t id) {
  return derive_seed(master_seed, "participant", static_cast<std::uint64_t>(id));
}

SelfSupervisedUpdater::SelfSupervisedUpdater(ModelConfig model, TrainingOptions options,
                                             TrainingData data, std::uint64_t master_seed,
                                             Evaluator local_validation)
    : model_(std::move(model)),
      options_(std::move(options)),
      data_(data),
      master_seed_(master_seed),
      local_validation_(std::move(local_validation)) {}

LocalTrainer& SelfSupervisedUpdater::trainer(std::int64_t participant) {
  auto& slot = trainers_[participant];
  if (!slot) {
    slot = std::make_unique<LocalTrainer>(model_, options_,
                                          participant_seed(master_seed_, participant));
  }
  return *slot;
}

LocalResult SelfSupervisedUpdater::update(std::int64_t participant,
                                          std::span<const std::size_t> sample_ids,
                                          const GlobalModel& global, std::int64_t local_epochs,
                                          std::int64_t /*round*/) {
  return local_update(trainer(participant), data_, sample_ids, global, local_epochs,
                      &local_validation_);
}

void SelfSupervisedUpdater::save_state(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::object();
  for (const auto& [id, t] : trainers_) {
    t->save_optimizer(dir / ("participant_" + std::to_string(id) + ".optim"));
    index[std::to_string(id)] = t->epochs_completed();
  }
  std::ofstream(dir / "participants.json") << index.dump(2) << '\n';
}

void SelfSupervisedUpdater::load_state(const std::filesystem::path& dir) {
  std::ifstream in(dir / "participants.json");
  if (!in) throw IngestionError("missing participant state in " + dir.string());
  const auto index = nlohmann::json::parse(in);
  for (const auto& [key, epochs] : index.items()) {
    const auto id = std::stoll(key);
    auto& t = trainer(id);
    t.load_optimizer(dir / ("participant_" + key + ".optim"));
    t.set_epochs_completed(epochs.get<std::int64_t>());
  }
}

FederationState run_federation(const FederationSetup& setup, FederationState state,
                               LocalUpdater& updater, const Evaluator& evaluate,
                               FederationObserver* observer) {
  const auto& config = setup.config;
  config.validate();
  if (setup.plan == nullptr ||
      setup.plan->participant_count() != static_cast<std::size_t>(config.participants)) {
    throw std::invalid_argument("federation: partition plan must have one entry per participant");
  }
  const auto count = config.selected_per_round();
  const auto omega = static_cast<std::uint64_t>(state.global.params.bytes());

  for (auto round = state.completed_rounds + 1; round <= config.rounds; ++round) {
    RoundRecord record;
    record.round = round;
    record.selected =
        select_participants(config.participants, count, round, setup.policy, setup.seed);
    if (observer) observer->on_selection(round, record.selected);

    std::vector<ClientUpdate> updates;
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    for (auto id : record.selected) {
      const auto& ids = setup.plan->assignment[static_cast<std::size_t>(id)];
      try {
        auto result = updater.update(id, ids, state.global, config.local_epochs, round);
        ParticipantSteps steps{id, static_cast<std::uint64_t>(result.epochs.size()),
                               static_cast<std::uint64_t>(result.batches_per_epoch)};
        record.steps.push_back(steps);
        state.cumulative_steps += steps.epochs * steps.batches;
        ParticipantReport report{id, {}, {}};
        for (const auto& e : result.epochs) {
          loss_sum += e.mean_loss;
          ++loss_count;
          report.train_loss.push_back(e.mean_loss);
        }
        for (const auto& m : result.epoch_validation) report.val_abs_rel.push_back(m.abs_rel);
        record.reports.push_back(std::move(report));
        updates.push_back({id, std::move(result.params), static_cast<std::int64_t>(ids.size())});
      } catch (const std::exception& e) {
        log::warn("round " + std::to_string(round) + ": participant " + std::to_string(id) +
                  " failed: " + e.what());
        record.failed.push_back(id);
        if (observer) observer->on_failure(round, id, e.what());
      }
    }
    state.cumulative_bytes += omega * (record.selected.size() + updates.size());

    if (updates.empty()) {
      log::warn("round " + std::to_string(round) +
                ": every selected participant failed; keeping the previous model");
      record.aborted = true;
    } else {
      state.global = fedavg(updates, state.global.version);
    }
    state.completed_rounds = round;

    record.global_version = state.global.version;
    record.mean_train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    record.validation = evaluate(state.global.params);
    state.best_abs_rel = std::min(state.best_abs_rel, record.validation.abs_rel);
    record.best_abs_rel = state.best_abs_rel;
    record.cumulative_steps = state.cumulative_steps;
    record.cumulative_w_max = comm_upper_bound(static_cast<std::uint64_t>(round),
                                               static_cast<std::uint64_t>(config.participants),
                                               omega);
    record.cumulative_w_min = comm_lower_bound(static_cast<std::uint64_t>(round),
                                               static_cast<std::uint64_t>(config.participants),
                                               config.fraction, omega);
    record.cumulative_bytes = state.cumulative_bytes;
    if (observer) observer->on_round(record, state);
  }
  return state;
}

CentralizedState run_centralized(std::int64_t epochs, LocalTrainer& trainer,
                                 const TrainingData& data, std::span<const std::size_t> ids,
                                 CentralizedState state, const Evaluator& evaluate,
                                 const EpochCallback& on_epoch) {
  if (epochs < 1) throw std::invalid_argument("centralized: epochs must be at least 1");
  for (auto epoch = state.completed_epochs + 1; epoch <= epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.train = trainer.train_epoch(data, ids);
    record.steps = static_cast<std::uint64_t>(record.train.steps);
    state.cumulative_steps += record.steps;
    state.completed_epochs = epoch;
    record.cumulative_steps = state.cumulative_steps;
    record.validation = evaluate(trainer.parameters());
    state.best_abs_rel = std::min(state.best_abs_rel, record.validation.abs_rel);
    record.best_abs_rel = state.best_abs_rel;
    if (on_epoch) on_epoch(record, state);
  }
  return state;
}

}  // namespace fedmde
