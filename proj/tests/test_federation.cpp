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

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "fedmde/errors.hpp"
#include "fedmde/federation.hpp"
#include "fedmde/synthetic_scene.hpp"

using namespace fedmde;

namespace {

ModelParameters scalar_params(double depth, double pose,
                              torch::Dtype dtype = torch::kFloat64) {
  ModelParameters p;
  p.depth.add("w", torch::full({}, depth, dtype));
  p.pose.add("p", torch::full({}, pose, dtype));
  return p;
}

ModelParameters random_params(std::mt19937_64& rng, torch::Dtype dtype) {
  torch::manual_seed(static_cast<std::int64_t>(rng() >> 1));
  ModelParameters p;
  p.depth.add("conv.weight", torch::randn({4, 3, 3, 3}, dtype));
  p.depth.add("conv.bias", torch::randn({4}, dtype));
  p.pose.add("head.weight", torch::randn({6, 4}, dtype));
  return p;
}

// A tiny synthetic world shared by the training tests.
struct World {
  ModelConfig model{DepthNetConfig{2}, PoseNetConfig{2, 0.01}};
  TrainingOptions options;
  SyntheticScene train;
  SyntheticScene val;
  std::vector<torch::Tensor> pseudo;
  std::vector<std::size_t> all_ids;

  explicit World(std::vector<std::int64_t> drives = {3, 3, 3, 3}) {
    SyntheticSceneSpec spec;
    spec.width = 32;
    spec.height = 16;
    spec.drive_frames = std::move(drives);
    spec.boxes = 2;
    spec.supersample = 1;
    train = generate_synthetic_scene(spec, 5);
    spec.drive_frames = {2};
    spec.drive_prefix = "val";
    val = generate_synthetic_scene(spec, 6);
    AnalyticPseudoDepth provider(train.depth_by_frame);
    pseudo = precompute_pseudo_depths(&provider, train.samples);
    all_ids.resize(train.samples.size());
    std::iota(all_ids.begin(), all_ids.end(), 0);
    options.learning_rate = 1e-3;
    options.batch_size = 2;
    options.batches_per_epoch = 3;
    options.ranking_pairs = 16;
  }

  TrainingData data() const { return {train.samples, pseudo}; }
  Evaluator evaluator() const {
    return [this](const ModelParameters& p) { return evaluate_parameters(model, p, val.samples); };
  }
};

// Returns the global weights shifted by the participant id, or throws for
// the participants listed in `failing`.
class ScriptedUpdater : public LocalUpdater {
 public:
  std::set<std::int64_t> failing;
  std::vector<std::string>* trace = nullptr;
  std::int64_t batches = 10;
  std::vector<const ModelParameters*> seen_globals;

  LocalResult update(std::int64_t participant, std::span<const std::size_t> sample_ids,
                     const GlobalModel& global, std::int64_t local_epochs,
                     std::int64_t round) override {
    if (trace) trace->push_back("update " + std::to_string(round) + " " + std::to_string(participant));
    if (failing.count(participant)) throw std::runtime_error("scripted failure");
    LocalResult r;
    r.params = shifted(global.params, static_cast<double>(participant + 1));
    r.batches_per_epoch = batches;
    for (std::int64_t e = 0; e < local_epochs; ++e) {
      EpochSummary s;
      s.steps = batches;
      s.mean_loss = 1.0 / static_cast<double>(sample_ids.size());
      r.epochs.push_back(s);
    }
    return r;
  }

  static ModelParameters shifted(const ModelParameters& p, double by) {
    ModelParameters out;
    for (const auto& e : p.depth.entries()) out.depth.add(e.name, e.value + by);
    for (const auto& e : p.pose.entries()) out.pose.add(e.name, e.value - by);
    return out;
  }
};

// Scores a model by its single depth weight so that tests can predict it.
DepthMetrics score_by_weight(const ModelParameters& p) {
  DepthMetrics m;
  m.abs_rel = std::abs(p.depth.at("w").item<double>() - 3.0);
  return m;
}

class TraceObserver : public FederationObserver {
 public:
  std::vector<std::string>* trace;
  std::vector<RoundRecord> records;
  std::vector<std::pair<std::int64_t, std::int64_t>> failures;

  explicit TraceObserver(std::vector<std::string>* t) : trace(t) {}
  void on_selection(std::int64_t round, const std::vector<std::int64_t>& ids) override {
    trace->push_back("select " + std::to_string(round) + " " + std::to_string(ids.size()));
  }
  void on_failure(std::int64_t round, std::int64_t participant, const std::string&) override {
    failures.emplace_back(round, participant);
  }
  void on_round(const RoundRecord& record, const FederationState&) override {
    trace->push_back("aggregate " + std::to_string(record.round));
    records.push_back(record);
  }
};

PartitionPlan even_plan(std::int64_t participants, std::size_t per_participant) {
  PartitionPlan plan;
  plan.scenario = Scenario::kFederatedIid;
  std::size_t next = 0;
  for (std::int64_t c = 0; c < participants; ++c) {
    std::vector<std::size_t> ids(per_participant);
    std::iota(ids.begin(), ids.end(), next);
    next += per_participant;
    plan.assignment.push_back(ids);
  }
  return plan;
}

}  // namespace

TEST(FedAvg, EqualWeightsGiveMean) {
  std::vector<ClientUpdate> u{{0, scalar_params(0, 0), 5}, {1, scalar_params(4, 8), 5}};
  auto g = fedavg(u, 0);
  EXPECT_EQ(g.params.depth.at("w").item<double>(), 2.0);
  EXPECT_EQ(g.params.pose.at("p").item<double>(), 4.0);
}

TEST(FedAvg, SampleCountsWeightTheMean) {
  std::vector<ClientUpdate> u{{0, scalar_params(0, 0), 1}, {1, scalar_params(4, 4), 3}};
  EXPECT_EQ(fedavg(u, 0).params.depth.at("w").item<double>(), 3.0);
}

TEST(FedAvg, VersionIncrementsByOne) {
  std::vector<ClientUpdate> u{{0, scalar_params(1, 1), 1}};
  EXPECT_EQ(fedavg(u, 0).version, 1);
  EXPECT_EQ(fedavg(u, 41).version, 42);
}

TEST(FedAvg, SingleUpdateIsReturnedExactly) {
  std::mt19937_64 rng(61);
  for (auto dtype : {torch::kFloat32, torch::kFloat64}) {
    for (int i = 0; i < 20; ++i) {
      auto p = random_params(rng, dtype);
      std::vector<ClientUpdate> u{{3, p, 17}};
      EXPECT_TRUE(fedavg(u, 0).params.identical_to(p));
    }
  }
}

TEST(FedAvg, MatchesHandComputedWeightedMean) {
  std::mt19937_64 rng(62);
  std::uniform_int_distribution<std::int64_t> count(1, 500);
  for (auto [dtype, tol] : {std::pair{torch::kFloat64, 1e-12}, std::pair{torch::kFloat32, 1e-6}}) {
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 2 + trial % 6;
      std::vector<ClientUpdate> u;
      for (int c = 0; c < n; ++c) u.push_back({c, random_params(rng, dtype), count(rng)});
      auto g = fedavg(u, 0);
      double m = 0;
      for (const auto& x : u) m += static_cast<double>(x.sample_count);
      for (const auto& e : g.params.depth.entries()) {
        auto ref = torch::zeros_like(e.value, torch::kFloat64);
        for (const auto& x : u) {
          ref += x.params.depth.at(e.name).to(torch::kFloat64) *
                 (static_cast<double>(x.sample_count) / m);
        }
        EXPECT_LT((e.value.to(torch::kFloat64) - ref).abs().max().item<double>(), tol);
        EXPECT_EQ(e.value.scalar_type(), dtype);
      }
      for (const auto& e : g.params.pose.entries()) {
        auto ref = torch::zeros_like(e.value, torch::kFloat64);
        for (const auto& x : u) {
          ref += x.params.pose.at(e.name).to(torch::kFloat64) *
                 (static_cast<double>(x.sample_count) / m);
        }
        EXPECT_LT((e.value.to(torch::kFloat64) - ref).abs().max().item<double>(), tol);
      }
    }
  }
}

TEST(FedAvg, PermutationInvariant) {
  std::mt19937_64 rng(63);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ClientUpdate> u;
    for (int c = 0; c < 5; ++c) u.push_back({c, random_params(rng, torch::kFloat32), 1 + c * 7});
    auto reference = fedavg(u, 0);
    std::shuffle(u.begin(), u.end(), rng);
    EXPECT_TRUE(fedavg(u, 0).params.identical_to(reference.params));
  }
}

TEST(FedAvg, MismatchNamesTheEntry) {
  ModelParameters a = scalar_params(1, 1), b;
  b.depth.add("w", torch::zeros({2}, torch::kFloat64));
  b.pose.add("p", torch::zeros({}, torch::kFloat64));
  std::vector<ClientUpdate> u{{0, a, 1}, {1, b, 1}};
  try {
    fedavg(u, 0);
    FAIL() << "expected AggregationError";
  } catch (const AggregationError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos) << e.what();
  }
}

TEST(FedAvg, RejectsDegenerateInput) {
  std::vector<ClientUpdate> none;
  EXPECT_THROW(fedavg(none, 0), AggregationError);
  std::vector<ClientUpdate> zero{{0, scalar_params(1, 1), 0}};
  EXPECT_THROW(fedavg(zero, 0), AggregationError);
  std::vector<ClientUpdate> dup{{2, scalar_params(1, 1), 1}, {2, scalar_params(1, 1), 1}};
  EXPECT_THROW(fedavg(dup, 0), AggregationError);
  std::vector<ClientUpdate> nan{{0, scalar_params(NAN, 1), 1}};
  EXPECT_THROW(fedavg(nan, 0), AggregationError);
}

TEST(RoundConfig, SelectedPerRound) {
  RoundConfig c;
  c.participants = 9;
  c.fraction = {1, 3};
  EXPECT_EQ(c.selected_per_round(), 3);
  c.participants = 10;
  EXPECT_EQ(c.selected_per_round(), 3);
  c.fraction = {1, 2};
  EXPECT_EQ(c.selected_per_round(), 5);
  c.fraction = {1, 1};
  EXPECT_EQ(c.selected_per_round(), 10);
  c.participants = 2;
  c.fraction = {1, 3};
  EXPECT_EQ(c.selected_per_round(), 1);
}

TEST(RoundConfig, Validation) {
  RoundConfig c;
  EXPECT_NO_THROW(c.validate());
  c.participants = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.local_epochs = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.rounds = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.fraction = {3, 2};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(SelectParticipants, FullFractionSelectsEveryone) {
  for (auto policy : {SelectionPolicy::kIndependent, SelectionPolicy::kCycle}) {
    for (std::int64_t r = 1; r <= 5; ++r) {
      EXPECT_EQ(select_participants(4, 4, r, policy, 1), (std::vector<std::int64_t>{0, 1, 2, 3}));
    }
  }
}

TEST(SelectParticipants, DistinctSortedAndDeterministic) {
  for (auto policy : {SelectionPolicy::kIndependent, SelectionPolicy::kCycle}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      for (std::int64_t r = 1; r <= 12; ++r) {
        auto ids = select_participants(9, 3, r, policy, seed);
        ASSERT_EQ(ids.size(), 3u);
        EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
        EXPECT_EQ(std::set<std::int64_t>(ids.begin(), ids.end()).size(), 3u);
        EXPECT_GE(ids.front(), 0);
        EXPECT_LT(ids.back(), 9);
        EXPECT_EQ(ids, select_participants(9, 3, r, policy, seed));
      }
    }
  }
}

TEST(SelectParticipants, CycleVisitsEveryoneBeforeRepeating) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (std::int64_t cycle = 0; cycle < 3; ++cycle) {
      std::multiset<std::int64_t> seen;
      for (std::int64_t r = 1; r <= 3; ++r) {
        for (auto id : select_participants(6, 2, cycle * 3 + r, SelectionPolicy::kCycle, seed)) {
          seen.insert(id);
        }
      }
      EXPECT_EQ(seen, (std::multiset<std::int64_t>{0, 1, 2, 3, 4, 5}));
    }
  }
}

TEST(SelectParticipants, CycleWithRemainderCoversEveryoneWithinTwoRounds) {
  // C = 10, l = 3: rounds 1-4 touch 12 slots, so everyone appears at least once.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::set<std::int64_t> seen;
    for (std::int64_t r = 1; r <= 4; ++r) {
      auto ids = select_participants(10, 3, r, SelectionPolicy::kCycle, seed);
      EXPECT_EQ(std::set<std::int64_t>(ids.begin(), ids.end()).size(), 3u);
      seen.insert(ids.begin(), ids.end());
    }
    EXPECT_EQ(seen.size(), 10u);
  }
}

TEST(SelectParticipants, RejectsBadArguments) {
  EXPECT_THROW(select_participants(0, 1, 1, SelectionPolicy::kIndependent, 0),
               std::invalid_argument);
  EXPECT_THROW(select_participants(3, 4, 1, SelectionPolicy::kIndependent, 0),
               std::invalid_argument);
  EXPECT_THROW(select_participants(3, 1, 0, SelectionPolicy::kCycle, 0), std::invalid_argument);
}

TEST(RunFederation, FailedParticipantsAreDroppedAndWeightsRenormalized) {
  std::vector<std::string> trace;
  ScriptedUpdater updater;
  updater.failing = {1};
  TraceObserver observer(&trace);
  auto plan = even_plan(3, 2);
  FederationSetup setup{{3, {1, 1}, 1, 1}, SelectionPolicy::kIndependent, 9, &plan};
  FederationState state;
  state.global.params = scalar_params(0, 0);
  state = run_federation(setup, state, updater, score_by_weight, &observer);
  ASSERT_EQ(observer.records.size(), 1u);
  const auto& r = observer.records[0];
  EXPECT_EQ(r.failed, (std::vector<std::int64_t>{1}));
  EXPECT_FALSE(r.aborted);
  // Survivors 0 and 2 moved the weight by +1 and +3 with equal sample counts.
  EXPECT_EQ(state.global.params.depth.at("w").item<double>(), 2.0);
  EXPECT_EQ(state.global.version, 1);
  EXPECT_EQ(r.steps.size(), 2u);
  EXPECT_EQ(r.reports.size(), 2u);
  const auto omega = static_cast<std::uint64_t>(state.global.params.bytes());
  EXPECT_EQ(r.cumulative_bytes, omega * (3 + 2));
  EXPECT_EQ(observer.failures, (std::vector<std::pair<std::int64_t, std::int64_t>>{{1, 1}}));
}

TEST(RunFederation, RoundWithNoSurvivorKeepsPreviousModel) {
  std::vector<std::string> trace;
  ScriptedUpdater updater;
  updater.failing = {0, 1};
  TraceObserver observer(&trace);
  auto plan = even_plan(2, 1);
  FederationSetup setup{{2, {1, 1}, 1, 2}, SelectionPolicy::kIndependent, 1, &plan};
  FederationState state;
  state.global.params = scalar_params(0.5, 0);
  state.global.version = 4;
  auto before = state.global.params;
  state = run_federation(setup, state, updater, score_by_weight, &observer);
  ASSERT_EQ(observer.records.size(), 2u);
  for (const auto& r : observer.records) {
    EXPECT_TRUE(r.aborted);
    EXPECT_EQ(r.global_version, 4);
    EXPECT_DOUBLE_EQ(r.validation.abs_rel, 2.5);
    EXPECT_TRUE(r.steps.empty());
  }
  EXPECT_TRUE(state.global.params.identical_to(before));
  EXPECT_EQ(state.completed_rounds, 2);
  EXPECT_EQ(state.cumulative_steps, 0u);
}

TEST(RunFederation, EventOrderFollowsSelectUpdateAggregate) {
  std::vector<std::string> trace;
  ScriptedUpdater updater;
  updater.trace = &trace;
  TraceObserver observer(&trace);
  auto plan = even_plan(6, 3);
  FederationSetup setup{{6, {1, 2}, 1, 3}, SelectionPolicy::kCycle, 3, &plan};
  FederationState state;
  state.global.params = scalar_params(0, 0);
  run_federation(setup, state, updater, score_by_weight, &observer);

  std::vector<std::string> expected;
  for (std::int64_t r = 1; r <= 3; ++r) {
    expected.push_back("select " + std::to_string(r) + " 3");
    for (auto id : select_participants(6, 3, r, SelectionPolicy::kCycle, 3)) {
      expected.push_back("update " + std::to_string(r) + " " + std::to_string(id));
    }
    expected.push_back("aggregate " + std::to_string(r));
  }
  EXPECT_EQ(trace, expected);
}

TEST(RunFederation, TwelveRoundsGiveTwelveRecords) {
  std::vector<std::string> trace;
  ScriptedUpdater updater;
  TraceObserver observer(&trace);
  auto plan = even_plan(10, 4);
  RoundConfig config{10, {1, 2}, 3, 12};
  FederationSetup setup{config, SelectionPolicy::kIndependent, 17, &plan};
  FederationState state;
  state.global.params = scalar_params(-20, 0);
  state = run_federation(setup, state, updater, score_by_weight, &observer);
  ASSERT_EQ(observer.records.size(), 12u);
  const auto omega = static_cast<std::uint64_t>(state.global.params.bytes());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& r = observer.records[i];
    const auto t = static_cast<std::uint64_t>(i + 1);
    EXPECT_EQ(r.round, static_cast<std::int64_t>(t));
    EXPECT_EQ(r.global_version, static_cast<std::int64_t>(t));
    EXPECT_EQ(r.selected.size(), 5u);
    EXPECT_EQ(r.cumulative_steps, t * 5 * 3 * 10);
    EXPECT_EQ(r.cumulative_w_max, 2 * t * 10 * omega);
    EXPECT_DOUBLE_EQ(r.cumulative_w_min, 2.0 * t * 10 * 0.5 * static_cast<double>(omega));
    best = std::min(best, r.validation.abs_rel);
    EXPECT_EQ(r.best_abs_rel, best);
    if (i > 0) EXPECT_LE(r.best_abs_rel, observer.records[i - 1].best_abs_rel);
  }
}

TEST(RunFederation, ResumesAfterCompletedRounds) {
  auto plan = even_plan(4, 2);
  FederationSetup setup{{4, {1, 2}, 1, 6}, SelectionPolicy::kCycle, 8, &plan};
  FederationState start;
  start.global.params = scalar_params(0, 0);

  std::vector<std::string> t1, t2;
  ScriptedUpdater u1, u2;
  TraceObserver full(&t1), tail(&t2);
  auto end = run_federation(setup, start, u1, score_by_weight, &full);

  auto partial_setup = setup;
  partial_setup.config.rounds = 3;
  TraceObserver head(&t2);
  auto mid = run_federation(partial_setup, start, u2, score_by_weight, &head);
  auto resumed = run_federation(setup, mid, u2, score_by_weight, &tail);
  EXPECT_TRUE(resumed.global.params.identical_to(end.global.params));
  ASSERT_EQ(tail.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(tail.records[i].selected, full.records[i + 3].selected);
    EXPECT_EQ(tail.records[i].cumulative_bytes, full.records[i + 3].cumulative_bytes);
  }
}

TEST(RunFederation, RequiresMatchingPlan) {
  ScriptedUpdater updater;
  auto plan = even_plan(3, 1);
  FederationSetup setup{{4, {1, 1}, 1, 1}, SelectionPolicy::kIndependent, 0, &plan};
  FederationState state;
  state.global.params = scalar_params(0, 0);
  EXPECT_THROW(run_federation(setup, state, updater, score_by_weight), std::invalid_argument);
}

TEST(LocalUpdate, ZeroLearningRateLeavesWeightsUnchanged) {
  World w;
  w.options.learning_rate = 0.0;
  LocalTrainer trainer(w.model, w.options, 1);
  GlobalModel global{initial_parameters(w.model, 2), 0};
  auto result = local_update(trainer, w.data(), w.all_ids, global, 1);
  EXPECT_TRUE(result.params.identical_to(global.params));
}

TEST(LocalUpdate, RecordsEpochsTimesBatches) {
  World w;
  LocalTrainer trainer(w.model, w.options, 3);
  GlobalModel global{initial_parameters(w.model, 4), 0};
  auto result = local_update(trainer, w.data(), w.all_ids, global, 2);
  ASSERT_EQ(result.epochs.size(), 2u);
  EXPECT_EQ(result.batches_per_epoch, 3);
  std::int64_t steps = 0;
  for (const auto& e : result.epochs) steps += e.steps;
  EXPECT_EQ(steps, 2 * 3);
  EXPECT_EQ(trainer.epochs_completed(), 2);
}

TEST(LocalUpdate, GlobalModelIsNotMutated) {
  World w;
  LocalTrainer trainer(w.model, w.options, 5);
  GlobalModel global{initial_parameters(w.model, 6), 3};
  ModelParameters copy;
  for (const auto& e : global.params.depth.entries()) copy.depth.add(e.name, e.value);
  for (const auto& e : global.params.pose.entries()) copy.pose.add(e.name, e.value);
  auto result = local_update(trainer, w.data(), w.all_ids, global, 1);
  EXPECT_TRUE(global.params.identical_to(copy));
  EXPECT_EQ(global.version, 3);
  EXPECT_FALSE(result.params.identical_to(copy));
}

TEST(LocalUpdate, LossDecreasesOnASingleScene) {
  World w({2});
  w.options.batch_size = 1;
  w.options.batches_per_epoch = 40;
  w.options.learning_rate = 2e-3;
  LocalTrainer trainer(w.model, w.options, 7);
  GlobalModel global{initial_parameters(w.model, 8), 0};
  std::vector<std::size_t> one{0};
  auto result = local_update(trainer, w.data(), one, global, 1);
  EXPECT_LT(result.epochs[0].last_loss, result.epochs[0].first_loss);
}

TEST(LocalUpdate, PerEpochLocalValidation) {
  World w;
  LocalTrainer trainer(w.model, w.options, 9);
  GlobalModel global{initial_parameters(w.model, 10), 0};
  auto eval = w.evaluator();
  auto result = local_update(trainer, w.data(), w.all_ids, global, 2, &eval);
  ASSERT_EQ(result.epoch_validation.size(), 2u);
  EXPECT_GT(result.epoch_validation[1].pixels, 0);
}

TEST(Federation, SingleParticipantRoundEqualsItsLocalUpdate) {
  World w;
  auto plan = partition_centralized(w.train.samples.size());
  plan.scenario = Scenario::kFederatedIid;
  SelfSupervisedUpdater updater(w.model, w.options, w.data(), 11);
  std::vector<std::string> trace;
  TraceObserver observer(&trace);
  FederationSetup setup{{1, {1, 1}, 1, 2}, SelectionPolicy::kIndependent, 11, &plan};
  FederationState state;
  state.global = {initial_parameters(w.model, 12), 0};
  state = run_federation(setup, state, updater, w.evaluator(), &observer);
  EXPECT_TRUE(state.global.params.identical_to(updater.trainer(0).parameters()));
}

TEST(Federation, CentralizedEqualsSingleParticipantFederation) {
  World w;
  const std::uint64_t seed = 13;
  const auto initial = initial_parameters(w.model, 14);
  auto evaluate = w.evaluator();

  auto plan = partition_centralized(w.train.samples.size());
  SelfSupervisedUpdater updater(w.model, w.options, w.data(), seed);
  std::vector<std::string> trace;
  TraceObserver observer(&trace);
  FederationSetup setup{{1, {1, 1}, 1, 3}, SelectionPolicy::kIndependent, seed, &plan};
  FederationState fs;
  fs.global = {initial, 0};
  fs = run_federation(setup, fs, updater, evaluate, &observer);

  LocalTrainer trainer(w.model, w.options, participant_seed(seed, 0));
  trainer.set_parameters(initial);
  std::vector<EpochRecord> epochs;
  run_centralized(3, trainer, w.data(), w.all_ids, {}, evaluate,
                  [&](const EpochRecord& r, const CentralizedState&) { epochs.push_back(r); });

  ASSERT_EQ(epochs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(epochs[i].validation.abs_rel, observer.records[i].validation.abs_rel);
    EXPECT_EQ(epochs[i].cumulative_steps, observer.records[i].cumulative_steps);
  }
  EXPECT_TRUE(trainer.parameters().identical_to(fs.global.params));
}

TEST(Federation, IdenticalParticipantsAggregateToTheirCommonUpdate) {
  World w;
  // Every participant trains on all data with the same seed.
  class SameSeedUpdater : public LocalUpdater {
   public:
    World* world;
    explicit SameSeedUpdater(World* w) : world(w) {}
    LocalResult update(std::int64_t, std::span<const std::size_t>, const GlobalModel& global,
                       std::int64_t epochs, std::int64_t) override {
      LocalTrainer t(world->model, world->options, 99);
      return local_update(t, world->data(), world->all_ids, global, epochs);
    }
  } updater(&w);
  PartitionPlan plan;
  plan.assignment.assign(3, w.all_ids);
  FederationSetup setup{{3, {1, 1}, 1, 1}, SelectionPolicy::kIndependent, 1, &plan};
  FederationState state;
  state.global = {initial_parameters(w.model, 15), 0};
  LocalTrainer single(w.model, w.options, 99);
  auto expected = local_update(single, w.data(), w.all_ids, state.global, 1).params;
  state = run_federation(setup, state, updater, w.evaluator());
  EXPECT_LT(state.global.params.depth.max_abs_difference(expected.depth), 1e-6);
  EXPECT_LT(state.global.params.pose.max_abs_difference(expected.pose), 1e-6);
}

TEST(Federation, VersionAdvancesOncePerRound) {
  World w;
  auto plan = partition_iid(w.train.samples.size(), 2, 3);
  SelfSupervisedUpdater updater(w.model, w.options, w.data(), 16);
  std::vector<std::string> trace;
  TraceObserver observer(&trace);
  FederationSetup setup{{2, {1, 2}, 1, 3}, SelectionPolicy::kIndependent, 16, &plan};
  FederationState state;
  state.global = {initial_parameters(w.model, 17), 0};
  state = run_federation(setup, state, updater, w.evaluator(), &observer);
  for (std::size_t i = 0; i < observer.records.size(); ++i) {
    EXPECT_EQ(observer.records[i].global_version, static_cast<std::int64_t>(i + 1));
    EXPECT_EQ(observer.records[i].steps.size(), 1u);
  }
}

TEST(Federation, UpdaterStateRoundTrips) {
  World w;
  SelfSupervisedUpdater a(w.model, w.options, w.data(), 18);
  GlobalModel global{initial_parameters(w.model, 19), 0};
  a.update(0, w.all_ids, global, 1, 1);
  a.update(2, w.all_ids, global, 2, 1);
  const auto dir = std::filesystem::temp_directory_path() / "fedmde_updater_state";
  std::filesystem::remove_all(dir);
  a.save_state(dir);

  SelfSupervisedUpdater b(w.model, w.options, w.data(), 18);
  b.load_state(dir);
  EXPECT_EQ(b.trainer(2).epochs_completed(), 2);
  auto ra = a.update(2, w.all_ids, global, 1, 2);
  auto rb = b.update(2, w.all_ids, global, 1, 2);
  EXPECT_TRUE(ra.params.identical_to(rb.params));
  std::filesystem::remove_all(dir);
}
