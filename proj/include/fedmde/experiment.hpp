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

// Experiment orchestration: configuration, the run ledger, checkpoint/resume,
// the (C, F, E) grid and plot data.
//
// Config files are INI with one section per area:
//
//   [experiment]  name, scenario, seed, selection, threads, log_level,
//                 checkpoint_every, output_dir
//   [federation]  participants, fraction, local_epochs, rounds,
//                 centralized_epochs
//   [training]    learning_rate, batch_size, batches_per_epoch, ranking_pairs
//   [losses]      alpha, beta, gamma, delta, epsilon, lambda_i, lambda_s,
//                 tau, margin, edge_percentile
//   [model]       depth_channels, pose_channels, pose_scale
//   [data]        source (synthetic | kitti), pseudo_depth, pseudo_noise,
//                 pseudo_noise_std, pseudo_blur, kitti_root, kitti_train_split,
//                 kitti_val_split, kitti_width, kitti_height, kitti_sources
//   [synthetic]   width, height, train_drives, val_drives, sources,
//                 texture_frequency, speed, yaw_amplitude, lateral_amplitude,
//                 boxes, street_walls, fog_density, supersample
//
// Unknown sections or keys are errors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedmde/dataset.hpp"
#include "fedmde/federation.hpp"
#include "fedmde/kitti_dataset.hpp"
#include "fedmde/synthetic_scene.hpp"
#include "fedmde/training.hpp"

namespace fedmde {

inline constexpr const char* kConfigEnvVar = "FEDMDE_CONFIG";

struct DataConfig {
  std::string source = "synthetic";
  bool pseudo_depth = true;
  // Analytic prior on synthetic data.
  double pseudo_noise = 0.0;
  double pseudo_noise_std = 0.05;
  double pseudo_blur = 2.0;
  SyntheticSceneSpec train_scene;
  SyntheticSceneSpec validation_scene;
  std::string kitti_root;
  std::string kitti_train_split;
  std::string kitti_val_split;
  KittiOptions kitti;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Scenario scenario = Scenario::kFederatedIid;
  std::uint64_t seed = 0;
  std::string selection = "auto";  // auto | independent | cycle
  std::int64_t threads = 1;
  std::string log_level = "info";
  std::int64_t checkpoint_every = 1;
  std::filesystem::path output_dir = "runs/experiment";

  RoundConfig federation;
  std::int64_t centralized_epochs = 1;
  TrainingOptions training;
  ModelConfig model;
  DataConfig data;

  ExperimentConfig();

  /// Throws ConfigError naming the offending key.
  void validate() const;

  /// Sets one value from text, e.g. set("federation", "rounds", "12").
  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& section, const std::string& key, const std::string& value);

  /// section -> key -> value, for every known key.
  nlohmann::json to_json() const;
  /// Hex digest of to_json(); excludes output_dir so reruns elsewhere match.
  std::string hash() const;

  SelectionPolicy selection_policy() const;

  static ExperimentConfig from_ini_file(const std::filesystem::path& path);
  static ExperimentConfig from_ini_string(const std::string& text);
  void write_ini(const std::filesystem::path& path) const;
};

/// Records of one run, in file order. Every record carries "type",
/// "config_hash" and a wall-clock "timestamp".
struct RunLedger {
  std::filesystem::path path;
  std::vector<nlohmann::json> records;

  static RunLedger read(const std::filesystem::path& path);
  /// Records of the given type ("run_start", "round", "epoch", "run_end").
  std::vector<nlohmann::json> of_type(const std::string& type) const;
  bool finished() const;
};

inline constexpr const char* kLedgerFile = "ledger.ndjson";

/// Runs the configured scenario end to end in config.output_dir. Refuses to
/// start over an existing ledger; use resume_experiment for that.
RunLedger run_experiment(const ExperimentConfig& config);

/// Continues the run in `output_dir` from its last checkpoint. A finished run
/// is returned unchanged.
RunLedger resume_experiment(const std::filesystem::path& output_dir);

struct GridAxes {
  std::vector<std::int64_t> participants;
  std::vector<Fraction> fractions;
  std::vector<std::int64_t> local_epochs;

  std::size_t size() const {
    return participants.size() * fractions.size() * local_epochs.size();
  }
};

struct GridRow {
  std::int64_t participants = 0;
  Fraction fraction;
  std::int64_t local_epochs = 0;
  std::filesystem::path ledger;
  bool ok = false;
  std::string error;
  double best_abs_rel = 0.0;
  std::int64_t best_round = 0;
  std::uint64_t w_max = 0;
  double w_min = 0.0;
  std::uint64_t steps = 0;
};

/// One federated run per (C, F, E) combination under base.output_dir, and a
/// summary.csv next to them. A failing combination is recorded and the grid
/// moves on.
std::vector<GridRow> run_ablation_grid(const ExperimentConfig& base, const GridAxes& axes);

/// Writes loss_vs_steps.csv, loss_vs_rounds.csv, cost_vs_rounds.csv and
/// best_loss_by_cf_e.csv into `out_dir`. Throws std::invalid_argument when
/// given no ledgers.
void emit_plot_data(const std::vector<RunLedger>& ledgers, const std::filesystem::path& out_dir);

}  // namespace fedmde
