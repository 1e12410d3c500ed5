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

#include "fedmde/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fedmde/checkpoint.hpp"
#include "fedmde/errors.hpp"
#include "fedmde/log.hpp"
#include "fedmde/seeding.hpp"

namespace fedmde {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

std::int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const auto out = std::stoll(v, &pos);
    if (pos == v.size()) return out;
  } catch (const std::exception&) {
  }
  bad_value(key, v, "an integer");
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      const auto out = std::stoull(v, &pos);
      if (pos == v.size()) return out;
    }
  } catch (const std::exception&) {
  }
  bad_value(key, v, "a non-negative integer");
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const auto out = std::stod(v, &pos);
    if (pos == v.size() && std::isfinite(out)) return out;
  } catch (const std::exception&) {
  }
  bad_value(key, v, "a finite number");
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::int64_t> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<std::int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    out.push_back(parse_int(item, key));
  }
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string join_ints(const std::vector<std::int64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<json(const ExperimentConfig&)> get;
};

#define FEDMDE_FIELD(sec, name, member, parse)                                            \
  Field {                                                                                 \
    sec, name,                                                                            \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse(v, sec "." name); }, \
        [](const ExperimentConfig& c) { return json(c.member); }                          \
  }

std::string parse_string(const std::string& v, const std::string&) { return v; }

// Scene keys apply to the training and validation scenes alike.
#define FEDMDE_SCENE_FIELD(name, member, parse)                                   \
  Field {                                                                         \
    "synthetic", name,                                                            \
        [](ExperimentConfig& c, const std::string& v) {                           \
          c.data.train_scene.member = c.data.validation_scene.member =            \
              parse(v, "synthetic." name);                                        \
        },                                                                        \
        [](const ExperimentConfig& c) { return json(c.data.train_scene.member); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FEDMDE_FIELD("experiment", "name", name, parse_string),
      Field{"experiment", "scenario",
            [](ExperimentConfig& c, const std::string& v) {
              try {
                c.scenario = parse_scenario(v);
              } catch (const std::invalid_argument&) {
                bad_value("experiment.scenario", v, "CT, FT-IID or FT-NIID");
              }
            },
            [](const ExperimentConfig& c) { return json(std::string(to_string(c.scenario))); }},
      FEDMDE_FIELD("experiment", "seed", seed, parse_u64),
      FEDMDE_FIELD("experiment", "selection", selection, parse_string),
      FEDMDE_FIELD("experiment", "threads", threads, parse_int),
      FEDMDE_FIELD("experiment", "log_level", log_level, parse_string),
      FEDMDE_FIELD("experiment", "checkpoint_every", checkpoint_every, parse_int),
      Field{"experiment", "output_dir",
            [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
            [](const ExperimentConfig& c) { return json(c.output_dir.string()); }},

      FEDMDE_FIELD("federation", "participants", federation.participants, parse_int),
      Field{"federation", "fraction",
            [](ExperimentConfig& c, const std::string& v) {
              try {
                c.federation.fraction = Fraction::parse(v);
              } catch (const std::invalid_argument&) {
                bad_value("federation.fraction", v, "a fraction in (0, 1] such as 1/3 or 0.5");
              }
            },
            [](const ExperimentConfig& c) { return json(c.federation.fraction.to_string()); }},
      FEDMDE_FIELD("federation", "local_epochs", federation.local_epochs, parse_int),
      FEDMDE_FIELD("federation", "rounds", federation.rounds, parse_int),
      FEDMDE_FIELD("federation", "centralized_epochs", centralized_epochs, parse_int),

      FEDMDE_FIELD("training", "learning_rate", training.learning_rate, parse_double),
      FEDMDE_FIELD("training", "batch_size", training.batch_size, parse_int),
      FEDMDE_FIELD("training", "batches_per_epoch", training.batches_per_epoch, parse_int),
      FEDMDE_FIELD("training", "ranking_pairs", training.ranking_pairs, parse_int),

      FEDMDE_FIELD("losses", "alpha", training.objective.weights.alpha, parse_double),
      FEDMDE_FIELD("losses", "beta", training.objective.weights.beta, parse_double),
      FEDMDE_FIELD("losses", "gamma", training.objective.weights.gamma, parse_double),
      FEDMDE_FIELD("losses", "delta", training.objective.weights.delta, parse_double),
      FEDMDE_FIELD("losses", "epsilon", training.objective.weights.epsilon, parse_double),
      FEDMDE_FIELD("losses", "lambda_i", training.objective.weights.lambda_i, parse_double),
      FEDMDE_FIELD("losses", "lambda_s", training.objective.weights.lambda_s, parse_double),
      FEDMDE_FIELD("losses", "tau", training.objective.ranking.tau, parse_double),
      FEDMDE_FIELD("losses", "margin", training.objective.ranking.margin, parse_double),
      FEDMDE_FIELD("losses", "edge_percentile", training.objective.edges.percentile,
                   parse_double),

      FEDMDE_FIELD("model", "depth_channels", model.depth.base_channels, parse_int),
      FEDMDE_FIELD("model", "pose_channels", model.pose.base_channels, parse_int),
      FEDMDE_FIELD("model", "pose_scale", model.pose.output_scale, parse_double),

      FEDMDE_FIELD("data", "source", data.source, parse_string),
      FEDMDE_FIELD("data", "pseudo_depth", data.pseudo_depth, parse_bool),
      FEDMDE_FIELD("data", "pseudo_noise", data.pseudo_noise, parse_double),
      FEDMDE_FIELD("data", "pseudo_noise_std", data.pseudo_noise_std, parse_double),
      FEDMDE_FIELD("data", "pseudo_blur", data.pseudo_blur, parse_double),
      FEDMDE_FIELD("data", "kitti_root", data.kitti_root, parse_string),
      FEDMDE_FIELD("data", "kitti_train_split", data.kitti_train_split, parse_string),
      FEDMDE_FIELD("data", "kitti_val_split", data.kitti_val_split, parse_string),
      FEDMDE_FIELD("data", "kitti_width", data.kitti.width, parse_int),
      FEDMDE_FIELD("data", "kitti_height", data.kitti.height, parse_int),
      FEDMDE_FIELD("data", "kitti_sources", data.kitti.sources, parse_int),

      FEDMDE_SCENE_FIELD("width", width, parse_int),
      FEDMDE_SCENE_FIELD("height", height, parse_int),
      Field{"synthetic", "train_drives",
            [](ExperimentConfig& c, const std::string& v) {
              c.data.train_scene.drive_frames = parse_int_list(v, "synthetic.train_drives");
            },
            [](const ExperimentConfig& c) {
              return json(join_ints(c.data.train_scene.drive_frames));
            }},
      Field{"synthetic", "val_drives",
            [](ExperimentConfig& c, const std::string& v) {
              c.data.validation_scene.drive_frames = parse_int_list(v, "synthetic.val_drives");
            },
            [](const ExperimentConfig& c) {
              return json(join_ints(c.data.validation_scene.drive_frames));
            }},
      FEDMDE_SCENE_FIELD("sources", sources, parse_int),
      FEDMDE_SCENE_FIELD("texture_frequency", texture_frequency, parse_double),
      FEDMDE_SCENE_FIELD("speed", speed, parse_double),
      FEDMDE_SCENE_FIELD("yaw_amplitude", yaw_amplitude, parse_double),
      FEDMDE_SCENE_FIELD("lateral_amplitude", lateral_amplitude, parse_double),
      FEDMDE_SCENE_FIELD("boxes", boxes, parse_int),
      FEDMDE_SCENE_FIELD("street_walls", street_walls, parse_bool),
      FEDMDE_SCENE_FIELD("fog_density", fog_density, parse_double),
      FEDMDE_SCENE_FIELD("supersample", supersample, parse_int),
  };
  return table;
}

#undef FEDMDE_FIELD
#undef FEDMDE_SCENE_FIELD

template <typename Fn>
void as_config_error(const std::string& what, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  data.train_scene.drive_frames = {20, 14, 10, 6};
  data.validation_scene.drive_frames = {8};
  data.validation_scene.drive_prefix = "val";
}

void ExperimentConfig::set(const std::string& section, const std::string& key,
                           const std::string& value) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + section + "." + key);
}

json ExperimentConfig::to_json() const {
  json out = json::object();
  for (const auto& f : fields()) out[f.section][f.key] = f.get(*this);
  return out;
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j["experiment"].erase("output_dir");
  j["experiment"].erase("log_level");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

SelectionPolicy ExperimentConfig::selection_policy() const {
  if (selection == "independent") return SelectionPolicy::kIndependent;
  if (selection == "cycle") return SelectionPolicy::kCycle;
  return scenario == Scenario::kFederatedNiid ? SelectionPolicy::kCycle
                                              : SelectionPolicy::kIndependent;
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("experiment.name: must be non-empty and contain no path separators");
  }
  if (selection != "auto" && selection != "independent" && selection != "cycle") {
    bad_value("experiment.selection", selection, "auto, independent or cycle");
  }
  if (threads < 1) bad_value("experiment.threads", std::to_string(threads), "at least 1");
  if (checkpoint_every < 1) {
    bad_value("experiment.checkpoint_every", std::to_string(checkpoint_every), "at least 1");
  }
  static const char* levels[] = {"trace", "debug", "info", "warn", "error", "off"};
  if (std::find(std::begin(levels), std::end(levels), log_level) == std::end(levels)) {
    bad_value("experiment.log_level", log_level, "debug, info, warn, error or off");
  }
  if (output_dir.empty()) throw ConfigError("experiment.output_dir: must be set");
  const auto positive = [](const char* key, std::int64_t v) {
    if (v < 1) bad_value(key, std::to_string(v), "at least 1");
  };
  positive("federation.participants", federation.participants);
  positive("federation.local_epochs", federation.local_epochs);
  positive("federation.rounds", federation.rounds);
  positive("training.batch_size", training.batch_size);
  positive("training.batches_per_epoch", training.batches_per_epoch);
  if (!(training.learning_rate >= 0.0) || !std::isfinite(training.learning_rate)) {
    bad_value("training.learning_rate", std::to_string(training.learning_rate),
              "finite and non-negative");
  }
  as_config_error("federation", [&] { federation.validate(); });
  if (centralized_epochs < 1) {
    bad_value("federation.centralized_epochs", std::to_string(centralized_epochs), "at least 1");
  }
  as_config_error("training", [&] { training.validate(); });
  if (model.depth.base_channels < 1 || model.pose.base_channels < 1) {
    throw ConfigError("model: channel counts must be positive");
  }
  if (!(model.pose.output_scale > 0.0)) throw ConfigError("model.pose_scale: must be positive");
  if (!(training.objective.ranking.tau >= 0.0) || !(training.objective.ranking.margin >= 0.0)) {
    throw ConfigError("losses: tau and margin must be non-negative");
  }
  const double pct = training.objective.edges.percentile;
  if (!(pct > 0.0 && pct < 1.0)) bad_value("losses.edge_percentile", std::to_string(pct), "(0, 1)");

  if (data.source == "synthetic") {
    as_config_error("synthetic", [&] {
      data.train_scene.validate();
      data.validation_scene.validate();
    });
    if (data.train_scene.width % 8 != 0 || data.train_scene.height % 8 != 0) {
      throw ConfigError("synthetic: width and height must be multiples of 8");
    }
    if (scenario == Scenario::kFederatedNiid &&
        static_cast<std::int64_t>(data.train_scene.drive_frames.size()) <
            federation.participants) {
      throw ConfigError("synthetic.train_drives: FT-NIID needs at least one drive per participant");
    }
  } else if (data.source == "kitti") {
    if (data.kitti_root.empty() || data.kitti_train_split.empty() ||
        data.kitti_val_split.empty()) {
      throw ConfigError("data: kitti_root, kitti_train_split and kitti_val_split are required");
    }
    if (data.kitti.width % 8 != 0 || data.kitti.height % 8 != 0) {
      throw ConfigError("data: kitti_width and kitti_height must be multiples of 8");
    }
    if (data.kitti.sources != 1 && data.kitti.sources != 2) {
      bad_value("data.kitti_sources", std::to_string(data.kitti.sources), "1 or 2");
    }
  } else {
    bad_value("data.source", data.source, "synthetic or kitti");
  }
  if (!(data.pseudo_noise >= 0.0 && data.pseudo_noise < 1.0)) {
    bad_value("data.pseudo_noise", std::to_string(data.pseudo_noise), "[0, 1)");
  }
  if (!(data.pseudo_noise_std >= 0.0) || !(data.pseudo_blur >= 0.0)) {
    throw ConfigError("data: pseudo_noise_std and pseudo_blur must be non-negative");
  }
}

ExperimentConfig ExperimentConfig::from_ini_string(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : body) config.set(section, key, value.data());
  }
  return config;
}

ExperimentConfig ExperimentConfig::from_ini_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_ini_string(ss.str());
}

void ExperimentConfig::write_ini(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::string current;
  for (const auto& f : fields()) {
    if (current != f.section) {
      if (!current.empty()) out << '\n';
      current = f.section;
      out << '[' << current << "]\n";
    }
    const auto v = f.get(*this);
    out << f.key << " = " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
}

// ---------------------------------------------------------------- ledger

RunLedger RunLedger::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read ledger " + path.string());
  RunLedger ledger;
  ledger.path = path;
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      ledger.records.push_back(json::parse(lines[i]));
    } catch (const json::parse_error&) {
      // A torn final line is what a crash mid-append leaves behind.
      if (i + 1 == lines.size()) {
        log::warn("ledger " + path.string() + ": dropping incomplete last record");
        break;
      }
      throw IngestionError("ledger " + path.string() + ": malformed record " +
                           std::to_string(i + 1));
    }
  }
  return ledger;
}

std::vector<json> RunLedger::of_type(const std::string& type) const {
  std::vector<json> out;
  for (const auto& r : records) {
    if (r.value("type", "") == type) out.push_back(r);
  }
  return out;
}

bool RunLedger::finished() const { return !of_type("run_end").empty(); }

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() %
      1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

json metrics_json(const DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel},   {"rms", m.rms},
          {"rms_log", m.rms_log}, {"delta1", m.delta1},   {"delta2", m.delta2},
          {"delta3", m.delta3},   {"pixels", m.pixels}};
}

json breakdown_json(const LossBreakdown& b) {
  return {{"l_p", b.l_p},     {"l_p_masked", b.l_p_masked}, {"l_g", b.l_g},
          {"l_n", b.l_n},     {"l_cdr", b.l_cdr},           {"l_ern", b.l_ern},
          {"l_self", b.l_self}};
}

json epoch_summary_json(const EpochSummary& s) {
  return {{"steps", s.steps},         {"skipped", s.skipped},     {"first_loss", s.first_loss},
          {"last_loss", s.last_loss}, {"mean_loss", s.mean_loss}, {"terms", breakdown_json(s.mean_terms)}};
}

class LedgerWriter {
 public:
  LedgerWriter(RunLedger& ledger, std::string hash) : ledger_(ledger), hash_(std::move(hash)) {
    out_.open(ledger_.path, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open ledger " + ledger_.path.string());
  }

  void append(json record) {
    record["config_hash"] = hash_;
    record["timestamp"] = utc_timestamp();
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("failed writing ledger " + ledger_.path.string());
    ledger_.records.push_back(std::move(record));
  }

 private:
  RunLedger& ledger_;
  std::string hash_;
  std::ofstream out_;
};

void write_text_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct ExperimentData {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<torch::Tensor> pseudo;
};

ExperimentData load_data(const ExperimentConfig& c) {
  ExperimentData d;
  if (c.data.source == "synthetic") {
    auto train = generate_synthetic_scene(c.data.train_scene, derive_seed(c.seed, "train-scene"));
    auto val =
        generate_synthetic_scene(c.data.validation_scene, derive_seed(c.seed, "val-scene"));
    d.train = std::move(train.samples);
    d.validation = std::move(val.samples);
    if (c.data.pseudo_depth) {
      AnalyticPseudoDepth provider(std::move(train.depth_by_frame),
                                   {c.data.pseudo_noise, c.data.pseudo_noise_std,
                                    c.data.pseudo_blur, derive_seed(c.seed, "pseudo-depth")});
      d.pseudo = precompute_pseudo_depths(&provider, d.train);
    }
  } else {
    d.train = load_kitti_layout(c.data.kitti_root, c.data.kitti_train_split, c.data.kitti);
    d.validation = load_kitti_layout(c.data.kitti_root, c.data.kitti_val_split, c.data.kitti);
    if (c.data.pseudo_depth) {
      FilePseudoDepth provider(c.data.kitti_root, c.data.kitti.width, c.data.kitti.height);
      d.pseudo = precompute_pseudo_depths(&provider, d.train);
    }
  }
  if (d.train.empty()) throw IngestionError("no training frames");
  if (std::none_of(d.validation.begin(), d.validation.end(),
                   [](const Sample& s) { return s.ground_truth.has_value(); })) {
    throw IngestionError("no validation frame has ground truth");
  }
  return d;
}

PartitionPlan make_plan(const ExperimentConfig& c, std::span<const Sample> train) {
  const auto seed = derive_seed(c.seed, "partition");
  PartitionPlan plan;
  switch (c.scenario) {
    case Scenario::kCentralized:
      plan = partition_centralized(train.size());
      break;
    case Scenario::kFederatedIid:
      plan = partition_iid(train.size(), c.federation.participants, seed);
      break;
    case Scenario::kFederatedNiid:
      try {
        plan = partition_niid(train, c.federation.participants, seed);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("partition: ") + e.what());
      }
      break;
  }
  for (std::size_t p = 0; p < plan.assignment.size(); ++p) {
    if (plan.assignment[p].empty()) {
      throw ConfigError("partition: participant " + std::to_string(p) + " received no samples");
    }
  }
  return plan;
}

// Checkpoints live in <out>/checkpoints/<tag>/ and LATEST names the newest
// complete one. Directories are written in full before LATEST moves.
struct CheckpointPaths {
  fs::path root;
  fs::path dir(std::int64_t index) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06lld", static_cast<long long>(index));
    return root / buf;
  }
  fs::path latest() const { return root / "LATEST"; }
};

std::optional<std::pair<std::int64_t, fs::path>> latest_checkpoint(const CheckpointPaths& paths) {
  std::ifstream in(paths.latest());
  std::int64_t index = 0;
  if (!(in >> index)) return std::nullopt;
  return std::make_pair(index, paths.dir(index));
}

void commit_checkpoint(const CheckpointPaths& paths, std::int64_t index) {
  write_text_atomic(paths.latest(), std::to_string(index) + "\n");
  for (const auto& entry : fs::directory_iterator(paths.root)) {
    if (entry.is_directory() && entry.path() != paths.dir(index)) fs::remove_all(entry.path());
  }
}

void save_model(const fs::path& dir, const ExperimentConfig& c, const ModelParameters& params,
                std::int64_t index) {
  fs::create_directories(dir);
  save_checkpoint(dir / "depth.ckpt", params.depth, c.model.depth.architecture_id(), index);
  save_checkpoint(dir / "pose.ckpt", params.pose, c.model.pose.architecture_id(), index);
}

ModelParameters load_model(const fs::path& dir, const ExperimentConfig& c, std::int64_t index) {
  auto depth = load_checkpoint(dir / "depth.ckpt");
  auto pose = load_checkpoint(dir / "pose.ckpt");
  if (depth.manifest.architecture != c.model.depth.architecture_id() ||
      pose.manifest.architecture != c.model.pose.architecture_id()) {
    throw IngestionError("checkpoint architecture does not match the config");
  }
  if (depth.manifest.round != index || pose.manifest.round != index) {
    throw IngestionError("checkpoint in " + dir.string() + " is from a different step");
  }
  return {std::move(depth.params), std::move(pose.params)};
}

std::uint64_t ju64(const json& j, const char* key) { return j.at(key).get<std::uint64_t>(); }

CostReport federated_cost(const ExperimentConfig& c, const RunLedger& ledger,
                          std::uint64_t depth_bytes, std::uint64_t pose_bytes) {
  const auto omega = depth_bytes + pose_bytes;
  std::vector<std::vector<ParticipantSteps>> rounds;
  CostReport cost;
  for (const auto& r : ledger.of_type("round")) {
    auto& steps = rounds.emplace_back();
    for (const auto& s : r.at("steps")) {
      steps.push_back({s.at("participant").get<std::int64_t>(), ju64(s, "epochs"),
                       ju64(s, "batches")});
      cost.steps_per_participant[steps.back().participant] +=
          steps.back().epochs * steps.back().batches;
    }
  }
  const auto t = static_cast<std::uint64_t>(c.federation.rounds);
  const auto n = static_cast<std::uint64_t>(c.federation.participants);
  cost.w_max = comm_upper_bound(t, n, omega);
  cost.w_min = comm_lower_bound(t, n, c.federation.fraction, omega);
  cost.per_participant_per_round = comm_per_participant_round(omega);
  cost.steps_total = steps_federated(rounds);
  cost.depth_bytes = depth_bytes;
  cost.pose_bytes = pose_bytes;
  return cost;
}

json cost_json(const CostReport& c) {
  json per = json::object();
  for (const auto& [id, steps] : c.steps_per_participant) per[std::to_string(id)] = steps;
  return {{"w_max", c.w_max},
          {"w_min", c.w_min},
          {"w_max_gb", static_cast<double>(c.w_max) / kBytesPerGigabyte},
          {"w_min_gb", c.w_min / kBytesPerGigabyte},
          {"per_participant_per_round", c.per_participant_per_round},
          {"steps_total", c.steps_total},
          {"steps_per_participant", per},
          {"depth_bytes", c.depth_bytes},
          {"pose_bytes", c.pose_bytes}};
}

class LedgerObserver final : public FederationObserver {
 public:
  LedgerObserver(const ExperimentConfig& c, LedgerWriter& writer, const CheckpointPaths& paths,
                 SelfSupervisedUpdater& updater)
      : c_(c), writer_(writer), paths_(paths), updater_(updater) {}

  void on_round(const RoundRecord& r, const FederationState& state) override {
    json steps = json::array();
    for (const auto& s : r.steps) {
      steps.push_back({{"participant", s.participant}, {"epochs", s.epochs}, {"batches", s.batches}});
    }
    json reports = json::array();
    for (const auto& p : r.reports) {
      reports.push_back({{"participant", p.participant},
                         {"train_loss", p.train_loss},
                         {"val_abs_rel", p.val_abs_rel}});
    }
    writer_.append({{"type", "round"},
                    {"scenario", std::string(to_string(c_.scenario))},
                    {"round", r.round},
                    {"selected", r.selected},
                    {"failed", r.failed},
                    {"aborted", r.aborted},
                    {"global_version", r.global_version},
                    {"steps", steps},
                    {"participants", reports},
                    {"mean_train_loss", r.mean_train_loss},
                    {"validation", metrics_json(r.validation)},
                    {"val_abs_rel", r.validation.abs_rel},
                    {"best_abs_rel", r.best_abs_rel},
                    {"cumulative_steps", r.cumulative_steps},
                    {"cumulative_w_max", r.cumulative_w_max},
                    {"cumulative_w_min", r.cumulative_w_min},
                    {"cumulative_bytes", r.cumulative_bytes}});
    log::info(c_.name + ": round " + std::to_string(r.round) + "/" +
              std::to_string(c_.federation.rounds) +
              " val AbsRel " + std::to_string(r.validation.abs_rel));
    if (r.round % c_.checkpoint_every == 0 || r.round == c_.federation.rounds) {
      const auto dir = paths_.dir(r.round);
      save_model(dir, c_, state.global.params, r.round);
      updater_.save_state(dir / "participants");
      commit_checkpoint(paths_, r.round);
    }
  }

 private:
  const ExperimentConfig& c_;
  LedgerWriter& writer_;
  const CheckpointPaths& paths_;
  SelfSupervisedUpdater& updater_;
};

// Resume point: index of the last checkpointed round/epoch, 0 for a fresh run.
RunLedger execute(const ExperimentConfig& c, bool resume) {
  c.validate();
  log::set_level(c.log_level);
  torch::set_num_threads(static_cast<int>(c.threads));

  const fs::path out = c.output_dir;
  fs::create_directories(out);
  RunLedger ledger;
  ledger.path = out / kLedgerFile;
  const CheckpointPaths paths{out / "checkpoints"};

  std::int64_t start = 0;
  fs::path start_dir;
  if (resume) {
    ledger = RunLedger::read(ledger.path);
    if (ledger.finished()) return ledger;
    if (auto latest = latest_checkpoint(paths)) std::tie(start, start_dir) = *latest;
    // Drop records past the checkpoint; those steps are redone.
    const char* index_key = c.scenario == Scenario::kCentralized ? "epoch" : "round";
    std::vector<json> kept;
    for (const auto& r : ledger.records) {
      if (r.contains(index_key) && r.at(index_key).get<std::int64_t>() > start) break;
      kept.push_back(r);
    }
    ledger.records = std::move(kept);
    std::string text;
    for (const auto& r : ledger.records) text += r.dump() + "\n";
    write_text_atomic(ledger.path, text);
    log::info(c.name + ": resuming after step " + std::to_string(start));
  } else if (fs::exists(ledger.path) && fs::file_size(ledger.path) > 0) {
    throw ConfigError("output directory " + out.string() +
                      " already holds a run; use resume to continue it");
  }

  auto data = load_data(c);
  const auto plan = make_plan(c, data.train);
  write_text_atomic(out / "partition.json", plan.to_json());
  if (!resume) c.write_ini(out / "config.ini");
  fs::create_directories(paths.root);

  const auto initial = initial_parameters(c.model, derive_seed(c.seed, "model"));
  const auto depth_bytes = static_cast<std::uint64_t>(initial.depth.total_bytes());
  const auto pose_bytes = static_cast<std::uint64_t>(initial.pose.total_bytes());
  const TrainingData training_data{data.train, data.pseudo};
  const Evaluator evaluate = [&](const ModelParameters& p) {
    return evaluate_parameters(c.model, p, data.validation);
  };

  LedgerWriter writer(ledger, c.hash());
  if (ledger.of_type("run_start").empty()) {
    writer.append({{"type", "run_start"},
                   {"name", c.name},
                   {"scenario", std::string(to_string(c.scenario))},
                   {"config", c.to_json()},
                   {"partition_counts", plan.counts()},
                   {"train_samples", data.train.size()},
                   {"validation_samples", data.validation.size()},
                   {"depth_bytes", depth_bytes},
                   {"pose_bytes", pose_bytes},
                   {"omega_bytes", depth_bytes + pose_bytes}});
  }

  json end{{"type", "run_end"}, {"status", "completed"}};
  if (c.scenario == Scenario::kCentralized) {
    LocalTrainer trainer(c.model, c.training, participant_seed(c.seed, 0));
    CentralizedState state;
    if (start > 0) {
      trainer.set_parameters(load_model(start_dir, c, start));
      trainer.load_optimizer(start_dir / "trainer.optim");
      trainer.set_epochs_completed(start);
      const auto last = ledger.of_type("epoch").back();
      state.completed_epochs = start;
      state.cumulative_steps = ju64(last, "cumulative_steps");
      state.best_abs_rel = last.at("best_abs_rel").get<double>();
    } else {
      trainer.set_parameters(initial);
    }
    const auto& ids = plan.assignment.front();
    auto on_epoch = [&](const EpochRecord& r, const CentralizedState&) {
      writer.append({{"type", "epoch"},
                     {"scenario", "CT"},
                     {"epoch", r.epoch},
                     {"steps", r.steps},
                     {"cumulative_steps", r.cumulative_steps},
                     {"train", epoch_summary_json(r.train)},
                     {"validation", metrics_json(r.validation)},
                     {"val_abs_rel", r.validation.abs_rel},
                     {"best_abs_rel", r.best_abs_rel}});
      log::info(c.name + ": epoch " + std::to_string(r.epoch) + "/" +
                std::to_string(c.centralized_epochs) + " val AbsRel " +
                std::to_string(r.validation.abs_rel));
      if (r.epoch % c.checkpoint_every == 0 || r.epoch == c.centralized_epochs) {
        const auto dir = paths.dir(r.epoch);
        save_model(dir, c, trainer.parameters(), r.epoch);
        trainer.save_optimizer(dir / "trainer.optim");
        commit_checkpoint(paths, r.epoch);
      }
    };
    state = run_centralized(c.centralized_epochs, trainer, training_data, ids, state, evaluate,
                            on_epoch);
    CostReport cost;
    cost.steps_total = state.cumulative_steps;
    cost.steps_per_participant[0] = state.cumulative_steps;
    cost.depth_bytes = depth_bytes;
    cost.pose_bytes = pose_bytes;
    end["cost"] = cost_json(cost);
    end["final"] = metrics_json(evaluate(trainer.parameters()));
    end["best_abs_rel"] = state.best_abs_rel;
  } else {
    SelfSupervisedUpdater updater(c.model, c.training, training_data, c.seed, evaluate);
    FederationState state;
    if (start > 0) {
      state.global.params = load_model(start_dir, c, start);
      updater.load_state(start_dir / "participants");
      const auto last = ledger.of_type("round").back();
      state.global.version = last.at("global_version").get<std::int64_t>();
      state.completed_rounds = start;
      state.cumulative_steps = ju64(last, "cumulative_steps");
      state.cumulative_bytes = ju64(last, "cumulative_bytes");
      state.best_abs_rel = last.at("best_abs_rel").get<double>();
    } else {
      state.global.params = initial;
    }
    FederationSetup setup{c.federation, c.selection_policy(), derive_seed(c.seed, "selection"),
                          &plan};
    LedgerObserver observer(c, writer, paths, updater);
    state = run_federation(setup, std::move(state), updater, evaluate, &observer);
    end["cost"] = cost_json(federated_cost(c, ledger, depth_bytes, pose_bytes));
    end["final"] = metrics_json(evaluate(state.global.params));
    end["best_abs_rel"] = state.best_abs_rel;
  }
  writer.append(std::move(end));
  emit_plot_data({ledger}, out);
  return ledger;
}

}  // namespace

RunLedger run_experiment(const ExperimentConfig& config) { return execute(config, false); }

RunLedger resume_experiment(const fs::path& output_dir) {
  const auto ini = output_dir / "config.ini";
  if (!fs::exists(ini)) throw ConfigError("no run to resume in " + output_dir.string());
  auto config = ExperimentConfig::from_ini_file(ini);
  config.output_dir = output_dir;
  if (!fs::exists(output_dir / kLedgerFile)) return execute(config, false);
  return execute(config, true);
}

// ---------------------------------------------------------------- grid

namespace {

std::string fraction_tag(const Fraction& f) {
  return std::to_string(f.numerator) + "-" + std::to_string(f.denominator);
}

std::string csv_number(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace

std::vector<GridRow> run_ablation_grid(const ExperimentConfig& base, const GridAxes& axes) {
  if (axes.size() == 0) throw ConfigError("grid: every axis needs at least one value");
  if (base.scenario == Scenario::kCentralized) {
    throw ConfigError("grid: the ablation grid varies federated settings; pick FT-IID or FT-NIID");
  }
  // Check every combination before spending compute on any of them.
  std::vector<ExperimentConfig> children;
  for (auto cnt : axes.participants) {
    for (const auto& f : axes.fractions) {
      for (auto e : axes.local_epochs) {
        auto child = base;
        child.federation.participants = cnt;
        child.federation.fraction = f;
        child.federation.local_epochs = e;
        child.name = base.name + "_C" + std::to_string(cnt) + "_F" + fraction_tag(f) + "_E" +
                     std::to_string(e);
        child.output_dir = base.output_dir / child.name;
        child.validate();
        children.push_back(std::move(child));
      }
    }
  }

  std::vector<GridRow> rows;
  std::vector<RunLedger> finished;
  for (const auto& child : children) {
    GridRow row;
    row.participants = child.federation.participants;
    row.fraction = child.federation.fraction;
    row.local_epochs = child.federation.local_epochs;
    row.ledger = child.output_dir / kLedgerFile;
    try {
      auto ledger = fs::exists(child.output_dir / "config.ini")
                        ? resume_experiment(child.output_dir)
                        : run_experiment(child);
      const auto end = ledger.of_type("run_end").back();
      const auto cost = end.at("cost");
      row.w_max = ju64(cost, "w_max");
      row.w_min = cost.at("w_min").get<double>();
      row.steps = ju64(cost, "steps_total");
      row.best_abs_rel = std::numeric_limits<double>::infinity();
      for (const auto& r : ledger.of_type("round")) {
        const auto v = r.at("val_abs_rel").get<double>();
        if (v < row.best_abs_rel) {
          row.best_abs_rel = v;
          row.best_round = r.at("round").get<std::int64_t>();
        }
      }
      row.ok = true;
      finished.push_back(std::move(ledger));
    } catch (const std::exception& e) {
      log::warn("grid: " + child.name + " failed: " + e.what());
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  fs::create_directories(base.output_dir);
  std::ofstream csv(base.output_dir / "summary.csv");
  csv << "participants,fraction,cf,local_epochs,status,best_abs_rel,best_round,w_max_bytes,"
         "w_min_bytes,steps,ledger\n";
  for (const auto& r : rows) {
    csv << r.participants << ',' << r.fraction.to_string() << ','
        << csv_number(static_cast<double>(r.participants) * r.fraction.value()) << ','
        << r.local_epochs << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      csv << csv_number(r.best_abs_rel) << ',' << r.best_round << ',' << r.w_max << ','
          << csv_number(r.w_min) << ',' << r.steps;
    } else {
      csv << ",,,,";
    }
    csv << ',' << r.ledger.string() << '\n';
  }
  if (!finished.empty()) emit_plot_data(finished, base.output_dir);
  return rows;
}

// ---------------------------------------------------------------- plot data

void emit_plot_data(const std::vector<RunLedger>& ledgers, const fs::path& out_dir) {
  if (ledgers.empty()) throw std::invalid_argument("plot data: no ledgers given");
  fs::create_directories(out_dir);
  std::ofstream steps(out_dir / "loss_vs_steps.csv");
  std::ofstream rounds(out_dir / "loss_vs_rounds.csv");
  std::ofstream cost(out_dir / "cost_vs_rounds.csv");
  std::ofstream best(out_dir / "best_loss_by_cf_e.csv");
  const char* id_cols = "run,scenario,participants,fraction,local_epochs";
  steps << id_cols << ",index,cumulative_steps,val_abs_rel,best_abs_rel\n";
  rounds << id_cols << ",round,val_abs_rel,best_abs_rel,mean_train_loss\n";
  cost << id_cols << ",round,w_max_bytes,w_min_bytes,bytes_moved,cumulative_steps\n";
  best << id_cols << ",cf,best_abs_rel,best_index,w_max_bytes,w_min_bytes,steps\n";

  for (const auto& ledger : ledgers) {
    const auto starts = ledger.of_type("run_start");
    if (starts.empty()) {
      throw std::invalid_argument("plot data: ledger " + ledger.path.string() +
                                  " has no run_start record");
    }
    const auto& start = starts.front();
    const auto scenario = start.at("scenario").get<std::string>();
    const bool federated = scenario != "CT";
    const auto& fed = start.at("config").at("federation");
    std::string id = start.at("name").get<std::string>() + ',' + scenario + ',';
    if (federated) {
      id += std::to_string(fed.at("participants").get<std::int64_t>()) + ',' +
            fed.at("fraction").get<std::string>() + ',' +
            std::to_string(fed.at("local_epochs").get<std::int64_t>());
    } else {
      id += ",,";
    }

    const auto records = ledger.of_type(federated ? "round" : "epoch");
    const char* index_key = federated ? "round" : "epoch";
    double best_value = std::numeric_limits<double>::infinity();
    std::int64_t best_index = 0;
    for (const auto& r : records) {
      const auto index = r.at(index_key).get<std::int64_t>();
      const auto v = r.at("val_abs_rel").get<double>();
      if (v < best_value) {
        best_value = v;
        best_index = index;
      }
      steps << id << ',' << index << ',' << ju64(r, "cumulative_steps") << ',' << csv_number(v)
            << ',' << csv_number(r.at("best_abs_rel").get<double>()) << '\n';
      if (federated) {
        rounds << id << ',' << index << ',' << csv_number(v) << ','
               << csv_number(r.at("best_abs_rel").get<double>()) << ','
               << csv_number(r.at("mean_train_loss").get<double>()) << '\n';
        cost << id << ',' << index << ',' << ju64(r, "cumulative_w_max") << ','
             << csv_number(r.at("cumulative_w_min").get<double>()) << ','
             << ju64(r, "cumulative_bytes") << ',' << ju64(r, "cumulative_steps") << '\n';
      }
    }
    if (records.empty()) continue;
    const auto& last = records.back();
    best << id << ',';
    if (federated) {
      best << csv_number(static_cast<double>(fed.at("participants").get<std::int64_t>()) *
                         Fraction::parse(fed.at("fraction").get<std::string>()).value());
    }
    best << ',' << csv_number(best_value) << ',' << best_index << ',';
    if (federated) {
      best << ju64(last, "cumulative_w_max") << ','
           << csv_number(last.at("cumulative_w_min").get<double>());
    } else {
      best << "0,0";
    }
    best << ',' << ju64(last, "cumulative_steps") << '\n';
  }
}

}  // namespace fedmde
