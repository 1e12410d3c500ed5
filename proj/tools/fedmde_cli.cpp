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

// Command-line front end.
//
//   fedmde run    [--config FILE] [overrides...]
//   fedmde grid   [--config FILE] --participants 10,9 --fraction 1,1/2,1/3 --local-epochs 1,2,3
//   fedmde report --out DIR LEDGER...
//   fedmde resume --out DIR
//
// Without --config the file named by $FEDMDE_CONFIG is used, if set.
// Exit status: 0 success, 2 usage or configuration error, 1 run failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedmde/errors.hpp"
#include "fedmde/experiment.hpp"

namespace {

using fedmde::ConfigError;
using fedmde::ExperimentConfig;

struct Overrides {
  std::string config;
  std::optional<std::string> scenario;
  std::optional<std::string> participants;
  std::optional<std::string> fraction;
  std::optional<std::string> local_epochs;
  std::optional<std::string> rounds;
  std::optional<std::string> seed;
  std::optional<std::string> out;
  std::vector<std::string> sets;  // section.key=value
};

void add_common(CLI::App* cmd, Overrides& o, bool lists) {
  cmd->add_option("--config", o.config, "INI config file (default: $FEDMDE_CONFIG)");
  cmd->add_option("--scenario", o.scenario, "CT, FT-IID or FT-NIID");
  const char* suffix = lists ? " (comma-separated list)" : "";
  cmd->add_option("--participants", o.participants, std::string("C") + suffix);
  cmd->add_option("--fraction", o.fraction, std::string("F, e.g. 1/3") + suffix);
  cmd->add_option("--local-epochs", o.local_epochs, std::string("E") + suffix);
  cmd->add_option("--rounds", o.rounds, "T");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--set", o.sets, "any config key, as section.key=value");
}

ExperimentConfig build_config(const Overrides& o, bool lists) {
  std::string path = o.config;
  if (path.empty()) {
    if (const char* env = std::getenv(fedmde::kConfigEnvVar)) path = env;
  }
  auto config = path.empty() ? ExperimentConfig{} : ExperimentConfig::from_ini_file(path);
  for (const auto& s : o.sets) {
    const auto dot = s.find('.');
    const auto eq = s.find('=');
    if (dot == std::string::npos || eq == std::string::npos || eq < dot) {
      throw ConfigError("--set expects section.key=value, got '" + s + "'");
    }
    config.set(s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
  }
  if (o.scenario) config.set("experiment", "scenario", *o.scenario);
  if (o.rounds) config.set("federation", "rounds", *o.rounds);
  if (o.seed) config.set("experiment", "seed", *o.seed);
  if (o.out) config.set("experiment", "output_dir", *o.out);
  if (!lists) {
    if (o.participants) config.set("federation", "participants", *o.participants);
    if (o.fraction) config.set("federation", "fraction", *o.fraction);
    if (o.local_epochs) config.set("federation", "local_epochs", *o.local_epochs);
  }
  return config;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename Parse>
std::vector<T> axis(const std::optional<std::string>& flag, T fallback, Parse parse) {
  if (!flag) return {fallback};
  std::vector<T> out;
  for (const auto& item : split(*flag)) out.push_back(parse(item));
  return out;
}

fedmde::GridAxes grid_axes(const Overrides& o, const ExperimentConfig& base) {
  auto to_int = [](const std::string& s) {
    try {
      return std::stoll(s);
    } catch (const std::exception&) {
      throw ConfigError("grid: not an integer: '" + s + "'");
    }
  };
  auto to_fraction = [](const std::string& s) {
    try {
      return fedmde::Fraction::parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("grid: ") + e.what());
    }
  };
  fedmde::GridAxes axes;
  axes.participants = axis<std::int64_t>(o.participants, base.federation.participants, to_int);
  axes.fractions = axis<fedmde::Fraction>(o.fraction, base.federation.fraction, to_fraction);
  axes.local_epochs = axis<std::int64_t>(o.local_epochs, base.federation.local_epochs, to_int);
  return axes;
}

void print_summary(const fedmde::RunLedger& ledger) {
  const auto end = ledger.of_type("run_end").back();
  std::cout << "ledger: " << ledger.path.string() << '\n'
            << "best AbsRel: " << end.at("best_abs_rel").get<double>() << '\n'
            << "final AbsRel: " << end.at("final").at("abs_rel").get<double>() << '\n'
            << "steps: " << end.at("cost").at("steps_total").get<std::uint64_t>() << '\n'
            << "W_max: " << end.at("cost").at("w_max_gb").get<double>() << " GB, W_min: "
            << end.at("cost").at("w_min_gb").get<double>() << " GB\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated self-supervised monocular depth estimation experiments"};
  app.require_subcommand(1);

  Overrides run_opts, grid_opts;
  auto* run = app.add_subcommand("run", "Run one experiment");
  add_common(run, run_opts, false);
  auto* grid = app.add_subcommand("grid", "Run the (C, F, E) ablation grid");
  add_common(grid, grid_opts, true);

  std::string report_out;
  std::vector<std::string> report_ledgers;
  auto* report = app.add_subcommand("report", "Write plot CSVs from ledgers");
  report->add_option("--out", report_out, "directory for the CSV files")->required();
  report->add_option("ledgers", report_ledgers, "ledger files")->required();

  std::string resume_dir;
  auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
  resume->add_option("--out", resume_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto config = build_config(run_opts, false);
      config.validate();
      print_summary(fedmde::run_experiment(config));
    } else if (grid->parsed()) {
      auto config = build_config(grid_opts, true);
      const auto axes = grid_axes(grid_opts, config);
      const auto rows = fedmde::run_ablation_grid(config, axes);
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.ok ? 0 : 1;
      std::cout << rows.size() << " runs, " << failed << " failed; summary in "
                << (config.output_dir / "summary.csv").string() << '\n';
      return failed == 0 ? 0 : 1;
    } else if (report->parsed()) {
      std::vector<fedmde::RunLedger> ledgers;
      for (const auto& p : report_ledgers) ledgers.push_back(fedmde::RunLedger::read(p));
      fedmde::emit_plot_data(ledgers, report_out);
      std::cout << "wrote plot data for " << ledgers.size() << " ledger(s) to " << report_out
                << '\n';
    } else if (resume->parsed()) {
      print_summary(fedmde::resume_experiment(resume_dir));
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
