/* Copyright 2026 The calproxy Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// calproxy: train, ablate, noise and eval commands for calibrate-proxy
// metric learning experiments.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "calproxy/errors.h"
#include "calproxy/experiment.h"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> ratios;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw calproxy::ConfigError("ratio '" + item + "' is not a number");
    }
    ratios.push_back(v);
  }
  return ratios;
}

void print_table(const std::string& csv) { std::cout << csv; }

std::vector<std::size_t> reported_ks(
    const std::vector<calproxy::TableRow>& rows) {
  std::vector<std::size_t> ks;
  for (const auto& [k, v] : rows.front().result.final_report().recall_at) {
    ks.push_back(k);
  }
  return ks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate-proxy metric learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  std::optional<std::string> resume;

  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("--config", config_path, "JSON run config")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--profile", profile, "desk or paper defaults")
      ->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--resume", resume, "Continue from a checkpoint file");

  std::string sweep_text;
  auto* ablate = app.add_subcommand("ablate", "Sweep one parameter");
  ablate->add_option("--config", config_path, "JSON run config")->required();
  ablate->add_option("--sweep", sweep_text, "param=v1,v2,... with param in "
                     "n_q, n_s, n_p, lambda_cal, kind")->required();
  ablate->add_option("--seed", seed, "Override the config seed");
  ablate->add_option("--profile", profile, "desk or paper defaults")
      ->check(CLI::IsMember({"desk", "paper"}));

  std::string ratios_text;
  auto* noise = app.add_subcommand("noise", "Label-noise robustness table");
  noise->add_option("--config", config_path, "JSON run config")->required();
  noise->add_option("--ratios", ratios_text, "Comma-separated noise ratios")
      ->required();
  noise->add_option("--seed", seed, "Override the config seed");
  noise->add_option("--profile", profile, "desk or paper defaults")
      ->check(CLI::IsMember({"desk", "paper"}));

  std::string checkpoint_path;
  std::string data_path;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a CSV");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint.json")
      ->required();
  eval->add_option("--data", data_path, "Feature CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (eval->parsed()) {
      const calproxy::EvalReport report =
          calproxy::cmd_eval(checkpoint_path, data_path);
      std::cout << calproxy::report_to_json(report).dump(2) << "\n";
      return 0;
    }

    std::optional<calproxy::Profile> profile_override;
    if (profile) profile_override = calproxy::parse_profile(*profile);
    calproxy::RunConfig config =
        calproxy::load_config(config_path, profile_override);
    if (seed) config.seed = *seed;

    if (train->parsed()) {
      const calproxy::RunResult result = calproxy::cmd_train(config, resume);
      std::cout << calproxy::metrics_csv(result);
      if (!result.checkpoint_path.empty()) {
        std::cerr << "checkpoint: " << result.checkpoint_path << "\n";
      }
    } else if (ablate->parsed()) {
      const calproxy::Sweep sweep = calproxy::parse_sweep(sweep_text);
      const auto rows = calproxy::cmd_ablate(config, sweep);
      print_table(calproxy::ablate_csv(sweep, rows, reported_ks(rows)));
    } else if (noise->parsed()) {
      const auto rows = calproxy::cmd_noise(config, parse_ratios(ratios_text));
      print_table(calproxy::noise_csv(rows, reported_ks(rows)));
    }
    return 0;
  } catch (const calproxy::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const calproxy::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const calproxy::ContractError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const calproxy::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}
