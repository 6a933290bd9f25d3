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

// Experiment driver behind the `calproxy` command line tool: run
// configuration, the training loop, checkpoints and the sweep commands.

#ifndef CALPROXY_EXPERIMENT_H_
#define CALPROXY_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "calproxy/datalab.h"
#include "calproxy/evaluator.h"
#include "calproxy/global_center.h"
#include "calproxy/losses.h"
#include "calproxy/model.h"
#include "calproxy/similarity.h"
#include "json.hpp"

namespace calproxy {

enum class Profile { kDesk, kPaper };
Profile parse_profile(std::string_view name);
std::string_view to_string(Profile profile);

struct RunConfig {
  Profile profile = Profile::kDesk;
  std::uint64_t seed = 0;

  // Data: "synthetic" uses `cluster`, "csv" reads `data_path`.
  std::string data_source = "synthetic";
  std::string data_path;
  ClusterSpec cluster;
  double noise_ratio = 0.0;

  LossSpec loss;
  std::size_t gc_capacity = 30;
  int gc_start_epoch = 5;

  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 16;

  std::size_t epochs = 30;
  std::size_t batch_size = 150;
  AdamConfig adam;
  std::size_t eval_every = 5;
  std::vector<std::size_t> ks = {1, 2, 4, 8};

  std::string output_dir;
  bool export_embeddings = false;

  // Throws ConfigError describing the first invalid field.
  void validate() const;
};

RunConfig default_config(Profile profile);

// Profile defaults overlaid with `doc`. Unknown keys, wrong types and
// out-of-range values raise ConfigError. `profile_override` wins over a
// "profile" key in the document.
RunConfig config_from_json(const nlohmann::json& doc,
                           std::optional<Profile> profile_override = {});
RunConfig load_config(const std::string& path,
                      std::optional<Profile> profile_override = {});
nlohmann::json config_to_json(const RunConfig& config);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& doc);

// Everything needed to continue a run bit-exactly.
struct TrainingState {
  Embedder embedder;
  ProxyBank bank;
  GlobalCenter gc;
  AdamState adam;
  Rng sampler_rng;
  int epoch = 0;  // last completed epoch
  std::vector<double> epoch_losses;
  std::vector<EvalReport> evals;
};

struct RunResult {
  std::vector<double> epoch_losses;  // entry k is epoch k + 1
  std::vector<EvalReport> evals;
  std::string checkpoint_path;
  nlohmann::json config_echo;
  double wall_clock_seconds = 0.0;
  std::size_t flipped_count = 0;

  const EvalReport& final_report() const { return evals.back(); }
};

// Synthetic generation or CSV load, followed by label noise on the
// training split.
Dataset build_dataset(const RunConfig& config);

TrainingState init_state(const RunConfig& config, const Dataset& dataset);

// Runs epochs state.epoch + 1 .. last_epoch, evaluating on the configured
// cadence. Throws NumericError on a non-finite loss.
void train_epochs(TrainingState& state, const RunConfig& config,
                  const Dataset& dataset, int last_epoch);

EvalReport evaluate(const TrainingState& state, const RunConfig& config,
                    const Dataset& dataset);

nlohmann::json checkpoint_to_json(const TrainingState& state,
                                  const RunConfig& config);
TrainingState checkpoint_from_json(const nlohmann::json& doc,
                                   RunConfig* config_out = nullptr);
void save_checkpoint(const TrainingState& state, const RunConfig& config,
                     const std::string& path);
TrainingState load_checkpoint(const std::string& path,
                              RunConfig* config_out = nullptr);

// `epoch,loss,recall_at_1,map_at_r,mean_deviation`, one row per evaluation.
std::string metrics_csv(const RunResult& result);

// Full run. With `resume_path`, training continues from that checkpoint.
// Writes result.json, metrics.csv, checkpoint.json (and embeddings.csv if
// requested) when config.output_dir is set.
RunResult cmd_train(const RunConfig& config,
                    const std::optional<std::string>& resume_path = {});

struct Sweep {
  std::string parameter;  // n_q, n_s, n_p, lambda_cal or kind
  std::vector<std::string> values;
};

// Parses `param=v1,v2,...`.
Sweep parse_sweep(std::string_view text);

struct TableRow {
  std::string label;  // sweep value or noise ratio
  std::string variant;
  std::size_t flipped = 0;
  RunResult result;
};

std::vector<TableRow> cmd_ablate(const RunConfig& config, const Sweep& sweep);
std::string ablate_csv(const Sweep& sweep, const std::vector<TableRow>& rows,
                       const std::vector<std::size_t>& ks);

// For every ratio, trains the base and the cp variant of the configured
// loss family on noisy training labels and evaluates on clean test labels.
std::vector<TableRow> cmd_noise(const RunConfig& config,
                                const std::vector<double>& ratios);
std::string noise_csv(const std::vector<TableRow>& rows,
                      const std::vector<std::size_t>& ks);

// Embeds every row of a feature CSV with a checkpointed model and scores
// retrieval over the whole file.
EvalReport cmd_eval(const std::string& checkpoint_path,
                    const std::string& data_path);

}  // namespace calproxy

#endif  // CALPROXY_EXPERIMENT_H_
