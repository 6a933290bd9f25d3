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

#include "calproxy/experiment.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "calproxy/errors.h"

namespace calproxy {
namespace {

using nlohmann::json;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = std::filesystem::temp_directory_path() /
            (std::string("calproxy_") + info->test_suite_name() + "_" +
             info->name());
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }

  std::string path(const std::string& name) const {
    return (path_ / name).string();
  }
  std::string write(const std::string& name, const std::string& body) const {
    std::ofstream(path_ / name) << body;
    return path(name);
  }

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// A run small enough to train in well under a second.
json tiny_doc() {
  return json{
      {"seed", 11},
      {"data",
       {{"n_classes", 6},
        {"subclusters_per_class", 2},
        {"input_dim", 8},
        {"samples_per_class", 20}}},
      {"loss", {{"kind", "proxy_anchor"}, {"variant", "cp"}, {"n_p", 2}}},
      {"global_center", {{"n_q", 5}, {"n_s", 1}}},
      {"model", {{"hidden_dim", 12}, {"embed_dim", 4}}},
      {"train", {{"epochs", 4}, {"batch_size", 20}, {"eval_every", 1}}},
      {"eval", {{"ks", {1, 2}}}},
  };
}

RunConfig tiny_config() { return config_from_json(tiny_doc()); }

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(CALPROXY_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Config, ProfileDefaults) {
  const RunConfig desk = default_config(Profile::kDesk);
  EXPECT_EQ(desk.embed_dim, 16u);
  EXPECT_EQ(desk.epochs, 30u);
  EXPECT_EQ(desk.gc_capacity, 30u);
  EXPECT_EQ(desk.gc_start_epoch, 5);
  EXPECT_EQ(desk.loss.proxies_per_class, 3u);
  EXPECT_EQ(desk.loss.lambda_cal, 1.0);
  EXPECT_NO_THROW(desk.validate());

  const RunConfig paper = default_config(Profile::kPaper);
  EXPECT_EQ(paper.embed_dim, 512u);
  EXPECT_EQ(paper.gc_start_epoch, 12);
  EXPECT_NO_THROW(paper.validate());
}

TEST(Config, EmptyDocumentIsDeskDefaults) {
  EXPECT_EQ(config_to_json(config_from_json(json::object())),
            config_to_json(default_config(Profile::kDesk)));
}

TEST(Config, ProfileOverrideWinsOverDocument) {
  json doc{{"profile", "desk"}};
  EXPECT_EQ(config_from_json(doc, Profile::kPaper).embed_dim, 512u);
  EXPECT_THROW(config_from_json(json{{"profile", "laptop"}}), ConfigError);
}

TEST(Config, JsonRoundTripIsStable) {
  const RunConfig c = tiny_config();
  const json once = config_to_json(c);
  const json twice = config_to_json(config_from_json(once));
  EXPECT_EQ(once.dump(), twice.dump());
  EXPECT_EQ(c.loss.proxies_per_class, 2u);
  EXPECT_EQ(c.gc_capacity, 5u);
  EXPECT_EQ(c.ks, (std::vector<std::size_t>{1, 2}));
}

TEST(Config, UnknownKeysAreRejected) {
  json top = tiny_doc();
  top["sed"] = 3;
  EXPECT_THROW(config_from_json(top), ConfigError);

  json nested = tiny_doc();
  nested["loss"]["lamda_cal"] = 0.5;
  try {
    config_from_json(nested);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss.lamda_cal"), std::string::npos);
  }
}

TEST(Config, WrongTypesAreRejected) {
  const std::vector<std::pair<std::string, json>> cases = {
      {"/train/epochs", "many"},     {"/train/epochs", -1},
      {"/train/epochs", 2.5},        {"/loss/alpha", "big"},
      {"/eval/export_embeddings", 1}, {"/data/source", 3},
      {"/eval/ks", 1},               {"/eval/ks", json::array({0})},
      {"/model", 4},
  };
  for (const auto& [pointer, value] : cases) {
    json doc = tiny_doc();
    doc[json::json_pointer(pointer)] = value;
    EXPECT_THROW(config_from_json(doc), ConfigError) << pointer;
  }
}

TEST(Config, OutOfRangeValuesAreRejected) {
  const std::vector<std::pair<std::string, json>> cases = {
      {"/data/noise_ratio", 1.0},  {"/data/source", "parquet"},
      {"/global_center/n_q", 0},   {"/global_center/n_s", -2},
      {"/model/embed_dim", 0},     {"/train/batch_size", 0},
      {"/train/lr", 0.0},          {"/train/beta2", 1.0},
      {"/loss/n_p", 0},            {"/loss/kind", "triplet"},
      {"/loss/variant", "both"},   {"/data/n_classes", 0},
  };
  for (const auto& [pointer, value] : cases) {
    json doc = tiny_doc();
    doc[json::json_pointer(pointer)] = value;
    EXPECT_THROW(config_from_json(doc), ConfigError) << pointer;
  }
  json csv = tiny_doc();
  csv["data"] = json{{"source", "csv"}};
  EXPECT_THROW(config_from_json(csv), ConfigError);
}

TEST(Config, LoadConfigReportsMissingAndMalformedFiles) {
  TempDir dir;
  EXPECT_THROW(load_config(dir.path("absent.json")), ConfigError);
  EXPECT_THROW(load_config(dir.write("bad.json", "{\"seed\": ")), ConfigError);
  const RunConfig c = load_config(dir.write("ok.json", tiny_doc().dump()));
  EXPECT_EQ(c.seed, 11u);
}

TEST(Train, ZeroEpochsEvaluatesInitialModelOnly) {
  RunConfig c = tiny_config();
  c.epochs = 0;
  const RunResult r = cmd_train(c);
  EXPECT_TRUE(r.epoch_losses.empty());
  ASSERT_EQ(r.evals.size(), 1u);
  EXPECT_EQ(r.evals[0].epoch, 0);
  EXPECT_EQ(r.evals[0].recall_at.size(), 2u);
}

TEST(Train, EvaluatesOnCadenceAndAtTheEnd) {
  RunConfig c = tiny_config();
  c.epochs = 7;
  c.eval_every = 3;
  const RunResult r = cmd_train(c);
  ASSERT_EQ(r.epoch_losses.size(), 7u);
  std::vector<int> epochs;
  for (const EvalReport& e : r.evals) epochs.push_back(e.epoch);
  EXPECT_EQ(epochs, (std::vector<int>{0, 3, 6, 7}));
  for (double loss : r.epoch_losses) EXPECT_TRUE(std::isfinite(loss));
}

TEST(Train, RepeatedRunsAreIdentical) {
  const RunConfig c = tiny_config();
  const RunResult a = cmd_train(c);
  const RunResult b = cmd_train(c);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(metrics_csv(a), metrics_csv(b));
}

TEST(Train, SeedChangesTheRun) {
  RunConfig c = tiny_config();
  const RunResult a = cmd_train(c);
  c.seed = 12;
  const RunResult b = cmd_train(c);
  EXPECT_NE(a.epoch_losses, b.epoch_losses);
}

TEST(Train, MapImprovesOnSeparableData) {
  RunConfig c = tiny_config();
  c.cluster.input_dim = 32;
  c.cluster.samples_per_class = 100;
  c.hidden_dim = 32;
  c.embed_dim = 8;
  c.epochs = 10;
  c.batch_size = 60;
  const RunResult r = cmd_train(c);
  const double before = r.evals.front().map_at_r;
  const double after = r.final_report().map_at_r;
  EXPECT_GT(after, before + 0.1);
}

TEST(Train, WritesArtifacts) {
  TempDir dir;
  RunConfig c = tiny_config();
  c.output_dir = dir.path("run");
  c.export_embeddings = true;
  const RunResult r = cmd_train(c);
  EXPECT_EQ(r.checkpoint_path, dir.path("run/checkpoint.json"));
  EXPECT_EQ(slurp(dir.path("run/metrics.csv")), metrics_csv(r));
  const json result = json::parse(slurp(dir.path("run/result.json")));
  EXPECT_EQ(result.at("config"), config_to_json(c));
  EXPECT_EQ(result.at("evals").size(), r.evals.size());

  // Test split: half of 6 classes x 20 samples.
  std::ifstream emb(dir.path("run/embeddings.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(emb, line)) ++lines;
  EXPECT_EQ(lines, 1u + 60u);
}

TEST(Train, MetricsCsvFormat) {
  RunResult r;
  r.epoch_losses = {0.5, 0.25};
  EvalReport e0;
  e0.epoch = 0;
  e0.recall_at = {{1, 0.5}};
  e0.map_at_r = 0.25;
  e0.mean_deviation = 1.5;
  EvalReport e2 = e0;
  e2.epoch = 2;
  e2.recall_at = {{1, 1.0}};
  r.evals = {e0, e2};
  EXPECT_EQ(metrics_csv(r),
            "epoch,loss,recall_at_1,map_at_r,mean_deviation\n"
            "0,,0.5,0.25,1.5\n"
            "2,0.25,1,0.25,1.5\n");
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  RunConfig full = tiny_config();
  full.epochs = 6;
  const RunResult straight = cmd_train(full);

  RunConfig first = full;
  first.epochs = 3;
  first.output_dir = dir.path("part");
  const RunResult part = cmd_train(first);
  const RunResult resumed = cmd_train(full, part.checkpoint_path);

  ASSERT_EQ(resumed.epoch_losses.size(), straight.epoch_losses.size());
  for (std::size_t i = 0; i < straight.epoch_losses.size(); ++i) {
    EXPECT_NEAR(resumed.epoch_losses[i], straight.epoch_losses[i], 1e-9);
  }
  ASSERT_EQ(resumed.evals.size(), straight.evals.size());
  for (std::size_t i = 0; i < straight.evals.size(); ++i) {
    EXPECT_EQ(resumed.evals[i].epoch, straight.evals[i].epoch);
    EXPECT_NEAR(resumed.evals[i].map_at_r, straight.evals[i].map_at_r, 1e-9);
    EXPECT_NEAR(resumed.evals[i].mean_deviation,
                straight.evals[i].mean_deviation, 1e-9);
  }
}

TEST(Checkpoint, JsonRoundTripPreservesState) {
  const RunConfig c = tiny_config();
  const Dataset ds = build_dataset(c);
  TrainingState s = init_state(c, ds);
  train_epochs(s, c, ds, 3);
  RunConfig restored_config;
  const TrainingState t =
      checkpoint_from_json(checkpoint_to_json(s, c), &restored_config);
  EXPECT_EQ(t.epoch, 3);
  EXPECT_EQ(t.epoch_losses, s.epoch_losses);
  EXPECT_TRUE(std::ranges::equal(t.embedder.params(), s.embedder.params()));
  EXPECT_TRUE(std::ranges::equal(t.bank.matrix().flat(), s.bank.matrix().flat()));
  EXPECT_TRUE(t.gc == s.gc);
  EXPECT_EQ(t.adam.step, s.adam.step);
  EXPECT_EQ(t.sampler_rng.save_state(), s.sampler_rng.save_state());
  EXPECT_EQ(config_to_json(restored_config), config_to_json(c));
}

TEST(Checkpoint, RejectsForeignAndMismatchedFiles) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir.write("x.json", "{\"format\": \"other\"}")),
               ParseError);
  EXPECT_THROW(load_checkpoint(dir.path("absent.json")), IoError);

  RunConfig c = tiny_config();
  c.epochs = 2;
  c.output_dir = dir.path("run");
  const RunResult r = cmd_train(c);
  RunConfig wider = c;
  wider.embed_dim = 5;
  EXPECT_THROW(cmd_train(wider, r.checkpoint_path), ConfigError);
  RunConfig shorter = c;
  shorter.epochs = 1;
  EXPECT_THROW(cmd_train(shorter, r.checkpoint_path), ConfigError);
}

TEST(Sweep, ParsesParameterAndValues) {
  const Sweep s = parse_sweep("n_p=1,3,5");
  EXPECT_EQ(s.parameter, "n_p");
  EXPECT_EQ(s.values, (std::vector<std::string>{"1", "3", "5"}));
  EXPECT_EQ(parse_sweep("kind=proxy_nca/cp").values.size(), 1u);
}

TEST(Sweep, RejectsMalformedText) {
  for (const char* text : {"n_p", "=1,2", "n_p=", "n_p=1,,2", "alpha=1"}) {
    EXPECT_THROW(parse_sweep(text), ConfigError) << text;
  }
}

TEST(Ablate, BadValueFailsBeforeAnyTraining) {
  TempDir dir;
  RunConfig c = tiny_config();
  c.output_dir = dir.path("ab");
  EXPECT_THROW(cmd_ablate(c, parse_sweep("n_q=3,zero")), ConfigError);
  EXPECT_THROW(cmd_ablate(c, parse_sweep("n_q=3,0")), ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir.path("ab")));
}

TEST(Ablate, SinglePointEqualsPlainTraining) {
  RunConfig c = tiny_config();
  const auto rows = cmd_ablate(c, parse_sweep("lambda_cal=1"));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].result.epoch_losses, cmd_train(c).epoch_losses);
}

TEST(Ablate, ProxyCountSweepProducesOneRowEach) {
  TempDir dir;
  RunConfig c = tiny_config();
  c.epochs = 2;
  c.output_dir = dir.path("ab");
  const Sweep sweep = parse_sweep("n_p=1,2,3");
  const auto rows = cmd_ablate(c, sweep);
  ASSERT_EQ(rows.size(), 3u);
  const std::string csv = ablate_csv(sweep, rows, c.ks);
  EXPECT_EQ(slurp(dir.path("ab/ablate.csv")), csv);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line,
            "param,value,final_loss,recall_at_1,recall_at_2,map_at_r,"
            "mean_deviation");
  for (const char* v : {"1", "2", "3"}) {
    std::getline(in, line);
    EXPECT_EQ(line.rfind(std::string("n_p,") + v + ",", 0), 0u) << line;
  }
  EXPECT_TRUE(std::filesystem::exists(dir.path("ab/n_p_2/metrics.csv")));
}

TEST(Ablate, KindSweepSwitchesFamilyAndVariant) {
  RunConfig c = tiny_config();
  c.epochs = 1;
  const auto rows =
      cmd_ablate(c, parse_sweep("kind=proxy_nca/base,soft_triple"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].variant, "base");
  EXPECT_EQ(rows[1].variant, "cp");
  EXPECT_EQ(rows[1].result.final_report().loss_kind.rfind("soft_triple", 0),
            0u);
}

TEST(Noise, TrainsBothVariantsPerRatio) {
  RunConfig c = tiny_config();
  c.epochs = 2;
  const auto rows = cmd_noise(c, {0.0, 0.25});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].variant, "base");
  EXPECT_EQ(rows[1].variant, "cp");
  EXPECT_EQ(rows[0].flipped, 0u);
  EXPECT_EQ(rows[1].flipped, 0u);
  // 25% of the 60 training samples.
  EXPECT_EQ(rows[2].flipped, 15u);
  EXPECT_EQ(rows[3].flipped, 15u);
  EXPECT_EQ(rows[1].result.epoch_losses, cmd_train(c).epoch_losses);

  const std::string csv = noise_csv(rows, c.ks);
  EXPECT_EQ(csv.rfind("ratio,variant,flipped,final_loss,", 0), 0u);
  EXPECT_NE(csv.find("\n0.25,cp,15,"), std::string::npos);
}

TEST(Noise, RejectsBadRatios) {
  const RunConfig c = tiny_config();
  EXPECT_THROW(cmd_noise(c, {}), ConfigError);
  EXPECT_THROW(cmd_noise(c, {0.1, 1.0}), ConfigError);
  EXPECT_THROW(cmd_noise(c, {-0.1}), ConfigError);
}

TEST(Eval, ScoresCheckpointOnCsv) {
  TempDir dir;
  RunConfig c = tiny_config();
  c.output_dir = dir.path("run");
  const RunResult r = cmd_train(c);

  std::ostringstream csv;
  csv << "label";
  for (int k = 0; k < 8; ++k) csv << ",f" << k;
  csv << "\n";
  const Dataset ds = build_dataset(c);
  for (std::size_t i : ds.test_indices) {
    csv << ds.true_labels[i];
    for (double v : ds.features.row(i)) csv << ',' << v;
    csv << "\n";
  }
  const std::string data = dir.write("test.csv", csv.str());
  const EvalReport report = cmd_eval(r.checkpoint_path, data);
  EXPECT_EQ(report.epoch, 4);
  EXPECT_EQ(report.seed, 11u);
  EXPECT_GE(report.recall_at.at(1), 0.0);
  EXPECT_LE(report.recall_at.at(1), 1.0);
  EXPECT_EQ(report.recall_at.size(), 2u);

  const std::string narrow = dir.write("narrow.csv", "label,f0\n0,1\n1,2\n");
  EXPECT_THROW(cmd_eval(r.checkpoint_path, narrow), ShapeError);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  json doc = tiny_doc();
  doc["train"]["epochs"] = 1;
  doc["output_dir"] = dir.path("cli");
  const std::string good = dir.write("good.json", doc.dump());
  doc["mystery"] = true;
  const std::string unknown = dir.write("unknown.json", doc.dump());

  EXPECT_EQ(run_cli("train --config " + good), 0);
  EXPECT_EQ(run_cli("train --config " + unknown), 2);
  EXPECT_EQ(run_cli("train"), 2);
  EXPECT_EQ(run_cli("train --config " + good + " --profile laptop"), 2);
  EXPECT_EQ(run_cli("ablate --config " + good + " --sweep alpha=1"), 2);
  EXPECT_EQ(run_cli("noise --config " + good + " --ratios 0.1,x"), 2);
  EXPECT_EQ(run_cli("eval --checkpoint " + dir.path("absent.json") +
                    " --data " + good),
            3);
  EXPECT_EQ(run_cli("eval --checkpoint " + dir.path("cli/checkpoint.json") +
                    " --data " + dir.path("absent.csv")),
            3);
}

TEST(Cli, TrainPrintsMetricsDeterministically) {
  TempDir dir;
  json doc = tiny_doc();
  doc["train"]["epochs"] = 2;
  const std::string config = dir.write("c.json", doc.dump());
  const std::string base = std::string(CALPROXY_CLI_PATH) + " train --config " +
                           config + " --seed 5 2>/dev/null > ";
  ASSERT_EQ(std::system((base + dir.path("a.csv")).c_str()), 0);
  ASSERT_EQ(std::system((base + dir.path("b.csv")).c_str()), 0);
  const std::string a = slurp(dir.path("a.csv"));
  EXPECT_EQ(a, slurp(dir.path("b.csv")));
  EXPECT_EQ(a.rfind("epoch,loss,recall_at_1,map_at_r,mean_deviation\n", 0),
            0u);
}

}  // namespace
}  // namespace calproxy
