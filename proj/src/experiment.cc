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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "calproxy/errors.h"

namespace calproxy {

using nlohmann::json;

namespace {

// Seed streams; each consumer owns one.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kSamplerStream = 4;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string loss_kind_name(const LossSpec& spec) {
  return std::string(to_string(spec.family)) + "/" +
         std::string(to_string(spec.variant));
}

// Reads one JSON object, rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where)
      : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(name(key) + " must be a number");
    out = v.get<double>();
  }

  void read(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw ConfigError(name(key) + " must be a non-negative integer");
    }
    out = v.get<std::size_t>();
  }

  void read(const std::string& key, int& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_integer()) {
      throw ConfigError(name(key) + " must be an integer");
    }
    out = v.get<int>();
  }

  void read(const std::string& key, std::uint64_t& out, bool) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() &&
                                     v.get<std::int64_t>() >= 0)) {
      throw ConfigError(name(key) + " must be a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }

  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(name(key) + " must be a boolean");
    out = v.get<bool>();
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(name(key) + " must be a string");
    out = v.get<std::string>();
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError("unknown key '" + name(key) + "'");
      }
    }
  }

  std::string name(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_section(ObjectReader& parent, const std::string& key,
                  const std::function<void(ObjectReader&)>& body) {
  if (!parent.has(key)) return;
  ObjectReader child(parent.raw(key), parent.name(key));
  body(child);
  child.finish();
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = source.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix normalized_copy(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const Vec unit = l2_normalize(m.row(r));
    std::copy(unit.begin(), unit.end(), out.row(r).begin());
  }
  return out;
}

std::vector<std::size_t> eval_ks(const RunConfig& config) {
  std::vector<std::size_t> ks = config.ks;
  if (std::find(ks.begin(), ks.end(), 1) == ks.end()) ks.push_back(1);
  std::sort(ks.begin(), ks.end());
  return ks;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

json read_json_file(const std::string& path, bool config_file) {
  std::ifstream in(path);
  if (!in) {
    if (config_file) throw ConfigError("cannot open config '" + path + "'");
    throw IoError("cannot open '" + path + "'");
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    if (config_file) {
      throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

Profile parse_profile(std::string_view name) {
  if (name == "desk") return Profile::kDesk;
  if (name == "paper") return Profile::kPaper;
  throw ConfigError("unknown profile '" + std::string(name) +
                    "' (expected desk or paper)");
}

std::string_view to_string(Profile profile) {
  return profile == Profile::kDesk ? "desk" : "paper";
}

RunConfig default_config(Profile profile) {
  RunConfig c;
  c.profile = profile;
  c.loss.proxies_per_class = 3;
  c.loss.lambda_cal = 1.0;
  if (profile == Profile::kPaper) {
    c.embed_dim = 512;
    c.hidden_dim = 512;
    c.epochs = 60;
    c.batch_size = 150;
    c.gc_capacity = 30;
    c.gc_start_epoch = 12;
  }
  return c;
}

void RunConfig::validate() const {
  if (data_source == "synthetic") {
    cluster.validate();
  } else if (data_source == "csv") {
    if (data_path.empty()) throw ConfigError("data.path is required for csv");
  } else {
    throw ConfigError("data.source must be 'synthetic' or 'csv'");
  }
  if (!(noise_ratio >= 0.0 && noise_ratio < 1.0)) {
    throw ConfigError("data.noise_ratio must be in [0, 1)");
  }
  loss.validate();
  if (gc_capacity < 1) throw ConfigError("global_center.n_q must be >= 1");
  if (gc_start_epoch < 0) throw ConfigError("global_center.n_s must be >= 0");
  if (hidden_dim < 1 || embed_dim < 1) {
    throw ConfigError("model dimensions must be >= 1");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(adam.lr > 0.0) || !(adam.proxy_lr_multiplier > 0.0)) {
    throw ConfigError("train learning rates must be positive");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw ConfigError("train Adam hyperparameters out of range");
  }
  if (ks.empty()) throw ConfigError("eval.ks must not be empty");
  for (std::size_t k : ks) {
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  }
}

RunConfig config_from_json(const json& doc,
                           std::optional<Profile> profile_override) {
  ObjectReader top(doc, "");
  std::string profile_name = "desk";
  top.read("profile", profile_name);
  const Profile profile =
      profile_override.value_or(parse_profile(profile_name));
  RunConfig c = default_config(profile);

  top.read("seed", c.seed, true);
  top.read("output_dir", c.output_dir);

  read_section(top, "data", [&](ObjectReader& r) {
    r.read("source", c.data_source);
    r.read("path", c.data_path);
    r.read("n_classes", c.cluster.n_classes);
    r.read("subclusters_per_class", c.cluster.subclusters_per_class);
    r.read("input_dim", c.cluster.input_dim);
    r.read("samples_per_class", c.cluster.samples_per_class);
    r.read("intra_spread", c.cluster.intra_spread);
    r.read("subcluster_separation", c.cluster.subcluster_separation);
    r.read("class_spread", c.cluster.class_spread);
    r.read("train_fraction", c.cluster.train_fraction);
    r.read("noise_ratio", c.noise_ratio);
  });
  read_section(top, "loss", [&](ObjectReader& r) {
    std::string kind(to_string(c.loss.family));
    std::string variant(to_string(c.loss.variant));
    r.read("kind", kind);
    r.read("variant", variant);
    c.loss.family = parse_loss_family(kind);
    c.loss.variant = parse_loss_variant(variant);
    r.read("alpha", c.loss.alpha);
    r.read("delta", c.loss.delta);
    r.read("lambda_cal", c.loss.lambda_cal);
    r.read("st_scale", c.loss.st_scale);
    r.read("st_margin", c.loss.st_margin);
    r.read("n_p", c.loss.proxies_per_class);
    r.read("mse_mean", c.loss.mse_mean);
  });
  read_section(top, "global_center", [&](ObjectReader& r) {
    r.read("n_q", c.gc_capacity);
    r.read("n_s", c.gc_start_epoch);
  });
  read_section(top, "model", [&](ObjectReader& r) {
    r.read("hidden_dim", c.hidden_dim);
    r.read("embed_dim", c.embed_dim);
  });
  read_section(top, "train", [&](ObjectReader& r) {
    r.read("epochs", c.epochs);
    r.read("batch_size", c.batch_size);
    r.read("lr", c.adam.lr);
    r.read("beta1", c.adam.beta1);
    r.read("beta2", c.adam.beta2);
    r.read("epsilon", c.adam.epsilon);
    r.read("proxy_lr_multiplier", c.adam.proxy_lr_multiplier);
    r.read("eval_every", c.eval_every);
  });
  read_section(top, "eval", [&](ObjectReader& r) {
    if (r.has("ks")) {
      const json& ks = r.raw("ks");
      if (!ks.is_array()) throw ConfigError("eval.ks must be an array");
      c.ks.clear();
      for (const json& k : ks) {
        if (!k.is_number_integer() || k.get<std::int64_t>() < 1) {
          throw ConfigError("eval.ks entries must be positive integers");
        }
        c.ks.push_back(k.get<std::size_t>());
      }
    }
    r.read("export_embeddings", c.export_embeddings);
  });
  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path,
                      std::optional<Profile> profile_override) {
  return config_from_json(read_json_file(path, true), profile_override);
}

json config_to_json(const RunConfig& c) {
  return json{
      {"profile", to_string(c.profile)},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"source", c.data_source},
        {"path", c.data_path},
        {"n_classes", c.cluster.n_classes},
        {"subclusters_per_class", c.cluster.subclusters_per_class},
        {"input_dim", c.cluster.input_dim},
        {"samples_per_class", c.cluster.samples_per_class},
        {"intra_spread", c.cluster.intra_spread},
        {"subcluster_separation", c.cluster.subcluster_separation},
        {"class_spread", c.cluster.class_spread},
        {"train_fraction", c.cluster.train_fraction},
        {"noise_ratio", c.noise_ratio}}},
      {"loss",
       {{"kind", to_string(c.loss.family)},
        {"variant", to_string(c.loss.variant)},
        {"alpha", c.loss.alpha},
        {"delta", c.loss.delta},
        {"lambda_cal", c.loss.lambda_cal},
        {"st_scale", c.loss.st_scale},
        {"st_margin", c.loss.st_margin},
        {"n_p", c.loss.proxies_per_class},
        {"mse_mean", c.loss.mse_mean}}},
      {"global_center", {{"n_q", c.gc_capacity}, {"n_s", c.gc_start_epoch}}},
      {"model", {{"hidden_dim", c.hidden_dim}, {"embed_dim", c.embed_dim}}},
      {"train",
       {{"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"lr", c.adam.lr},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"epsilon", c.adam.epsilon},
        {"proxy_lr_multiplier", c.adam.proxy_lr_multiplier},
        {"eval_every", c.eval_every}}},
      {"eval", {{"ks", c.ks}, {"export_embeddings", c.export_embeddings}}},
  };
}

json report_to_json(const EvalReport& r) {
  json recall = json::object();
  for (const auto& [k, v] : r.recall_at) recall[std::to_string(k)] = v;
  json per_class = json::array();
  for (const auto& d : r.per_class_deviation) {
    per_class.push_back(d ? json(*d) : json(nullptr));
  }
  return json{{"epoch", r.epoch},
              {"seed", r.seed},
              {"loss_kind", r.loss_kind},
              {"recall_at", recall},
              {"map_at_r", r.map_at_r},
              {"mean_deviation", r.mean_deviation},
              {"per_class_deviation", per_class},
              {"excluded_queries", r.excluded_queries},
              {"excluded_classes", r.excluded_classes}};
}

EvalReport report_from_json(const json& doc) {
  EvalReport r;
  try {
    r.epoch = doc.at("epoch").get<int>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.loss_kind = doc.at("loss_kind").get<std::string>();
    for (const auto& [k, v] : doc.at("recall_at").items()) {
      r.recall_at[std::stoul(k)] = v.get<double>();
    }
    r.map_at_r = doc.at("map_at_r").get<double>();
    r.mean_deviation = doc.at("mean_deviation").get<double>();
    for (const json& d : doc.at("per_class_deviation")) {
      r.per_class_deviation.push_back(
          d.is_null() ? std::nullopt : std::optional<double>(d.get<double>()));
    }
    r.excluded_queries = doc.at("excluded_queries").get<std::size_t>();
    r.excluded_classes =
        doc.at("excluded_classes").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

Dataset build_dataset(const RunConfig& config) {
  Dataset ds;
  if (config.data_source == "csv") {
    ds = load_features(config.data_path);
  } else {
    ClusterSpec spec = config.cluster;
    spec.seed = derive_seed(config.seed, kDataStream);
    ds = gen_clusters(spec);
  }
  if (config.noise_ratio > 0.0) {
    apply_label_noise(ds, config.noise_ratio,
                      derive_seed(config.seed, kNoiseStream));
  }
  if (ds.train_indices.empty()) throw DomainError("training split is empty");
  return ds;
}

TrainingState init_state(const RunConfig& config, const Dataset& dataset) {
  Rng init(derive_seed(config.seed, kInitStream));
  const EmbedderDims dims{dataset.input_dim(), config.hidden_dim,
                          config.embed_dim};
  Embedder embedder = Embedder::random(dims, init);
  ProxyBank bank =
      ProxyBank::random(dataset.n_train_classes,
                        config.loss.proxies_per_class, config.embed_dim, init);
  GlobalCenter gc(dataset.n_train_classes, config.gc_capacity,
                  config.gc_start_epoch, config.embed_dim);
  AdamState adam(config.adam, dims.param_count(), bank.matrix().flat().size());
  return TrainingState{std::move(embedder),
                       std::move(bank),
                       std::move(gc),
                       std::move(adam),
                       Rng(derive_seed(config.seed, kSamplerStream)),
                       0,
                       {},
                       {}};
}

EvalReport evaluate(const TrainingState& state, const RunConfig& config,
                    const Dataset& dataset) {
  EvalReport report;
  report.epoch = state.epoch;
  report.seed = config.seed;
  report.loss_kind = loss_kind_name(config.loss);

  const Matrix test_x = gather_rows(dataset.features, dataset.test_indices);
  std::vector<std::size_t> test_y;
  for (std::size_t idx : dataset.test_indices) {
    test_y.push_back(dataset.true_labels[idx]);
  }
  const Matrix test_e = state.embedder.forward(test_x).embeddings;
  const std::vector<std::size_t> ks = eval_ks(config);
  const RecallResult recall = recall_at_k(test_e, test_y, ks);
  report.recall_at = recall.recall_at;
  report.excluded_queries = recall.excluded_queries;
  report.map_at_r = map_at_r(test_e, test_y).map_at_r;

  // Deviation is measured on the unit sphere, where both the cosine terms
  // and the calibration loss operate.
  const Matrix train_x = gather_rows(dataset.features, dataset.train_indices);
  std::vector<std::size_t> train_y;
  for (std::size_t idx : dataset.train_indices) {
    train_y.push_back(dataset.true_labels[idx]);
  }
  const Matrix train_e =
      normalized_copy(state.embedder.forward(train_x).embeddings);
  const ProxyBank unit_bank(state.bank.class_count(),
                            state.bank.proxies_per_class(),
                            normalized_copy(state.bank.matrix()));
  const DeviationResult dev = proxy_deviation(train_e, train_y, unit_bank);
  report.mean_deviation = dev.mean;
  report.per_class_deviation = dev.per_class;
  report.excluded_classes = dev.excluded_classes;
  return report;
}

void train_epochs(TrainingState& state, const RunConfig& config,
                  const Dataset& dataset, int last_epoch) {
  const bool calibrated = config.loss.calibrated();
  while (state.epoch < last_epoch) {
    const int epoch = state.epoch + 1;
    const bool active = state.gc.is_active(epoch);
    const auto batches =
        epoch_batches(dataset, config.batch_size, state.sampler_rng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      const Matrix features = gather_rows(dataset.features, batch);
      std::vector<std::size_t> labels;
      labels.reserve(batch.size());
      for (std::size_t idx : batch) labels.push_back(dataset.train_labels[idx]);

      const ForwardResult fwd = state.embedder.forward(features);
      const LossResult loss =
          loss_and_grad(BatchView{fwd.embeddings, labels}, state.bank,
                        state.gc, config.loss, active);
      if (!std::isfinite(loss.value) ||
          !all_finite(loss.grads.d_embeddings.flat()) ||
          !all_finite(loss.grads.d_proxies.flat())) {
        throw NumericError("non-finite loss or gradient at epoch " +
                           std::to_string(epoch));
      }
      const Vec g_embedder =
          state.embedder.backward(fwd.cache, loss.grads.d_embeddings);
      adam_step(state.adam, state.embedder.mutable_params(), g_embedder,
                state.bank.matrix().flat(), loss.grads.d_proxies.flat());
      if (calibrated) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
          state.gc.push(labels[i], fwd.embeddings.row(i));
        }
      }
      loss_sum += loss.value;
    }
    state.epoch = epoch;
    state.epoch_losses.push_back(loss_sum / static_cast<double>(batches.size()));

    const bool on_cadence =
        config.eval_every > 0 &&
        epoch % static_cast<int>(config.eval_every) == 0;
    if (on_cadence || epoch == last_epoch ||
        epoch == static_cast<int>(config.epochs)) {
      state.evals.push_back(evaluate(state, config, dataset));
    }
  }
}

json checkpoint_to_json(const TrainingState& s, const RunConfig& config) {
  json queues = json::array();
  for (std::size_t c = 0; c < s.gc.class_count(); ++c) {
    json q = json::array();
    for (const Vec& e : s.gc.entries(c)) q.push_back(e);
    queues.push_back(std::move(q));
  }
  json evals = json::array();
  for (const EvalReport& r : s.evals) evals.push_back(report_to_json(r));
  const auto& dims = s.embedder.dims();
  const auto flat = [](std::span<const double> v) {
    return std::vector<double>(v.begin(), v.end());
  };
  return json{
      {"format", "calproxy-checkpoint"},
      {"version", 1},
      {"config", config_to_json(config)},
      {"epoch", s.epoch},
      {"embedder",
       {{"input_dim", dims.input_dim},
        {"hidden_dim", dims.hidden_dim},
        {"embed_dim", dims.embed_dim},
        {"params", flat(s.embedder.params())}}},
      {"proxies",
       {{"n_c", s.bank.class_count()},
        {"n_p", s.bank.proxies_per_class()},
        {"dim", s.bank.dim()},
        {"values", flat(s.bank.matrix().flat())}}},
      {"global_center",
       {{"n_q", s.gc.capacity()},
        {"n_s", s.gc.start_epoch()},
        {"dim", s.gc.dim()},
        {"queues", queues}}},
      {"adam",
       {{"step", s.adam.step},
        {"m_embedder", s.adam.m_embedder},
        {"v_embedder", s.adam.v_embedder},
        {"m_proxies", s.adam.m_proxies},
        {"v_proxies", s.adam.v_proxies}}},
      {"sampler_rng", s.sampler_rng.save_state()},
      {"epoch_losses", s.epoch_losses},
      {"evals", evals},
  };
}

TrainingState checkpoint_from_json(const json& doc, RunConfig* config_out) {
  try {
    if (doc.at("format") != "calproxy-checkpoint" || doc.at("version") != 1) {
      throw ParseError("not a calproxy checkpoint (format/version mismatch)");
    }
    const RunConfig config = config_from_json(doc.at("config"));
    if (config_out != nullptr) *config_out = config;

    const json& e = doc.at("embedder");
    const EmbedderDims dims{e.at("input_dim").get<std::size_t>(),
                            e.at("hidden_dim").get<std::size_t>(),
                            e.at("embed_dim").get<std::size_t>()};
    Embedder embedder(dims, e.at("params").get<Vec>());

    const json& p = doc.at("proxies");
    const auto n_c = p.at("n_c").get<std::size_t>();
    const auto n_p = p.at("n_p").get<std::size_t>();
    const auto dim = p.at("dim").get<std::size_t>();
    const Vec values = p.at("values").get<Vec>();
    if (values.size() != n_c * n_p * dim) {
      throw ParseError("checkpoint: proxy value count mismatch");
    }
    Matrix proxies(n_c * n_p, dim);
    std::copy(values.begin(), values.end(), proxies.flat().begin());
    ProxyBank bank(n_c, n_p, std::move(proxies));

    const json& g = doc.at("global_center");
    GlobalCenter gc(n_c, g.at("n_q").get<std::size_t>(),
                    g.at("n_s").get<int>(), g.at("dim").get<std::size_t>());
    const json& queues = g.at("queues");
    if (queues.size() != n_c) {
      throw ParseError("checkpoint: queue count mismatch");
    }
    for (std::size_t c = 0; c < n_c; ++c) {
      for (const json& entry : queues[c]) gc.restore(c, entry.get<Vec>());
    }

    const json& a = doc.at("adam");
    AdamState adam(config.adam, dims.param_count(), n_c * n_p * dim);
    adam.step = a.at("step").get<std::uint64_t>();
    adam.m_embedder = a.at("m_embedder").get<Vec>();
    adam.v_embedder = a.at("v_embedder").get<Vec>();
    adam.m_proxies = a.at("m_proxies").get<Vec>();
    adam.v_proxies = a.at("v_proxies").get<Vec>();
    if (adam.m_embedder.size() != dims.param_count() ||
        adam.v_embedder.size() != dims.param_count() ||
        adam.m_proxies.size() != n_c * n_p * dim ||
        adam.v_proxies.size() != n_c * n_p * dim) {
      throw ParseError("checkpoint: optimizer state shape mismatch");
    }

    Rng rng(0);
    rng.load_state(doc.at("sampler_rng").get<std::string>());

    std::vector<EvalReport> evals;
    for (const json& r : doc.at("evals")) evals.push_back(report_from_json(r));

    return TrainingState{std::move(embedder),
                         std::move(bank),
                         std::move(gc),
                         std::move(adam),
                         std::move(rng),
                         doc.at("epoch").get<int>(),
                         doc.at("epoch_losses").get<std::vector<double>>(),
                         std::move(evals)};
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainingState& state, const RunConfig& config,
                     const std::string& path) {
  write_text(path, checkpoint_to_json(state, config).dump() + "\n");
}

TrainingState load_checkpoint(const std::string& path, RunConfig* config_out) {
  return checkpoint_from_json(read_json_file(path, false), config_out);
}

std::string metrics_csv(const RunResult& result) {
  std::ostringstream out;
  out << "epoch,loss,recall_at_1,map_at_r,mean_deviation\n";
  for (const EvalReport& r : result.evals) {
    out << r.epoch << ',';
    if (r.epoch > 0 &&
        static_cast<std::size_t>(r.epoch) <= result.epoch_losses.size()) {
      out << format_double(result.epoch_losses[r.epoch - 1]);
    }
    out << ',' << format_double(r.recall_at.at(1)) << ','
        << format_double(r.map_at_r) << ',' << format_double(r.mean_deviation)
        << '\n';
  }
  return out.str();
}

RunResult cmd_train(const RunConfig& config,
                    const std::optional<std::string>& resume_path) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Dataset dataset = build_dataset(config);

  std::optional<TrainingState> state;
  if (resume_path) {
    RunConfig saved;
    state.emplace(load_checkpoint(*resume_path, &saved));
    if (state->embedder.dims().input_dim != dataset.input_dim() ||
        state->bank.class_count() != dataset.n_train_classes ||
        state->embedder.dims().embed_dim != config.embed_dim ||
        state->bank.proxies_per_class() != config.loss.proxies_per_class) {
      throw ConfigError("checkpoint '" + *resume_path +
                        "' does not match the configured model/data shape");
    }
    if (state->epoch > static_cast<int>(config.epochs)) {
      throw ConfigError("checkpoint is past the configured epoch count");
    }
    state->adam.config = config.adam;
  } else {
    state.emplace(init_state(config, dataset));
  }
  if (state->evals.empty()) {
    state->evals.push_back(evaluate(*state, config, dataset));
  }
  train_epochs(*state, config, dataset, static_cast<int>(config.epochs));

  RunResult result;
  result.epoch_losses = state->epoch_losses;
  result.evals = state->evals;
  result.config_echo = config_to_json(config);
  result.flipped_count = dataset.flipped_indices.size();

  if (!config.output_dir.empty()) {
    const std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    result.checkpoint_path = (dir / "checkpoint.json").string();
    save_checkpoint(*state, config, result.checkpoint_path);
    write_text(dir / "metrics.csv", metrics_csv(result));
    if (config.export_embeddings) {
      const Matrix test_x =
          gather_rows(dataset.features, dataset.test_indices);
      std::vector<std::size_t> test_y;
      for (std::size_t idx : dataset.test_indices) {
        test_y.push_back(dataset.true_labels[idx]);
      }
      export_embeddings(state->embedder.forward(test_x).embeddings, test_y,
                        (dir / "embeddings.csv").string());
    }
  }
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  if (!config.output_dir.empty()) {
    json evals = json::array();
    for (const EvalReport& r : result.evals) evals.push_back(report_to_json(r));
    const json doc{{"config", result.config_echo},
                   {"epoch_losses", result.epoch_losses},
                   {"evals", evals},
                   {"checkpoint", result.checkpoint_path},
                   {"wall_clock_seconds", result.wall_clock_seconds},
                   {"flipped_count", result.flipped_count}};
    write_text(std::filesystem::path(config.output_dir) / "result.json",
               doc.dump(2) + "\n");
  }
  return result;
}

Sweep parse_sweep(std::string_view text) {
  const std::size_t eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError("sweep must look like param=v1,v2,...");
  }
  Sweep sweep;
  sweep.parameter = std::string(text.substr(0, eq));
  static const std::set<std::string> kAllowed = {"n_q", "n_s", "n_p",
                                                 "lambda_cal", "kind"};
  if (!kAllowed.contains(sweep.parameter)) {
    throw ConfigError("unknown sweep parameter '" + sweep.parameter +
                      "' (expected n_q, n_s, n_p, lambda_cal or kind)");
  }
  std::string_view rest = text.substr(eq + 1);
  while (!rest.empty()) {
    const std::size_t comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    if (item.empty()) throw ConfigError("sweep has an empty value");
    sweep.values.emplace_back(item);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return sweep;
}

namespace {

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !in.eof()) {
    throw ConfigError("sweep value '" + text + "' is not a valid " + what);
  }
  return value;
}

void apply_sweep_value(RunConfig& c, const std::string& param,
                       const std::string& value) {
  if (param == "n_q") {
    c.gc_capacity = parse_number<std::size_t>(value, "capacity");
  } else if (param == "n_s") {
    c.gc_start_epoch = parse_number<int>(value, "start epoch");
  } else if (param == "n_p") {
    c.loss.proxies_per_class = parse_number<std::size_t>(value, "proxy count");
  } else if (param == "lambda_cal") {
    c.loss.lambda_cal = parse_number<double>(value, "lambda");
  } else if (param == "kind") {
    const std::size_t slash = value.find('/');
    c.loss.family = parse_loss_family(value.substr(0, slash));
    if (slash != std::string::npos) {
      c.loss.variant = parse_loss_variant(value.substr(slash + 1));
    }
  } else {
    throw ConfigError("unknown sweep parameter '" + param + "'");
  }
}

std::string sanitize(std::string s) {
  for (char& ch : s) {
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  }
  return s;
}

void append_metrics(std::ostringstream& out, const RunResult& r,
                    const std::vector<std::size_t>& ks) {
  const EvalReport& f = r.final_report();
  out << ',' << format_double(r.epoch_losses.empty() ? 0.0
                                                     : r.epoch_losses.back());
  for (std::size_t k : ks) out << ',' << format_double(f.recall_at.at(k));
  out << ',' << format_double(f.map_at_r) << ','
      << format_double(f.mean_deviation) << '\n';
}

void append_metric_header(std::ostringstream& out,
                          const std::vector<std::size_t>& ks) {
  out << ",final_loss";
  for (std::size_t k : ks) out << ",recall_at_" << k;
  out << ",map_at_r,mean_deviation\n";
}

}  // namespace

std::vector<TableRow> cmd_ablate(const RunConfig& config, const Sweep& sweep) {
  if (sweep.values.empty()) throw ConfigError("sweep has no values");
  // Validate every point before any compute.
  std::vector<RunConfig> points;
  for (const std::string& value : sweep.values) {
    RunConfig c = config;
    apply_sweep_value(c, sweep.parameter, value);
    if (!config.output_dir.empty()) {
      c.output_dir = (std::filesystem::path(config.output_dir) /
                      sanitize(sweep.parameter + "_" + value))
                         .string();
    }
    c.validate();
    points.push_back(std::move(c));
  }
  std::vector<TableRow> rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    TableRow row;
    row.label = sweep.values[i];
    row.variant = std::string(to_string(points[i].loss.variant));
    row.result = cmd_train(points[i]);
    row.flipped = row.result.flipped_count;
    rows.push_back(std::move(row));
  }
  if (!config.output_dir.empty()) {
    write_text(std::filesystem::path(config.output_dir) / "ablate.csv",
               ablate_csv(sweep, rows, eval_ks(config)));
  }
  return rows;
}

std::string ablate_csv(const Sweep& sweep, const std::vector<TableRow>& rows,
                       const std::vector<std::size_t>& ks) {
  std::ostringstream out;
  out << "param,value";
  append_metric_header(out, ks);
  for (const TableRow& row : rows) {
    out << sweep.parameter << ',' << row.label;
    append_metrics(out, row.result, ks);
  }
  return out.str();
}

std::vector<TableRow> cmd_noise(const RunConfig& config,
                                const std::vector<double>& ratios) {
  if (ratios.empty()) throw ConfigError("noise: no ratios given");
  std::vector<std::pair<RunConfig, std::string>> points;
  for (double ratio : ratios) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
      throw ConfigError("noise: ratio " + format_double(ratio) +
                        " not in [0, 1)");
    }
    for (LossVariant variant : {LossVariant::kBase, LossVariant::kCalibrated}) {
      RunConfig c = config;
      c.noise_ratio = ratio;
      c.loss.variant = variant;
      std::ostringstream label;
      label << ratio;
      if (!config.output_dir.empty()) {
        c.output_dir = (std::filesystem::path(config.output_dir) /
                        ("noise_" + label.str() + "_" +
                         std::string(to_string(variant))))
                           .string();
      }
      c.validate();
      points.emplace_back(std::move(c), label.str());
    }
  }
  std::vector<TableRow> rows;
  for (auto& [c, label] : points) {
    TableRow row;
    row.label = label;
    row.variant = std::string(to_string(c.loss.variant));
    row.result = cmd_train(c);
    row.flipped = row.result.flipped_count;
    rows.push_back(std::move(row));
  }
  if (!config.output_dir.empty()) {
    write_text(std::filesystem::path(config.output_dir) / "noise.csv",
               noise_csv(rows, eval_ks(config)));
  }
  return rows;
}

std::string noise_csv(const std::vector<TableRow>& rows,
                      const std::vector<std::size_t>& ks) {
  std::ostringstream out;
  out << "ratio,variant,flipped";
  append_metric_header(out, ks);
  for (const TableRow& row : rows) {
    out << row.label << ',' << row.variant << ',' << row.flipped;
    append_metrics(out, row.result, ks);
  }
  return out.str();
}

EvalReport cmd_eval(const std::string& checkpoint_path,
                    const std::string& data_path) {
  RunConfig config;
  const TrainingState state = load_checkpoint(checkpoint_path, &config);
  const LabeledRows rows = read_labeled_csv(data_path);
  if (rows.values.cols() != state.embedder.dims().input_dim) {
    throw ShapeError("eval: data has " + std::to_string(rows.values.cols()) +
                     " feature columns, model expects " +
                     std::to_string(state.embedder.dims().input_dim));
  }
  const Matrix emb = state.embedder.forward(rows.values).embeddings;

  EvalReport report;
  report.epoch = state.epoch;
  report.seed = config.seed;
  report.loss_kind = loss_kind_name(config.loss);
  const std::vector<std::size_t> ks = eval_ks(config);
  const RecallResult recall = recall_at_k(emb, rows.labels, ks);
  report.recall_at = recall.recall_at;
  report.excluded_queries = recall.excluded_queries;
  report.map_at_r = map_at_r(emb, rows.labels).map_at_r;
  const ProxyBank unit_bank(state.bank.class_count(),
                            state.bank.proxies_per_class(),
                            normalized_copy(state.bank.matrix()));
  const DeviationResult dev =
      proxy_deviation(normalized_copy(emb), rows.labels, unit_bank);
  report.mean_deviation = dev.mean;
  report.per_class_deviation = dev.per_class;
  report.excluded_classes = dev.excluded_classes;
  return report;
}

}  // namespace calproxy
